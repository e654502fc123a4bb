"""Per-layer operations: element embedding, A-feature pooling, update and readout.

Node and edge features are arrays ``(n, channels, (L+1)**2)`` in flat ``(l, m)``
component order (see :class:`IrrepTensor`). Every function accepts plain arrays
or recorded tape values.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import tape as T
from ..equivariant import cg_dense, degree_of_components, num_components, register_cache


@dataclass
class IrrepTensor:
    """Feature blocks ``data[i, k, l*l + l + m]`` for orders ``0..l_max``."""

    data: object
    l_max: int

    def __post_init__(self):
        shape = T.value_of(self.data).shape
        if len(shape) != 3 or shape[2] != num_components(self.l_max):
            raise ValueError(f"expected (n, k, {num_components(self.l_max)}) features, got {shape}")

    @property
    def channels(self):
        return T.value_of(self.data).shape[1]

    def block(self, l):
        return T.value_of(self.data)[:, :, l * l : (l + 1) ** 2]

    def scalars(self):
        return T.value_of(self.data)[:, :, 0]


def coupling_triples(l_max, l_in):
    """Admissible ``(l1, l2, l3)`` for edge harmonics (l1), sender features (l2) and output (l3).

    Lexicographic order; triangle rule and even ``l1 + l2 + l3`` (keeps parity ``(-1)**l3``).
    """
    out = []
    for l1 in range(l_max + 1):
        for l2 in range(l_in + 1):
            for l3 in range(l_max + 1):
                if abs(l1 - l2) <= l3 <= l1 + l2 and (l1 + l2 + l3) % 2 == 0:
                    out.append((l1, l2, l3))
    return out


@dataclass(frozen=True)
class EdgeCoupling:
    """Sparse maps for the edge tensor product ``Y (x) h -> A``.

    ``couple`` takes the flattened outer product ``(n_Y * n_h)`` to one column per
    (triple, m3); ``triple_of_column`` selects the radial weight of each column and
    ``scatter`` sums columns into the A components.
    """

    triples: tuple
    couple: sp.csr_matrix
    triple_of_column: np.ndarray
    scatter: sp.csr_matrix


@functools.lru_cache(maxsize=None)
def edge_coupling(l_max, l_in):
    triples = coupling_triples(l_max, l_in)
    n_h = num_components(l_in)
    rows, cols, vals, tcol, sc_rows = [], [], [], [], []
    col = 0
    for t, (l1, l2, l3) in enumerate(triples):
        C = cg_dense(l1, l2, l3)
        for c3 in range(2 * l3 + 1):
            for a in range(2 * l1 + 1):
                for b in range(2 * l2 + 1):
                    v = C[a, b, c3]
                    if v != 0.0:
                        rows.append((l1 * l1 + a) * n_h + l2 * l2 + b)
                        cols.append(col)
                        vals.append(v)
            tcol.append(t)
            sc_rows.append(l3 * l3 + c3)
            col += 1
    couple = sp.csr_matrix((vals, (rows, cols)), shape=(num_components(l_max) * n_h, col))
    scatter = sp.csr_matrix((np.ones(col), (np.arange(col), sc_rows)), shape=(col, num_components(l_max)))
    return EdgeCoupling(tuple(triples), couple, np.asarray(tcol), scatter)


register_cache(edge_coupling.cache_clear)


def embed_elements(species_index, embedding):
    """Scalar node features ``h[i, k, 0] = embedding[z_i, k]``."""
    h = T.take(embedding, np.asarray(species_index, dtype=np.int64), axis=0)
    shape = T.value_of(h).shape
    return T.reshape(h, shape + (1,))


def linear_per_l(x, weights, l_max):
    """Channel mixing ``y[i, j, lm] = sum_k x[i, k, lm] W[l, k, j]`` (same map for all m)."""
    w = T.take(weights, degree_of_components(l_max), axis=0)
    return T.einsum("nkc,ckj->njc", x, w)


def linear_per_species_l(x, weights, species_index, l_max):
    """As :func:`linear_per_l` with a weight set selected by each node's element."""
    w = T.take(weights, np.asarray(species_index, dtype=np.int64), axis=0)
    w = T.take(w, degree_of_components(l_max), axis=1)
    return T.einsum("nkc,nckj->njc", x, w)


def edge_terms(sh, h_send, radial, coupling):
    """Per-edge ``sum_{l1 m1 l2 m2} C R_{k l1 l2 l3} Y_{l1 m1} h_{k l2 m2}``: ``(E, k, n_A)``.

    ``sh`` is ``(E, n_Y)``, ``h_send`` ``(E, k, n_h)`` and ``radial`` ``(E, k, n_triples)``.
    """
    e, k, n_h = T.value_of(h_send).shape
    n_y = T.value_of(sh).shape[1]
    outer = T.einsum("ea,ekb->ekab", sh, h_send)
    outer = T.reshape(outer, (e, k, n_y * n_h))
    coupled = T.spmm(outer, coupling.couple)
    weights = T.take(radial, coupling.triple_of_column, axis=2)
    return T.spmm(T.mul(coupled, weights), coupling.scatter)


def pool(edge_values, receivers, n_nodes, norm):
    return T.mul(T.index_add(edge_values, receivers, n_nodes, axis=0, canonical=True), 1.0 / norm)


def compute_A_first(receivers, senders, n_nodes, radial, sh, species_index, edge_embed, norm=1.0, l_max=None):
    """First-layer A-features ``sum_j R_{kl}(r_ji) Y_lm(r_ji) W_{k z_j}`` / norm."""
    l_max = int(round(np.sqrt(T.value_of(sh).shape[1]))) - 1 if l_max is None else l_max
    w_send = T.take(edge_embed, np.asarray(species_index)[senders], axis=1)  # (k, E)
    w_send = T.transpose(w_send, (1, 0))
    e, k = T.value_of(w_send).shape
    h_send = T.reshape(w_send, (e, k, 1))
    terms = edge_terms(sh, h_send, radial, edge_coupling(l_max, 0))
    return pool(terms, receivers, n_nodes, norm)


def compute_A(receivers, senders, n_nodes, radial, sh, h_prev, node_mix, norm=1.0, l_max=None, l_in=None):
    """A-features of later layers: CG coupling of edge harmonics with mixed sender features."""
    l_max = int(round(np.sqrt(T.value_of(sh).shape[1]))) - 1 if l_max is None else l_max
    l_in = int(round(np.sqrt(T.value_of(h_prev).shape[2]))) - 1 if l_in is None else l_in
    mixed = linear_per_l(h_prev, node_mix, l_in)
    h_send = T.take(mixed, senders, axis=0)
    terms = edge_terms(sh, h_send, radial, edge_coupling(l_max, l_in))
    return pool(terms, receivers, n_nodes, norm)


def update_features(messages, h_prev, species_index, w_message, w_residual, L_max):
    """``h_new = W_msg m + W_res(z_i) h_prev``; residual blocks above ``h_prev``'s order are zero."""
    out = linear_per_l(messages, w_message, L_max)
    n_in = T.value_of(h_prev).shape[2]
    l_in = int(round(np.sqrt(n_in))) - 1
    res = linear_per_species_l(h_prev, w_residual, species_index, l_in)
    n_out = num_components(L_max)
    if n_in < n_out:
        res = T.pad_axis(res, 0, n_out - n_in, axis=2)
    elif n_in > n_out:
        res = T.slice_axis(res, 0, n_out, axis=2)
    return T.add(out, res)


def readout_linear(h, w):
    scalars = T.reshape(T.slice_axis(h, 0, 1, axis=2), T.value_of(h).shape[:2])
    return T.einsum("nk,k->n", scalars, w)


def readout_mlp(h, w_hidden, w_out):
    scalars = T.reshape(T.slice_axis(h, 0, 1, axis=2), T.value_of(h).shape[:2])
    hidden = T.silu(T.einsum("nk,kj->nj", scalars, w_hidden))
    return T.einsum("nj,j->n", hidden, w_out)
