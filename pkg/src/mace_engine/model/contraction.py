"""Symmetric many-body contraction of A-features into messages.

The product basis ``B`` couples ``nu`` copies of the A-features through the
generalized Clebsch-Gordan coefficients; the message is a species-dependent
linear combination of ``B`` over coupling paths and correlation orders. The
looped evaluation first fuses coupling coefficients with weights and then walks
the correlation order downwards, contracting one copy of ``A`` per step, so no
``B`` tensor is ever formed.

Path enumeration (which fixes weight indices): for each correlation order, paths
are ordered by target ``L``, then by the ordered tuple ``(l_1, ..., l_nu)``, then by
the intermediate chain. Only tuples with ``sum(l) + L`` even appear, which keeps
the output a proper (parity ``(-1)**L``) tensor.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .. import tape as T
from ..equivariant import generalized_cg, num_components, register_cache, sh_index
from ..errors import ContractViolation

_LETTERS = "abcdefghij"


@dataclass(frozen=True)
class ProductPath:
    L: int
    l_tuple: tuple
    intermediates: tuple
    eta: int  # index of the chain inside generalized_cg(l_tuple, L)


def enumerate_product_paths(l_max, L_max, nu):
    paths = []
    for L in range(L_max + 1):
        for l_tuple in itertools.product(range(l_max + 1), repeat=nu):
            if (sum(l_tuple) + L) % 2:
                continue
            scheme = generalized_cg(l_tuple, L)
            for eta, chain in enumerate(scheme.paths):
                paths.append(ProductPath(L, l_tuple, chain.intermediates, eta))
    return paths


@dataclass
class ContractionPlan:
    """Fused operation lists for every correlation order.

    For order ``nu`` the entry arrays ``(path, column, coeff)`` list every non-zero
    generalized CG coefficient; ``column`` flattens ``(L M, q_1, ..., q_nu)`` with
    ``q`` the flat A-component index. ``fusion[nu]`` is the same list as a sparse
    ``(n_paths, n_LM * n_A**nu)`` matrix, used to contract weights with coefficients.
    """

    l_max: int
    L_max: int
    correlation: int
    paths: dict
    entry_path: dict
    entry_column: dict
    entry_coeff: dict
    fusion: dict = field(repr=False)

    @property
    def n_A(self):
        return num_components(self.l_max)

    @property
    def n_LM(self):
        return num_components(self.L_max)

    def num_paths(self, nu):
        return len(self.paths[nu])


def _plan_entries(l_max, L_max, nu, paths):
    n_A = num_components(l_max)
    strides = n_A ** np.arange(nu - 1, -1, -1)
    rows, cols, vals = [], [], []
    for p, path in enumerate(paths):
        scheme = generalized_cg(path.l_tuple, path.L)
        sel = scheme.path_index == path.eta
        ms = scheme.m[sel]
        q = np.stack([l * l + l + ms[:, xi] for xi, l in enumerate(path.l_tuple)], axis=1) if nu else ms
        lm = path.L * path.L + path.L + scheme.M[sel]
        rows.append(np.full(len(lm), p))
        cols.append(lm * n_A**nu + q @ strides)
        vals.append(scheme.coeff[sel])
    if not rows:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


@functools.lru_cache(maxsize=None)
def _cached_plan(l_max, L_max, correlation):
    paths, e_path, e_col, e_coeff, fusion = {}, {}, {}, {}, {}
    n_A = num_components(l_max)
    n_LM = num_components(L_max)
    for nu in range(1, correlation + 1):
        plist = enumerate_product_paths(l_max, L_max, nu)
        rows, cols, vals = _plan_entries(l_max, L_max, nu, plist)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        for arr in (rows, cols, vals):
            arr.setflags(write=False)
        paths[nu] = tuple(plist)
        e_path[nu], e_col[nu], e_coeff[nu] = rows, cols, vals
        fusion[nu] = sp.csr_matrix((vals, (rows, cols)), shape=(len(plist), n_LM * n_A**nu))
    return ContractionPlan(l_max, L_max, correlation, paths, e_path, e_col, e_coeff, fusion)


register_cache(_cached_plan.cache_clear)


def build_contraction_plan(config, schemes=None):
    """Plan for ``config.correlation``/``l_max``/``L_max`` (cached; deterministic).

    ``schemes`` may supply precomputed coupling schemes keyed by ``(l_tuple, L)``;
    they must cover every admissible tuple.
    """
    if schemes is not None:
        for nu in range(1, config.correlation + 1):
            for path in enumerate_product_paths(config.l_max, config.L_max, nu):
                if (path.l_tuple, path.L) not in schemes:
                    raise ContractViolation(f"missing coupling scheme for {path.l_tuple} -> {path.L}")
    return _cached_plan(config.l_max, config.L_max, config.correlation)


def product_weight_shapes(config, plan=None):
    plan = plan or build_contraction_plan(config)
    return {
        nu: (config.num_elements, config.channels, plan.num_paths(nu))
        for nu in range(1, config.correlation + 1)
    }


def _species_groups(species):
    species = np.asarray(species)
    return [(int(s), np.nonzero(species == s)[0]) for s in np.unique(species)]


def fuse_weights(plan, weights, nu):
    """Coupling coefficients contracted with product weights: ``(n_elem, k, n_LM, n_A, ..., n_A)``."""
    w = weights[nu]
    n_elem, k, n_path = T.value_of(w).shape
    if n_path != plan.num_paths(nu):
        raise ContractViolation(
            f"product weights for nu={nu} have {n_path} paths, plan expects {plan.num_paths(nu)}"
        )
    fused = T.spmm(T.reshape(w, (n_elem * k, n_path)), plan.fusion[nu])
    return T.reshape(fused, (n_elem, k, plan.n_LM) + (plan.n_A,) * nu)


def looped_contraction(A, plan, weights, species):
    """Messages ``m[i, k, LM]`` for all correlation orders up to ``plan.correlation``.

    ``A`` is ``(n_nodes, k, n_A)``; ``weights[nu]`` is ``(n_elem, k, n_paths(nu))``;
    ``species`` gives each node's element index.
    """
    nu_max = plan.correlation
    n_nodes = T.value_of(A).shape[0]
    species = np.asarray(species, dtype=np.int64)
    groups = _species_groups(species)

    # highest order: the fused tensor depends on the receiving element
    fused = fuse_weights(plan, weights, nu_max)
    idx = _LETTERS[:nu_max]
    eq = f"kM{idx},nk{idx[-1]}->nkM{idx[:-1]}"
    a = None
    for s, nodes in groups:
        part = T.einsum(eq, T.reshape(T.slice_axis(fused, s, s + 1, axis=0), T.value_of(fused).shape[1:]), T.take(A, nodes))
        part = T.index_add(part, nodes, n_nodes)
        a = part if a is None else T.add(a, part)
    if a is None:
        shape = (0, T.value_of(A).shape[1], plan.n_LM) + (plan.n_A,) * (nu_max - 1)
        return np.zeros(shape[:3])

    for nu in range(nu_max - 1, 0, -1):
        fused = fuse_weights(plan, weights, nu)
        a = T.add(a, T.take(fused, species))
        idx = _LETTERS[:nu]
        a = T.einsum(f"nkM{idx},nk{idx[-1]}->nkM{idx[:-1]}", a, A)
    return a


# --------------------------------------------------------------------------- #
# reference evaluation (test oracle)
# --------------------------------------------------------------------------- #


def product_basis(A, l_max, L_max, nu):
    """Explicit ``B[i, k, path, M]`` for one correlation order.

    Loops over every coupling coefficient and multiplies the ``nu`` A-components
    directly. Returns ``(paths, {L: array (n_nodes, k, n_paths_L, 2L+1)})`` where the
    per-``L`` arrays follow the order of ``paths`` restricted to that ``L``.
    """
    A = np.asarray(A)
    n, k, _ = A.shape
    paths = enumerate_product_paths(l_max, L_max, nu)
    out = {}
    for L in range(L_max + 1):
        sub = [p for p in paths if p.L == L]
        B = np.zeros((n, k, len(sub), 2 * L + 1))
        for j, path in enumerate(sub):
            scheme = generalized_cg(path.l_tuple, L)
            for p, ms, M, c in zip(scheme.path_index, scheme.m, scheme.M, scheme.coeff):
                if p != path.eta:
                    continue
                prod = np.ones((n, k))
                for l, m in zip(path.l_tuple, ms):
                    prod = prod * A[:, :, sh_index(l, int(m))]
                B[:, :, j, M + L] += c * prod
        out[L] = B
    return paths, out


def brute_force_message(A, l_max, L_max, weights, species, correlation):
    """Messages from explicit B-features followed by the per-element linear expansion."""
    A = np.asarray(A)
    n, k, _ = A.shape
    species = np.asarray(species)
    m = np.zeros((n, k, num_components(L_max)))
    for nu in range(1, correlation + 1):
        paths, B = product_basis(A, l_max, L_max, nu)
        W = np.asarray(weights[nu])
        for L in range(L_max + 1):
            cols = [j for j, p in enumerate(paths) if p.L == L]
            w_nodes = W[species][:, :, cols]  # (n, k, paths_L)
            m[:, :, L * L : (L + 1) ** 2] += np.einsum("nkp,nkpM->nkM", w_nodes, B[L])
    return m
