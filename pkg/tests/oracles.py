"""Independent reference computations used as test oracles.

Nothing here calls the engine's own spherical-harmonic, coupling or contraction
code paths; each oracle reaches the same quantity a different way.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import sph_harm_y
from sympy import S
from sympy.physics.quantum.cg import CG


def real_sph_harm_scipy(l, vecs):
    """Real orthonormal harmonics from scipy's complex ones (Condon-Shortley phase)."""
    vecs = np.atleast_2d(vecs)
    theta = np.arccos(np.clip(vecs[:, 2], -1, 1))
    phi = np.arctan2(vecs[:, 1], vecs[:, 0])
    out = np.zeros((len(vecs), 2 * l + 1))
    for m in range(-l, l + 1):
        y = sph_harm_y(l, abs(m), theta, phi)
        if m > 0:
            out[:, m + l] = math.sqrt(2) * (-1) ** m * y.real
        elif m < 0:
            out[:, m + l] = math.sqrt(2) * (-1) ** m * y.imag
        else:
            out[:, l] = y.real
    return out


def complex_cg_sympy(j1, m1, j2, m2, j3, m3):
    return float(CG(S(j1), S(m1), S(j2), S(m2), S(j3), S(m3)).doit())


def real_cg_by_quadrature(l1, l2, l3, n_theta=30, n_phi=60):
    """Gaunt-type integrals ``int Y1 Y2 Y3`` from scipy harmonics.

    For even ``l1 + l2 + l3`` this is proportional to the real CG table (one
    constant per ``(l1, l2, l3)``).
    """
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    ct, ph = np.repeat(x, n_phi), np.tile(phi, n_theta)
    st = np.sqrt(1 - ct**2)
    pts = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1)
    wt = np.repeat(w, n_phi) * (2 * np.pi / n_phi)
    y1, y2, y3 = (real_sph_harm_scipy(l, pts) for l in (l1, l2, l3))
    return np.einsum("p,pa,pb,pc->abc", wt, y1, y2, y3)


def fd_gradient(f, x, h):
    """Central finite differences of scalar ``f`` at array ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def brute_force_images(positions, cell, r_cut, reps):
    """All (i, j, shift) with |r_j + shift.cell - r_i| < r_cut over shifts in [-reps, reps]^3."""
    out = []
    n = len(positions)
    for s in itertools.product(range(-reps, reps + 1), repeat=3):
        off = np.asarray(s) @ cell
        for i in range(n):
            for j in range(n):
                if i == j and not any(s):
                    continue
                d = np.linalg.norm(positions[j] + off - positions[i])
                if d < r_cut:
                    out.append((i, j, s, round(d, 9)))
    return sorted(out)


def naive_A(receivers, senders, n_nodes, radial, sh, h_mixed, triples, cg, norm):
    """Coupled neighbour pooling with explicit loops over edges, channels and every m index.

    ``radial[e, k, p]`` is indexed by position ``p`` in ``triples``; ``cg(l1, l2, l3)``
    returns a dense table.
    """
    k = h_mixed.shape[1]
    l_max = max(t[2] for t in triples)
    A = np.zeros((n_nodes, k, (l_max + 1) ** 2))
    for e, (i, j) in enumerate(zip(receivers, senders)):
        for c in range(k):
            for p, (l1, l2, l3) in enumerate(triples):
                C = cg(l1, l2, l3)
                for m1 in range(2 * l1 + 1):
                    for m2 in range(2 * l2 + 1):
                        for m3 in range(2 * l3 + 1):
                            A[i, c, l3 * l3 + m3] += (
                                radial[e, c, p] * C[m1, m2, m3] * sh[e, l1 * l1 + m1] * h_mixed[j, c, l2 * l2 + m2]
                            )
    return A / norm


def edge_tuple_B2(edge_vals, receivers, n_nodes, l_max, L, cg):
    """Correlation-2 product features from the explicit double sum over neighbour pairs.

    ``edge_vals[e, k, lm]`` is the per-edge term whose neighbour sum is ``A``. For each
    ordered pair (l1, l2) coupling to ``L``:
    ``B[i, k, (l1,l2), M] = sum_{j1, j2 in N(i)} sum_{m1 m2} C^{LM}_{l1m1 l2m2} phi_j1 phi_j2``
    (self pairs ``j1 == j2`` included).
    """
    pairs = [(l1, l2) for l1 in range(l_max + 1) for l2 in range(l_max + 1) if abs(l1 - l2) <= L <= l1 + l2 and (l1 + l2 + L) % 2 == 0]
    k = edge_vals.shape[1]
    B = np.zeros((n_nodes, k, len(pairs), 2 * L + 1))
    for i in range(n_nodes):
        edges = [e for e, r in enumerate(receivers) if r == i]
        for e1 in edges:
            for e2 in edges:
                for p, (l1, l2) in enumerate(pairs):
                    C = cg(l1, l2, L)
                    a = edge_vals[e1][:, l1 * l1 : (l1 + 1) ** 2]
                    b = edge_vals[e2][:, l2 * l2 : (l2 + 1) ** 2]
                    B[i, :, p, :] += np.einsum("abM,ka,kb->kM", C, a, b)
    return pairs, B


__all__ = [
    "brute_force_images",
    "complex_cg_sympy",
    "edge_tuple_B2",
    "fd_gradient",
    "naive_A",
    "real_cg_by_quadrature",
    "real_sph_harm_scipy",
]
