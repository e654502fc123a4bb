"""Embedded property suite run by ``mace-engine selfcheck``.

Each check returns the worst observed deviation and passes when it is below its
tolerance. All randomness derives from one seed so reruns print identical values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equivariant import (
    cg_dense,
    real_sph_harm,
    random_rotation,
    sphere_quadrature,
    wigner_d_real,
)
from .forces import grad_energy
from .graph import Configuration
from .model import MACEConfig, brute_force_message, build_contraction_plan, init_params, looped_contraction
from .model.energy import forward_energy, node_features


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    seed: int

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)


def check_cg_orthogonality(rng, l_max=3):
    worst = 0.0
    for l1 in range(l_max + 1):
        for l2 in range(l_max + 1):
            blocks = [cg_dense(l1, l2, l3).reshape(-1, 2 * l3 + 1) for l3 in range(abs(l1 - l2), l1 + l2 + 1)]
            full = np.concatenate(blocks, axis=1)
            worst = max(worst, np.abs(full.T @ full - np.eye(full.shape[1])).max())
    return worst


def check_sh_orthonormality(rng, l_max=3):
    pts, w = sphere_quadrature()
    y = real_sph_harm(l_max, pts)
    gram = (y * w[:, None]).T @ y
    return np.abs(gram - np.eye(gram.shape[0])).max()


def check_wigner_composition(rng, l_max=3):
    worst = 0.0
    for _ in range(5):
        q1, q2 = random_rotation(rng), random_rotation(rng)
        for L in range(l_max + 1):
            worst = max(worst, np.abs(wigner_d_real(L, q1 @ q2) - wigner_d_real(L, q1) @ wigner_d_real(L, q2)).max())
    return worst


def check_coupling_equivariance(rng, l_max=2):
    worst = 0.0
    q = random_rotation(rng)
    for l1 in range(l_max + 1):
        for l2 in range(l_max + 1):
            u, v = rng.normal(size=2 * l1 + 1), rng.normal(size=2 * l2 + 1)
            for l3 in range(abs(l1 - l2), l1 + l2 + 1):
                C = cg_dense(l1, l2, l3)
                lhs = np.einsum("abc,a,b->c", C, wigner_d_real(l1, q) @ u, wigner_d_real(l2, q) @ v)
                rhs = wigner_d_real(l3, q) @ np.einsum("abc,a,b->c", C, u, v)
                worst = max(worst, np.abs(lhs - rhs).max())
    return worst


def _small_model(rng):
    cfg = MACEConfig(
        elements=(1, 8), channels=4, correlation=3, l_max=2, L_max=2, num_layers=2,
        radial={"mlp_widths": (8,), "r_cut": 4.0},
    )
    return init_params(cfg, rng, shift=-0.5, scale=1.5, norm=2.0)


def _molecule(rng, n=5):
    from .synthetic import random_cluster

    pos, species = random_cluster(rng, n)
    return Configuration(pos, species)


def check_energy_invariance(rng):
    params = _small_model(rng)
    worst = 0.0
    for _ in range(3):
        c = _molecule(rng)
        q = random_rotation(rng)
        e0, _ = forward_energy(c, params)
        for pos in (c.positions @ q.T, -c.positions, c.positions + rng.normal(size=3)):
            e1, _ = forward_energy(Configuration(pos, c.species), params)
            worst = max(worst, abs(e1 - e0))
    return worst


def check_feature_equivariance(rng):
    params = _small_model(rng)
    c = _molecule(rng)
    q = random_rotation(rng)
    h0 = node_features(c, params)
    h1 = node_features(Configuration(c.positions @ q.T, c.species), params)
    worst = 0.0
    for a, b in zip(h0, h1):
        for L in range(params.config.L_max + 1):
            blk = slice(L * L, (L + 1) ** 2)
            worst = max(worst, np.abs(b[:, :, blk] - a[:, :, blk] @ wigner_d_real(L, q).T).max())
    return worst


def check_force_gradient(rng, h=1e-4):
    params = _small_model(rng)
    c = _molecule(rng, 4)
    _, g = grad_energy(c, params, with_params=False)
    fd = np.zeros_like(c.positions)
    for i in range(len(c)):
        for a in range(3):
            step = np.zeros_like(c.positions)
            step[i, a] = h
            ep, _ = forward_energy(Configuration(c.positions + step, c.species), params)
            em, _ = forward_energy(Configuration(c.positions - step, c.species), params)
            fd[i, a] = (ep - em) / (2 * h)
    return np.linalg.norm(fd - g.d_positions) / max(np.linalg.norm(fd), 1e-12)


def check_contraction_oracle(rng):
    worst = 0.0
    for nu in (1, 2, 3):
        cfg = MACEConfig(elements=(1, 6, 8), channels=3, correlation=nu, l_max=2, L_max=2)
        plan = build_contraction_plan(cfg)
        A = rng.normal(size=(4, 3, 9))
        species = rng.integers(0, 3, size=4)
        w = {v: rng.normal(size=(3, 3, plan.num_paths(v))) for v in range(1, nu + 1)}
        fast = looped_contraction(A, plan, w, species)
        slow = brute_force_message(A, 2, 2, w, species, nu)
        worst = max(worst, np.abs(fast - slow).max() / max(1.0, np.abs(slow).max()))
    return worst


CHECKS = (
    ("cg_orthogonality", check_cg_orthogonality, 1e-12),
    ("sh_orthonormality", check_sh_orthonormality, 1e-6),
    ("wigner_composition", check_wigner_composition, 1e-10),
    ("coupling_equivariance", check_coupling_equivariance, 1e-10),
    ("energy_invariance", check_energy_invariance, 1e-9),
    ("feature_equivariance", check_feature_equivariance, 1e-8),
    ("force_gradient", check_force_gradient, 1e-6),
    ("contraction_oracle", check_contraction_oracle, 1e-10),
)


def run_selfcheck(seed=0):
    results = []
    for i, (name, fn, tol) in enumerate(CHECKS):
        s = seed * 1000 + i
        try:
            value = float(fn(np.random.default_rng(s)))
        except Exception:  # a crashing check is a failed check
            value = float("nan")
        results.append(CheckResult(name, value, tol, s))
    return results


def format_results(results):
    lines = [f"{'check':<24}{'value':>14}{'tolerance':>12}  status"]
    for r in results:
        lines.append(f"{r.name:<24}{r.value:>14.3e}{r.tolerance:>12.1e}  {'PASS' if r.passed else 'FAIL'} (seed {r.seed})")
    return "\n".join(lines)
