"""Synthetic labelled data from a smooth analytic pair + angle potential.

``E = sum_{i<j} fc(r_ij) V_ab(r_ij) + sum_i sum_{j<k} fc(r_ij) fc(r_ik) K_a (cos t_jik - c0_a)**2``
with Morse pair terms ``V = D (1 - exp(-alpha (r - r0)))**2 - D`` and a cosine cutoff
``fc``. Forces are exact derivatives obtained by complex-step differentiation
(the energy is written with complex-safe operations only).
"""

from __future__ import annotations

import numpy as np

from .graph import Configuration

R_CUT = 3.5

# (D, alpha, r0) per unordered element pair
_MORSE = {
    (1, 1): (0.20, 1.8, 0.90),
    (1, 8): (0.45, 2.0, 1.00),
    (8, 8): (0.30, 1.6, 1.25),
}
# (K, cos0) per central element
_ANGLE = {1: (0.05, -0.3), 8: (0.25, -0.25)}


def _cutoff(r):
    x = np.where(np.real(r) < R_CUT, r, R_CUT)
    return np.where(np.real(r) < R_CUT, 0.5 * (np.cos(np.pi * x / R_CUT) + 1.0), 0.0)


def potential_energy(positions, species):
    """Energy of one configuration; ``positions`` may be complex (for complex-step derivatives)."""
    pos = positions
    n = len(species)
    e = 0.0
    d = pos[None, :, :] - pos[:, None, :]
    r = np.sqrt(np.sum(d * d, axis=-1) + np.eye(n))  # unit diagonal avoids sqrt(0)
    fc = _cutoff(r) * (1.0 - np.eye(n))
    for i in range(n):
        for j in range(i + 1, n):
            D, alpha, r0 = _MORSE[tuple(sorted((int(species[i]), int(species[j]))))]
            e = e + fc[i, j] * (D * (1.0 - np.exp(-alpha * (r[i, j] - r0))) ** 2 - D)
    for i in range(n):
        K, c0 = _ANGLE[int(species[i])]
        for j in range(n):
            for k in range(j + 1, n):
                if i in (j, k):
                    continue
                cos = np.sum(d[i, j] * d[i, k]) / (r[i, j] * r[i, k])
                e = e + fc[i, j] * fc[i, k] * K * (cos - c0) ** 2
    return e


def potential_forces(positions, species, h=1e-30):
    """``-dE/dr`` by complex-step differentiation (exact to rounding)."""
    pos = np.asarray(positions, dtype=np.float64)
    grad = np.zeros_like(pos)
    for a in range(pos.shape[0]):
        for b in range(3):
            z = pos.astype(np.complex128)
            z[a, b] += 1j * h
            grad[a, b] = np.imag(potential_energy(z, species)) / h
    return -grad


def random_cluster(rng, n_atoms, elements=(1, 8), d_min=0.9, d_max=1.6):
    """Connected cluster grown by attaching atoms at ``d_min..d_max`` from an existing one."""
    species = rng.choice(elements, size=n_atoms)
    pos = [np.zeros(3)]
    while len(pos) < n_atoms:
        anchor = pos[rng.integers(len(pos))]
        v = rng.normal(size=3)
        cand = anchor + v / np.linalg.norm(v) * rng.uniform(d_min, d_max)
        if min(np.linalg.norm(cand - p) for p in pos) >= d_min:
            pos.append(cand)
    pos = np.array(pos)
    return pos - pos.mean(axis=0), species


def labelled(pos, species):
    energy = float(np.real(potential_energy(pos, species)))
    return Configuration(pos, species, energy=energy, forces=potential_forces(pos, species))


def make_dataset(n_configs=200, seed=0, min_atoms=3, max_atoms=6, elements=(1, 8)):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_configs):
        pos, species = random_cluster(rng, int(rng.integers(min_atoms, max_atoms + 1)), elements)
        out.append(labelled(pos, species))
    return out


def make_dimers(n_configs=40, seed=0, r_min=0.8, r_max=3.0, pair=(8, 8)):
    """Dimers along random directions with separations uniform in ``[r_min, r_max]``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_configs):
        v = rng.normal(size=3)
        v = v / np.linalg.norm(v) * rng.uniform(r_min, r_max)
        out.append(labelled(np.array([-v / 2, v / 2]), np.array(pair)))
    return out
