import numpy as np
import pytest
from oracles import fd_gradient

from mace_engine.extxyz import read_extxyz
from mace_engine.synthetic import (
    R_CUT,
    make_dataset,
    make_dimers,
    potential_energy,
    potential_forces,
    random_cluster,
)


def test_forces_match_finite_differences():
    rng = np.random.default_rng(0)
    for n in (2, 3, 5):
        pos, species = random_cluster(rng, n)
        fd = -fd_gradient(lambda x: float(potential_energy(x, species)), pos, 1e-5)
        np.testing.assert_allclose(potential_forces(pos, species), fd, atol=1e-8)


def test_energy_is_invariant():
    rng = np.random.default_rng(1)
    pos, species = random_cluster(rng, 5)
    e = potential_energy(pos, species)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    perm = rng.permutation(5)
    assert potential_energy(pos @ q.T + 3.0, species) == pytest.approx(e, abs=1e-12)
    assert potential_energy(pos[perm], species[perm]) == pytest.approx(e, abs=1e-12)


def test_pair_term_vanishes_beyond_cutoff():
    far = np.array([[0, 0, 0], [0, 0, R_CUT + 0.1]])
    assert potential_energy(far, np.array([8, 8])) == 0.0


def test_clusters_respect_minimum_distance():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pos, _ = random_cluster(rng, 6)
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        assert d[np.triu_indices(6, 1)].min() >= 0.9 - 1e-12
        np.testing.assert_allclose(pos.mean(axis=0), 0.0, atol=1e-12)


def test_dataset_is_seeded():
    a, b = make_dataset(5, seed=4), make_dataset(5, seed=4)
    for x, y in zip(a, b):
        assert x.positions.tobytes() == y.positions.tobytes() and x.energy == y.energy


def test_dimer_separations():
    for c in make_dimers(10, r_min=1.0, r_max=2.0):
        assert 1.0 <= np.linalg.norm(c.positions[1] - c.positions[0]) <= 2.0


def test_committed_dataset_matches_generator(synthetic_path):
    committed = read_extxyz(synthetic_path)
    fresh = make_dataset(200, seed=0)
    for a, b in zip(committed, fresh):
        np.testing.assert_array_equal(a.species, b.species)
        np.testing.assert_allclose(a.positions, b.positions, atol=1e-12)
        assert a.energy == pytest.approx(b.energy, abs=1e-12)
        np.testing.assert_allclose(a.forces, b.forces, atol=1e-12)
