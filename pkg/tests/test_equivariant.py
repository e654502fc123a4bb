import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import complex_cg_sympy, real_cg_by_quadrature, real_sph_harm_scipy

from mace_engine.equivariant import (
    CGTable,
    Irrep,
    _complex_cg,
    cg_dense,
    cg_real,
    complex_to_real,
    coupling_paths,
    generalized_cg,
    inject_cg_sign_flip,
    random_rotation,
    real_sph_harm,
    sh_index,
    sphere_quadrature,
    wigner_d_real,
)
from mace_engine.errors import ContractViolation

unit_vectors = st.tuples(
    st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)
).filter(lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.asarray(v) / np.linalg.norm(v))


# ---------------------------------------------------------------- irreps


def test_irrep_dimension_and_parity():
    for l in range(5):
        assert Irrep(l).dim == 2 * l + 1
        assert Irrep(l).parity == (-1) ** l
    with pytest.raises(ContractViolation):
        Irrep(-1)


# ---------------------------------------------------------------- spherical harmonics


def test_y00_constant():
    for v in ([1, 0, 0], [0, 0, 1], np.array([1, 2, 3]) / math.sqrt(14)):
        assert real_sph_harm(0, np.asarray(v, float))[0] == pytest.approx(0.28209479177, abs=1e-11)


def test_axial_values_on_z():
    y = real_sph_harm(1, np.array([0.0, 0.0, 1.0]))
    assert y[sh_index(1, 0)] == pytest.approx(0.48860251190, abs=1e-11)
    assert y[sh_index(1, -1)] == 0.0 and y[sh_index(1, 1)] == 0.0


def test_l1_components_are_y_z_x():
    v = np.array([0.48, -0.6, 0.64])
    y = real_sph_harm(1, v)[1:4]
    np.testing.assert_allclose(y, math.sqrt(3 / (4 * math.pi)) * v[[1, 2, 0]], atol=1e-15)


def test_non_unit_vector_rejected():
    with pytest.raises(ContractViolation):
        real_sph_harm(2, np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ContractViolation):
        real_sph_harm(2, np.array([1.0 + 1e-10, 0.0, 0.0]))


def test_batched_shape():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(4, 7, 3))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    assert real_sph_harm(3, v).shape == (4, 7, 16)


@given(unit_vectors)
def test_matches_scipy_harmonics(v):
    y = real_sph_harm(4, v)
    for l in range(5):
        np.testing.assert_allclose(y[l * l : (l + 1) ** 2], real_sph_harm_scipy(l, v)[0], atol=1e-12)


def test_orthonormal_under_quadrature():
    pts, w = sphere_quadrature()
    y = real_sph_harm(3, pts)
    gram = (y * w[:, None]).T @ y
    assert np.abs(gram - np.eye(16)).max() < 1e-6


@given(unit_vectors)
def test_parity(v):
    y_pos, y_neg = real_sph_harm(4, v), real_sph_harm(4, -v)
    for l in range(5):
        blk = slice(l * l, (l + 1) ** 2)
        assert np.abs(y_neg[blk] - (-1) ** l * y_pos[blk]).max() <= 1e-14


# ---------------------------------------------------------------- Clebsch-Gordan


def test_racah_matches_sympy():
    rng = np.random.default_rng(3)
    for _ in range(40):
        j1, j2 = rng.integers(0, 4, size=2)
        j3 = rng.integers(abs(j1 - j2), j1 + j2 + 1)
        m1 = rng.integers(-j1, j1 + 1)
        m2 = rng.integers(-j2, j2 + 1)
        m3 = m1 + m2
        if abs(m3) > j3:
            continue
        assert _complex_cg(j1, m1, j2, m2, j3, m3) == pytest.approx(complex_cg_sympy(j1, m1, j2, m2, j3, m3), abs=1e-14)


def test_change_of_basis_unitary():
    for l in range(5):
        u = complex_to_real(l)
        np.testing.assert_allclose(u @ u.conj().T, np.eye(2 * l + 1), atol=1e-15)


def test_scalar_coupling():
    t = cg_real(0, 0, 0)
    assert t.entries == ((0, 0, 0, 1.0),)


def test_triangle_violation_empty():
    assert len(cg_real(1, 2, 5)) == 0
    assert not cg_dense(1, 2, 5).any()


def test_vector_to_scalar_is_diagonal():
    table = cg_real(1, 1, 0)
    assert len(table) == 3
    for m1, m2, m3, c in table.entries:
        assert m1 == m2 and m3 == 0
        assert abs(c) == pytest.approx(1 / math.sqrt(3), abs=1e-15)
    # proportional to the integral of Y1 Y1 Y0 (one overall sign for the whole table)
    gaunt = real_cg_by_quadrature(1, 1, 0)[:, :, 0]
    dense = table.dense()[:, :, 0]
    np.testing.assert_allclose(dense, gaunt * (dense[0, 0] / gaunt[0, 0]), atol=1e-12)


@pytest.mark.parametrize("l1,l2,l3", [(1, 1, 2), (2, 1, 1), (2, 2, 2), (1, 2, 3), (3, 3, 2)])
def test_even_couplings_proportional_to_gaunt_integrals(l1, l2, l3):
    C = cg_dense(l1, l2, l3)
    G = real_cg_by_quadrature(l1, l2, l3)
    k = np.unravel_index(np.argmax(np.abs(G)), G.shape)
    np.testing.assert_allclose(C, G * (C[k] / G[k]), atol=1e-12)


def test_orthogonality_exhaustive():
    for l1 in range(4):
        for l2 in range(4):
            cols = []
            for l3 in range(abs(l1 - l2), l1 + l2 + 1):
                cols.append(cg_dense(l1, l2, l3).reshape(-1, 2 * l3 + 1))
            full = np.concatenate(cols, axis=1)
            assert np.abs(full.T @ full - np.eye(full.shape[1])).max() <= 1e-12


def test_table_sorted_and_sparse():
    t = cg_real(2, 2, 2)
    keys = [e[:3] for e in t.entries]
    assert keys == sorted(keys)
    assert all(c != 0.0 for *_, c in t.entries)
    assert isinstance(t, CGTable)
    np.testing.assert_array_equal(t.dense(), cg_dense(2, 2, 2))


def test_odd_triple_is_cross_product():
    # (1,1,1) couples two vectors into their (scaled) cross product
    u, v = np.array([0.3, -1.2, 0.5]), np.array([0.7, 0.1, -0.4])
    to_sh = lambda x: x[[1, 2, 0]]  # noqa: E731
    out = np.einsum("abc,a,b->c", cg_dense(1, 1, 1), to_sh(u), to_sh(v))
    cross = to_sh(np.cross(u, v))
    assert abs(abs(out @ cross) - np.linalg.norm(out) * np.linalg.norm(cross)) < 1e-12
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(cross) / math.sqrt(2), rel=1e-12)


def test_coupling_equivariance():
    rng = np.random.default_rng(7)
    for _ in range(5):
        q = random_rotation(rng)
        for l1 in range(4):
            for l2 in range(4):
                u, w = rng.normal(size=2 * l1 + 1), rng.normal(size=2 * l2 + 1)
                for l3 in range(abs(l1 - l2), min(l1 + l2, 4) + 1):
                    C = cg_dense(l1, l2, l3)
                    lhs = np.einsum("abc,a,b->c", C, wigner_d_real(l1, q) @ u, wigner_d_real(l2, q) @ w)
                    rhs = wigner_d_real(l3, q) @ np.einsum("abc,a,b->c", C, u, w)
                    assert np.abs(lhs - rhs).max() <= 1e-10


def test_tables_are_read_only():
    with pytest.raises(ValueError):
        cg_dense(1, 1, 2)[0, 0, 0] = 1.0


def test_sign_flip_hook_is_scoped():
    before = cg_dense(1, 1, 2).copy()
    with inject_cg_sign_flip(1, 1, 2, (0, 0, 0)):
        flipped = cg_dense(1, 1, 2)
        assert flipped[1, 1, 2] == -before[1, 1, 2]
    np.testing.assert_array_equal(cg_dense(1, 1, 2), before)


# ---------------------------------------------------------------- generalized coupling


def test_single_order_identity():
    s = generalized_cg((2,), 2)
    assert len(s.paths) == 1
    np.testing.assert_array_equal(s.dense()[0], np.eye(5))
    assert len(generalized_cg((2,), 1).paths) == 0


def test_three_vectors_to_vector_has_three_paths():
    s = generalized_cg((1, 1, 1), 1)
    assert [p.intermediates for p in s.paths] == [(0, 1), (1, 1), (2, 1)]


def test_pair_matches_cg_table():
    for l1, l2, L in [(1, 1, 0), (1, 2, 1), (2, 2, 4), (3, 1, 2)]:
        s = generalized_cg((l1, l2), L)
        assert len(s.paths) == 1
        np.testing.assert_array_equal(s.dense()[0], cg_dense(l1, l2, L))


def test_vector_self_coupling_gives_squared_norm():
    s = generalized_cg((1, 1), 0)
    rng = np.random.default_rng(0)
    v = rng.normal(size=3)
    y = v[[1, 2, 0]]
    val = np.einsum("abM,a,b->M", s.dense()[0], y, y)[0]
    assert abs(val) == pytest.approx(v @ v / math.sqrt(3), rel=1e-14)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=4), st.integers(0, 4))
def test_paths_satisfy_triangle_chain(l_tuple, L):
    for path in coupling_paths(l_tuple, L):
        chain = (l_tuple[0],) + path.intermediates
        assert chain[-1] == L
        for prev, l, nxt in zip(chain[:-1], l_tuple[1:], chain[1:]):
            assert abs(prev - l) <= nxt <= prev + l


def test_paths_lexicographic_and_deterministic():
    a = coupling_paths((2, 1, 2, 1), 2)
    assert [p.intermediates for p in a] == sorted(p.intermediates for p in a)
    assert generalized_cg((2, 1, 2), 1) is generalized_cg((2, 1, 2), 1)


def test_generalized_coupling_equivariant():
    rng = np.random.default_rng(11)
    q = random_rotation(rng)
    for l_tuple, L in [((1, 1, 1), 1), ((2, 1, 1), 2), ((1, 2, 2), 0)]:
        dense = generalized_cg(l_tuple, L).dense()
        vecs = [rng.normal(size=2 * l + 1) for l in l_tuple]
        rot = [wigner_d_real(l, q) @ v for l, v in zip(l_tuple, vecs)]
        sub = "abc"[: len(l_tuple)]
        eq = f"p{sub}M," + ",".join(sub) + "->pM"
        lhs = np.einsum(eq, dense, *rot)
        rhs = np.einsum(eq, dense, *vecs) @ wigner_d_real(L, q).T
        assert np.abs(lhs - rhs).max() < 1e-10


def test_empty_tuple_rejected():
    with pytest.raises(ContractViolation):
        generalized_cg((), 0)


# ---------------------------------------------------------------- Wigner D


def test_wigner_trivial_cases():
    rng = np.random.default_rng(2)
    assert wigner_d_real(0, random_rotation(rng)).tolist() == [[1.0]]
    for L in range(4):
        np.testing.assert_allclose(wigner_d_real(L, np.eye(3)), np.eye(2 * L + 1), atol=1e-15)


def test_wigner_rotates_harmonics():
    rng = np.random.default_rng(5)
    for _ in range(5):
        q = random_rotation(rng)
        v = rng.normal(size=(10, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        for L in range(4):
            blk = slice(L * L, (L + 1) ** 2)
            lhs = real_sph_harm(3, v @ q.T)[:, blk]
            rhs = real_sph_harm(3, v)[:, blk] @ wigner_d_real(L, q).T
            assert np.abs(lhs - rhs).max() < 1e-12


def _fitted_wigner(L, q, rng):
    """Least-squares D from harmonics sampled at (2L+1)^2 directions."""
    v = rng.normal(size=((2 * L + 1) ** 2, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    y = real_sph_harm(L, v)[:, L * L :]
    yq = real_sph_harm(L, v @ q.T)[:, L * L :]
    dt, *_ = np.linalg.lstsq(y, yq, rcond=None)
    return dt.T


def test_wigner_composition_and_fit():
    rng = np.random.default_rng(8)
    for _ in range(10):
        q1, q2 = random_rotation(rng), random_rotation(rng)
        for L in range(4):
            d12 = wigner_d_real(L, q1 @ q2)
            assert np.abs(d12 - wigner_d_real(L, q1) @ wigner_d_real(L, q2)).max() <= 1e-10
            assert np.abs(d12 - _fitted_wigner(L, q1 @ q2, rng)).max() <= 1e-10
            assert np.abs(d12 @ d12.T - np.eye(2 * L + 1)).max() <= 1e-9


def test_wigner_improper_rotation_absorbs_parity():
    rng = np.random.default_rng(9)
    q = -random_rotation(rng)
    v = rng.normal(size=(6, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for L in range(4):
        blk = slice(L * L, (L + 1) ** 2)
        np.testing.assert_allclose(
            real_sph_harm(3, v @ q.T)[:, blk], real_sph_harm(3, v)[:, blk] @ wigner_d_real(L, q).T, atol=1e-12
        )


def test_wigner_gimbal_lock_axes():
    for q in (np.diag([1.0, -1.0, -1.0]), np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])):
        v = np.eye(3)
        for L in range(4):
            blk = slice(L * L, (L + 1) ** 2)
            np.testing.assert_allclose(
                real_sph_harm(3, v @ q.T)[:, blk], real_sph_harm(3, v)[:, blk] @ wigner_d_real(L, q).T, atol=1e-12
            )


def test_wigner_rejects_non_orthogonal():
    with pytest.raises(ContractViolation):
        wigner_d_real(1, np.diag([1.0, 2.0, 1.0]))
