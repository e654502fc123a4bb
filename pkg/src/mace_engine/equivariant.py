"""Real spherical harmonics, real-basis Clebsch-Gordan coefficients and coupling paths.

Conventions used throughout the package:

* Real spherical harmonics are orthonormal on the unit sphere and built from the
  complex harmonics with the Condon-Shortley phase. Components of an order-``l``
  block are stored in the order ``m = -l, ..., l``; blocks are concatenated so that
  ``(l, m)`` lives at flat index ``l*l + l + m``.
* With this choice ``Y_{1,-1}, Y_{1,0}, Y_{1,1}`` are proportional to ``y, z, x``.
* Every feature block of order ``l`` has parity ``(-1)**l``.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContractViolation

_CACHE_CLEARERS = []


def _cached(fn):
    wrapped = functools.lru_cache(maxsize=None)(fn)
    _CACHE_CLEARERS.append(wrapped.cache_clear)
    return wrapped


def register_cache(clear_fn):
    """Register a cache that depends on coupling coefficients (cleared together)."""
    _CACHE_CLEARERS.append(clear_fn)
    return clear_fn


def clear_caches():
    for clear in _CACHE_CLEARERS:
        clear()


def sh_index(l, m):
    return l * l + l + m


def num_components(l_max):
    return (l_max + 1) ** 2


def block_slice(l):
    return slice(l * l, (l + 1) * (l + 1))


def degree_of_components(l_max):
    """Order ``l`` of every flat component index up to ``l_max``."""
    return np.repeat(np.arange(l_max + 1), 2 * np.arange(l_max + 1) + 1)


@dataclass(frozen=True)
class Irrep:
    l: int

    def __post_init__(self):
        if self.l < 0:
            raise ContractViolation(f"irrep order must be non-negative, got {self.l}")

    @property
    def dim(self):
        return 2 * self.l + 1

    @property
    def parity(self):
        return -1 if self.l % 2 else 1


# --------------------------------------------------------------------------- #
# spherical harmonics as polynomials in the unit-vector components
# --------------------------------------------------------------------------- #


class PolyTable:
    """Sparse table of monomials ``coef * x**a * y**b * z**c`` summed into outputs.

    Used to evaluate real spherical harmonics (and their derivatives, which are
    again tables of the same kind) on batches of unit vectors.
    """

    def __init__(self, exps, coefs, out_idx, n_out):
        self.exps = np.asarray(exps, dtype=np.int64).reshape(-1, 3)
        self.coefs = np.asarray(coefs, dtype=np.float64)
        self.out_idx = np.asarray(out_idx, dtype=np.int64)
        self.n_out = int(n_out)
        self.max_degree = int(self.exps.max()) if len(self.exps) else 0
        mat = np.zeros((len(self.coefs), self.n_out))
        mat[np.arange(len(self.coefs)), self.out_idx] = self.coefs
        self._mat = mat
        self._derivs = {}

    def __call__(self, u):
        u = np.asarray(u)
        if len(self.coefs) == 0:
            return np.zeros(u.shape[:-1] + (self.n_out,), dtype=u.dtype)
        powers = u[..., :, None] ** np.arange(self.max_degree + 1)
        mono = (
            powers[..., 0, self.exps[:, 0]]
            * powers[..., 1, self.exps[:, 1]]
            * powers[..., 2, self.exps[:, 2]]
        )
        return mono @ self._mat

    def derivative(self, axis):
        if axis not in self._derivs:
            keep = self.exps[:, axis] > 0
            exps = self.exps[keep].copy()
            coefs = self.coefs[keep] * exps[:, axis]
            exps[:, axis] -= 1
            self._derivs[axis] = PolyTable(exps, coefs, self.out_idx[keep], self.n_out)
        return self._derivs[axis]


def _legendre_coefficients(l):
    """Coefficients of P_l(z) keyed by power of z (exact rationals)."""
    coeffs = {}
    for k in range(l // 2 + 1):
        c = Fraction((-1) ** k * math.comb(l, k) * math.comb(2 * l - 2 * k, l), 2**l)
        coeffs[l - 2 * k] = c
    return coeffs


@_cached
def sh_poly_table(l_max):
    """Monomial table of the real spherical harmonics up to ``l_max``.

    Uses ``r**l Y_lm`` restricted to the unit sphere:
    ``Y_lm = sqrt(2) N_lm Re/Im[(x + i y)**|m|] d^|m|/dz^|m| P_l(z)``.
    """
    exps, coefs, outs = [], [], []
    for l in range(l_max + 1):
        leg = _legendre_coefficients(l)
        for m in range(-l, l + 1):
            a = abs(m)
            # a-th derivative of the Legendre polynomial
            deriv = {}
            for power, c in leg.items():
                if power >= a:
                    deriv[power - a] = c * math.perm(power, a)
            norm = math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - a) / math.factorial(l + a))
            if m != 0:
                norm *= math.sqrt(2.0)
            # (x + i y)^a = sum_k C(a,k) x^(a-k) (i y)^k ; real part: k even, imag: k odd
            for k in range(a + 1):
                if (m >= 0) != (k % 2 == 0):
                    continue
                phase = (-1) ** (k // 2)
                for zp, c in deriv.items():
                    value = phase * math.comb(a, k) * c
                    if value == 0:
                        continue
                    exps.append((a - k, k, zp))
                    coefs.append(float(value) * norm)
                    outs.append(sh_index(l, m))
    return PolyTable(exps, coefs, outs, num_components(l_max))


def _check_unit(vectors, tol=1e-12):
    norms = np.linalg.norm(vectors, axis=-1)
    if not np.all(np.isfinite(norms)) or np.any(np.abs(norms - 1.0) > tol):
        raise ContractViolation("real_sph_harm expects unit vectors (|v| = 1 within 1e-12)")


def real_sph_harm(l_max, unit_vec):
    """Real orthonormal spherical harmonics for ``l <= l_max``.

    ``unit_vec`` may be a single 3-vector or a batch ``(..., 3)``; the result has a
    trailing axis of length ``(l_max + 1)**2`` in flat ``(l, m)`` order.
    """
    unit_vec = np.asarray(unit_vec, dtype=np.float64)
    if unit_vec.shape[-1:] != (3,):
        raise ContractViolation(f"expected trailing dimension 3, got shape {unit_vec.shape}")
    _check_unit(unit_vec)
    return sh_poly_table(l_max)(unit_vec)


# --------------------------------------------------------------------------- #
# Clebsch-Gordan coefficients
# --------------------------------------------------------------------------- #


def _complex_cg(j1, m1, j2, m2, j3, m3):
    """Complex-basis Clebsch-Gordan coefficient <j1 m1 j2 m2 | j3 m3> (Racah form)."""
    if m1 + m2 != m3:
        return 0.0
    if not (abs(j1 - j2) <= j3 <= j1 + j2):
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    f = math.factorial
    pref = Fraction(
        (2 * j3 + 1) * f(j3 + j1 - j2) * f(j3 - j1 + j2) * f(j1 + j2 - j3),
        f(j1 + j2 + j3 + 1),
    )
    pref *= f(j3 + m3) * f(j3 - m3) * f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2)
    total = Fraction(0)
    for k in range(0, j1 + j2 - j3 + 1):
        terms = (
            k,
            j1 + j2 - j3 - k,
            j1 - m1 - k,
            j2 + m2 - k,
            j3 - j2 + m1 + k,
            j3 - j1 - m2 + k,
        )
        if min(terms) < 0:
            continue
        denom = 1
        for t in terms:
            denom *= f(t)
        total += Fraction((-1) ** k, denom)
    if total == 0:
        return 0.0
    # sign(total) * sqrt(total^2 * pref), evaluated once in floating point
    sign = 1.0 if total > 0 else -1.0
    return sign * math.sqrt(total * total * pref)


@_cached
def complex_to_real(l):
    """Unitary ``U`` with ``Y_real = U @ Y_complex`` (rows m, columns mu, both -l..l)."""
    u = np.zeros((2 * l + 1, 2 * l + 1), dtype=np.complex128)
    s = 1.0 / math.sqrt(2.0)
    for m in range(-l, l + 1):
        row = m + l
        if m > 0:
            u[row, -m + l] = s
            u[row, m + l] = (-1) ** m * s
        elif m == 0:
            u[row, l] = 1.0
        else:
            a = -m
            u[row, -a + l] = 1j * s
            u[row, a + l] = -1j * (-1) ** a * s
    return u


@dataclass(frozen=True)
class CGTable:
    """Real-basis coupling coefficients ``C^{l3 m3}_{l1 m1, l2 m2}``.

    ``entries`` holds ``(m1, m2, m3, coefficient)`` with signed ``m`` values, sorted
    lexicographically by ``(m1, m2, m3)``; zero coefficients are omitted.
    """

    l1: int
    l2: int
    l3: int
    entries: tuple = ()

    def __len__(self):
        return len(self.entries)

    def dense(self):
        out = np.zeros((2 * self.l1 + 1, 2 * self.l2 + 1, 2 * self.l3 + 1))
        for m1, m2, m3, c in self.entries:
            out[m1 + self.l1, m2 + self.l2, m3 + self.l3] = c
        return out


_CG_MUTATION = {}


@_cached
def _cg_real_dense(l1, l2, l3):
    if not (abs(l1 - l2) <= l3 <= l1 + l2):
        return np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1))
    cplx = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1))
    for m1 in range(-l1, l1 + 1):
        for m2 in range(-l2, l2 + 1):
            m3 = m1 + m2
            if abs(m3) <= l3:
                cplx[m1 + l1, m2 + l2, m3 + l3] = _complex_cg(l1, m1, l2, m2, l3, m3)
    u1, u2, u3 = complex_to_real(l1), complex_to_real(l2), complex_to_real(l3)
    real = np.einsum("ai,bj,ck,ijk->abc", u1.conj(), u2.conj(), u3, cplx)
    # odd l1+l2+l3 couplings come out purely imaginary; a global phase makes them real
    if np.abs(real.imag).max() > np.abs(real.real).max():
        real = real * -1j
    out = np.ascontiguousarray(real.real)
    out[np.abs(out) < 1e-15] = 0.0
    for (m1, m2, m3), sign in _CG_MUTATION.get((l1, l2, l3), {}).items():
        out[m1 + l1, m2 + l2, m3 + l3] *= sign
    out.setflags(write=False)
    return out


def cg_real(l1, l2, l3):
    """Real-basis coupling table for ``l1 (x) l2 -> l3`` (empty off the triangle)."""
    dense = _cg_real_dense(l1, l2, l3)
    entries = []
    for idx in zip(*np.nonzero(dense)):
        a, b, c = (int(i) for i in idx)
        entries.append((a - l1, b - l2, c - l3, float(dense[a, b, c])))
    return CGTable(l1, l2, l3, tuple(entries))


def cg_dense(l1, l2, l3):
    """Dense ``(2l1+1, 2l2+1, 2l3+1)`` view of :func:`cg_real` (read-only)."""
    return _cg_real_dense(l1, l2, l3)


class inject_cg_sign_flip:
    """Test hook: flip the sign of one real CG entry inside a ``with`` block."""

    def __init__(self, l1=1, l2=1, l3=2, m=None):
        self.key = (l1, l2, l3)
        self.m = m

    def __enter__(self):
        m = self.m
        if m is None:
            table = cg_real(*self.key)
            m = table.entries[0][:3]
        _CG_MUTATION.setdefault(self.key, {})[tuple(m)] = -1.0
        clear_caches()
        return self

    def __exit__(self, *exc):
        _CG_MUTATION.pop(self.key, None)
        clear_caches()
        return False


# --------------------------------------------------------------------------- #
# generalized (chained) coupling coefficients
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class CouplingPath:
    """Intermediate orders ``(L_2, ..., L_nu)`` of one coupling chain; last equals the target."""

    intermediates: tuple


@dataclass(frozen=True)
class CouplingScheme:
    """All coupling chains of ``l_tuple`` into order ``target_L``.

    Sparse coefficients are stored as parallel arrays sorted by
    ``(path, m_1, ..., m_nu, M)``: ``path[i]``, ``m[i, :]`` (signed), ``M[i]``,
    ``coeff[i]``.
    """

    l_tuple: tuple
    target_L: int
    paths: tuple
    path_index: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)
    M: np.ndarray = field(repr=False)
    coeff: np.ndarray = field(repr=False)

    @property
    def nu(self):
        return len(self.l_tuple)

    def dense(self):
        shape = (len(self.paths),) + tuple(2 * l + 1 for l in self.l_tuple) + (2 * self.target_L + 1,)
        out = np.zeros(shape)
        offsets = np.asarray(self.l_tuple)
        for p, ms, mm, c in zip(self.path_index, self.m, self.M, self.coeff):
            out[(p,) + tuple(ms + offsets) + (mm + self.target_L,)] = c
        return out


def coupling_paths(l_tuple, target_L):
    """Admissible intermediate chains in lexicographic order."""
    l_tuple = tuple(l_tuple)
    if len(l_tuple) == 1:
        return [CouplingPath(())] if l_tuple[0] == target_L else []
    chains = [(l_tuple[0],)]
    for l in l_tuple[1:]:
        nxt = []
        for chain in chains:
            prev = chain[-1]
            for L in range(abs(prev - l), prev + l + 1):
                nxt.append(chain + (L,))
        chains = nxt
    return [CouplingPath(c[1:]) for c in sorted(chains) if c[-1] == target_L]


@_cached
def generalized_cg(l_tuple, target_L):
    """Chained products of real CG coefficients for every admissible coupling path."""
    l_tuple = tuple(int(l) for l in l_tuple)
    if len(l_tuple) < 1:
        raise ContractViolation("generalized_cg needs at least one order")
    paths = coupling_paths(l_tuple, target_L)
    nu = len(l_tuple)
    rows = []
    for p, path in enumerate(paths):
        # tensor[m1, ..., mi, M_i] built left to right
        tensor = np.eye(2 * l_tuple[0] + 1)
        prev = l_tuple[0]
        for l, L in zip(l_tuple[1:], path.intermediates):
            tensor = np.tensordot(tensor, _cg_real_dense(prev, l, L), axes=([-1], [0]))
            prev = L
        for idx in zip(*np.nonzero(np.abs(tensor) > 1e-14)):
            ms = tuple(int(i) - l for i, l in zip(idx[:nu], l_tuple))
            rows.append((p, ms, int(idx[nu]) - target_L, float(tensor[idx])))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    path_index = np.array([r[0] for r in rows], dtype=np.int64)
    m = np.array([r[1] for r in rows], dtype=np.int64).reshape(len(rows), nu)
    M = np.array([r[2] for r in rows], dtype=np.int64)
    coeff = np.array([r[3] for r in rows], dtype=np.float64)
    for arr in (path_index, m, M, coeff):
        arr.setflags(write=False)
    return CouplingScheme(l_tuple, int(target_L), tuple(paths), path_index, m, M, coeff)


# --------------------------------------------------------------------------- #
# rotations
# --------------------------------------------------------------------------- #


def _check_orthogonal(q, tol=1e-9):
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (3, 3) or not np.allclose(q @ q.T, np.eye(3), atol=tol, rtol=0):
        raise ContractViolation("rotation must be a 3x3 orthogonal matrix")
    return q


def _zyz_euler(q):
    cb = np.clip(q[2, 2], -1.0, 1.0)
    beta = math.acos(cb)
    sb = math.sqrt(max(0.0, 1.0 - cb * cb))
    if sb > 1e-10:
        alpha = math.atan2(q[1, 2], q[0, 2])
        gamma = math.atan2(q[2, 1], -q[2, 0])
    elif cb > 0:
        alpha, gamma = math.atan2(q[1, 0], q[0, 0]), 0.0
    else:
        alpha, gamma = math.atan2(-q[1, 0], -q[0, 0]), 0.0
    return alpha, beta, gamma


def _wigner_small_d(j, beta):
    d = np.zeros((2 * j + 1, 2 * j + 1))
    c, s = math.cos(beta / 2), math.sin(beta / 2)
    f = math.factorial
    for mp in range(-j, j + 1):
        for m in range(-j, j + 1):
            pref = math.sqrt(f(j + mp) * f(j - mp) * f(j + m) * f(j - m))
            total = 0.0
            for k in range(max(0, m - mp), min(j + m, j - mp) + 1):
                total += (
                    (-1) ** (mp - m + k)
                    * c ** (2 * j + m - mp - 2 * k)
                    * s ** (mp - m + 2 * k)
                    / (f(j + m - k) * f(k) * f(mp - m + k) * f(j - mp - k))
                )
            d[mp + j, m + j] = pref * total
    return d


def wigner_d_real(L, rotation):
    """Real Wigner matrix with ``Y_L(Q v) = D @ Y_L(v)`` for every unit ``v``.

    Improper matrices (det = -1) are handled through ``Q = -(-Q)`` and absorb the
    parity factor ``(-1)**L``.
    """
    q = _check_orthogonal(rotation)
    sign = 1.0
    if np.linalg.det(q) < 0:
        q = -q
        sign = (-1.0) ** L
    if L == 0:
        return np.array([[sign]])
    alpha, beta, gamma = _zyz_euler(q)
    ms = np.arange(-L, L + 1)
    small = _wigner_small_d(L, beta)
    dc = np.exp(-1j * ms[:, None] * alpha) * small * np.exp(-1j * ms[None, :] * gamma)
    u = complex_to_real(L)
    # complex harmonics rotate with the conjugate Wigner matrix
    dr = u @ dc.conj() @ u.conj().T
    return sign * dr.real


def random_rotation(rng):
    """Uniformly distributed proper rotation (QR of a Gaussian matrix)."""
    a = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def sphere_quadrature(n_theta=40, n_phi=80):
    """Gauss-Legendre x uniform-phi product rule on the sphere (exact for low degree)."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    ct = np.repeat(x, n_phi)
    st = np.sqrt(1.0 - ct**2)
    ph = np.tile(phi, n_theta)
    pts = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1)
    weights = np.repeat(w, n_phi) * (2 * np.pi / n_phi)
    return pts, weights
