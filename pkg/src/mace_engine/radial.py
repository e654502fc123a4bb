"""Edge distance embedding: Bessel basis, polynomial envelope and the radial MLP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .errors import ContractViolation


@dataclass(frozen=True)
class RadialConfig:
    n_basis: int = 8
    r_cut: float = 5.0
    envelope_p: int = 5
    mlp_widths: tuple = (64, 64, 64)
    # channels x number of (l1, l2, l3) triples; derived per layer when None
    out_width: int | None = None

    def __post_init__(self):
        if self.n_basis < 1:
            raise ContractViolation("n_basis must be >= 1")
        if not self.r_cut > 0:
            raise ContractViolation("r_cut must be positive")
        if self.envelope_p < 2:
            raise ContractViolation("envelope_p must be >= 2")
        object.__setattr__(self, "mlp_widths", tuple(int(w) for w in self.mlp_widths))


@dataclass
class RadialMLPParams:
    weights: list
    biases: list = field(default_factory=list)

    def __post_init__(self):
        if not self.biases:
            self.biases = [None] * len(self.weights)

    @classmethod
    def init(cls, cfg, out_width, rng, bias=False):
        sizes = [cfg.n_basis, *cfg.mlp_widths, out_width]
        weights = [rng.standard_normal((a, b)) / math.sqrt(a) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(b) if bias else None for b in sizes[1:]]
        return cls(weights, biases)


def poly_cutoff(r, r_cut, p):
    """Smooth envelope ``1 - (p+1)(p+2)/2 u^p + p(p+2) u^(p+1) - p(p+1)/2 u^(p+2)``, u = r/r_cut.

    Zero for ``r >= r_cut``; value, first and second derivatives vanish there.
    Works on arrays and on recorded tape values.
    """
    rv = T.value_of(r)
    if np.any(np.asarray(rv) < 0):
        raise ContractViolation("poly_cutoff expects r >= 0")
    u = T.mul(r, 1.0 / r_cut)
    a = (p + 1) * (p + 2) / 2.0
    b = p * (p + 2.0)
    c = p * (p + 1) / 2.0
    up = T.power(u, p)
    f = 1.0 - a * up + b * T.mul(up, u) - c * T.mul(up, T.mul(u, u))
    mask = (np.asarray(rv) < r_cut).astype(np.float64)
    return T.mul(f, mask)


def bessel_raw(r, cfg):
    """``sqrt(2/r_cut) sin(n pi r / r_cut) / r`` for n = 1..n_basis, without envelope.

    At ``r == 0`` the analytic limit ``n pi sqrt(2) / r_cut**1.5`` is returned.
    """
    r = np.asarray(r, dtype=np.float64)
    n = np.arange(1, cfg.n_basis + 1)
    pref = math.sqrt(2.0 / cfg.r_cut)
    freq = n * math.pi / cfg.r_cut
    rr = r[..., None]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = pref * np.sin(freq * rr) / rr
    limit = np.broadcast_to(pref * freq, out.shape)
    return np.where(rr == 0.0, limit, out)


def bessel_basis(r, cfg):
    """Bessel radial basis times the polynomial envelope; shape ``r.shape + (n_basis,)``.

    Accepts arrays or tape values (distances of recorded edges).
    """
    rv = np.asarray(T.value_of(r))
    if np.any(~(rv > 0)):
        raise ContractViolation("bessel_basis expects r > 0")
    n = np.arange(1, cfg.n_basis + 1)
    freq = n * math.pi / cfg.r_cut
    pref = math.sqrt(2.0 / cfg.r_cut)
    r_col = T.reshape(r, rv.shape + (1,))
    raw = T.div(T.mul(T.sin(T.mul(r_col, freq)), pref), r_col)
    env = poly_cutoff(r_col, cfg.r_cut, cfg.envelope_p)
    return T.mul(raw, env)


def radial_mlp(basis_values, params):
    """Affine + SiLU on hidden layers, affine output layer.

    ``basis_values`` is ``(n_basis,)`` or ``(n_edges, n_basis)``.
    """
    x = basis_values
    xv = T.value_of(x)
    single = np.ndim(xv) == 1
    if single:
        x = T.reshape(x, (1,) + xv.shape)
    if T.value_of(x).shape[-1] != T.value_of(params.weights[0]).shape[0]:
        raise ContractViolation(
            f"radial MLP expects {T.value_of(params.weights[0]).shape[0]} inputs, "
            f"got {T.value_of(x).shape[-1]}"
        )
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = T.einsum("ei,io->eo", x, w)
        if b is not None:
            x = T.add(x, b)
        if i < last:
            x = T.silu(x)
    if single:
        x = T.reshape(x, T.value_of(x).shape[1:])
    return x
