"""Energies, forces and loss gradients by reverse-mode differentiation of the forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .errors import DataError, NumericError
from .model.energy import GraphBatch, forward


@dataclass
class GradientBundle:
    d_positions: np.ndarray  # dE/dr, (N, 3) eV/A
    d_params: dict  # dE/dtheta per named tensor

    @property
    def forces(self):
        return -self.d_positions


@dataclass(frozen=True)
class LossConfig:
    energy_weight: float = 1.0
    forces_weight: float = 1000.0


def _record(params, tape, names=None):
    names = list(params.tensors) if names is None else names
    rec = dict(params.tensors)
    for name in names:
        rec[name] = tape.var(params.tensors[name])
    return rec


def _check(values, what):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise NumericError(f"non-finite {what}")


def grad_energy(config, params, neighbor_list=None, with_params=True, check_finite=True):
    """Total energy and its gradients with respect to positions and (optionally) parameters."""
    batch = GraphBatch.from_configs([config], params.config, None if neighbor_list is None else [neighbor_list])
    tape = T.Tape(check_finite=check_finite)
    pos = tape.var(batch.positions)
    rec = _record(params, tape, None if with_params else [])
    res = forward(params, batch, rec, pos)
    energy = T.sum_(res.energies)
    names = list(params.tensors) if with_params else []
    grads = tape.grad(energy, [pos] + [rec[n] for n in names])
    _check(grads, "gradient")
    return float(T.value_of(energy)), GradientBundle(grads[0], dict(zip(names, grads[1:])))


def energies_and_forces(configs, params, neighbor_lists=None):
    """Per-configuration energies and forces (no parameter gradients)."""
    if not configs:
        return np.zeros(0), []
    batch = GraphBatch.from_configs(configs, params.config, neighbor_lists)
    tape = T.Tape(check_finite=True)
    pos = tape.var(batch.positions)
    res = forward(params, batch, None, pos)
    (d_pos,) = tape.grad(T.sum_(res.energies), [pos])
    forces = -np.asarray(d_pos)
    splits = np.cumsum([len(c) for c in configs])[:-1]
    return np.asarray(T.value_of(res.energies)), np.split(forces, splits)


def loss_terms(batch, energies, forces, ref_energy, ref_forces, loss_cfg):
    """Weighted squared errors with ``B`` configurations and ``N`` atoms in the batch."""
    b = batch.n_graphs
    n = batch.n_nodes
    de = T.sub(energies, ref_energy)
    e_term = T.mul(T.sum_(T.mul(de, de)), loss_cfg.energy_weight / b)
    if loss_cfg.forces_weight == 0.0:
        return e_term
    df = T.sub(forces, ref_forces)
    f_term = T.mul(T.sum_(T.mul(df, df)), loss_cfg.forces_weight / (3.0 * b * n))
    return T.add(e_term, f_term)


def _labels(configs, need_forces):
    for i, c in enumerate(configs):
        if c.energy is None:
            raise DataError(f"configuration {i} has no energy label")
        if need_forces and c.forces is None:
            raise DataError(f"configuration {i} has no force labels")
    ref_e = np.array([c.energy for c in configs], dtype=np.float64)
    ref_f = np.concatenate([c.forces for c in configs]) if need_forces else None
    return ref_e, ref_f


def loss_value(configs, params, loss_cfg=LossConfig(), neighbor_lists=None):
    """Loss without parameter gradients."""
    need_f = loss_cfg.forces_weight != 0.0
    ref_e, ref_f = _labels(configs, need_f)
    batch = GraphBatch.from_configs(configs, params.config, neighbor_lists)
    tape = T.Tape()
    pos = tape.var(batch.positions)
    res = forward(params, batch, None, pos)
    forces = None
    if need_f:
        (d_pos,) = tape.grad(T.sum_(res.energies), [pos])
        forces = -np.asarray(d_pos)
    with T.no_record():
        loss = loss_terms(batch, T.value_of(res.energies), forces, ref_e, ref_f, loss_cfg)
    return float(loss)


def grad_loss(configs, params, loss_cfg=LossConfig(), neighbor_lists=None, check_finite=True):
    """Loss over a batch and its gradient for every parameter tensor.

    The force term differentiates the recorded position gradient a second time.
    """
    need_f = loss_cfg.forces_weight != 0.0
    ref_e, ref_f = _labels(configs, need_f)
    batch = GraphBatch.from_configs(configs, params.config, neighbor_lists)
    tape = T.Tape(check_finite=check_finite)
    pos = tape.var(batch.positions)
    rec = _record(params, tape)
    res = forward(params, batch, rec, pos)
    forces = None
    if need_f:
        (d_pos,) = tape.grad(T.sum_(res.energies), [pos], create_graph=True)
        forces = T.neg(d_pos)
    loss = loss_terms(batch, res.energies, forces, ref_e, ref_f, loss_cfg)
    names = list(params.tensors)
    grads = tape.grad(loss, [rec[n] for n in names])
    _check(grads, "loss gradient")
    value = float(T.value_of(loss))
    if not np.isfinite(value):
        raise NumericError("non-finite loss")
    return value, dict(zip(names, grads))
