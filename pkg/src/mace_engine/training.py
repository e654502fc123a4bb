"""Optimisation loop: AMSGrad, plateau scheduler, weight EMA, selective weight decay, metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, DataError, NumericError
from .forces import LossConfig, energies_and_forces, grad_loss, loss_value
from .graph import build_neighbor_list, compute_dataset_stats
from .model.params import init_params

METRIC_FIELDS = ("epoch", "lr", "train_loss", "val_loss", "e_mae", "f_mae", "f_rmse")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    amsgrad: bool = True
    weight_decay: float = 5e-7
    batch_size: int = 5
    max_epochs: int = 100
    seed: int = 0
    ema_decay: float = 0.99
    patience: int = 50
    decay_factor: float = 0.8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ContractViolation("beta1 and beta2 must lie in (0, 1)")
        if not self.lr >= 0:
            raise ContractViolation("lr must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ContractViolation("batch_size must be >= 1 and max_epochs >= 0")
        if not 0 <= self.ema_decay < 1:
            raise ContractViolation("ema_decay must lie in [0, 1)")


# --------------------------------------------------------------------------- #
# AMSGrad
# --------------------------------------------------------------------------- #


@dataclass
class AdamState:
    m: dict
    v: dict
    v_max: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, tensors):
        z = lambda: {k: np.zeros_like(v) for k, v in tensors.items()}  # noqa: E731
        return cls(z(), z(), z(), 0)


def add_weight_decay(grads, tensors, decayed, weight_decay):
    """L2 decay ``g + wd * theta`` on the tensors for which ``decayed(name)`` holds."""
    if weight_decay == 0.0:
        return dict(grads)
    return {k: g + weight_decay * tensors[k] if decayed(k) else g for k, g in grads.items()}


def amsgrad_step(tensors, grads, state, cfg, decayed=lambda name: False):
    """One Adam/AMSGrad update; returns ``(new_tensors, new_state)`` without mutating inputs."""
    if set(grads) != set(tensors) or set(state.m) != set(tensors):
        raise ContractViolation("gradient/state names do not match parameters")
    grads = add_weight_decay(grads, tensors, decayed, cfg.weight_decay)
    step = state.step + 1
    bc1 = 1.0 - cfg.beta1**step
    bc2 = 1.0 - cfg.beta2**step
    new_t, m_new, v_new, vmax_new = {}, {}, {}, {}
    for k, theta in tensors.items():
        g = grads[k]
        if np.shape(g) != np.shape(theta) or np.shape(state.m[k]) != np.shape(theta):
            raise ContractViolation(f"{k}: gradient/state shape does not match parameter shape")
        m = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g
        vmax = np.maximum(state.v_max[k], v) if cfg.amsgrad else v
        denom = np.sqrt(vmax) / math.sqrt(bc2) + cfg.eps
        new_t[k] = theta - (cfg.lr / bc1) * m / denom
        m_new[k], v_new[k], vmax_new[k] = m, v, vmax
    return new_t, AdamState(m_new, v_new, vmax_new, step)


# --------------------------------------------------------------------------- #
# scheduler and EMA
# --------------------------------------------------------------------------- #


@dataclass
class SchedulerState:
    best_validation_loss: float = math.inf
    epochs_since_improvement: int = 0
    patience: int = 50
    decay_factor: float = 0.8


def scheduler_step(state, validation_loss, current_lr):
    """Reduce-on-plateau with strict improvement; returns ``(new_lr, new_state)``."""
    if not math.isfinite(validation_loss):
        raise NumericError("validation loss is not finite")
    best, count = state.best_validation_loss, state.epochs_since_improvement
    if validation_loss < best:
        best, count = validation_loss, 0
    else:
        count += 1
    lr = current_lr
    if count > state.patience:
        lr, count = current_lr * state.decay_factor, 0
    return lr, SchedulerState(best, count, state.patience, state.decay_factor)


@dataclass
class EMAState:
    shadow: dict
    decay: float = 0.99

    @classmethod
    def start(cls, tensors, decay=0.99):
        return cls({k: np.array(v, copy=True) for k, v in tensors.items()}, decay)


def ema_update(state, tensors):
    d = state.decay
    return EMAState({k: d * state.shadow[k] + (1.0 - d) * tensors[k] for k in state.shadow}, d)


# --------------------------------------------------------------------------- #
# evaluation
# --------------------------------------------------------------------------- #


def error_metrics(pred_energies, pred_forces, configs):
    """MAE/RMSE of energies (meV, meV/atom) and force components (meV/A)."""
    if not configs:
        return {}
    n_atoms = np.array([len(c) for c in configs], dtype=np.float64)
    de = (np.asarray(pred_energies, dtype=np.float64) - np.array([c.energy for c in configs])) * 1000.0
    out = {
        "e_mae": float(np.mean(np.abs(de))),
        "e_rmse": float(np.sqrt(np.mean(de**2))),
        "e_mae_per_atom": float(np.mean(np.abs(de / n_atoms))),
        "e_rmse_per_atom": float(np.sqrt(np.mean((de / n_atoms) ** 2))),
    }
    if all(c.forces is not None for c in configs):
        df = np.concatenate([np.asarray(p) - c.forces for p, c in zip(pred_forces, configs)]).ravel() * 1000.0
        out["f_mae"] = float(np.mean(np.abs(df)))
        out["f_rmse"] = float(np.sqrt(np.mean(df**2)))
    return out


def predict(params, configs, neighbor_lists=None, batch_size=16):
    energies, forces = [], []
    for s in range(0, len(configs), batch_size):
        chunk = configs[s : s + batch_size]
        nls = None if neighbor_lists is None else neighbor_lists[s : s + batch_size]
        e, f = energies_and_forces(chunk, params, nls)
        energies.extend(e.tolist())
        forces.extend(f)
    return np.array(energies), forces


def evaluate(params, configs, neighbor_lists=None):
    for i, c in enumerate(configs):
        if c.energy is None:
            raise DataError(f"configuration {i} has no energy label")
    e, f = predict(params, configs, neighbor_lists)
    return error_metrics(e, f, configs)


# --------------------------------------------------------------------------- #
# training loop
# --------------------------------------------------------------------------- #


@dataclass
class TrainResult:
    params: object  # EMA weights after the last epoch
    history: list
    best_epoch: int | None = None
    best_params: object | None = None
    stats: object | None = None
    extra: dict = field(default_factory=dict)


def split_dataset(configs, valid_fraction, seed):
    if not 0 < valid_fraction < 1:
        raise ContractViolation("valid_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(configs))
    n_valid = max(1, int(round(valid_fraction * len(configs))))
    valid = [configs[i] for i in sorted(order[:n_valid])]
    train = [configs[i] for i in sorted(order[n_valid:])]
    return train, valid


def _batched_loss(configs, nls, params, loss_cfg, batch_size):
    total, count = 0.0, 0
    for s in range(0, len(configs), batch_size):
        chunk = configs[s : s + batch_size]
        total += loss_value(chunk, params, loss_cfg, nls[s : s + batch_size]) * len(chunk)
        count += len(chunk)
    return total / count


def train(train_set, valid_set, model_cfg, opt_cfg, loss_cfg=LossConfig(), params=None, log=None, on_epoch=None):
    """Seeded AMSGrad training; validation and the returned model use the EMA weights.

    ``log(row)`` receives each epoch's metrics row and ``on_epoch(row, ema_params)``
    additionally the EMA model (used for checkpoints).
    """
    if not train_set or not valid_set:
        raise DataError("training and validation sets must both be non-empty")
    for i, c in enumerate(list(train_set) + list(valid_set)):
        if c.energy is None or (loss_cfg.forces_weight != 0 and c.forces is None):
            raise DataError(f"configuration {i} is missing energy or force labels")
    init_seq, shuffle_seq = np.random.SeedSequence(opt_cfg.seed).spawn(2)
    stats = compute_dataset_stats(train_set, model_cfg.r_cut)
    if params is None:
        norm = math.sqrt(stats.avg_num_neighbors) if stats.avg_num_neighbors else 1.0
        params = init_params(
            model_cfg, np.random.default_rng(init_seq), stats.per_atom_shift, stats.force_scale, norm
        )
    tr_nl = [build_neighbor_list(c, model_cfg.r_cut) for c in train_set]
    va_nl = [build_neighbor_list(c, model_cfg.r_cut) for c in valid_set]
    shuffle_rng = np.random.default_rng(shuffle_seq)

    tensors = {k: np.array(v, copy=True) for k, v in params.tensors.items()}
    adam = AdamState.zeros_like(tensors)
    ema = EMAState.start(tensors, opt_cfg.ema_decay)
    sched = SchedulerState(patience=opt_cfg.patience, decay_factor=opt_cfg.decay_factor)
    lr = opt_cfg.lr
    history, best_epoch, best_params = [], None, None

    for epoch in range(1, opt_cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        step_cfg = _with_lr(opt_cfg, lr)
        losses = []
        for s in range(0, len(order), opt_cfg.batch_size):
            idx = order[s : s + opt_cfg.batch_size]
            batch = [train_set[i] for i in idx]
            current = params.copy(tensors)
            loss, grads = grad_loss(batch, current, loss_cfg, [tr_nl[i] for i in idx])
            tensors, adam = amsgrad_step(tensors, grads, adam, step_cfg, params.decayed)
            ema = ema_update(ema, tensors)
            losses.append(loss * len(batch))
        ema_params = params.copy(ema.shadow)
        val_loss = _batched_loss(valid_set, va_nl, ema_params, loss_cfg, opt_cfg.batch_size)
        metrics = evaluate(ema_params, valid_set, va_nl)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.sum(losses) / len(train_set)),
            "val_loss": val_loss,
            "e_mae": metrics["e_mae"],
            "f_mae": metrics.get("f_mae", float("nan")),
            "f_rmse": metrics.get("f_rmse", float("nan")),
        }
        history.append(row)
        if log is not None:
            log(row)
        if on_epoch is not None:
            on_epoch(row, ema_params)
        if val_loss < sched.best_validation_loss:
            best_epoch, best_params = epoch, ema_params
        lr, sched = scheduler_step(sched, val_loss, lr)

    final = params.copy(ema.shadow)
    return TrainResult(final, history, best_epoch, best_params, stats)


def _with_lr(cfg, lr):
    return replace(cfg, lr=lr)


def write_metrics_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in METRIC_FIELDS})


def write_summary_json(result, path, extra=None):
    summary = {
        "epochs": len(result.history),
        "best_epoch": result.best_epoch,
        "final": result.history[-1] if result.history else None,
        "num_parameters": result.params.num_parameters(),
    }
    if extra:
        summary.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
