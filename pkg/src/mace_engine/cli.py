"""Command-line interface: ``mace-engine train|eval|predict|selfcheck``.

Exit codes: 0 success, 1 self-check failure, 2 configuration error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ContractViolation, DataError, NumericError, ParseError
from .extxyz import read_extxyz, write_extxyz
from .forces import LossConfig, energies_and_forces
from .model import MACEConfig, load_model, save_model
from .radial import RadialConfig
from .training import (
    OptimizerConfig,
    error_metrics,
    split_dataset,
    train,
    write_metrics_csv,
    write_summary_json,
)

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

_INT = {"type": "integer"}
_NUM = {"type": "number"}
_BOOL = {"type": "boolean"}
_STR = {"type": "string"}
_INT_LIST = {"type": "array", "items": {"type": "integer"}}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "data", "output"],
    "properties": {
        "schema": {"const": 1},
        "seed": _INT,
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "elements": _INT_LIST,
                "num_layers": _INT,
                "correlation": _INT,
                "l_max": _INT,
                "L_max": _INT,
                "channels": _INT,
                "r_cut": _NUM,
                "readout_mlp_width": _INT,
                "uncoupled_channels": _BOOL,
            },
        },
        "radial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_basis": _INT,
                "r_cut": _NUM,
                "envelope_p": _INT,
                "mlp_widths": _INT_LIST,
                "out_width": {"type": ["integer", "null"]},
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": _NUM,
                "beta1": _NUM,
                "beta2": _NUM,
                "eps": _NUM,
                "amsgrad": _BOOL,
                "weight_decay": _NUM,
                "batch_size": _INT,
                "max_epochs": _INT,
                "ema_decay": _NUM,
                "patience": _INT,
                "decay_factor": _NUM,
                "energy_weight": _NUM,
                "forces_weight": _NUM,
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["train_path"],
            "properties": {
                "train_path": _STR,
                "valid_path": _STR,
                "valid_fraction": _NUM,
                "test_path": _STR,
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "required": ["directory"],
            "properties": {"directory": _STR, "checkpoint_every": _INT},
        },
    },
}


class CLIError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def kernel_threads():
    """Worker count from ``MACE_KERNEL_THREADS`` (0 or unset: one per CPU)."""
    raw = os.environ.get("MACE_KERNEL_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise CLIError(EXIT_CONFIG, f"MACE_KERNEL_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise CLIError(EXIT_CONFIG, "MACE_KERNEL_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def load_run_config(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CLIError(EXIT_CONFIG, f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from None
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CLIError(EXIT_CONFIG, f"config error at {where}: {exc.message}") from None
    base = path.parent
    try:
        radial = RadialConfig(**_listify(doc.get("radial", {})))
        model = MACEConfig(radial=radial, **doc.get("model", {}))
        opt_doc = dict(doc.get("optimizer", {}))
        loss = LossConfig(opt_doc.pop("energy_weight", 1.0), opt_doc.pop("forces_weight", 1000.0))
        opt = OptimizerConfig(seed=doc.get("seed", 0), **opt_doc)
    except (ContractViolation, TypeError) as exc:
        raise CLIError(EXIT_CONFIG, f"config error: {exc}") from None
    data = {k: (str(base / v) if k.endswith("_path") else v) for k, v in doc["data"].items()}
    if "valid_path" not in data and "valid_fraction" not in data:
        data["valid_fraction"] = 0.1
    output = dict(doc["output"])
    output["directory"] = str(base / output["directory"])
    return {"model": model, "optimizer": opt, "loss": loss, "data": data, "output": output, "seed": opt.seed}


def _listify(d):
    d = dict(d)
    if "mlp_widths" in d:
        d["mlp_widths"] = tuple(d["mlp_widths"])
    return d


def _read_data(path, need_labels=False):
    try:
        configs = read_extxyz(path)
    except FileNotFoundError:
        raise CLIError(EXIT_DATA, f"data file not found: {path}") from None
    except (ParseError, DataError, OSError) as exc:
        raise CLIError(EXIT_DATA, f"{path}: {exc}") from None
    if need_labels:
        for i, c in enumerate(configs):
            if c.energy is None or c.forces is None:
                raise CLIError(EXIT_DATA, f"{path}: frame {i} lacks energy/force labels")
    return configs


def _check_elements(configs, model_cfg, path):
    allowed = set(model_cfg.elements)
    for i, c in enumerate(configs):
        bad = sorted(set(int(z) for z in c.species) - allowed)
        if bad:
            raise CLIError(EXIT_DATA, f"{path}: frame {i} contains element(s) {bad} unknown to the model")


def _load(path):
    try:
        return load_model(path)
    except (DataError, ContractViolation) as exc:
        raise CLIError(EXIT_DATA, str(exc)) from None


def predict_all(params, configs, threads=None):
    """Energies and forces per configuration; configurations are fanned out over threads."""
    threads = threads or kernel_threads()

    def one(c):
        e, f = energies_and_forces([c], params)
        return float(e[0]), f[0]

    if threads <= 1 or len(configs) <= 1:
        results = [one(c) for c in configs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, configs))
    return np.array([r[0] for r in results]), [r[1] for r in results]


def cmd_train(args):
    run = load_run_config(args.config)
    data = run["data"]
    configs = _read_data(data["train_path"], need_labels=True)
    _check_elements(configs, run["model"], data["train_path"])
    if "valid_path" in data:
        train_set, valid_set = configs, _read_data(data["valid_path"], need_labels=True)
        _check_elements(valid_set, run["model"], data["valid_path"])
    else:
        try:
            train_set, valid_set = split_dataset(configs, data["valid_fraction"], run["seed"])
        except ContractViolation as exc:
            raise CLIError(EXIT_CONFIG, str(exc)) from None
    if not train_set or not valid_set:
        raise CLIError(EXIT_DATA, "training and validation sets must both be non-empty")
    out = Path(run["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    every = run["output"].get("checkpoint_every", 0)

    def on_epoch(row, ema_params):
        if every and row["epoch"] % every == 0:
            save_model(ema_params, out / f"checkpoint_{row['epoch']:05d}.model")

    result = train(train_set, valid_set, run["model"], run["optimizer"], run["loss"], on_epoch=on_epoch)
    save_model(result.params, out / "model.zip")
    write_metrics_csv(result.history, out / "metrics.csv")
    train_metrics = error_metrics(*predict_all(result.params, train_set), train_set)
    write_summary_json(result, out / "summary.json", {"train_metrics": train_metrics})
    print(json.dumps({"model": str(out / "model.zip"), "train_metrics": train_metrics}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    params = _load(args.model)
    configs = _read_data(args.data)
    for i, c in enumerate(configs):
        if c.energy is None:
            raise CLIError(EXIT_DATA, f"{args.data}: frame {i} has no energy label")
    _check_elements(configs, params.config, args.data)
    metrics = error_metrics(*predict_all(params, configs), configs) if configs else {}
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_predict(args):
    params = _load(args.model)
    configs = _read_data(args.data)
    _check_elements(configs, params.config, args.data)
    energies, forces = predict_all(params, configs) if configs else ([], [])
    for c, e, f in zip(configs, energies, forces):
        c.info["energy_pred"] = float(e)
        c.arrays["forces_pred"] = f
    Path(args.out).write_text(write_extxyz(configs, include_predictions=True), encoding="utf-8")
    return EXIT_OK


def cmd_selfcheck(args):
    from .selfcheck import format_results, run_selfcheck

    results = run_selfcheck(args.seed)
    print(format_results(results))
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"property failed: {r.name} (seed {r.seed})", file=sys.stderr)
    return EXIT_PROPERTY if failed else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mace-engine", description="Equivariant interatomic potential engine")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", help="print error metrics of a model on labelled data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("predict", help="write predicted energies and forces as extended XYZ")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)
    p = sub.add_parser("selfcheck", help="run the embedded property suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, ParseError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractViolation as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
