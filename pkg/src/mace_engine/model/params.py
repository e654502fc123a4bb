"""Named parameter tensors, initialisation and the on-disk model container.

The container is a zip archive with two members: ``manifest.json`` (schema
version, architecture, element list, shift/scale, neighbour normalisation and a
tensor directory with shapes and byte offsets) and ``weights.bin``, all tensors
as one contiguous little-endian float64 blob in manifest order.
"""

from __future__ import annotations

import json
import math
import zipfile
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, DataError
from .config import MACEConfig
from .contraction import build_contraction_plan
from .layers import coupling_triples

MODEL_SCHEMA_VERSION = 1

# tensors that receive weight decay: the A-mixing and product-basis weights
DECAY_PREFIXES = ("product.", "a_mix")


@dataclass
class ModelParams:
    config: MACEConfig
    tensors: dict
    shift: float = 0.0
    scale: float = 1.0
    norm: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.scale > 0 or not self.norm > 0:
            raise ContractViolation("scale and norm must be positive")
        expected = parameter_shapes(self.config)
        if list(expected) != list(self.tensors):
            missing = set(expected) ^ set(self.tensors)
            raise ContractViolation(f"parameter names do not match the architecture: {sorted(missing)}")
        for name, shape in expected.items():
            arr = self.tensors[name]
            if tuple(np.shape(arr)) != shape:
                raise ContractViolation(f"{name}: expected shape {shape}, got {np.shape(arr)}")

    def names(self):
        return list(self.tensors)

    def num_parameters(self):
        return int(sum(np.size(v) for v in self.tensors.values()))

    def copy(self, tensors=None):
        src = self.tensors if tensors is None else tensors
        return ModelParams(
            self.config,
            {k: np.array(v, dtype=np.float64, copy=True) for k, v in src.items()},
            self.shift,
            self.scale,
            self.norm,
            dict(self.extra),
        )

    def decayed(self, name):
        tail = name.split(".", 1)[1] if name.startswith("layer") else name
        return tail.startswith(DECAY_PREFIXES)


def _radial_sizes(config, layer):
    l_in = 0 if layer == 0 else config.L_max
    out = config.channels * len(coupling_triples(config.l_max, l_in))
    if config.radial.out_width is not None and config.radial.out_width != out:
        raise ContractViolation(
            f"radial out_width {config.radial.out_width} does not match channels x triples = {out}"
        )
    return [config.radial.n_basis, *config.radial.mlp_widths, out]


def parameter_shapes(config):
    """Ordered ``name -> shape`` directory for ``config``."""
    k, z = config.channels, config.num_elements
    plan = build_contraction_plan(config)
    shapes = {"embedding": (z, k)}
    for t in range(config.num_layers):
        p = f"layer{t}."
        l_in = 0 if t == 0 else config.L_max
        if t == 0:
            shapes[p + "edge_embed"] = (k, z)
        else:
            shapes[p + "node_mix"] = (l_in + 1, k, k)
        sizes = _radial_sizes(config, t)
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            shapes[p + f"radial.w{i}"] = (a, b)
        if not config.uncoupled_channels:
            shapes[p + "a_mix"] = (config.l_max + 1, k, k)
        for nu in range(1, config.correlation + 1):
            shapes[p + f"product.nu{nu}"] = (z, k, plan.num_paths(nu))
        shapes[p + "update.message"] = (config.L_max + 1, k, k)
        shapes[p + "update.residual"] = (z, l_in + 1, k, k)
        if t < config.num_layers - 1:
            shapes[p + "readout"] = (k,)
        else:
            shapes[p + "readout.hidden"] = (k, config.readout_mlp_width)
            shapes[p + "readout.out"] = (config.readout_mlp_width,)
    return shapes


def _fan_in(name, shape):
    if name == "embedding":
        return 1
    if name.endswith("edge_embed"):
        return 1
    if ".product." in name:
        return shape[-1]
    if name.endswith("readout") or name.endswith("readout.out"):
        return shape[0]
    if ".radial." in name or name.endswith("readout.hidden"):
        return shape[0]
    return shape[-2]  # (..., k_in, k_out) linear maps


def init_params(config, rng, shift=0.0, scale=1.0, norm=1.0):
    """Normal(0, 1/fan_in) initialisation, in directory order, from ``rng``."""
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        tensors[name] = rng.standard_normal(shape) / math.sqrt(_fan_in(name, shape))
    return ModelParams(config, tensors, float(shift), float(scale), float(norm))


def zero_params(config, shift=0.0, scale=1.0, norm=1.0):
    tensors = {name: np.zeros(shape) for name, shape in parameter_shapes(config).items()}
    return ModelParams(config, tensors, float(shift), float(scale), float(norm))


def save_model(params, path):
    directory, offset, blobs = [], 0, []
    for name, arr in params.tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        offset += len(data)
        blobs.append(data)
    manifest = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "config": params.config.to_dict(),
        "elements": list(params.config.elements),
        "shift": params.shift,
        "scale": params.scale,
        "norm": params.norm,
        "extra": params.extra,
        "tensors": directory,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        zf.writestr("weights.bin", b"".join(blobs))


def load_model(path):
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            blob = zf.read("weights.bin")
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from None
    if manifest.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise DataError(f"unsupported model schema version {manifest.get('schema_version')!r}")
    config = MACEConfig.from_dict(manifest["config"])
    tensors = {}
    for entry in manifest["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(blob):
            raise DataError(f"weights blob truncated at tensor {entry['name']}")
        arr = np.frombuffer(blob[start : start + n], dtype="<f8").astype(np.float64)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
    return ModelParams(
        config, tensors, manifest["shift"], manifest["scale"], manifest["norm"], manifest.get("extra", {})
    )
