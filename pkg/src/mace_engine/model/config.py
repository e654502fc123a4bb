from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..errors import ContractViolation
from ..radial import RadialConfig


@dataclass(frozen=True)
class MACEConfig:
    """Architecture hyper-parameters.

    ``l_max`` bounds the edge spherical harmonics and the A-features, ``L_max``
    the node features and messages. ``uncoupled_channels`` keeps the per-``l``
    channel mixing of the A-features fixed to the identity.
    """

    elements: tuple = (1, 6, 8)
    num_layers: int = 2
    correlation: int = 3
    l_max: int = 3
    L_max: int = 2
    channels: int = 32
    r_cut: float | None = None
    radial: RadialConfig = field(default_factory=RadialConfig)
    readout_mlp_width: int = 16
    uncoupled_channels: bool = True

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(int(z) for z in self.elements))
        if isinstance(self.radial, dict):
            object.__setattr__(self, "radial", RadialConfig(**self.radial))
        if self.r_cut is None:
            object.__setattr__(self, "r_cut", float(self.radial.r_cut))
        elif self.r_cut != self.radial.r_cut:
            object.__setattr__(self, "radial", dataclasses.replace(self.radial, r_cut=float(self.r_cut)))
        if not self.elements or len(set(self.elements)) != len(self.elements):
            raise ContractViolation("elements must be a non-empty list of distinct atomic numbers")
        if self.num_layers < 1:
            raise ContractViolation("num_layers must be >= 1")
        if self.correlation < 1:
            raise ContractViolation("correlation must be >= 1")
        if self.channels < 1:
            raise ContractViolation("channels must be >= 1")
        if self.l_max < 0 or self.L_max < 0:
            raise ContractViolation("l_max and L_max must be non-negative")
        if self.L_max > self.l_max * self.correlation:
            raise ContractViolation("L_max cannot be reached from l_max at this correlation order")
        if self.readout_mlp_width < 1:
            raise ContractViolation("readout_mlp_width must be >= 1")

    @property
    def num_elements(self):
        return len(self.elements)

    def element_index(self, z):
        try:
            return self.elements.index(int(z))
        except ValueError:
            raise ContractViolation(f"element {int(z)} is not in the model element list {self.elements}") from None

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["elements"] = list(self.elements)
        d["radial"]["mlp_widths"] = list(self.radial.mlp_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "radial" in d:
            d["radial"] = RadialConfig(**d["radial"])
        return cls(**d)
