"""Atomic configurations, neighbour lists and dataset statistics.

Units are eV, Angstrom and eV/Angstrom throughout; no conversion layer.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractViolation, DataError

COINCIDENT_TOL = 1e-6


@dataclass
class Configuration:
    positions: np.ndarray
    species: np.ndarray
    energy: float | None = None
    forces: np.ndarray | None = None
    cell: np.ndarray | None = None
    pbc: tuple = (False, False, False)
    info: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.species = np.asarray(self.species, dtype=np.int64).reshape(-1)
        if len(self.species) != len(self.positions):
            raise ContractViolation("species and positions disagree on the number of atoms")
        if not np.all(np.isfinite(self.positions)):
            raise ContractViolation("positions must be finite")
        if np.any(self.species <= 0):
            raise ContractViolation("atomic numbers must be positive")
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=np.float64)
            if self.forces.shape != self.positions.shape:
                raise ContractViolation(
                    f"forces shape {self.forces.shape} does not match positions {self.positions.shape}"
                )
        if self.energy is not None:
            self.energy = float(self.energy)
        if self.cell is not None:
            self.cell = np.asarray(self.cell, dtype=np.float64).reshape(3, 3)
        self.pbc = tuple(bool(p) for p in self.pbc)
        if any(self.pbc) and self.cell is None:
            raise ContractViolation("periodic configuration needs a cell")
        if len(self.positions) > 1:
            pairs = cKDTree(self.positions).query_pairs(COINCIDENT_TOL)
            if pairs:
                i, j = sorted(pairs)[0]
                raise ContractViolation(f"atoms {i} and {j} coincide within {COINCIDENT_TOL} A")

    def __len__(self):
        return len(self.species)

    @property
    def periodic(self):
        return any(self.pbc)


@dataclass
class NeighborList:
    """Directed edges ``receiver i <- sender j``.

    ``vectors[e] = positions[j] + shifts[e] @ cell - positions[i]`` (sender minus
    receiver); ``unit_vectors`` are those vectors normalised.
    """

    receivers: np.ndarray
    senders: np.ndarray
    shifts: np.ndarray
    distances: np.ndarray
    unit_vectors: np.ndarray
    r_cut: float

    def __len__(self):
        return len(self.receivers)

    def shift_vectors(self, cell):
        if cell is None:
            return np.zeros((len(self), 3))
        return self.shifts @ cell


def _lattice_repeats(cell, pbc, r_cut):
    cell = np.asarray(cell)
    volume = abs(np.linalg.det(cell))
    reps = []
    for axis in range(3):
        if not pbc[axis]:
            reps.append(0)
            continue
        b, c = cell[(axis + 1) % 3], cell[(axis + 2) % 3]
        spacing = volume / np.linalg.norm(np.cross(b, c))
        reps.append(int(math.ceil(r_cut / spacing)))
    return reps


def _prepare(config, r_cut):
    if not r_cut > 0:
        raise ContractViolation("r_cut must be positive")
    pos = config.positions
    n = len(pos)
    if not config.periodic:
        return pos, np.zeros((n, 3), dtype=np.int64), np.zeros((1, 3), dtype=np.int64), None
    cell = config.cell
    if abs(np.linalg.det(cell)) < 1e-12:
        raise ContractViolation("cell is singular")
    frac = pos @ np.linalg.inv(cell)
    wrap = np.floor(frac).astype(np.int64)
    wrap[:, ~np.asarray(config.pbc)] = 0
    wrapped = pos - wrap @ cell
    reps = _lattice_repeats(cell, config.pbc, r_cut)
    shifts = np.array(
        list(itertools.product(*(range(-r, r + 1) for r in reps))), dtype=np.int64
    )
    return wrapped, wrap, shifts, cell


def _finish(config, r_cut, recv, send, shift):
    pos = config.positions
    vec = pos[send] - pos[recv]
    if config.cell is not None:
        vec = vec + shift @ config.cell
    dist = np.linalg.norm(vec, axis=1)
    keep = dist < r_cut
    recv, send, shift, vec, dist = recv[keep], send[keep], shift[keep], vec[keep], dist[keep]
    if np.any(dist < COINCIDENT_TOL):
        e = int(np.argmin(dist))
        raise ContractViolation(f"atoms {recv[e]} and {send[e]} (image {tuple(shift[e])}) coincide")
    order = np.lexsort((shift[:, 2], shift[:, 1], shift[:, 0], send, recv))
    recv, send, shift, vec, dist = recv[order], send[order], shift[order], vec[order], dist[order]
    return NeighborList(recv, send, shift, dist, vec / dist[:, None], float(r_cut))


def _brute_force_edges(config, r_cut):
    wrapped, wrap, shifts, cell = _prepare(config, r_cut)
    n = len(wrapped)
    recv, send, shift = [], [], []
    for s in shifts:
        offset = s @ cell if cell is not None else np.zeros(3)
        d = wrapped[None, :, :] + offset - wrapped[:, None, :]
        dist = np.linalg.norm(d, axis=-1)
        mask = dist < r_cut
        if not s.any():
            mask[np.arange(n), np.arange(n)] = False
        i, j = np.nonzero(mask)
        recv.append(i)
        send.append(j)
        shift.append(np.broadcast_to(s, (len(i), 3)))
    recv = np.concatenate(recv).astype(np.int64)
    send = np.concatenate(send).astype(np.int64)
    shift = np.concatenate(shift).astype(np.int64).reshape(-1, 3)
    return recv, send, shift, wrap


def _tree_edges(config, r_cut):
    wrapped, wrap, shifts, cell = _prepare(config, r_cut)
    n = len(wrapped)
    offsets = shifts @ cell if cell is not None else np.zeros((1, 3))
    images = (wrapped[None, :, :] + offsets[:, None, :]).reshape(-1, 3)
    pairs = cKDTree(wrapped).sparse_distance_matrix(cKDTree(images), r_cut, output_type="ndarray")
    recv = pairs["i"].astype(np.int64)
    img = pairs["j"].astype(np.int64)
    send = img % n
    shift = shifts[img // n]
    self_edge = (recv == send) & ~shift.any(axis=1)
    return recv[~self_edge], send[~self_edge], shift[~self_edge], wrap


def build_neighbor_list(config, r_cut, method="auto"):
    """All directed pairs closer than ``r_cut`` (strict), including periodic images.

    ``method`` is ``"brute"`` (O(N^2) per lattice shift), ``"tree"`` (k-d tree over
    the periodic images) or ``"auto"``. Both produce the same sorted edge list.
    """
    if method == "auto":
        method = "brute" if len(config) <= 64 else "tree"
    if method == "brute":
        recv, send, shift, wrap = _brute_force_edges(config, r_cut)
    elif method == "tree":
        recv, send, shift, wrap = _tree_edges(config, r_cut)
    else:
        raise ValueError(f"unknown neighbour-list method {method!r}")
    # shifts found on wrapped coordinates, expressed for the original positions
    shift = shift - wrap[send] + wrap[recv]
    return _finish(config, r_cut, recv, send, shift)


@dataclass
class DatasetStats:
    per_atom_shift: float
    force_scale: float
    element_counts: dict
    avg_num_neighbors: float | None = None

    def __post_init__(self):
        if not self.force_scale > 0:
            raise ContractViolation("force_scale must be positive")


def compute_dataset_stats(configs, r_cut=None):
    """Mean per-atom energy and RMS force component over labelled configurations.

    ``force_scale`` falls back to 1.0 when no forces are present or all are zero.
    With ``r_cut`` the average number of neighbours per atom is also recorded.
    """
    labelled = [c for c in configs if c.energy is not None]
    if not labelled:
        raise DataError("no configuration carries an energy label")
    shift = float(np.mean([c.energy / len(c) for c in labelled]))
    comps = [c.forces.ravel() for c in configs if c.forces is not None]
    scale = 1.0
    if comps:
        rms = float(np.sqrt(np.mean(np.concatenate(comps) ** 2)))
        if rms > 0:
            scale = rms
    counts = {}
    for c in configs:
        for z in c.species:
            counts[int(z)] = counts.get(int(z), 0) + 1
    avg = None
    if r_cut is not None:
        n_edges = sum(len(build_neighbor_list(c, r_cut)) for c in configs)
        n_atoms = sum(len(c) for c in configs)
        avg = n_edges / n_atoms
    return DatasetStats(shift, scale, dict(sorted(counts.items())), avg)
