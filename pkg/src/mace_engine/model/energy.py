"""Batched forward pass: configurations to site energies and total energies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tape as T
from ..equivariant import sh_poly_table
from ..graph import build_neighbor_list
from ..radial import RadialMLPParams, bessel_basis, radial_mlp
from .contraction import build_contraction_plan, looped_contraction
from .layers import (
    compute_A,
    compute_A_first,
    edge_coupling,
    embed_elements,
    linear_per_l,
    readout_linear,
    readout_mlp,
    update_features,
)


@dataclass
class GraphBatch:
    """Disjoint union of configurations with global node and edge indices."""

    positions: np.ndarray  # (N, 3)
    species_index: np.ndarray  # (N,) index into the model element list
    receivers: np.ndarray
    senders: np.ndarray
    edge_offsets: np.ndarray  # (E, 3) lattice shift vectors, constant w.r.t. positions
    node_graph: np.ndarray  # (N,) configuration index of each node
    n_graphs: int

    @property
    def n_nodes(self):
        return len(self.positions)

    @classmethod
    def from_configs(cls, configs, model_cfg, neighbor_lists=None):
        pos, species_idx, recv, send, offs, graph = [], [], [], [], [], []
        base = 0
        for g, c in enumerate(configs):
            nl = neighbor_lists[g] if neighbor_lists is not None else build_neighbor_list(c, model_cfg.r_cut)
            pos.append(c.positions)
            species_idx.append([model_cfg.element_index(z) for z in c.species])
            recv.append(nl.receivers + base)
            send.append(nl.senders + base)
            offs.append(nl.shift_vectors(c.cell))
            graph.append(np.full(len(c), g))
            base += len(c)
        cat = lambda xs, dt, shape: np.concatenate(xs).astype(dt) if xs else np.zeros(shape, dt)  # noqa: E731
        return cls(
            cat(pos, np.float64, (0, 3)).reshape(-1, 3),
            cat(species_idx, np.int64, (0,)),
            cat(recv, np.int64, (0,)),
            cat(send, np.int64, (0,)),
            cat(offs, np.float64, (0, 3)).reshape(-1, 3),
            cat(graph, np.int64, (0,)),
            len(configs),
        )


@dataclass
class ForwardResult:
    energies: object  # (n_graphs,)
    site_energies: object  # (N,)
    layer_energies: list  # per layer (N,)
    features: list  # h after each layer, (N, k, (L_max+1)**2)


def edge_geometry(positions, batch):
    """Edge vectors ``r_j + offset - r_i``, lengths and unit vectors (tape-aware)."""
    vec = T.add(T.sub(T.take(positions, batch.senders), T.take(positions, batch.receivers)), batch.edge_offsets)
    dist = T.sqrt(T.sum_(T.mul(vec, vec), axis=1))
    e = len(batch.receivers)
    unit = T.div(vec, T.reshape(dist, (e, 1)))
    return vec, dist, unit


def _radial(params_t, layer, cfg, basis, n_triples):
    p = f"layer{layer}.radial.w"
    n_w = len(cfg.radial.mlp_widths) + 1
    mlp = RadialMLPParams([params_t[p + str(i)] for i in range(n_w)])
    out = radial_mlp(basis, mlp)
    e = T.value_of(basis).shape[0]
    return T.reshape(out, (e, cfg.channels, n_triples))


def forward(params, batch, tensors=None, positions=None):
    """Run the model on ``batch``.

    ``tensors`` overrides ``params.tensors`` (e.g. with recorded tape values) and
    ``positions`` overrides ``batch.positions``.
    """
    cfg = params.config
    tensors = params.tensors if tensors is None else tensors
    positions = batch.positions if positions is None else positions
    plan = build_contraction_plan(cfg)
    n = batch.n_nodes
    species_idx = batch.species_index

    _, dist, unit = edge_geometry(positions, batch)
    sh = T.poly_eval(unit, sh_poly_table(cfg.l_max))
    basis = bessel_basis(dist, cfg.radial) if len(batch.receivers) else np.zeros((0, cfg.radial.n_basis))

    h = embed_elements(species_idx, tensors["embedding"])
    features, layer_energies = [], []
    for t in range(cfg.num_layers):
        p = f"layer{t}."
        l_in = 0 if t == 0 else cfg.L_max
        coupling = edge_coupling(cfg.l_max, l_in)
        radial = _radial(tensors, t, cfg, basis, len(coupling.triples))
        if t == 0:
            A = compute_A_first(
                batch.receivers, batch.senders, n, radial, sh, species_idx, tensors[p + "edge_embed"], params.norm, cfg.l_max
            )
        else:
            A = compute_A(
                batch.receivers, batch.senders, n, radial, sh, h, tensors[p + "node_mix"], params.norm, cfg.l_max, l_in
            )
        if not cfg.uncoupled_channels:
            A = linear_per_l(A, tensors[p + "a_mix"], cfg.l_max)
        weights = {nu: tensors[p + f"product.nu{nu}"] for nu in range(1, cfg.correlation + 1)}
        m = looped_contraction(A, plan, weights, species_idx)
        h = update_features(m, h, species_idx, tensors[p + "update.message"], tensors[p + "update.residual"], cfg.L_max)
        features.append(h)
        if t < cfg.num_layers - 1:
            layer_energies.append(readout_linear(h, tensors[p + "readout"]))
        else:
            layer_energies.append(readout_mlp(h, tensors[p + "readout.hidden"], tensors[p + "readout.out"]))

    total = layer_energies[0]
    for e_t in layer_energies[1:]:
        total = T.add(total, e_t)
    site = T.add(T.mul(total, params.scale), params.shift)
    energies = T.index_add(site, batch.node_graph, batch.n_graphs, canonical=True)
    return ForwardResult(energies, site, layer_energies, features)


def readout(h_layers, params):
    """Per-layer site energies from a list of layer outputs (linear, then MLP for the last)."""
    cfg = params.config
    out = []
    for t, h in enumerate(h_layers):
        p = f"layer{t}."
        if t < cfg.num_layers - 1:
            out.append(readout_linear(h, params.tensors[p + "readout"]))
        else:
            out.append(readout_mlp(h, params.tensors[p + "readout.hidden"], params.tensors[p + "readout.out"]))
    return out


def forward_energy(config, params, neighbor_list=None):
    """Total energy (eV) and site energies (eV) of one configuration."""
    batch = GraphBatch.from_configs([config], params.config, None if neighbor_list is None else [neighbor_list])
    with T.no_record():
        res = forward(params, batch)
    return float(res.energies[0]), np.asarray(res.site_energies)


def node_features(config, params):
    """Node features after every layer (plain arrays)."""
    batch = GraphBatch.from_configs([config], params.config)
    with T.no_record():
        res = forward(params, batch)
    return [np.asarray(h) for h in res.features]
