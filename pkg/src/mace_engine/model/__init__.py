from .config import MACEConfig
from .contraction import (
    ContractionPlan,
    brute_force_message,
    build_contraction_plan,
    enumerate_product_paths,
    looped_contraction,
    product_basis,
)
from .energy import ForwardResult, GraphBatch, forward, forward_energy, node_features, readout
from .layers import (
    IrrepTensor,
    compute_A,
    compute_A_first,
    coupling_triples,
    embed_elements,
    update_features,
)
from .params import ModelParams, init_params, load_model, parameter_shapes, save_model, zero_params

__all__ = [
    "MACEConfig",
    "ContractionPlan",
    "brute_force_message",
    "build_contraction_plan",
    "enumerate_product_paths",
    "looped_contraction",
    "product_basis",
    "ForwardResult",
    "GraphBatch",
    "forward",
    "forward_energy",
    "node_features",
    "readout",
    "IrrepTensor",
    "compute_A",
    "compute_A_first",
    "coupling_triples",
    "embed_elements",
    "update_features",
    "ModelParams",
    "init_params",
    "load_model",
    "parameter_shapes",
    "save_model",
    "zero_params",
]
