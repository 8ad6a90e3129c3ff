"""Capsule networks as connected DAGs, with universal backpropagation."""

from . import formats, generation, models
from .backprop import LossKind, LossSpec, backward, grad_check, total_loss
from .forward import evaluate
from .graph import (
    CapsuleFn,
    CapsuleGraph,
    CapsuleNode,
    Edge,
    InputNode,
    WeightingOp,
    classify,
    infer_shapes,
    topo_order,
    validate,
)
from .tensor import Tensor
from .trainer import Dataset, Sample, TrainConfig, init_params, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "CapsuleFn",
    "CapsuleGraph",
    "CapsuleNode",
    "Dataset",
    "Edge",
    "InputNode",
    "LossKind",
    "LossSpec",
    "Sample",
    "Tensor",
    "TrainConfig",
    "WeightingOp",
    "backward",
    "classify",
    "evaluate",
    "formats",
    "generation",
    "grad_check",
    "infer_shapes",
    "init_params",
    "models",
    "sgd_step",
    "topo_order",
    "total_loss",
    "train",
    "validate",
]
