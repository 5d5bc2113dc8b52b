from . import backend, opcodes
from .engine import (
    Graph,
    Node,
    apply_primitive,
    as_tensor,
    backward,
    grad_values,
    second_order_grad,
)
from .ops import ARRAY_OPS, ArrayOps, GraphOps
from .optim import AdamState, adam_step, clip_global_norm, global_norm, sgd_step

__all__ = [
    "ARRAY_OPS",
    "AdamState",
    "ArrayOps",
    "Graph",
    "GraphOps",
    "Node",
    "adam_step",
    "apply_primitive",
    "as_tensor",
    "backend",
    "backward",
    "clip_global_norm",
    "global_norm",
    "grad_values",
    "opcodes",
    "second_order_grad",
    "sgd_step",
]
