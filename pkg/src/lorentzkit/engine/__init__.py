"""Reverse-mode differentiation engine over numpy tensors."""

from .gradcheck import GradCheckReport, finite_diff_check
from .node import (
    DiffNode,
    Node,
    Tensor,
    as_node,
    backward,
    clear_grads,
    conv2d,
    leaf,
)
from . import kernels, ops

__all__ = [
    "DiffNode",
    "GradCheckReport",
    "Node",
    "Tensor",
    "as_node",
    "backward",
    "clear_grads",
    "conv2d",
    "finite_diff_check",
    "kernels",
    "leaf",
    "ops",
]
