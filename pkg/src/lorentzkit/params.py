"""Parameter slots and the per-step graph context.

A ParamSlot owns one trainable buffer: a Euclidean tensor, a Lorentz point
(batched over leading axes), or a manifold's raw curvature scalar (the slot
aliases ManifoldHandle.kappa_raw, so optimizer writes update the handle).

GraphContext builds one autodiff leaf per buffer per forward pass and caches
the curvature node K = exp(kappa_raw) for each manifold; after backward(),
collect_grads() copies leaf gradients back onto the slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine.node import Node, leaf
from .engine import ops
from .errors import UsageError
from .manifold import ManifoldHandle

EUCLIDEAN = "euclidean"
LORENTZ = "lorentz"
CURVATURE = "curvature"


@dataclass(eq=False)  # identity semantics: slots are unique stateful objects
class ParamSlot:
    name: str
    kind: str
    value: np.ndarray
    manifold: ManifoldHandle | None = None
    grad: np.ndarray | None = None
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in (EUCLIDEAN, LORENTZ, CURVATURE):
            raise UsageError(f"unknown slot kind {self.kind!r}")
        if self.kind in (LORENTZ, CURVATURE) and self.manifold is None:
            raise UsageError(f"slot {self.name!r} of kind {self.kind} needs a manifold")
        self.value = np.asarray(self.value)


def curvature_slot(handle: ManifoldHandle, name: str | None = None) -> ParamSlot:
    """Slot aliasing a manifold's kappa_raw buffer."""
    return ParamSlot(name=name or f"K.{handle.id}", kind=CURVATURE,
                     value=handle.kappa_raw, manifold=handle)


class GraphContext:
    """One forward/backward pass worth of leaves and cached curvature nodes."""

    def __init__(self, training: bool = True):
        self.training = training
        self._leaves: dict[int, Node] = {}
        self._knodes: dict[int, Node] = {}

    def param(self, slot: ParamSlot) -> Node:
        key = id(slot.value)
        if key not in self._leaves:
            self._leaves[key] = leaf(slot.value, requires_grad=True)
        return self._leaves[key]

    def K(self, handle: ManifoldHandle) -> Node:
        key = id(handle)
        if key not in self._knodes:
            kr = id(handle.kappa_raw)
            if kr not in self._leaves:
                self._leaves[kr] = leaf(handle.kappa_raw, requires_grad=True)
            self._knodes[key] = ops.exp(self._leaves[kr])
        return self._knodes[key]

    def collect_grads(self, slots) -> None:
        for slot in slots:
            node = self._leaves.get(id(slot.value))
            slot.grad = None if node is None or node.grad is None else node.grad
