"""Finite-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from .node import Node, backward, leaf


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    tol: float
    worst: tuple[int, int] = (0, 0)  # (input index, flat coordinate)
    per_input: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.max_rel_err <= self.tol


def finite_diff_check(f, inputs, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar f against central differences.

    `f` maps a list of leaf Nodes to a scalar Node; `inputs` are numpy arrays
    (perturbed in float64 regardless of their dtype to keep the stencil
    meaningful). Relative error uses max(|analytic|, |numeric|, 1e-2) as the
    denominator so near-zero coordinates are judged on an absolute scale.
    """
    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
    leaves = [leaf(a.copy()) for a in arrays]
    out = f(leaves)
    if not isinstance(out, Node) or out.data.size != 1:
        raise UsageError("finite_diff_check: f must return a scalar Node")
    backward(out)
    analytic = [lf.grad if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves]

    def eval_at(pts) -> float:
        res = f([leaf(p, requires_grad=False) for p in pts])
        return float(res.data)

    max_rel = 0.0
    max_abs = 0.0
    worst = (0, 0)
    per_input = []
    for i, a in enumerate(arrays):
        flat = a.reshape(-1)
        num = np.zeros_like(flat)
        for j in range(flat.size):
            bumped = [x.copy() for x in arrays]
            bumped[i].reshape(-1)[j] = flat[j] + h
            up = eval_at(bumped)
            bumped[i].reshape(-1)[j] = flat[j] - h
            dn = eval_at(bumped)
            num[j] = (up - dn) / (2.0 * h)
        ana = analytic[i].reshape(-1)
        abs_err = np.abs(ana - num)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-2)
        rel = abs_err / denom
        per_input.append(float(rel.max()) if rel.size else 0.0)
        if rel.size and rel.max() > max_rel:
            max_rel = float(rel.max())
            worst = (i, int(rel.argmax()))
        if abs_err.size:
            max_abs = max(max_abs, float(abs_err.max()))
    return GradCheckReport(max_rel_err=max_rel, max_abs_err=max_abs, tol=tol,
                           worst=worst, per_input=per_input)
