"""Typed Lorentz-manifold API: handles, points, tangent vectors, operations.

A ManifoldHandle names one hyperbolic space with a learnable curvature; many
handles coexist (per-block manifolds). Points and tangents are immutable
once constructed and validate their defining constraints while
runtime.strict_checks is on. The heavy lifting is in lmath; this module adds
typing, precondition checks and the public operation surface.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import lmath, runtime
from .engine import ops
from .errors import UsageError


class ManifoldHandle:
    """A named hyperbolic space with learnable curvature K = exp(kappa_raw).

    kappa_raw is held as a 0-d array so optimizer slots can update it in
    place; K_prev snapshots the pre-update curvature and is refreshed only by
    the optimizer's curvature phase.
    """

    def __init__(self, id: str, dim: int, kappa_raw: float = 0.0, dtype=np.float64):
        self.id = id
        self.dim = int(dim)
        self.kappa_raw = np.asarray(kappa_raw, dtype=dtype)
        self.K_prev = float(np.exp(self.kappa_raw))

    @property
    def K(self) -> float:
        return float(np.exp(self.kappa_raw))

    @property
    def dtype(self):
        return self.kappa_raw.dtype

    def __repr__(self) -> str:
        return f"ManifoldHandle({self.id!r}, dim={self.dim}, K={self.K:.6g})"


def _same_manifold(a: "LorentzPoint", b: "LorentzPoint", what: str) -> None:
    if a.manifold is not b.manifold:
        raise UsageError(f"{what}: points live on different manifolds "
                         f"({a.manifold.id!r} vs {b.manifold.id!r})")


class LorentzPoint:
    """Coordinates of one point (or a batch) with its manifold reference."""

    __slots__ = ("coords", "manifold")

    def __init__(self, coords, manifold: ManifoldHandle, check: bool | None = None):
        self.coords = coords
        self.manifold = manifold
        d = ops.data_of(coords)
        if d.shape[-1] != manifold.dim + 1:
            raise UsageError(f"point has {d.shape[-1]} coords, manifold {manifold.id!r} "
                             f"expects {manifold.dim + 1}")
        if check if check is not None else runtime.strict_checks:
            tol = runtime.tol_manifold(d.dtype)
            res = lmath.residual(d, manifold.K)
            if np.any(res > tol * max(1.0, manifold.K)) or np.any(d[..., 0] <= 0):
                raise UsageError(
                    f"coords violate the hyperboloid constraint at K={manifold.K:.6g} "
                    f"(max residual {float(np.max(res)):.3e})")

    @property
    def data(self) -> np.ndarray:
        return ops.data_of(self.coords)

    def __repr__(self) -> str:
        return f"LorentzPoint(shape={self.data.shape}, manifold={self.manifold.id!r})"


class TangentVector:
    """A tangent vector attached to its base point (Minkowski-orthogonal)."""

    __slots__ = ("coords", "base")

    def __init__(self, coords, base: LorentzPoint, check: bool | None = None):
        self.coords = coords
        self.base = base
        d = ops.data_of(coords)
        if d.shape[-1] != base.data.shape[-1]:
            raise UsageError(f"tangent has {d.shape[-1]} coords, base has {base.data.shape[-1]}")
        if check if check is not None else runtime.strict_checks:
            tol = runtime.tol_manifold(d.dtype)
            ip = np.abs(ops.data_of(lmath.inner(base.data, d)))
            if np.any(ip > tol * max(1.0, base.manifold.K)):
                raise UsageError(f"vector is not tangent at its base point "
                                 f"(max |<base,v>| = {float(np.max(ip)):.3e})")

    @property
    def data(self) -> np.ndarray:
        return ops.data_of(self.coords)

    @property
    def manifold(self) -> ManifoldHandle:
        return self.base.manifold


# -- operations ---------------------------------------------------------------

def minkowski_inner(u, v):
    """-u_t v_t + u_s . v_s for raw coordinate vectors."""
    return lmath.inner(np.asarray(u, dtype=np.float64) if not ops.is_node(u) else u,
                       np.asarray(v, dtype=np.float64) if not ops.is_node(v) else v)


def origin(manifold: ManifoldHandle) -> LorentzPoint:
    """The distinguished point [sqrt(K), 0, ..., 0]."""
    return LorentzPoint(lmath.origin(manifold.K, manifold.dim, manifold.dtype),
                        manifold, check=False)


def origin_tangent(manifold: ManifoldHandle, space) -> TangentVector:
    """Tangent at the origin from its space components (time slot 0)."""
    space = np.asarray(space, dtype=manifold.dtype)
    coords = np.concatenate([np.zeros(space.shape[:-1] + (1,), dtype=space.dtype), space],
                            axis=-1)
    return TangentVector(coords, origin(manifold), check=False)


def project_to_manifold(space, manifold: ManifoldHandle) -> LorentzPoint:
    """Lift space components: x = [sqrt(|s|^2 + K), s]; on-manifold exactly."""
    if not ops.is_node(space):
        space = np.asarray(space, dtype=manifold.dtype)
    return LorentzPoint(lmath.project_space(space, manifold.K), manifold, check=False)


def distance(x: LorentzPoint, y: LorentzPoint):
    _same_manifold(x, y, "distance")
    return lmath.dist(x.coords, y.coords, x.manifold.K)


def squared_distance(x: LorentzPoint, y: LorentzPoint):
    _same_manifold(x, y, "squared_distance")
    return lmath.dist2(x.coords, y.coords, x.manifold.K)


def exp_map(x: LorentzPoint, z: TangentVector) -> LorentzPoint:
    if z.base.manifold is not x.manifold:
        raise UsageError("exp_map: tangent belongs to a different manifold")
    if runtime.strict_checks:
        tol = runtime.tol_manifold(x.data.dtype)
        ip = np.abs(ops.data_of(lmath.inner(x.data, z.data)))
        if np.any(ip > tol * max(1.0, x.manifold.K)):
            raise UsageError(f"exp_map: input is not tangent at x (max {float(np.max(ip)):.3e})")
    return LorentzPoint(lmath.expmap(x.coords, z.coords, x.manifold.K), x.manifold,
                        check=False)


def log_map(x: LorentzPoint, y: LorentzPoint) -> TangentVector:
    _same_manifold(x, y, "log_map")
    return TangentVector(lmath.logmap(x.coords, y.coords, x.manifold.K), x, check=False)


def parallel_transport(x: LorentzPoint, y: LorentzPoint, v: TangentVector) -> TangentVector:
    _same_manifold(x, y, "parallel_transport")
    if v.base is not x and v.base.manifold is not x.manifold:
        raise UsageError("parallel_transport: tangent belongs to a different manifold")
    return TangentVector(lmath.ptransp(x.coords, y.coords, v.coords, x.manifold.K), y,
                         check=False)


def lorentz_centroid(points: Sequence[LorentzPoint], weights) -> LorentzPoint:
    """Weighted centroid under squared Lorentz distance (closed form)."""
    if len(points) == 0:
        raise UsageError("lorentz_centroid: need at least one point")
    m = points[0].manifold
    for p in points[1:]:
        _same_manifold(points[0], p, "lorentz_centroid")
    w = np.asarray(ops.data_of(weights), dtype=points[0].data.dtype) \
        if not ops.is_node(weights) else weights
    wd = ops.data_of(w)
    if np.any(wd < 0) or float(wd.sum()) <= 0:
        raise UsageError("lorentz_centroid: weights must be nonnegative with positive sum")
    stacked = ops.concat([ops.reshape(p.coords, (1, m.dim + 1)) for p in points], axis=0)
    return LorentzPoint(lmath.centroid(stacked, w, m.K), m, check=False)


def lorentz_concat(points: Sequence[LorentzPoint], manifold: ManifoldHandle | None = None
                   ) -> LorentzPoint:
    """Concatenate m points into one point of dimension sum(n_i).

    All inputs must share the curvature value; the result lives on a derived
    handle that shares the curvature parameter of the first input.
    """
    if len(points) == 0:
        raise UsageError("lorentz_concat: need at least one point")
    K0 = points[0].manifold.K
    for p in points[1:]:
        if not math.isclose(p.manifold.K, K0, rel_tol=1e-12):
            raise UsageError(f"lorentz_concat: curvature mismatch "
                             f"({p.manifold.K:.6g} vs {K0:.6g})")
    if len(points) == 1:
        return points[0]
    total_dim = sum(p.manifold.dim for p in points)
    if manifold is None:
        src = points[0].manifold
        manifold = ManifoldHandle(f"{src.id}:concat{total_dim}", total_dim, dtype=src.dtype)
        manifold.kappa_raw = src.kappa_raw  # share the learnable curvature
        manifold.K_prev = src.K_prev
    elif manifold.dim != total_dim:
        raise UsageError(f"lorentz_concat: target manifold dim {manifold.dim} != {total_dim}")
    return LorentzPoint(lmath.concat_points([p.coords for p in points], K0), manifold,
                        check=False)


def check_on_manifold(x: LorentzPoint, tol: float) -> tuple[bool, float]:
    """Worst on-manifold residual and whether it (and x_t > 0) passes tol."""
    res = lmath.residual(x.data, x.manifold.K)
    worst = float(np.max(res))
    ok = bool(worst <= tol and np.all(x.data[..., 0] > 0))
    return ok, worst
