"""Representable-radius bounds and maximum-distance tanh rescaling.

Floating point can only place points on the hyperboloid up to a time
component x_t_max before x_t^2 - |x_s|^2 collapses onto the light cone; this
gives a precision- and curvature-dependent radius

    d_max(K) = arccosh(x_t_max / sqrt(K)) * sqrt(K).

The rescaling maps any origin tangent z to z * d_max * tanh(r |z|) / |z| with
r = atanh(0.99) / (s * d_max), so the image radius approaches d_max, hits
0.99 * d_max exactly at |z| = s * d_max, and amplifies small norms by about
atanh(0.99)/s (the map is intentionally not the identity near 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lmath, runtime
from .engine import ops
from .errors import NumericError, UsageError
from .manifold import LorentzPoint, TangentVector, origin

_ATANH_99 = math.atanh(0.99)

_XT_MAX_DEFAULTS = {
    np.dtype(np.float32): 2.0e3,
    np.dtype(np.float64): 1.0e8,
}


@dataclass(frozen=True)
class PrecisionProfile:
    """dtype tag plus the largest trustworthy time component."""

    dtype: np.dtype
    x_t_max: float

    @staticmethod
    def for_dtype(dtype, x_t_max: float | None = None) -> "PrecisionProfile":
        dt = np.dtype(dtype)
        if x_t_max is None:
            if dt not in _XT_MAX_DEFAULTS:
                raise UsageError(f"no default x_t_max for dtype {dt}; pass one explicitly")
            x_t_max = _XT_MAX_DEFAULTS[dt]
        return PrecisionProfile(dtype=dt, x_t_max=float(x_t_max))


@dataclass(frozen=True)
class RescaleConfig:
    """Tightness factor s (> 0) and the precision profile in effect."""

    s: float = 2.0
    profile: PrecisionProfile = field(
        default_factory=lambda: PrecisionProfile.for_dtype(np.float64))

    def __post_init__(self):
        if self.s <= 0:
            raise UsageError(f"tightness factor must be positive, got {self.s}")


def d_max(K, profile: PrecisionProfile):
    """Maximum representable distance from the origin at curvature K."""
    Kf = float(ops.data_of(K))
    if profile.x_t_max / math.sqrt(Kf) <= 1.0:
        raise NumericError(
            f"x_t_max={profile.x_t_max:g} <= sqrt(K)={math.sqrt(Kf):g}: "
            "manifold too curved for this precision")
    sqrt_k = lmath.sqrt_scalar(K)
    if ops.is_node(K):
        return ops.arccosh(profile.x_t_max / sqrt_k) * sqrt_k
    return math.acosh(profile.x_t_max / sqrt_k) * sqrt_k


def rescale_space(zs, K, cfg: RescaleConfig):
    """Core of the rescaling on origin-tangent space components.

    Works on (..., n) arrays or Nodes. tanh output is capped strictly below 1
    per dtype so saturation cannot place points exactly on the radius; norms
    under 1e-12 degenerate to (numerically) the origin without a 0/0.
    """
    dm = d_max(K, cfg.profile)
    r = _ATANH_99 / (cfg.s * dm)
    nrm = ops.sqrt(ops.clamp_min(ops.sum_(zs * zs, axis=-1, keepdims=True), 1e-30))
    safe = ops.clamp_min(nrm, 1e-12)
    t = ops.clamp_max(ops.tanh(r * safe), runtime.tanh_cap(ops.data_of(zs).dtype))
    return zs * (dm * t / safe)


def rescale_point(x: LorentzPoint, cfg: RescaleConfig) -> LorentzPoint:
    """Pull x inside the representable radius along its geodesic from 0."""
    K = x.manifold.K
    zs = lmath.logmap0_space(x.coords, K)
    return LorentzPoint(lmath.expmap0_space(rescale_space(zs, K, cfg), K),
                        x.manifold, check=False)


def rescale_tangent(z: TangentVector, cfg: RescaleConfig) -> TangentVector:
    """Same map applied directly in the origin tangent space."""
    base = z.base
    if float(np.max(np.abs(base.data[..., 1:]))) > runtime.tol_manifold(base.data.dtype):
        raise UsageError("rescale_tangent expects a tangent at the origin")
    zs = lmath.space_of(z.coords)
    out_s = rescale_space(zs, base.manifold.K, cfg)
    if ops.is_node(out_s):
        coords = ops.concat([out_s[..., :1] * 0.0, out_s], axis=-1)
    else:
        zeros = np.zeros(out_s.shape[:-1] + (1,), dtype=out_s.dtype)
        coords = np.concatenate([zeros, out_s], axis=-1)
    return TangentVector(coords, origin(base.manifold), check=False)
