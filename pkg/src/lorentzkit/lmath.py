"""Lorentz-model math on raw coordinate arrays.

Points live on the upper hyperboloid sheet {x : <x,x>_L = -K, x_t > 0} in
(n+1)-dimensional Minkowski space, with curvature parameter K > 0 (sectional
curvature -1/K). Coordinates sit on the last axis, index 0 is the time
component; any leading axes are batch axes.

Every function accepts autodiff Nodes or numpy arrays (see engine.ops) and a
scalar curvature K (Node or float). Singular arccosh/sqrt arguments are
clamped with per-dtype margins; the linear term of the log map keeps the raw
beta so that logmap(x, x) is exactly zero.
"""

from __future__ import annotations

import math

import numpy as np

from . import runtime
from .engine import ops
from .errors import NumericError, UsageError

# Test hook for the invariant suite's fault-injection mode: flips the sign of
# the parallel-transport correction term. Never set outside the suite.
_FAULT_PT_SIGN = False


def _dtype_of(x):
    return ops.data_of(x).dtype


def sqrt_scalar(K):
    """sqrt of a scalar curvature; stays a python float for numpy inputs."""
    if ops.is_node(K):
        return ops.sqrt(K)
    return math.sqrt(float(K))


def time_of(x, keepdims: bool = True):
    return x[..., :1] if keepdims else x[..., 0]


def space_of(x):
    return x[..., 1:]


def inner(u, v, keepdims: bool = False):
    """Minkowski inner product along the last axis: -u_t v_t + u_s . v_s."""
    ud, vd = ops.data_of(u), ops.data_of(v)
    if ud.shape[-1] != vd.shape[-1]:
        raise UsageError(f"minkowski inner: length mismatch {ud.shape} vs {vd.shape}")
    if ud.shape[-1] < 2:
        raise UsageError(f"minkowski inner: need length >= 2, got {ud.shape[-1]}")
    prod = u * v
    s = ops.sum_(prod[..., 1:], axis=-1, keepdims=keepdims)
    t = prod[..., :1] if keepdims else prod[..., 0]
    return s - t


def norm2(v, keepdims: bool = False):
    """Squared Lorentz norm <v,v>_L (may be negative for timelike vectors)."""
    return inner(v, v, keepdims=keepdims)


def lnorm(v, keepdims: bool = False):
    """Lorentz norm sqrt(max(<v,v>, 0)) for spacelike/null tangents.

    The pre-sqrt floor of 1e-30 keeps backward finite at exact zeros (the
    clamp blocks the gradient there, so 0.5/sqrt never meets a zero).
    """
    return ops.sqrt(ops.clamp_min(norm2(v, keepdims=keepdims), 1e-30))


def origin(K, n: int, dtype=np.float64) -> np.ndarray:
    """Origin coordinates [sqrt(K), 0, ..., 0] as a plain array."""
    o = np.zeros(n + 1, dtype=dtype)
    o[0] = math.sqrt(float(K))
    return o


def project_space(space, K):
    """Lift space components onto the manifold: t = sqrt(|s|^2 + K)."""
    sq = ops.sum_(space * space, axis=-1, keepdims=True)
    t = ops.sqrt(sq + K)
    return ops.concat([t, space], axis=-1)


def residual(x, K):
    """On-manifold residual |<x,x>_L + K| (plain array)."""
    return np.abs(ops.data_of(norm2(x)) + float(ops.data_of(K)))


def dist(x, y, K):
    """Geodesic distance sqrt(K) * arccosh(-<x,y>/K)."""
    beta = -inner(x, y) / K
    return sqrt_scalar(K) * ops.arccosh(beta)


def dist0(y, K):
    """Distance from the origin, computed without building origin arrays."""
    beta = time_of(y, keepdims=False) / sqrt_scalar(K)
    return sqrt_scalar(K) * ops.arccosh(beta)


def dist2(x, y, K):
    """Squared Lorentzian distance -2K - 2<x,y>_L (zero iff x == y)."""
    return -2.0 * K - 2.0 * inner(x, y)


def _sinhc(a):
    """sinh(a)/a with the series 1 + a^2/6 below 1e-4 (removes the 0/0)."""
    ad = ops.data_of(a)
    small = ad < 1e-4
    safe = ops.clamp_min(a, 1e-30)
    return ops.where(small, 1.0 + a * a / 6.0, ops.sinh(safe) / safe)


def expmap(x, z, K):
    """Map tangent z at x onto the manifold: cosh(a) x + sinhc(a) z."""
    a = ops.sqrt(ops.clamp_min(norm2(z, keepdims=True), 1e-30)) / sqrt_scalar(K)
    return ops.cosh(a) * x + _sinhc(a) * z


def _acosh_factor(beta, dtype):
    """arccosh(beta)/sqrt(beta^2-1) with both parts clamped at 1+eps."""
    eps = runtime.eps_acosh(dtype)
    bc = ops.clamp_min(beta, 1.0 + eps)
    return ops.arccosh(bc) / ops.sqrt(bc * bc - 1.0)


def logmap(x, y, K):
    """Inverse of expmap: factor(beta) * (y - beta x), beta = -<x,y>/K.

    The singular factor uses the clamped beta; the linear term keeps the raw
    beta so logmap(x, x) returns an exact zero tangent.
    """
    beta = -inner(x, y, keepdims=True) / K
    return _acosh_factor(beta, _dtype_of(x)) * (y - beta * x)


def expmap0_space(zs, K):
    """expmap at the origin from tangent space components (time slot is 0)."""
    a = ops.sqrt(ops.clamp_min(ops.sum_(zs * zs, axis=-1, keepdims=True), 1e-30)) \
        / sqrt_scalar(K)
    t = sqrt_scalar(K) * ops.cosh(a)
    return ops.concat([t, _sinhc(a) * zs], axis=-1)


def logmap0_space(y, K):
    """Space components of logmap at the origin (its time slot is exactly 0)."""
    beta = time_of(y) / sqrt_scalar(K)
    return _acosh_factor(beta, _dtype_of(y)) * space_of(y)


def ptransp(x, y, v, K):
    """Parallel transport of tangent v from x to y along the geodesic."""
    coef = inner(y, v, keepdims=True) / (K - inner(x, y, keepdims=True))
    if _FAULT_PT_SIGN:
        coef = -coef
    return v + coef * (x + y)


def project_tangent(p, v, K):
    """Project v onto the tangent space at p: v + <p,v>/K * p."""
    return v + (inner(p, v, keepdims=True) / K) * p


def centroid(points, weights, K):
    """Weighted Lorentzian centroid: normalize the weighted coordinate sum.

    points: (..., m, n+1); weights: (m,) or broadcastable to (..., m).
    Raises NumericError when the weighted sum is not timelike.
    """
    w = ops.reshape(weights, tuple(ops.data_of(weights).shape) + (1,))
    s = ops.sum_(points * w, axis=-2)
    nrm2 = norm2(s, keepdims=True)
    if np.any(ops.data_of(nrm2) >= -1e-12):
        raise NumericError("lorentz centroid: weighted sum is not timelike")
    return s / ops.sqrt(-nrm2 / K)


def concat_points(xs, K):
    """Direct Lorentz concatenation of m points (equal curvature).

    Space components are concatenated; the joint time component is
    sqrt(sum t_i^2 - (m-1) K), which lands on the manifold by construction.
    """
    m = len(xs)
    times = [time_of(x) for x in xs]
    tsq = times[0] * times[0]
    for t in times[1:]:
        tsq = tsq + t * t
    t_out = ops.sqrt(tsq - (m - 1) * K)
    return ops.concat([t_out] + [space_of(x) for x in xs], axis=-1)
