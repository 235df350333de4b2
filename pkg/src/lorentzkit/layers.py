"""Network components on the Lorentz manifold.

The linear/conv transform is decomposed into a norm-preserving rotation of
the space components and a Lorentz boost, with the tanh max-distance
rescaling between them:

    out = boost(rescale(rotation_conv(x)))

The rotation kernel is Cayley-parametrized whenever the unfolded input
dimension fits inside the output dimension (kh*kw*C_in <= C_out); otherwise
the raw matrix is applied and rows are renormalized to the input norms. In
both modes the space norm is preserved, so the time component follows from
reprojection.

Every layer accepts either autodiff Nodes (pass a GraphContext) or plain
arrays (ctx=None reads parameter buffers directly); outputs satisfy the
hyperboloid constraint within dtype tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lmath, runtime, stability
from .engine import ops
from .errors import NumericError, UsageError
from .manifold import LorentzPoint, ManifoldHandle, origin
from .params import EUCLIDEAN, LORENTZ, GraphContext, ParamSlot
from .stability import RescaleConfig


@dataclass(frozen=True)
class LayerConfig:
    """Shared layer knobs: rescale policy and the unit-test bypass switch."""

    rescale: RescaleConfig = field(default_factory=RescaleConfig)
    bypass_rescale: bool = False


def _p(ctx: GraphContext | None, slot: ParamSlot):
    return ctx.param(slot) if ctx is not None else slot.value


def _K(ctx: GraphContext | None, handle: ManifoldHandle):
    return ctx.K(handle) if ctx is not None else handle.K


def derived_manifold(src: ManifoldHandle, dim: int, tag: str) -> ManifoldHandle:
    """New handle of a different dimension sharing src's curvature parameter."""
    h = ManifoldHandle(f"{src.id}:{tag}", dim, dtype=src.dtype)
    h.kappa_raw = src.kappa_raw
    h.K_prev = src.K_prev
    return h


# -- rotation ------------------------------------------------------------------

def cayley_orthogonalize(W):
    """Skew-symmetrize then Cayley-map: Q = (I - A)(I + A)^-1, det Q = +1."""
    d = ops.data_of(W)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise UsageError(f"cayley_orthogonalize expects a square matrix, got {d.shape}")
    eye = np.eye(d.shape[0], dtype=d.dtype)
    A = (W - ops.transpose(W)) * 0.5
    return ops.matmul(eye - A, ops.inv(eye + A))


def adapt_weight(raw):
    """Derive the effective kernel from a raw (C_in, C_out, kh, kw) tensor.

    Returns (mode, effective) with the effective kernel in the same 4-D
    layout. When kh*kw*C_in <= C_out the flattened matrix is replaced by the
    leading rows of a Cayley-orthogonalized square factor (orthonormal rows,
    so the applied map preserves norms); otherwise the raw kernel passes
    through and rotation_apply corrects norms explicitly.
    """
    d = ops.data_of(raw)
    if d.ndim != 4:
        raise UsageError(f"adapt_weight expects (C_in, C_out, kh, kw), got {d.shape}")
    ci, co, kh, kw = d.shape
    n = kh * kw * ci
    if n > co:
        return "norm_correct", raw
    wmat = ops.reshape(ops.transpose(raw, (2, 3, 0, 1)), (n, co))
    if n < co:
        pad = np.zeros((co - n, co), dtype=d.dtype)
        wmat = ops.concat([wmat, pad], axis=0)
    q = cayley_orthogonalize(wmat)
    rows = q[:n, :] if n < co else q
    return "cayley", ops.transpose(ops.reshape(rows, (kh, kw, ci, co)), (2, 3, 0, 1))


def _as_matrix(effective):
    """(C_in, C_out, kh, kw) -> (kh*kw*C_in, C_out) applied-map matrix."""
    d = ops.data_of(effective)
    ci, co, kh, kw = d.shape
    return ops.reshape(ops.transpose(effective, (2, 3, 0, 1)), (kh * kw * ci, co))


def rotation_apply(x_space, effective_matrix, mode: str):
    """Norm-preserving map of space components, batched over leading axes.

    cayley mode multiplies by an orthonormal-row matrix; norm_correct mode
    multiplies by the raw matrix and rescales each output back to its input
    norm. Raises NumericError when a nonzero input lands on (numerically)
    zero output in norm_correct mode.
    """
    d = ops.data_of(x_space)
    n, co = ops.data_of(effective_matrix).shape
    if d.shape[-1] != n:
        raise UsageError(f"rotation_apply: input dim {d.shape[-1]} != kernel rows {n}")
    lead = d.shape[:-1]
    flat = ops.reshape(x_space, (-1, n)) if d.ndim != 2 else x_space
    y = ops.matmul(flat, effective_matrix)
    if mode == "norm_correct":
        xn = ops.sqrt(ops.clamp_min(ops.sum_(flat * flat, axis=-1, keepdims=True), 1e-30))
        yn = ops.sqrt(ops.clamp_min(ops.sum_(y * y, axis=-1, keepdims=True), 1e-30))
        if runtime.strict_checks:
            xd, yd = ops.data_of(xn), ops.data_of(yn)
            bad = (yd < 1e-12) & (xd > runtime.tol_manifold(d.dtype))
            if np.any(bad):
                raise NumericError("rotation_apply: degenerate kernel maps a nonzero "
                                   "input to zero")
        y = y * (xn / ops.clamp_min(yn, 1e-30))
    elif mode != "cayley":
        raise UsageError(f"unknown rotation mode {mode!r}")
    if d.ndim != 2:
        y = ops.reshape(y, lead + (co,))
    return y


class RotationKernel:
    """Raw conv/linear kernel plus its derived application mode."""

    def __init__(self, c_in: int, c_out: int, kh: int = 1, kw: int = 1, *,
                 dtype=np.float64, rng: np.random.Generator | None = None,
                 name: str = "rotation"):
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.kh, self.kw = c_in, c_out, kh, kw
        n = kh * kw * c_in
        scale = 0.2 if n <= c_out else 1.0 / math.sqrt(n)
        raw = rng.normal(0.0, scale, size=(c_in, c_out, kh, kw)).astype(dtype)
        self.raw = ParamSlot(name=f"{name}.raw", kind=EUCLIDEAN, value=raw)

    @property
    def mode(self) -> str:
        return "cayley" if self.kh * self.kw * self.c_in <= self.c_out else "norm_correct"

    def matrix(self, ctx: GraphContext | None = None):
        """Effective (kh*kw*C_in, C_out) matrix of the applied map."""
        mode, eff = adapt_weight(_p(ctx, self.raw))
        return _as_matrix(eff)

    def slots(self) -> list[ParamSlot]:
        return [self.raw]


# -- boost ---------------------------------------------------------------------

def boost_apply(x, v):
    """Apply the velocity-v Lorentz boost to channel-last points x.

    gamma - 1 is evaluated as gamma^2 |v|^2 / (gamma + 1), which removes the
    cancellation near v = 0; the map is linear, so it commutes with the
    sqrt(K) scaling and preserves <.,.>_L at any curvature.
    """
    vsq = ops.sum_(v * v)
    gamma = 1.0 / ops.sqrt(ops.clamp_min(1.0 - vsq, 1e-12))
    coef = gamma * gamma / (gamma + 1.0)
    t = x[..., :1]
    s = x[..., 1:]
    vdots = ops.sum_(s * v, axis=-1, keepdims=True)
    t_out = gamma * (t - vdots)
    s_out = s - (gamma * t) * v + (coef * vdots) * v
    return ops.concat([t_out, s_out], axis=-1)


class BoostParam:
    """Raw velocity vector; the effective speed is capped below 0.99."""

    def __init__(self, n: int, *, dtype=np.float64, name: str = "boost"):
        self.n = n
        self.v_raw = ParamSlot(name=f"{name}.v_raw", kind=EUCLIDEAN,
                               value=np.zeros(n, dtype=dtype))

    def velocity(self, ctx: GraphContext | None = None):
        """v = v_raw * 0.99 * tanh(|v_raw|)/|v_raw|, so |v| < 0.99 < 1."""
        raw = _p(ctx, self.v_raw)
        nrm = ops.sqrt(ops.clamp_min(ops.sum_(raw * raw), 1e-30))
        small = ops.data_of(nrm) < 1e-4
        safe = ops.clamp_min(nrm, 1e-30)
        factor = ops.where(small, 1.0 - nrm * nrm / 3.0, ops.tanh(safe) / safe)
        return raw * (0.99 * factor)

    def slots(self) -> list[ParamSlot]:
        return [self.v_raw]


def lorentz_boost(x: LorentzPoint, v) -> LorentzPoint:
    """Typed boost; v is the effective velocity (|v| < 1)."""
    vd = ops.data_of(v)
    if float(np.linalg.norm(vd)) >= 1.0:
        raise UsageError(f"boost velocity must satisfy |v| < 1, got {np.linalg.norm(vd):.4f}")
    return LorentzPoint(boost_apply(x.coords, v), x.manifold, check=False)


# -- pointwise pieces -----------------------------------------------------------

def relu_space(x, K):
    """ReLU on space components with the time component reprojected."""
    return lmath.project_space(ops.relu(lmath.space_of(x)), K)


def lorentz_relu(x: LorentzPoint) -> LorentzPoint:
    return LorentzPoint(relu_space(x.coords, x.manifold.K), x.manifold, check=False)


def e2l(u, K, cfg: LayerConfig):
    """Euclidean vector -> manifold: treat as origin tangent, rescale, exp."""
    zs = u if cfg.bypass_rescale else stability.rescale_space(u, K, cfg.rescale)
    return lmath.expmap0_space(zs, K)


def l2e(x, K):
    """Manifold -> Euclidean vector: space part of the origin log map."""
    return lmath.logmap0_space(x, K)


def switch_e2l(u, manifold: ManifoldHandle, cfg: LayerConfig) -> LorentzPoint:
    if not ops.is_node(u):
        u = np.asarray(u, dtype=manifold.dtype)
    return LorentzPoint(e2l(u, manifold.K, cfg), manifold, check=False)


def switch_l2e(x: LorentzPoint):
    return l2e(x.coords, x.manifold.K)


# -- feature maps ----------------------------------------------------------------

class LorentzFeatureMap:
    """(B, C+1, H, W) map whose every pixel is a point on one manifold."""

    __slots__ = ("coords", "manifold")

    def __init__(self, coords, manifold: ManifoldHandle, check: bool | None = None):
        self.coords = coords
        self.manifold = manifold
        d = ops.data_of(coords)
        if d.ndim != 4 or d.shape[1] != manifold.dim + 1:
            raise UsageError(f"feature map must be (B, {manifold.dim + 1}, H, W), got {d.shape}")
        if check if check is not None else runtime.strict_checks:
            t = d[:, 0]
            ssq = np.sum(d[:, 1:] * d[:, 1:], axis=1)
            res = np.abs(ssq - t * t + manifold.K)
            tol = runtime.tol_manifold(d.dtype) * max(1.0, manifold.K)
            if np.any(res > tol) or np.any(t <= 0):
                raise UsageError(f"feature map pixels off the manifold "
                                 f"(max residual {float(res.max()):.3e})")

    @property
    def data(self) -> np.ndarray:
        return ops.data_of(self.coords)


# -- linear ----------------------------------------------------------------------

class LorentzLinear:
    """Rotation -> rescale -> boost on single points (1x1 convolution case)."""

    def __init__(self, manifold_in: ManifoldHandle, n_out: int, cfg: LayerConfig, *,
                 rng: np.random.Generator | None = None, name: str = "llinear"):
        self.manifold_in = manifold_in
        self.manifold_out = (manifold_in if n_out == manifold_in.dim
                             else derived_manifold(manifold_in, n_out, f"lin{n_out}"))
        self.cfg = cfg
        self.kernel = RotationKernel(manifold_in.dim, n_out, 1, 1,
                                     dtype=manifold_in.dtype, rng=rng, name=name)
        self.boost = BoostParam(n_out, dtype=manifold_in.dtype, name=name)

    def forward_coords(self, coords, ctx: GraphContext | None = None):
        K = _K(ctx, self.manifold_in)
        z = rotation_apply(lmath.space_of(coords), self.kernel.matrix(ctx), self.kernel.mode)
        pt = lmath.project_space(z, K)
        if not self.cfg.bypass_rescale:
            pt = lmath.expmap0_space(
                stability.rescale_space(lmath.logmap0_space(pt, K), K, self.cfg.rescale), K)
        pt = boost_apply(pt, self.boost.velocity(ctx))
        return lmath.project_space(lmath.space_of(pt), K)

    def __call__(self, x: LorentzPoint, ctx: GraphContext | None = None) -> LorentzPoint:
        if x.manifold is not self.manifold_in:
            raise UsageError("lorentz_linear: input manifold mismatch")
        return LorentzPoint(self.forward_coords(x.coords, ctx), self.manifold_out, check=False)

    def slots(self) -> list[ParamSlot]:
        return self.kernel.slots() + self.boost.slots()


def lorentz_linear(x: LorentzPoint, kernel: RotationKernel, boost: BoostParam,
                   cfg: LayerConfig) -> LorentzPoint:
    """Functional form over explicit kernel/boost parameters."""
    K = x.manifold.K
    z = rotation_apply(lmath.space_of(x.coords), kernel.matrix(None), kernel.mode)
    pt = lmath.project_space(z, K)
    if not cfg.bypass_rescale:
        pt = lmath.expmap0_space(
            stability.rescale_space(lmath.logmap0_space(pt, K), K, cfg.rescale), K)
    out = boost_apply(pt, boost.velocity(None))
    out = lmath.project_space(lmath.space_of(out), K)
    man = x.manifold if kernel.c_out == x.manifold.dim else \
        derived_manifold(x.manifold, kernel.c_out, f"lin{kernel.c_out}")
    return LorentzPoint(out, man, check=False)


# -- convolution ------------------------------------------------------------------

class LorentzConv2d:
    """Lorentz convolution: window concatenation + rotation as one standard
    convolution over space channels, then reprojection, rescale and boost.

    Padding pads space channels with zeros, i.e. pads the map with origin
    points; the concatenated time component sqrt(sum t_i^2 - (m-1)K) equals
    the reprojected time sqrt(|s|^2 + K) identically, which is what lets the
    efficient path skip per-window time bookkeeping.
    """

    def __init__(self, manifold_in: ManifoldHandle, c_out: int, kh: int, kw: int, *,
                 stride: int = 1, padding: int = 0, cfg: LayerConfig,
                 rng: np.random.Generator | None = None, name: str = "lconv"):
        self.manifold_in = manifold_in
        self.manifold_out = derived_manifold(manifold_in, c_out, f"conv{c_out}")
        self.cfg = cfg
        self.kh, self.kw = kh, kw
        self.stride, self.padding = stride, padding
        self.kernel = RotationKernel(manifold_in.dim, c_out, kh, kw,
                                     dtype=manifold_in.dtype, rng=rng, name=name)
        self.boost = BoostParam(c_out, dtype=manifold_in.dtype, name=name)

    # shared tail: pixels arrive channel-last as full points
    def _tail(self, pt_cl, ctx):
        K = _K(ctx, self.manifold_out)
        if not self.cfg.bypass_rescale:
            pt_cl = lmath.expmap0_space(
                stability.rescale_space(lmath.logmap0_space(pt_cl, K), K, self.cfg.rescale), K)
        pt_cl = boost_apply(pt_cl, self.boost.velocity(ctx))
        # recompute the time slot: the boost is exact in real arithmetic but
        # its rounding scales with gamma^2; reprojection restores the
        # constraint to one ulp of x_t^2
        return lmath.project_space(lmath.space_of(pt_cl), K)

    def forward(self, fm: LorentzFeatureMap, ctx: GraphContext | None = None,
                method: str = "efficient") -> LorentzFeatureMap:
        if fm.manifold is not self.manifold_in:
            raise UsageError("lorentz_conv2d: input manifold mismatch")
        if method == "efficient":
            out_cl = self._forward_efficient(fm.coords, ctx)
        elif method == "naive":
            out_cl = self._forward_naive(fm.coords, ctx)
        else:
            raise UsageError(f"unknown conv method {method!r}")
        out = ops.transpose(out_cl, (0, 3, 1, 2))
        return LorentzFeatureMap(out, self.manifold_out, check=False)

    __call__ = forward

    def _forward_efficient(self, coords, ctx):
        K = _K(ctx, self.manifold_in)
        xs = coords[:, 1:]
        mat = self.kernel.matrix(ctx)
        ci, co = self.manifold_in.dim, self.manifold_out.dim
        w = ops.transpose(ops.reshape(mat, (self.kh, self.kw, ci, co)), (3, 2, 0, 1))
        y = ops.conv2d(xs, w, stride=self.stride, padding=self.padding)
        y_cl = ops.transpose(y, (0, 2, 3, 1))
        if self.kernel.mode == "norm_correct":
            ones = np.ones((1, ci, self.kh, self.kw), dtype=ops.data_of(coords).dtype)
            sq = ops.conv2d(xs * xs, ones, stride=self.stride, padding=self.padding)
            src = ops.sqrt(ops.clamp_min(ops.transpose(sq, (0, 2, 3, 1)), 1e-30))
            yn = ops.sqrt(ops.clamp_min(ops.sum_(y_cl * y_cl, axis=-1, keepdims=True), 1e-30))
            if runtime.strict_checks:
                bad = (ops.data_of(yn) < 1e-12) & \
                    (ops.data_of(src) > runtime.tol_manifold(ops.data_of(coords).dtype))
                if np.any(bad):
                    raise NumericError("lorentz_conv2d: degenerate kernel (zero output "
                                       "for nonzero window)")
            y_cl = y_cl * (src / ops.clamp_min(yn, 1e-30))
        pt = lmath.project_space(y_cl, K)
        return self._tail(pt, ctx)

    def _forward_naive(self, coords, ctx):
        """Reference path: explicit unfold, Lorentz concatenation of the
        receptive-field points, rotation per pixel, identical tail."""
        K = _K(ctx, self.manifold_in)
        d = ops.data_of(coords)
        B, _, H, W = d.shape
        kh, kw, s, p = self.kh, self.kw, self.stride, self.padding
        OH = (H + 2 * p - kh) // s + 1
        OW = (W + 2 * p - kw) // s + 1
        ci = self.manifold_in.dim
        m = kh * kw

        x_cl = ops.transpose(coords, (0, 2, 3, 1))
        if p > 0:
            sqrt_k = ops.sqrt(K) if ops.is_node(K) else math.sqrt(K)
            if ops.is_node(K):
                onept = ops.concat([ops.reshape(sqrt_k, (1,)),
                                    np.zeros(ci, dtype=d.dtype)], axis=0)
            else:
                onept = np.zeros(ci + 1, dtype=d.dtype)
                onept[0] = sqrt_k
            side = ops.broadcast_to(onept, (B, H, p, ci + 1))
            x_cl = ops.concat([side, x_cl, side], axis=2)
            cap = ops.broadcast_to(onept, (B, p, W + 2 * p, ci + 1))
            x_cl = ops.concat([cap, x_cl, cap], axis=1)

        mat = self.kernel.matrix(ctx)
        mode = self.kernel.mode
        rows = []
        for oh in range(OH):
            row = []
            for ow in range(OW):
                win = x_cl[:, oh * s:oh * s + kh, ow * s:ow * s + kw, :]
                t = ops.reshape(win[..., :1], (-1, m))
                sp = ops.reshape(win[..., 1:], (-1, m * ci))
                tcat = ops.sqrt(ops.sum_(t * t, axis=-1, keepdims=True) - (m - 1) * K)
                z = rotation_apply(sp, mat, mode)
                pt = ops.concat([tcat, z], axis=-1)
                row.append(ops.reshape(pt, (B, 1, 1, self.manifold_out.dim + 1)))
            rows.append(ops.concat(row, axis=2))
        pt_cl = ops.concat(rows, axis=1)
        return self._tail(pt_cl, ctx)

    def slots(self) -> list[ParamSlot]:
        return self.kernel.slots() + self.boost.slots()


def naive_lorentz_conv2d(layer: LorentzConv2d, fm: LorentzFeatureMap,
                         ctx: GraphContext | None = None) -> LorentzFeatureMap:
    """Correctness/speed baseline sharing the layer's parameters."""
    return layer.forward(fm, ctx, method="naive")


# -- batch norm --------------------------------------------------------------------

class LorentzBatchNorm:
    """Centroid/variance normalization with the max-distance rescaling hook.

    Points are pulled to the origin tangent space (parallel transport of the
    log map), scaled by gamma/sqrt(var + eps), rescaled (the stability hook),
    and carried to the learnable mean. In training mode a final exact
    recentering maps the achieved centroid onto the learnable mean with a
    pair of boosts; boosts are linear isometries, so the output centroid
    matches the mean up to roundoff and the dispersion is untouched. Eval
    mode uses running statistics and skips batch-dependent recentering.
    """

    eps_bn = 1e-5

    def __init__(self, manifold: ManifoldHandle, cfg: LayerConfig | None = None, *,
                 momentum: float = 0.1, name: str = "lbn"):
        self.manifold = manifold
        self.cfg = cfg if cfg is not None else LayerConfig()
        self.momentum = momentum
        self.name = name
        n = manifold.dim
        dt = manifold.dtype
        self.gamma = ParamSlot(name=f"{name}.gamma", kind=EUCLIDEAN,
                               value=np.asarray(1.0, dtype=dt))
        self.mean = ParamSlot(name=f"{name}.mean", kind=LORENTZ,
                              value=lmath.origin(manifold.K, n, dt), manifold=manifold)
        self.running_centroid = lmath.origin(manifold.K, n, dt)
        self.running_var = 1.0
        self._seen_batch = False

    def forward(self, pts, ctx: GraphContext | None = None, training: bool = True):
        """pts: (N, n+1) coordinates (Node or array); returns same shape."""
        d = ops.data_of(pts)
        if d.ndim != 2:
            raise UsageError(f"lorentz_batchnorm expects (N, n+1), got {d.shape}")
        if training and d.shape[0] < 2:
            raise UsageError("lorentz_batchnorm needs batch size >= 2 in training mode")
        K = _K(ctx, self.manifold)
        n = self.manifold.dim
        dt = d.dtype
        uniform = np.full(d.shape[0], 1.0 / d.shape[0], dtype=dt)

        if training:
            mu = lmath.centroid(pts, uniform, K)
            var = ops.mean_(ops.clamp_min(lmath.dist2(pts, mu, K), 0.0))
            sd = ops.sqrt(var + self.eps_bn)
        else:
            mu = self.running_centroid.astype(dt)
            var = float(self.running_var)
            sd = math.sqrt(var + self.eps_bn)

        if ops.is_node(K):
            # keep the origin in the graph: its time component sqrt(K)
            # carries real curvature gradient through the transports
            o = ops.concat([ops.reshape(ops.sqrt(K), (1,)), np.zeros(n, dtype=dt)],
                           axis=0)
        else:
            o = lmath.origin(K, n, dt)
        z = lmath.ptransp(mu, o, lmath.logmap(mu, pts, K), K)
        gamma = _p(ctx, self.gamma)
        z = z * (gamma / sd)
        if not self.cfg.bypass_rescale:
            zs = lmath.space_of(z)
            zs = stability.rescale_space(zs, K, self.cfg.rescale)
            z = ops.concat([zs[..., :1] * 0.0, zs], axis=-1) if ops.is_node(zs) else \
                np.concatenate([np.zeros(zs.shape[:-1] + (1,), dtype=zs.dtype), zs], axis=-1)
        mean = _p(ctx, self.mean)
        if not self.cfg.bypass_rescale:
            # the learnable mean is itself a hyperbolic vector: keep its used
            # position inside the representable radius
            ms = stability.rescale_space(lmath.logmap0_space(mean, K), K, self.cfg.rescale)
            mean = lmath.expmap0_space(ms, K)
        out = lmath.expmap(mean, lmath.ptransp(o, mean, z, K), K)

        if training:
            c = lmath.centroid(out, uniform, K)
            v_c = lmath.space_of(c) / lmath.time_of(c)
            v_m = lmath.space_of(mean) / lmath.time_of(mean)
            out = boost_apply(boost_apply(out, v_c), -1.0 * v_m)
            self._update_running(ops.data_of(mu), float(ops.data_of(var)),
                                 float(ops.data_of(K)))
        return lmath.project_space(lmath.space_of(out), K)

    __call__ = forward

    def _update_running(self, mu: np.ndarray, var: float, K: float) -> None:
        if not self._seen_batch:  # adopt the first batch outright
            self._seen_batch = True
            self.running_centroid = mu.copy()
            self.running_var = var
            return
        m = self.momentum
        w = np.asarray([1.0 - m, m], dtype=mu.dtype)
        stacked = np.stack([self.running_centroid.astype(mu.dtype), mu])
        self.running_centroid = np.asarray(lmath.centroid(stacked, w, K))
        self.running_var = (1.0 - m) * self.running_var + m * var

    def slots(self) -> list[ParamSlot]:
        return [self.gamma, self.mean]

    def buffers(self) -> dict[str, np.ndarray]:
        dt = self.manifold.dtype
        return {f"{self.name}.running_centroid": self.running_centroid,
                f"{self.name}.running_var": np.asarray(self.running_var, dtype=dt)}

    def load_buffers(self, tensors: dict[str, np.ndarray]) -> None:
        self.running_centroid = np.asarray(tensors[f"{self.name}.running_centroid"])
        self.running_var = float(tensors[f"{self.name}.running_var"])
        self._seen_batch = True


def lorentz_batchnorm(pts, state: LorentzBatchNorm, training: bool,
                      cfg: LayerConfig | None = None, ctx: GraphContext | None = None):
    """Functional entry point over an explicit state object."""
    if cfg is not None:
        state.cfg = cfg
    return state.forward(pts, ctx, training=training)


# -- Euclidean pieces ---------------------------------------------------------------

class EuclideanConv2d:
    def __init__(self, c_in: int, c_out: int, k: int, *, stride: int = 1,
                 padding: int = 0, dtype=np.float64,
                 rng: np.random.Generator | None = None, name: str = "conv"):
        rng = rng or np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        scale = math.sqrt(2.0 / (c_in * k * k))
        self.weight = ParamSlot(name=f"{name}.weight", kind=EUCLIDEAN,
                                value=rng.normal(0, scale, (c_out, c_in, k, k)).astype(dtype))
        self.bias = ParamSlot(name=f"{name}.bias", kind=EUCLIDEAN,
                              value=np.zeros(c_out, dtype=dtype))

    def forward(self, x, ctx: GraphContext | None = None):
        w = _p(ctx, self.weight)
        b = _p(ctx, self.bias)
        y = ops.conv2d(x, w, stride=self.stride, padding=self.padding)
        return y + ops.reshape(b, (1, -1, 1, 1))

    __call__ = forward

    def slots(self) -> list[ParamSlot]:
        return [self.weight, self.bias]


class EuclideanBatchNorm2d:
    def __init__(self, c: int, *, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float64, name: str = "bn"):
        self.momentum, self.eps = momentum, eps
        self.name = name
        self.gamma = ParamSlot(name=f"{name}.gamma", kind=EUCLIDEAN,
                               value=np.ones(c, dtype=dtype))
        self.beta = ParamSlot(name=f"{name}.beta", kind=EUCLIDEAN,
                              value=np.zeros(c, dtype=dtype))
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self._seen_batch = False

    def forward(self, x, ctx: GraphContext | None = None, training: bool = True):
        if training:
            m = ops.mean_(x, axis=(0, 2, 3), keepdims=True)
            diff = x - m
            v = ops.mean_(diff * diff, axis=(0, 2, 3), keepdims=True)
            mom = 1.0 if not self._seen_batch else self.momentum
            self._seen_batch = True
            self.running_mean = (1 - mom) * self.running_mean + mom * ops.data_of(m).reshape(-1)
            self.running_var = (1 - mom) * self.running_var + mom * ops.data_of(v).reshape(-1)
        else:
            m = self.running_mean.reshape(1, -1, 1, 1)
            v = self.running_var.reshape(1, -1, 1, 1)
            diff = x - m
        xn = diff / ops.sqrt(v + self.eps)
        g = ops.reshape(_p(ctx, self.gamma), (1, -1, 1, 1))
        b = ops.reshape(_p(ctx, self.beta), (1, -1, 1, 1))
        return xn * g + b

    __call__ = forward

    def slots(self) -> list[ParamSlot]:
        return [self.gamma, self.beta]

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def load_buffers(self, tensors: dict[str, np.ndarray]) -> None:
        self.running_mean = np.asarray(tensors[f"{self.name}.running_mean"])
        self.running_var = np.asarray(tensors[f"{self.name}.running_var"])
        self._seen_batch = True


# -- bottleneck ----------------------------------------------------------------------

class LorentzCoreBottleneck:
    """Euclidean 1x1 -> BN+ReLU -> switch in -> Lorentz 3x3 conv ->
    hyperbolic BN+ReLU -> switch out -> Euclidean 1x1, with a Euclidean
    residual connection when shapes match."""

    def __init__(self, c_in: int, c_mid: int, c_out: int, manifold: ManifoldHandle, *,
                 stride: int = 1, cfg: LayerConfig,
                 rng: np.random.Generator | None = None, name: str = "block"):
        rng = rng or np.random.default_rng(0)
        if manifold.dim != c_mid:
            raise UsageError(f"bottleneck manifold dim {manifold.dim} != c_mid {c_mid}")
        dt = manifold.dtype
        self.cfg = cfg
        self.stride = stride
        self.c_in, self.c_out = c_in, c_out
        self.conv_in = EuclideanConv2d(c_in, c_mid, 1, dtype=dt, rng=rng, name=f"{name}.in")
        self.bn_in = EuclideanBatchNorm2d(c_mid, dtype=dt, name=f"{name}.bn_in")
        self.manifold = manifold
        self.hconv = LorentzConv2d(manifold, c_mid, 3, 3, stride=stride, padding=1,
                                   cfg=cfg, rng=rng, name=f"{name}.hconv")
        self.hbn = LorentzBatchNorm(self.hconv.manifold_out, cfg, name=f"{name}.hbn")
        self.conv_out = EuclideanConv2d(c_mid, c_out, 1, dtype=dt, rng=rng, name=f"{name}.out")
        # Euclidean residual: identity when shapes match, else the standard
        # 1x1 strided downsample shortcut
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = EuclideanConv2d(c_in, c_out, 1, stride=stride, dtype=dt,
                                            rng=rng, name=f"{name}.shortcut")

    def forward(self, x, ctx: GraphContext | None = None, training: bool = True):
        K = _K(ctx, self.manifold)
        h = self.conv_in(x, ctx)
        h = ops.relu(self.bn_in(h, ctx, training=training))
        h_cl = ops.transpose(h, (0, 2, 3, 1))
        pts = e2l(h_cl, K, self.cfg)
        fm = LorentzFeatureMap(ops.transpose(pts, (0, 3, 1, 2)), self.manifold, check=False)
        fm = self.hconv(fm, ctx)
        d = ops.data_of(fm.coords)
        B, C1, OH, OW = d.shape
        flat = ops.reshape(ops.transpose(fm.coords, (0, 2, 3, 1)), (B * OH * OW, C1))
        flat = self.hbn.forward(flat, ctx, training=training)
        K_out = _K(ctx, self.hconv.manifold_out)
        flat = relu_space(flat, K_out)
        h2 = ops.transpose(ops.reshape(flat, (B, OH, OW, C1)), (0, 3, 1, 2))
        h_e = ops.transpose(l2e(ops.transpose(h2, (0, 2, 3, 1)), K_out), (0, 3, 1, 2))
        out = self.conv_out(h_e, ctx)
        if self.shortcut is None:
            out = out + x
        else:
            out = out + self.shortcut(x, ctx)
        return out

    __call__ = forward

    def slots(self) -> list[ParamSlot]:
        out = (self.conv_in.slots() + self.bn_in.slots() + self.hconv.slots()
               + self.hbn.slots() + self.conv_out.slots())
        if self.shortcut is not None:
            out += self.shortcut.slots()
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        return {**self.bn_in.buffers(), **self.hbn.buffers()}

    def load_buffers(self, tensors: dict[str, np.ndarray]) -> None:
        self.bn_in.load_buffers(tensors)
        self.hbn.load_buffers(tensors)
