"""Riemannian SGD / Adam / AdamW with curvature-learning-aware ordering.

Parameters are partitioned into Euclidean tensors, Lorentz points and
curvature scalars. One optimizer step runs three phases:

  1. every Euclidean and Lorentz slot steps under the pre-step curvatures;
  2. curvature scalars step (plain first-order update on kappa_raw, learning
     rate scaled by curvature_lr_scale);
  3. Lorentz slots and their tangent state are carried onto the updated
     manifolds: momenta transport to the origin under the old curvature, the
     point maps through the origin log/exp pair (the origin tangent space is
     curvature-invariant), and momenta transport back under the new
     curvature. Distance from the origin is preserved exactly because both
     sides equal the tangent norm.

The whole step is atomic: updates are staged and only committed when every
staged buffer is finite. K_prev snapshots refresh last.

Lorentz AdamW replaces coupled weight decay with a weighted centroid with
the origin, applied before the Adam update; with weight_decay = 0 the decay
stage is skipped entirely, so radamw reduces bitwise to radam.

A deliberately mis-ordered variant (curvature first, no parameter moves, no
reprojection) exists behind the `naive` flag solely to reproduce the
constraint-violation growth that the ordered schema prevents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lmath
from .errors import NumericError, UsageError
from .manifold import ManifoldHandle
from .params import CURVATURE, LORENTZ, ParamSlot, curvature_slot
from .stability import PrecisionProfile, d_max

__all__ = [
    "OptimizerConfig", "OptimizerState", "SlotState", "ParamSlot", "curvature_slot",
    "CurvatureAwareOptimizer", "rsgd_step", "radam_step", "radamw_step",
    "move_parameters", "riemannian_gradient",
]


@dataclass
class OptimizerConfig:
    lr: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    momentum: float = 0.0  # classical momentum for the sgd family
    curvature_lr_scale: float = 0.1
    clip_norm: float | None = 5.0  # also caps per-slot tangent step norms
    # Lorentz slots are pulled back onto this fraction of the representable
    # radius after each step; beyond d_max the float type cannot express the
    # tangent geometry at all, so runaway parameters have no meaning there.
    radius_frac: float | None = 0.98


@dataclass
class SlotState:
    """Per-slot optimizer buffers: first moment (a tangent vector for Lorentz
    slots) and coordinate-wise second moment."""

    m: np.ndarray | None = None
    v: np.ndarray | None = None


@dataclass
class OptimizerState:
    t: int = 0
    slots: dict[ParamSlot, SlotState] = field(default_factory=dict)
    k_prev: dict[int, float] = field(default_factory=dict)  # id(handle) -> K

    def of(self, slot: ParamSlot) -> SlotState:
        if slot not in self.slots:
            self.slots[slot] = SlotState()
        return self.slots[slot]


def riemannian_gradient(p: np.ndarray, g: np.ndarray, K: float) -> np.ndarray:
    """Euclidean grad -> Riemannian: metric flip then tangent projection."""
    h = g.copy()
    h[..., 0] = -h[..., 0]
    return np.asarray(lmath.project_tangent(p, h, K))


def _clip_tangent(u: np.ndarray, K: float, clip: float | None) -> np.ndarray:
    """Cap the Lorentz norm of a tangent step.

    Tangent projection at a point with coordinates ~e^d scales vectors by
    ~e^(2d); without this cap a parameter drifting outward takes ever longer
    retraction steps (the runaway the rescaling machinery exists to stop).
    """
    if clip is None:
        return u
    n = np.sqrt(np.maximum(np.asarray(lmath.norm2(u, keepdims=True)), 1e-30))
    factor = np.minimum(1.0, clip / n)
    return u * factor


def _reproject(p: np.ndarray, K: float) -> np.ndarray:
    """Recompute the time component so the constraint holds exactly."""
    return np.asarray(lmath.project_space(p[..., 1:], K))


def _radius_clamp(p: np.ndarray, K: float, frac: float | None) -> np.ndarray:
    """Clamp distance-from-origin to frac * d_max (identity inside)."""
    if frac is None:
        return p
    cap = frac * d_max(K, PrecisionProfile.for_dtype(p.dtype))
    zs = np.asarray(lmath.logmap0_space(p, K))
    nrm = np.linalg.norm(zs, axis=-1, keepdims=True)
    over = nrm > cap
    if not np.any(over):
        return p
    scaled = zs * np.where(over, cap / np.maximum(nrm, 1e-30), 1.0)
    return np.asarray(lmath.expmap0_space(scaled.astype(p.dtype), K))


def _adam_direction(m: np.ndarray, v: np.ndarray, t: int, cfg: OptimizerConfig) -> np.ndarray:
    b1, b2 = cfg.betas
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    return mhat / (np.sqrt(vhat) + cfg.eps)


def _step_euclidean(value, grad, st: SlotState, cfg: OptimizerConfig, family: str,
                    t: int, lr: float, decay: bool):
    new = value.astype(value.dtype, copy=True)
    lam = cfg.weight_decay
    if decay and lam != 0.0:
        new = new * (1.0 - lr * lam)
    if family == "rsgd":
        if cfg.momentum > 0.0:
            if st.m is None:
                st.m = np.zeros_like(value)
            m_new = cfg.momentum * st.m + grad
            return new - lr * m_new, m_new, st.v
        return new - lr * grad, st.m, st.v
    # adam / adamw families
    if st.m is None:
        st.m = np.zeros_like(value)
        st.v = np.zeros_like(value)
    b1, b2 = cfg.betas
    m_new = b1 * st.m + (1.0 - b1) * grad
    v_new = b2 * st.v + (1.0 - b2) * grad * grad
    return new - lr * _adam_direction(m_new, v_new, t, cfg), m_new, v_new


def _step_lorentz(slot: ParamSlot, st: SlotState, cfg: OptimizerConfig, family: str,
                  t: int, K: float, grad: np.ndarray, reproject: bool = True):
    p = slot.value
    if family == "radamw" and cfg.weight_decay != 0.0:
        # weighted centroid with the origin replaces the coupled decay
        gl = cfg.lr * cfg.weight_decay
        o = np.broadcast_to(lmath.origin(K, p.shape[-1] - 1, p.dtype), p.shape)
        stacked = np.stack([p, o], axis=-2)
        w = np.asarray([1.0 - gl, gl], dtype=p.dtype)
        p = np.asarray(lmath.centroid(stacked, w, K))
    h = riemannian_gradient(p, grad, K)
    # cap the gradient in the Riemannian metric before it reaches any moment
    # buffer: its Lorentz norm grows like e^d with the point's radius, and
    # squared moments overflow float32 long before the values themselves
    h = _clip_tangent(h, K, cfg.clip_norm)
    if family == "rsgd":
        if cfg.momentum > 0.0:
            if st.m is None:
                st.m = np.zeros_like(p)
            d = cfg.momentum * st.m + h
            m_carry = d
        else:
            d = h
            m_carry = st.m
        d = _clip_tangent(d, K, cfg.clip_norm)
        p_new = np.asarray(lmath.expmap(p, -cfg.lr * d, K))
        if reproject:
            p_new = _radius_clamp(_reproject(p_new, K), K, cfg.radius_frac)
        if m_carry is not None:
            m_carry = np.asarray(lmath.ptransp(p, p_new, m_carry, K))
        return p_new, m_carry, st.v
    # adam / adamw: moments live in the tangent space at the current point
    if st.m is None:
        st.m = np.zeros_like(p)
        st.v = np.zeros_like(p)
    b1, b2 = cfg.betas
    m_new = b1 * st.m + (1.0 - b1) * h
    v_new = b2 * st.v + (1.0 - b2) * h * h
    u = _adam_direction(m_new, v_new, t, cfg)
    u = np.asarray(lmath.project_tangent(p, u, K))  # quotient breaks tangency
    u = _clip_tangent(u, K, cfg.clip_norm)
    p_new = np.asarray(lmath.expmap(p, -cfg.lr * u, K))
    if reproject:
        p_new = _radius_clamp(_reproject(p_new, K), K, cfg.radius_frac)
    m_new = np.asarray(lmath.ptransp(p, p_new, m_new, K))
    return p_new, m_new, v_new


def _commit(slot: ParamSlot, st: SlotState, staged) -> None:
    value, m, v = staged
    slot.value[...] = value
    st.m, st.v = m, v


def _check_grad(slot: ParamSlot) -> np.ndarray:
    if slot.grad is None:
        raise UsageError(f"slot {slot.name!r} has no gradient")
    if not np.all(np.isfinite(slot.grad)):
        raise NumericError(f"non-finite gradient on slot {slot.name!r}; step rejected")
    return slot.grad


def rsgd_step(slot: ParamSlot, state: OptimizerState, cfg: OptimizerConfig) -> None:
    """Single-slot Riemannian SGD update (mutates slot and state)."""
    _single_step(slot, state, cfg, "rsgd")


def radam_step(slot: ParamSlot, state: OptimizerState, cfg: OptimizerConfig) -> None:
    """Single-slot Riemannian Adam update."""
    _single_step(slot, state, cfg, "radam")


def radamw_step(slot: ParamSlot, state: OptimizerState, cfg: OptimizerConfig) -> None:
    """Riemannian AdamW: decoupled decay (origin centroid on the manifold)
    before the Adam update; bitwise-identical to radam at weight_decay 0."""
    _single_step(slot, state, cfg, "radamw")


def _single_step(slot: ParamSlot, state: OptimizerState, cfg: OptimizerConfig,
                 family: str) -> None:
    grad = _check_grad(slot)
    state.t += 1
    st = state.of(slot)
    if slot.kind == LORENTZ:
        staged = _step_lorentz(slot, st, cfg, family, state.t, slot.manifold.K, grad)
    else:
        fam = "rsgd" if family == "rsgd" else "adam"
        staged = _step_euclidean(slot.value, grad, st, cfg, fam, state.t, cfg.lr,
                                 decay=(family == "radamw"))
    _commit(slot, st, staged)


def move_parameters(slots: list[ParamSlot], state: OptimizerState,
                    K_old: float, K_new: float) -> None:
    """Carry Lorentz slots (and their momenta) from K_old to K_new manifolds.

    Mutates slots in place; used directly by tests, while the optimizer runs
    the same math through its staged pipeline.
    """
    for slot in slots:
        if slot.kind != LORENTZ:
            continue
        st = state.of(slot)
        value, m, _ = _staged_move(slot.value, st.m, K_old, K_new)
        slot.value[...] = value
        st.m = m


def _staged_move(p: np.ndarray, m: np.ndarray | None, K_old: float, K_new: float):
    """log/exp through the curvature-invariant origin tangent space."""
    if K_old == K_new:
        return p, m, None
    n = p.shape[-1] - 1
    o_old = lmath.origin(K_old, n, p.dtype)
    o_new = lmath.origin(K_new, n, p.dtype)
    m0 = np.asarray(lmath.ptransp(p, o_old, m, K_old)) if m is not None else None
    zs = np.asarray(lmath.logmap0_space(p, K_old))
    p_new = np.asarray(lmath.expmap0_space(zs, K_new))
    m_new = np.asarray(lmath.ptransp(o_new, p_new, m0, K_new)) if m0 is not None else None
    return p_new, m_new, None


class CurvatureAwareOptimizer:
    """Ordered optimizer over a full slot set (Algorithm: phase 1 parameters,
    phase 2 curvatures, phase 3 parameter moves; snapshots last)."""

    def __init__(self, slots: list[ParamSlot], family: str = "radamw",
                 cfg: OptimizerConfig | None = None, naive: bool = False):
        if family not in ("rsgd", "radam", "radamw"):
            raise UsageError(f"unknown optimizer family {family!r}")
        self.family = family
        self.cfg = cfg or OptimizerConfig()
        self.naive = naive
        self.state = OptimizerState()
        self.slots = list(slots)
        self.park = [s for s in self.slots if s.kind == CURVATURE]
        self.main = [s for s in self.slots if s.kind != CURVATURE]
        self.handles: list[ManifoldHandle] = []
        seen: set[int] = set()
        for s in self.slots:
            if s.manifold is not None and id(s.manifold) not in seen:
                seen.add(id(s.manifold))
                self.handles.append(s.manifold)

    def _grad_scale(self, active: list[ParamSlot]) -> float:
        if self.cfg.clip_norm is None:
            return 1.0
        total = math.sqrt(sum(float(np.sum(s.grad.astype(np.float64) ** 2))
                              for s in active))
        if total > self.cfg.clip_norm:
            return self.cfg.clip_norm / total
        return 1.0

    def step(self) -> None:
        """One atomic ordered step; raises NumericError without mutating
        anything when a gradient or staged value is non-finite."""
        active = [s for s in self.slots if s.trainable and s.grad is not None]
        for s in active:
            if not np.all(np.isfinite(s.grad)):
                raise NumericError(f"non-finite gradient on slot {s.name!r}; step rejected")
        scale = self._grad_scale(active)
        t = self.state.t + 1  # committed with the rest of the step
        k_before = {id(h): h.K for h in self.handles}

        if self.naive:
            self.state.t = t
            self._naive_step(active, scale, t, k_before)
            return

        staged: dict[ParamSlot, tuple] = {}
        # phase 1: Euclidean and Lorentz slots under K_{t-1}
        for s in self.main:
            if s not in active:
                continue
            staged[s] = self._phase1(s, scale, t, k_before[id(s.manifold)]
                                     if s.kind == LORENTZ else None)
        # phase 2: curvature scalars (plain first-order step on kappa_raw)
        for s in self.park:
            if s not in active:
                continue
            st = self.state.of(s)
            fam = "rsgd" if self.family == "rsgd" else "adam"
            staged[s] = _step_euclidean(s.value, scale * s.grad, st, self.cfg, fam, t,
                                        self.cfg.lr * self.cfg.curvature_lr_scale,
                                        decay=False)
        # phase 3: move Lorentz slots onto the updated manifolds
        k_after: dict[int, float] = {}
        for h in self.handles:
            kn = h.K
            for s in self.park:
                if s in staged and s.value is h.kappa_raw:
                    kn = float(np.exp(staged[s][0]))
            k_after[id(h)] = kn
        moved: dict[ParamSlot, tuple] = {}
        for s in self.main:
            if s.kind != LORENTZ or s not in staged:
                continue
            K_old = k_before[id(s.manifold)]
            K_new = k_after[id(s.manifold)]
            if K_old != K_new:
                value, m, _ = staged[s]
                value, m, _ = _staged_move(value, m, K_old, K_new)
                moved[s] = (value, m, staged[s][2])
        staged.update(moved)

        for s, (value, m, v) in staged.items():
            for buf in (value, m, v):
                if buf is not None and not np.all(np.isfinite(buf)):
                    raise NumericError(f"non-finite staged update for slot {s.name!r}; "
                                       "step aborted")
        self.state.t = t
        for s, payload in staged.items():
            _commit(s, self.state.of(s), payload)
        # snapshots refresh last
        for h in self.handles:
            h.K_prev = k_before[id(h)]
            self.state.k_prev[id(h)] = k_before[id(h)]

    def _phase1(self, s: ParamSlot, scale: float, t: int, K: float | None):
        st = self.state.of(s)
        grad = scale * s.grad
        if s.kind == LORENTZ:
            return _step_lorentz(s, st, self.cfg, self.family, t, K, grad)
        fam = "rsgd" if self.family == "rsgd" else "adam"
        return _step_euclidean(s.value, grad, st, self.cfg, fam, t, self.cfg.lr,
                               decay=(self.family == "radamw"))

    def _naive_step(self, active, scale, t, k_before) -> None:
        """Mis-ordered contrast path: curvature first, stale-K parameter
        updates, no moves, no reprojection. Exists to demonstrate the
        constraint-violation growth the ordered schema avoids."""
        for s in self.park:
            if s not in active:
                continue
            st = self.state.of(s)
            fam = "rsgd" if self.family == "rsgd" else "adam"
            payload = _step_euclidean(s.value, scale * s.grad, st, self.cfg, fam, t,
                                      self.cfg.lr * self.cfg.curvature_lr_scale,
                                      decay=False)
            _commit(s, st, payload)
        for s in self.main:
            if s not in active:
                continue
            st = self.state.of(s)
            grad = scale * s.grad
            if s.kind == LORENTZ:
                payload = _step_lorentz(s, st, self.cfg, self.family, t,
                                        s.manifold.K, grad, reproject=False)
            else:
                fam = "rsgd" if self.family == "rsgd" else "adam"
                payload = _step_euclidean(s.value, grad, st, self.cfg, fam, t,
                                          self.cfg.lr, decay=(self.family == "radamw"))
            _commit(s, st, payload)
