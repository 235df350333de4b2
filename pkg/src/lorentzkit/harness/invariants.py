"""Property suite: every module's numeric invariants, runnable per dtype.

Each check draws its own deterministic sample set, evaluates a residual and
compares against a per-dtype tolerance. The suite reports one line per
property (trial count, worst residual, tolerance, PASS/FAIL) and an optional
fault-injection mode flips the sign of the parallel-transport correction to
prove the isometry check has teeth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import layers, lmath, stability
from ..engine import ops
from ..layers import LayerConfig
from ..manifold import ManifoldHandle
from ..optimizers import (CurvatureAwareOptimizer, OptimizerConfig, OptimizerState,
                          move_parameters, radam_step, radamw_step, rsgd_step)
from ..params import LORENTZ, ParamSlot, curvature_slot
from ..stability import PrecisionProfile, RescaleConfig, d_max


@dataclass
class PropertyResult:
    name: str
    dtype: str
    trials: int
    worst: float
    tol: float
    passed: bool


def _tols(dtype):
    if np.dtype(dtype) == np.float64:
        return {"roundtrip": 1e-9, "pt": 1e-6, "residual": 1e-8, "bn_centroid": 1e-5,
                "move": 1e-8, "conv": 1e-10, "covariance": 1e-9, "norm": 1e-6,
                "dist": 1e-5}
    # f32: zero-distance detection scales as sqrt(coords^2 * eps), so its
    # bound sits near 1e-2 for the sampled radius
    return {"roundtrip": 5e-3, "pt": 1e-3, "residual": 1e-4, "bn_centroid": 5e-3,
            "move": 1e-4, "conv": 1e-3, "covariance": 1e-3, "norm": 1e-3,
            "dist": 2e-2}


def _rand_points(rng, n, dim, K, dtype, max_norm=2.5):
    direc = rng.normal(size=(n, dim))
    direc /= np.linalg.norm(direc, axis=1, keepdims=True)
    norms = rng.uniform(0.05, max_norm, size=(n, 1))
    return np.asarray(lmath.expmap0_space((direc * norms).astype(dtype),
                                          float(K))).astype(dtype)


def _rand_tangent(rng, base, K, dtype, max_norm=2.5):
    v = rng.normal(size=base.shape).astype(dtype)
    v = np.asarray(lmath.project_tangent(base, v, float(K)))
    n = np.sqrt(np.maximum(np.asarray(lmath.norm2(v)), 1e-30))[..., None]
    scale = rng.uniform(0.05, max_norm, size=(base.shape[0], 1)).astype(dtype)
    return (v / n * scale).astype(dtype)


def _rel(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)


def check_exp_log_roundtrip(dtype, trials, rng):
    """Bases within distance 2.5 of the origin, step tangents up to norm 5;
    further out the Minkowski cancellation dominates any formula."""
    worst = 0.0
    for K in (0.8, 1.0, 1.5):
        x = _rand_points(rng, trials // 3 + 1, 4, K, dtype)
        z = _rand_tangent(rng, x, K, dtype, max_norm=5.0)
        y = np.asarray(lmath.expmap(x, z, K))
        z2 = np.asarray(lmath.logmap(x, y, K))
        denom = np.maximum(np.abs(z), 1.0)
        worst = max(worst, float(np.max(np.abs(z2 - z) / denom)))
        y2 = np.asarray(lmath.expmap(x, z2, K))
        worst = max(worst, float(np.max(np.abs(y2 - y) / np.maximum(np.abs(y), 1.0))))
    return trials, worst


def check_pt_isometry(dtype, trials, rng):
    worst = 0.0
    K = 1.3
    x = _rand_points(rng, trials, 4, K, dtype)
    y = _rand_points(rng, trials, 4, K, dtype)
    u = _rand_tangent(rng, x, K, dtype, max_norm=2.0)
    v = _rand_tangent(rng, x, K, dtype, max_norm=2.0)
    ut = np.asarray(lmath.ptransp(x, y, u, K))
    vt = np.asarray(lmath.ptransp(x, y, v, K))
    ip0 = np.asarray(lmath.inner(u, v))
    ip1 = np.asarray(lmath.inner(ut, vt))
    worst = max(worst, float(np.max(_rel(ip0, ip1))))
    # transported tangency and round-trip inversion
    worst = max(worst, float(np.max(np.abs(np.asarray(lmath.inner(y, ut))) / max(1.0, K))))
    ub = np.asarray(lmath.ptransp(y, x, ut, K))
    worst = max(worst, float(np.max(np.abs(ub - u) / np.maximum(np.abs(u), 1.0))))
    return trials, worst


def check_on_manifold_ops(dtype, trials, rng):
    """Residuals after every point-producing operation at its manifold K."""
    worst = 0.0
    cfg = LayerConfig(rescale=RescaleConfig(s=2.0, profile=PrecisionProfile.for_dtype(dtype)))
    for K in (0.5, 1.0, 2.0):
        n = max(8, trials // 40)
        h = ManifoldHandle(f"chk{K}", 4, kappa_raw=float(np.log(K)), dtype=dtype)
        x = _rand_points(rng, n, 4, h.K, dtype, max_norm=1.5)
        z = _rand_tangent(rng, x, h.K, dtype, max_norm=1.5)

        def res(pts):
            return float(np.max(lmath.residual(np.asarray(pts), h.K))) / max(1.0, h.K)

        worst = max(worst, res(lmath.expmap(x, z, h.K)))
        worst = max(worst, res(lmath.project_space(rng.normal(size=(n, 4)).astype(dtype)
                                                   * 3, h.K)))
        w = rng.uniform(0.1, 1.0, size=n).astype(dtype)
        worst = max(worst, res(lmath.centroid(x, w, h.K)))
        worst = max(worst, res(lmath.concat_points([x, x], h.K)))
        zs = stability.rescale_space(lmath.logmap0_space(x, h.K), h.K, cfg.rescale)
        worst = max(worst, res(lmath.expmap0_space(zs, h.K)))
        v = rng.normal(size=4).astype(dtype)
        v *= 0.6 * rng.uniform() / np.linalg.norm(v)
        worst = max(worst, res(layers.boost_apply(x, v)))
        lin = layers.LorentzLinear(h, 6, cfg, rng=rng)
        worst = max(worst, res(lin.forward_coords(x)))
        conv = layers.LorentzConv2d(h, 6, 3, 3, stride=1, padding=1, cfg=cfg, rng=rng)
        sp = (rng.normal(size=(2, 4, 5, 5)) * 0.5).astype(dtype)
        coords = np.concatenate([np.sqrt((sp ** 2).sum(1, keepdims=True) + h.K), sp],
                                axis=1).astype(dtype)
        fmout = conv.forward(layers.LorentzFeatureMap(coords, h, check=False))
        d = fmout.data
        t = d[:, 0]
        rr = np.abs((d[:, 1:] ** 2).sum(1) - t * t + h.K)
        worst = max(worst, float(rr.max()) / max(1.0, h.K))
        bn = layers.LorentzBatchNorm(h, cfg)
        worst = max(worst, res(bn.forward(x, training=True)))
        worst = max(worst, res(layers.relu_space(x, h.K)))
    return trials, worst


def check_optimizer_residuals(dtype, trials, rng):
    """On-manifold residuals after steps of each family plus joint curvature."""
    worst = 0.0
    h = ManifoldHandle("opt", 4, kappa_raw=0.2, dtype=dtype)
    target = _rand_points(rng, 6, 4, h.K, dtype)
    for family, step_fn in (("rsgd", rsgd_step), ("radam", radam_step),
                            ("radamw", radamw_step)):
        slot = ParamSlot("p", LORENTZ, _rand_points(rng, 6, 4, h.K, dtype).copy(),
                         manifold=h)
        st = OptimizerState()
        cfg = OptimizerConfig(lr=0.05, weight_decay=0.01, clip_norm=None)
        for _ in range(5):
            slot.grad = (rng.normal(size=slot.value.shape) * 0.3).astype(dtype)
            step_fn(slot, st, cfg)
            worst = max(worst, float(lmath.residual(slot.value, h.K).max()) / max(1.0, h.K))
    # joint curvature-aware steps
    h2 = ManifoldHandle("opt2", 4, kappa_raw=0.0, dtype=dtype)
    slot = ParamSlot("p", LORENTZ, _rand_points(rng, 6, 4, h2.K, dtype).copy(),
                     manifold=h2)
    kslot = curvature_slot(h2)
    opt = CurvatureAwareOptimizer([slot, kslot], family="radam",
                                  cfg=OptimizerConfig(lr=0.05, curvature_lr_scale=1.0,
                                                      clip_norm=None))
    for _ in range(10):
        slot.grad = (rng.normal(size=slot.value.shape) * 0.3).astype(dtype)
        kslot.grad = np.asarray(rng.normal() * 0.5, dtype=dtype)
        opt.step()
        worst = max(worst, float(lmath.residual(slot.value, h2.K).max()) / max(1.0, h2.K))
    return trials, worst


def check_distance_properties(dtype, trials, rng):
    K = 0.8
    x = _rand_points(rng, trials, 4, K, dtype)
    y = _rand_points(rng, trials, 4, K, dtype)
    worst = 0.0
    dxy = np.asarray(lmath.dist(x, y, K))
    dyx = np.asarray(lmath.dist(y, x, K))
    worst = max(worst, float(np.max(np.abs(dxy - dyx))))
    worst = max(worst, float(max(0.0, -np.min(dxy))))
    d2 = np.asarray(lmath.dist2(x, y, K))
    d2t = np.asarray(lmath.dist2(y, x, K))
    worst = max(worst, float(np.max(np.abs(d2 - d2t))) / 10.0)
    worst = max(worst, float(max(0.0, -np.min(d2))))
    # zero iff coincident
    worst = max(worst, float(np.max(np.abs(np.asarray(lmath.dist(x, x, K))))))
    worst = max(worst, float(np.max(np.abs(np.asarray(lmath.dist2(x, x, K))))))
    return trials, worst


def check_curvature_covariance(dtype, trials, rng):
    """d_K between exp_0^K(z) pairs equals sqrt(K) x the K=1 distance of the
    1/sqrt(K)-rescaled tangents."""
    worst = 0.0
    for K in (0.5, 2.0, 4.0):
        z1 = (rng.normal(size=(trials // 3 + 1, 4)) * 0.8).astype(dtype)
        z2 = (rng.normal(size=z1.shape) * 0.8).astype(dtype)
        a = np.asarray(lmath.dist(lmath.expmap0_space(z1, K),
                                  lmath.expmap0_space(z2, K), K))
        b = np.sqrt(K) * np.asarray(lmath.dist(lmath.expmap0_space(z1 / np.sqrt(K), 1.0),
                                               lmath.expmap0_space(z2 / np.sqrt(K), 1.0),
                                               1.0))
        worst = max(worst, float(np.max(_rel(a, b))))
    return trials, worst


def check_rescale(dtype, trials, rng):
    profile = PrecisionProfile.for_dtype(dtype)
    cfg = RescaleConfig(s=2.0, profile=profile)
    worst = 0.0
    n = max(trials, 10000)
    for K in (0.5, 1.0, 2.0):
        dm = d_max(K, profile)
        lognorm = rng.uniform(np.log(1e-6), np.log(1e6), size=(n, 1))
        direc = rng.normal(size=(n, 4))
        direc /= np.linalg.norm(direc, axis=1, keepdims=True)
        zs = (direc * np.exp(lognorm)).astype(dtype)
        out = np.asarray(stability.rescale_space(zs, K, cfg))
        pts = np.asarray(lmath.expmap0_space(out, K))
        dist0 = np.asarray(lmath.dist0(pts.astype(np.float64), float(K)))
        worst = max(worst, float(max(0.0, np.max(dist0) - dm)) )
        # time-component safety
        if np.max(pts[..., 0]) >= profile.x_t_max:
            worst = max(worst, 1.0)
        # direction preservation
        cos = (out * zs).sum(-1) / np.maximum(np.linalg.norm(out, axis=-1)
                                              * np.linalg.norm(zs, axis=-1), 1e-30)
        worst = max(worst, float(np.max(1.0 - cos)))
        # monotonicity on a grid
        grid = np.exp(np.linspace(np.log(1e-6), np.log(cfg.s * dm), 200)).astype(dtype)
        gz = np.zeros((200, 4), dtype=dtype)
        gz[:, 0] = grid
        gn = np.linalg.norm(np.asarray(stability.rescale_space(gz, K, cfg)), axis=-1)
        if not np.all(np.diff(gn) > 0):
            worst = max(worst, 1.0)
    return n * 3, worst


def check_bn_contract(dtype, trials, rng):
    """Output centroid lands on the learnable mean as used by the layer: the
    raw mean under bypass, its rescaled image otherwise."""
    profile = PrecisionProfile.for_dtype(dtype)
    worst = 0.0
    for K in (0.7, 1.5):
        for bypass in (False, True):
            cfg = LayerConfig(rescale=RescaleConfig(s=2.0, profile=profile),
                              bypass_rescale=bypass)
            h = ManifoldHandle(f"bn{K}{bypass}", 4, kappa_raw=float(np.log(K)),
                               dtype=dtype)
            bn = layers.LorentzBatchNorm(h, cfg)
            tgt = _rand_points(rng, 1, 4, h.K, dtype, max_norm=1.5)[0]
            bn.mean.value[...] = tgt
            pts = _rand_points(rng, 128, 4, h.K, dtype, max_norm=1.5)
            out = np.asarray(bn.forward(pts, training=True))
            if bypass:
                expect = tgt
            else:
                zs = stability.rescale_space(lmath.logmap0_space(tgt, h.K), h.K,
                                             cfg.rescale)
                expect = np.asarray(lmath.expmap0_space(zs, h.K))
            c = np.asarray(lmath.centroid(out, np.full(128, 1 / 128, dtype=dtype), h.K))
            worst = max(worst, float(np.max(np.abs(c - expect))))
            if not bypass:
                dm = d_max(h.K, profile)
                d0 = np.asarray(lmath.dist0(out.astype(np.float64), h.K))
                if np.max(d0) >= dm:
                    worst = max(worst, 1.0)
    return trials, worst


def check_move_parameters(dtype, trials, rng):
    worst = 0.0
    h = ManifoldHandle("mv", 4, kappa_raw=0.0, dtype=dtype)
    for K_new in (0.4, 1.7, 3.0):
        pts = _rand_points(rng, trials // 3 + 1, 4, 1.0, dtype)
        slot = ParamSlot("p", LORENTZ, pts.copy(), manifold=h)
        st = OptimizerState()
        st.of(slot).m = _rand_tangent(rng, pts, 1.0, dtype, max_norm=1.0)
        d0 = np.asarray(lmath.dist0(pts, 1.0))
        move_parameters([slot], st, 1.0, K_new)
        d1 = np.asarray(lmath.dist0(slot.value, K_new))
        worst = max(worst, float(np.max(np.abs(d0 - d1))))
        worst = max(worst, float(lmath.residual(slot.value, K_new).max()) / max(1.0, K_new))
        tang = np.abs(np.asarray(lmath.inner(slot.value, st.of(slot).m)))
        worst = max(worst, float(np.max(tang)) / max(1.0, K_new))
    return trials, worst


def check_rotation_boost(dtype, trials, rng):
    worst = 0.0
    K = 1.0
    for c_in, c_out in ((3, 8), (8, 3)):
        k = layers.RotationKernel(c_in, c_out, 1, 1, dtype=dtype, rng=rng)
        x = rng.normal(size=(trials // 2 + 1, c_in)).astype(dtype)
        y = np.asarray(layers.rotation_apply(x, k.matrix(), k.mode))
        worst = max(worst, float(np.max(_rel(np.linalg.norm(y, axis=-1),
                                             np.linalg.norm(x, axis=-1)))))
    x = _rand_points(rng, trials, 4, K, dtype)
    y = _rand_points(rng, trials, 4, K, dtype)
    v = rng.normal(size=4).astype(dtype)
    v *= 0.6 * rng.uniform() / np.linalg.norm(v)
    bx, by = layers.boost_apply(x, v), layers.boost_apply(y, v)
    ip0, ip1 = np.asarray(lmath.inner(x, y)), np.asarray(lmath.inner(bx, by))
    worst = max(worst, float(np.max(_rel(ip0, ip1))))
    return trials, worst


def check_conv_equivalence(dtype, trials, rng):
    cfg = LayerConfig(rescale=RescaleConfig(s=2.0, profile=PrecisionProfile.for_dtype(dtype)))
    worst = 0.0
    for c_out in (8, 3):  # cayley and norm-correct modes
        h = ManifoldHandle(f"cv{c_out}", 4, kappa_raw=0.1, dtype=dtype)
        conv = layers.LorentzConv2d(h, c_out, 3, 3, stride=1, padding=1, cfg=cfg, rng=rng)
        sp = (rng.normal(size=(2, 4, 6, 6)) * 0.4).astype(dtype)
        coords = np.concatenate([np.sqrt((sp ** 2).sum(1, keepdims=True) + h.K), sp],
                                axis=1).astype(dtype)
        fm = layers.LorentzFeatureMap(coords, h, check=False)
        a = conv.forward(fm, method="efficient").data
        b = conv.forward(fm, method="naive").data
        worst = max(worst, float(np.max(np.abs(a - b))))
    return trials, worst


_CHECKS = [
    ("exp_log_roundtrip", check_exp_log_roundtrip, "roundtrip"),
    ("pt_isometry", check_pt_isometry, "pt"),
    ("on_manifold_ops", check_on_manifold_ops, "residual"),
    ("optimizer_residuals", check_optimizer_residuals, "residual"),
    ("distance_properties", check_distance_properties, "dist"),
    ("curvature_covariance", check_curvature_covariance, "covariance"),
    ("rescale_bounds", check_rescale, "norm"),
    ("batchnorm_contract", check_bn_contract, "bn_centroid"),
    ("move_parameters", check_move_parameters, "move"),
    ("rotation_boost", check_rotation_boost, "norm"),
    ("conv_equivalence", check_conv_equivalence, "conv"),
]


def run_invariant_suite(dtypes=(np.float64, np.float32), trials: int = 1000,
                        seed: int = 0, inject_fault: str = "") -> list[PropertyResult]:
    """Run all property checks at the requested precisions.

    inject_fault='pt-sign' flips the parallel-transport correction sign for
    the duration of the run; the isometry check must then fail.
    """
    results = []
    old_fault = lmath._FAULT_PT_SIGN
    lmath._FAULT_PT_SIGN = inject_fault == "pt-sign"
    try:
        for dtype in dtypes:
            tols = _tols(dtype)
            for name, fn, tol_key in _CHECKS:
                rng = np.random.default_rng(seed)
                tol = tols[tol_key]
                try:
                    n, worst = fn(dtype, trials, rng)
                except Exception:
                    n, worst = 0, float("inf")
                results.append(PropertyResult(name=name, dtype=np.dtype(dtype).name,
                                              trials=n, worst=worst, tol=tol,
                                              passed=bool(worst <= tol)))
    finally:
        lmath._FAULT_PT_SIGN = old_fault
    return results


def format_report(results: list[PropertyResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status}  {r.name:<24} dtype={r.dtype:<8} trials={r.trials:<7} "
                     f"worst={r.worst:.3e}  tol={r.tol:.1e}")
    return "\n".join(lines)


def write_report_csv(results: list[PropertyResult], path) -> None:
    import csv
    from pathlib import Path

    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["property", "dtype", "trials", "worst_residual", "tol", "status"])
        for r in results:
            w.writerow([r.name, r.dtype, r.trials, format(r.worst, ".9e"),
                        format(r.tol, ".3e"), "PASS" if r.passed else "FAIL"])
