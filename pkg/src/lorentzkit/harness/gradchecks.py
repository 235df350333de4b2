"""Finite-difference verification of every trainable path.

Each named check draws random configurations, builds the layer/loss as a
scalar function of raw parameter arrays and compares engine gradients
against central differences at float64. Hinge and clamp kinks are avoided by
resampling until all hinge arguments clear a margin.
"""

from __future__ import annotations

import numpy as np

from .. import layers, lhier, lmath
from ..engine import ops
from ..engine.gradcheck import GradCheckReport, finite_diff_check
from ..engine.node import as_node
from ..layers import LayerConfig
from ..manifold import ManifoldHandle
from ..params import GraphContext
from ..stability import PrecisionProfile, RescaleConfig


def _cfg64() -> LayerConfig:
    return LayerConfig(rescale=RescaleConfig(s=2.0,
                                             profile=PrecisionProfile.for_dtype(np.float64)))


def _seeded_ctx(slot_leaves: dict) -> GraphContext:
    ctx = GraphContext(training=True)
    for slot, lf in slot_leaves.items():
        ctx._leaves[id(slot.value)] = lf
    return ctx


def _rand_fm(rng, h, B=1, HW=4, scale=0.4):
    sp = (rng.normal(size=(B, h.dim, HW, HW)) * scale)
    coords = np.concatenate([np.sqrt((sp ** 2).sum(1, keepdims=True) + h.K), sp], axis=1)
    return layers.LorentzFeatureMap(coords, h, check=False)


def check_lorentz_linear(rng) -> GradCheckReport:
    h = ManifoldHandle("gl", 3, kappa_raw=float(rng.normal() * 0.2))
    lin = layers.LorentzLinear(h, 5, _cfg64(), rng=rng)
    x = np.asarray(lmath.expmap0_space(rng.normal(size=(4, 3)) * 0.6, h.K))
    wsum = rng.normal(size=(4, 6))

    def f(leaves):
        ctx = _seeded_ctx({lin.kernel.raw: leaves[0], lin.boost.v_raw: leaves[1]})
        out = lin.forward_coords(as_node(x), ctx)
        return ops.sum_(out * wsum)

    return finite_diff_check(f, [lin.kernel.raw.value,
                                 rng.normal(size=5) * 0.3], h=1e-6, tol=1e-4)


def check_lorentz_conv2d(rng, mode: str) -> GradCheckReport:
    h = ManifoldHandle("gc", 3, kappa_raw=float(rng.normal() * 0.2))
    c_out = 12 if mode == "cayley" else 2
    conv = layers.LorentzConv2d(h, c_out, 2, 2, stride=1, padding=1, cfg=_cfg64(), rng=rng)
    fm = _rand_fm(rng, h)
    wsum = rng.normal(size=(1, c_out + 1, 5, 5))

    def f(leaves):
        ctx = _seeded_ctx({conv.kernel.raw: leaves[0], conv.boost.v_raw: leaves[1]})
        out = conv.forward(fm, ctx, method="efficient")
        return ops.sum_(out.coords * wsum)

    return finite_diff_check(f, [conv.kernel.raw.value,
                                 rng.normal(size=c_out) * 0.3], h=1e-6, tol=1e-4)


def check_lorentz_batchnorm(rng) -> GradCheckReport:
    h = ManifoldHandle("gb", 3, kappa_raw=float(rng.normal() * 0.2))
    bn = layers.LorentzBatchNorm(h, _cfg64())
    pts = np.asarray(lmath.expmap0_space(rng.normal(size=(6, 3)) * 0.5, h.K))
    wsum = rng.normal(size=(6, 4))

    def f(leaves):
        ctx = _seeded_ctx({bn.gamma: leaves[0], bn.mean: leaves[1]})
        ctx._leaves[id(h.kappa_raw)] = leaves[2]  # curvature gradient too
        out = bn.forward(as_node(pts), ctx, training=True)
        return ops.sum_(out * wsum)

    mean0 = np.asarray(lmath.expmap0_space(rng.normal(size=3) * 0.3, h.K))
    return finite_diff_check(f, [np.asarray(0.8 + 0.4 * rng.uniform()), mean0,
                                 h.kappa_raw], h=1e-6, tol=1e-4)


def check_lhier_loss(rng) -> GradCheckReport:
    h = ManifoldHandle("gh", 3, kappa_raw=0.0)
    emb = np.asarray(lmath.expmap0_space(rng.normal(size=(8, 3)) * 0.7, h.K))
    for _ in range(50):
        batch = lhier.mine_triplets(emb, h.K, 2, seed=int(rng.integers(1 << 30)),
                                    margin=0.1)
        if len(batch) == 0:
            emb = np.asarray(lmath.expmap0_space(rng.normal(size=(8, 3)) * 0.7, h.K))
            continue
        prox = np.asarray(lmath.expmap0_space(rng.normal(size=(4, 3)) * 0.5, h.K))
        d = np.asarray(lhier.pairwise_dist(emb, prox, h.K))
        rij, rijk = lhier._assign_batch(d, batch)
        args = np.concatenate([
            d[batch.i, rij] - d[batch.i, rijk] + batch.margin,
            d[batch.j, rij] - d[batch.j, rijk] + batch.margin,
            d[batch.k, rijk] - d[batch.k, rij] + batch.margin])
        if np.min(np.abs(args)) < 5e-3 or not np.any((args > 0) & np.tile(rij != rijk, 3)):
            # resample when a kink is near or no active hinge sees two distinct
            # proxies (rho_ij == rho_ijk makes every term a constant delta)
            emb = np.asarray(lmath.expmap0_space(rng.normal(size=(8, 3)) * 0.7, h.K))
            continue

        def f(leaves):
            return lhier.lhier_loss(batch, as_node(emb), leaves[0], h.K,
                                    assignments=(rij, rijk))

        return finite_diff_check(f, [prox], h=1e-6, tol=1e-4)
    raise RuntimeError("could not sample a kink-free lhier configuration")


def check_radamw_decay(rng) -> GradCheckReport:
    """The AdamW origin-centroid regularization as a differentiable map."""
    K = float(np.exp(rng.normal() * 0.3))
    glam = 0.05
    target = np.asarray(lmath.expmap0_space(rng.normal(size=4) * 0.5, K))
    o = lmath.origin(K, 4)
    w = np.asarray([1.0 - glam, glam])

    def f(leaves):
        theta = leaves[0]
        stacked = ops.concat([ops.reshape(theta, (1, 5)), ops.reshape(as_node(o), (1, 5))],
                             axis=0)
        c = lmath.centroid(stacked, w, K)
        return lmath.dist2(c, target, K)

    theta0 = np.asarray(lmath.expmap0_space(rng.normal(size=4) * 0.8, K))
    return finite_diff_check(f, [theta0], h=1e-6, tol=1e-4)


def run_gradcheck_suite(seed: int = 0, configs: int = 10):
    """(name, report) for every differentiable path, `configs` draws each."""
    results = []
    checks = [
        ("lorentz_linear", check_lorentz_linear),
        ("lorentz_conv2d[cayley]", lambda r: check_lorentz_conv2d(r, "cayley")),
        ("lorentz_conv2d[norm_correct]", lambda r: check_lorentz_conv2d(r, "norm_correct")),
        ("lorentz_batchnorm", check_lorentz_batchnorm),
        ("lhier_loss", check_lhier_loss),
        ("radamw_decay", check_radamw_decay),
    ]
    for ci, (name, fn) in enumerate(checks):
        worst: GradCheckReport | None = None
        for i in range(configs):
            rng = np.random.default_rng(seed + 1000 * i + 100000 * ci)
            rep = fn(rng)
            if worst is None or rep.max_rel_err > worst.max_rel_err:
                worst = rep
        results.append((name, worst))
    return results
