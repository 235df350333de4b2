"""Acceptance criteria, one test per criterion, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Tolerances are pinned here and nowhere else.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from lorentzkit import lmath
from lorentzkit.engine import backward
from lorentzkit.engine import node as N
from lorentzkit.harness import bench, gradchecks, invariants, train
from lorentzkit.harness.config import ExperimentConfig
from lorentzkit.layers import LayerConfig, LorentzConv2d, LorentzFeatureMap
from lorentzkit.manifold import ManifoldHandle
from lorentzkit.optimizers import (
    OptimizerConfig,
    OptimizerState,
    ParamSlot,
    move_parameters,
    radam_step,
    radamw_step,
)
from lorentzkit.params import LORENTZ, EUCLIDEAN, GraphContext
from lorentzkit.stability import PrecisionProfile, RescaleConfig, d_max, rescale_space


def _report(num: int, name: str, ok: bool, detail: str = "") -> None:
    print(f"\nACCEPTANCE {num} [{name}]: {'PASS' if ok else 'FAIL'}"
          + (f" ({detail})" if detail else ""))
    assert ok, f"criterion {num} ({name}): {detail}"


def test_criterion_1_manifold_invariant_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)

    # exp/log round trip, 1000 trials, f64, <= 1e-9 relative
    h = ManifoldHandle("a1", 3)
    worst_rt = 0.0
    for _ in range(10):
        base = rng.normal(size=(100, 3))
        base /= np.linalg.norm(base, axis=1, keepdims=True)
        x = np.asarray(lmath.expmap0_space(base * rng.uniform(0.05, 5, (100, 1)), h.K))
        raw = rng.normal(size=(100, 4))
        v = np.asarray(lmath.project_tangent(x, raw, h.K))
        nrm = np.sqrt(np.maximum(np.asarray(lmath.norm2(v, keepdims=True)), 1e-30))
        z = v / nrm * rng.uniform(0.05, 5, (100, 1))
        y = np.asarray(lmath.expmap(x, z, h.K))
        z2 = np.asarray(lmath.logmap(x, y, h.K))
        worst_rt = max(worst_rt, float(np.max(np.abs(z2 - z) / np.maximum(np.abs(z), 1))))

    # PT isometry <= 1e-6 and per-op residuals at both precisions
    res = {r.name: r for r in invariants.run_invariant_suite(
        dtypes=(np.float64,), trials=1000, seed=0)}
    res32 = {r.name: r for r in invariants.run_invariant_suite(
        dtypes=(np.float32,), trials=1000, seed=0)}
    pt_ok = res["pt_isometry"].worst <= 1e-6
    resid64 = max(res["on_manifold_ops"].worst, res["optimizer_residuals"].worst)
    resid32 = max(res32["on_manifold_ops"].worst, res32["optimizer_residuals"].worst)
    elapsed = time.perf_counter() - t0
    ok = (worst_rt <= 1e-9 and pt_ok and resid64 <= 1e-8 and resid32 <= 1e-4
          and elapsed <= 120)
    _report(1, "manifold invariant suite", ok,
            f"roundtrip {worst_rt:.2e} (<=1e-9), PT {res['pt_isometry'].worst:.2e} "
            f"(<=1e-6), residual f64 {resid64:.2e} (<=1e-8), f32 {resid32:.2e} "
            f"(<=1e-4), {elapsed:.1f}s")


def test_criterion_2_gradient_correctness():
    t0 = time.perf_counter()
    results = gradchecks.run_gradcheck_suite(seed=0, configs=10)
    worst = max(rep.max_rel_err for _, rep in results)
    ok = all(rep.max_rel_err <= 1e-4 for _, rep in results)
    detail = ", ".join(f"{name} {rep.max_rel_err:.1e}" for name, rep in results)
    _report(2, "gradient correctness", ok,
            f"worst {worst:.2e} (<=1e-4) over {detail}; {time.perf_counter()-t0:.1f}s")


def test_criterion_3_conv_equivalence_and_speed():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    h = ManifoldHandle("c3", 16)
    cfg = LayerConfig()
    conv = LorentzConv2d(h, 32, 3, 3, stride=1, padding=1, cfg=cfg, rng=rng)
    sp = rng.normal(size=(8, 16, 32, 32)) * 0.3
    coords = np.concatenate([np.sqrt((sp ** 2).sum(1, keepdims=True) + h.K), sp], axis=1)
    fm = LorentzFeatureMap(coords, h, check=False)

    # value equivalence on the benchmark geometry
    a = conv.forward(fm, method="efficient").data
    b = conv.forward(fm, method="naive").data
    value_gap = float(np.abs(a - b).max())

    # gradient equivalence on a smaller geometry (both graphs are exact)
    conv_g = LorentzConv2d(ManifoldHandle("c3g", 4), 8, 3, 3, stride=1, padding=1,
                           cfg=cfg, rng=rng)
    spg = rng.normal(size=(2, 4, 8, 8)) * 0.4
    cg = np.concatenate([np.sqrt((spg ** 2).sum(1, keepdims=True) + 1.0), spg], axis=1)
    wsum = rng.normal(size=(2, 9, 8, 8))
    grads = {}
    for method in ("efficient", "naive"):
        ctx = GraphContext()
        fmg = LorentzFeatureMap(N.leaf(cg, requires_grad=False), conv_g.manifold_in,
                                check=False)
        out = conv_g.forward(fmg, ctx, method=method)
        backward(N.sum_(out.coords * wsum))
        ctx.collect_grads(conv_g.slots())
        grads[method] = {s.name: s.grad.copy() for s in conv_g.slots()}
    grad_gap = max(float(np.abs(grads["efficient"][k] - grads["naive"][k]).max())
                   for k in grads["efficient"])

    # timing: median of 5
    bcfg = ExperimentConfig(bench_size=32, bench_cin=16, bench_cout=32,
                            bench_kernel=3, bench_batch=8, bench_reps=5,
                            precision="f64")
    r = bench.bench_conv(bcfg)
    speedup = r["speedup"]
    elapsed = time.perf_counter() - t0
    ok = value_gap <= 1e-10 and grad_gap <= 1e-8 and speedup >= 1.5 and elapsed <= 300
    _report(3, "conv equivalence + efficiency", ok,
            f"value gap {value_gap:.2e} (<=1e-10), grad gap {grad_gap:.2e} (<=1e-8), "
            f"speedup {speedup:.2f}x (>=1.5x), {elapsed:.1f}s")


def test_criterion_4_stability_contrast():
    cfg = ExperimentConfig(task="embed-tree", seed=0, precision="f32", lr=0.05,
                           curvature_lr_scale=1.0, embed_dim=4,
                           tree_depth=3, tree_branching=3)
    schema = train.stability_run(cfg, steps=500, naive=False)
    naive = train.stability_run(cfg, steps=500, naive=True)
    schema_ok = schema["finite"] and schema["steps_completed"] == 500 \
        and schema["max_residual"] <= 1e-3
    naive_bad = (not naive["finite"]) or \
        naive["max_residual"] >= 10 * schema["max_residual"]
    ok = schema_ok and naive_bad
    _report(4, "optimizer ordering stability contrast", ok,
            f"schema residual {schema['max_residual']:.2e} (<=1e-3, finite), naive "
            + ("non-finite at step %d" % naive["steps_completed"]
               if not naive["finite"] else f"residual {naive['max_residual']:.2e}"))


def test_criterion_5_move_parameters():
    rng = np.random.default_rng(1)
    h = ManifoldHandle("c5", 3)
    worst_d = worst_t = 0.0
    for K_new in (0.4, 1.9, 3.1):
        pts = np.asarray(lmath.expmap0_space(rng.normal(size=(50, 3)), 1.0))
        slot = ParamSlot("p", LORENTZ, pts.copy(), manifold=h)
        st = OptimizerState()
        st.of(slot).m = np.asarray(lmath.project_tangent(pts, rng.normal(size=(50, 4)),
                                                         1.0))
        d0 = np.asarray(lmath.dist0(pts, 1.0))
        move_parameters([slot], st, 1.0, K_new)
        d1 = np.asarray(lmath.dist0(slot.value, K_new))
        worst_d = max(worst_d, float(np.max(np.abs(d0 - d1))))
        worst_t = max(worst_t, float(np.max(np.abs(
            np.asarray(lmath.inner(slot.value, st.of(slot).m))))))
    # identity at unchanged curvature
    pts = np.asarray(lmath.expmap0_space(rng.normal(size=(50, 3)), 1.0))
    slot = ParamSlot("q", LORENTZ, pts.copy(), manifold=h)
    move_parameters([slot], OptimizerState(), 1.0, 1.0)
    ident = float(np.max(np.abs(slot.value - pts)))
    ok = worst_d <= 1e-8 and ident <= 1e-12 and worst_t <= 1e-8
    _report(5, "move_parameters correctness", ok,
            f"distance drift {worst_d:.2e} (<=1e-8), identity {ident:.2e} (<=1e-12), "
            f"moment tangency {worst_t:.2e} (<=1e-8)")


def test_criterion_6_max_distance_rescaling():
    rng = np.random.default_rng(2)
    violations = {}
    for dtype in (np.float64, np.float32):
        profile = PrecisionProfile.for_dtype(dtype)
        cfg = RescaleConfig(s=2.0, profile=profile)
        K = 1.0
        dm = d_max(K, profile)
        n = 100_000
        direc = rng.normal(size=(n, 3))
        direc /= np.linalg.norm(direc, axis=1, keepdims=True)
        zs = (direc * np.exp(rng.uniform(np.log(1e-6), np.log(1e6), (n, 1)))).astype(dtype)
        out = np.asarray(rescale_space(zs, K, cfg))
        pts = np.asarray(lmath.expmap0_space(out, K))
        dist0 = np.asarray(lmath.dist0(pts.astype(np.float64), K))
        violations[np.dtype(dtype).name] = int(np.sum(dist0 >= dm))

    # boundary: |z| = s * d_max lands exactly on 0.99 * d_max (f64)
    profile = PrecisionProfile.for_dtype(np.float64)
    cfg = RescaleConfig(s=2.0, profile=profile)
    worst_b = 0.0
    for K in (0.5, 1.0, 2.0):
        dm = d_max(K, profile)
        z = np.zeros(3)
        z[0] = cfg.s * dm
        out = np.asarray(rescale_space(z, K, cfg))
        got = float(lmath.dist0(np.asarray(lmath.expmap0_space(out, K)), K))
        worst_b = max(worst_b, abs(got - 0.99 * dm) / (0.99 * dm))
    ok = violations["float64"] == 0 and violations["float32"] == 0 and worst_b <= 1e-9
    _report(6, "max-distance rescaling", ok,
            f"violations {violations} (= 0), boundary rel err {worst_b:.2e} (<=1e-9)")


def test_criterion_7_adamw_reduction():
    h = ManifoldHandle("c7", 3)
    target = np.asarray(lmath.expmap0_space(np.array([0.7, -0.2, 0.4]), h.K))
    start = np.asarray(lmath.expmap0_space(np.array([-0.8, 0.5, 0.1]), h.K))
    a = ParamSlot("a", LORENTZ, start.copy(), manifold=h)
    b = ParamSlot("b", LORENTZ, start.copy(), manifold=h)
    sa, sb = OptimizerState(), OptimizerState()
    cfg = OptimizerConfig(lr=0.05, weight_decay=0.0)
    bitwise = True
    for _ in range(100):
        for slot, st, fn in ((a, sa, radam_step), (b, sb, radamw_step)):
            ctx = GraphContext()
            backward(N.sum_(lmath.dist2(ctx.param(slot), target, h.K)))
            ctx.collect_grads([slot])
            fn(slot, st, cfg)
        bitwise = bitwise and np.array_equal(a.value, b.value)
    e = ParamSlot("e", EUCLIDEAN, np.array(1.0))
    e.grad = np.array(0.0)
    radamw_step(e, OptimizerState(), OptimizerConfig(lr=0.1, weight_decay=0.1))
    decay_exact = float(e.value) == 1.0 * (1.0 - 0.1 * 0.1)
    ok = bitwise and decay_exact
    _report(7, "AdamW reduction", ok,
            f"bitwise over 100 steps: {bitwise}, euclidean decay exact: {decay_exact} "
            f"(value {float(e.value)!r})")


def test_criterion_8_classification():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(task="train-classify", seed=0, precision="f32", epochs=20,
                           train_count=192, test_count=96, batch_size=64, lr=0.05)
    s = train.train_classify(cfg, "/tmp/lzk_accept_classify")
    elapsed = time.perf_counter() - t0
    ks = s["curvatures"]
    finite_k = all(np.isfinite(v) for v in ks.values())
    ok = (s["train_accuracy"] >= 0.99 and s["test_accuracy"] >= 0.95
          and elapsed <= 600 and finite_k)
    _report(8, "desk-scale classification", ok,
            f"train {s['train_accuracy']:.4f} (>=0.99), test {s['test_accuracy']:.4f} "
            f"(>=0.95), K={ {k: round(v, 4) for k, v in ks.items()} }, {elapsed:.0f}s")


def test_criterion_9_lhier_pairing():
    t0 = time.perf_counter()
    wins = ties = 0
    pairs = []
    nonneg = True
    for seed in range(10):
        r = {}
        for on in (True, False):
            cfg = ExperimentConfig(task="train-metric", seed=seed, precision="f32",
                                   lr=0.05, lhier=on, weight_decay=0.01,
                                   epochs=60, proxy_count=64, lhier_weight=1.0)
            out = f"/tmp/lzk_accept_metric_{seed}_{on}"
            s = train.train_metric(cfg, out)
            r[on] = s["recalls"][1]
            rows = open(f"{out}/metrics.csv").read().splitlines()[1:]
            losses = [float(x.split(",")[3]) for x in rows if ",loss," in x]
            nonneg = nonneg and all(v >= 0 for v in losses)
        pairs.append((r[True], r[False]))
        wins += r[True] > r[False]
        ties += r[True] == r[False]
    ok = (wins + ties) >= 7 and nonneg
    _report(9, "LHIER direction", ok,
            f"on>=off in {wins + ties}/10 paired seeds ({wins} wins, {ties} ties), "
            f"losses nonnegative: {nonneg}; {time.perf_counter()-t0:.0f}s")


def test_criterion_10_determinism():
    env = dict(os.environ, OPENBLAS_NUM_THREADS="1")

    def run(args, out):
        r = subprocess.run([sys.executable, "-m", "lorentzkit.harness.cli", *args,
                            "--out", out], env=env, capture_output=True, text=True)
        assert r.returncode == 0, r.stdout + r.stderr

    identical = {}
    jobs = {
        "check": (["check", "--seed", "5"], "invariants.csv"),
        "train-classify": (["train-classify", "--seed", "5", "--precision", "f32"],
                           "metrics.csv"),
        "train-metric": (["train-metric", "--seed", "5", "--precision", "f32"],
                         "metrics.csv"),
    }
    for name, (args, fname) in jobs.items():
        outs = []
        for i in (1, 2):
            out = f"/tmp/lzk_det_{name.replace('-', '_')}_{i}"
            run(args, out)
            outs.append(open(f"{out}/{fname}", "rb").read())
        identical[name] = outs[0] == outs[1]
    ok = all(identical.values())
    _report(10, "determinism", ok,
            ", ".join(f"{k}: {'identical' if v else 'DIFFERS'}"
                      for k, v in identical.items()))
