"""Benchmarks: efficient vs naive convolution, compiled vs fallback kernels.

The conv benchmark verifies value equivalence before timing anything and
aborts on disagreement; timings are medians over repeated runs with
assertion-mode checks disabled, and peak traced memory is reported per path.
"""

from __future__ import annotations

import csv
import time
import tracemalloc
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import runtime
from ..engine import kernels
from ..errors import NumericError
from ..layers import LayerConfig, LorentzConv2d, LorentzFeatureMap
from ..manifold import ManifoldHandle
from ..stability import PrecisionProfile, RescaleConfig
from .config import ExperimentConfig


@dataclass
class BenchRow:
    name: str
    median_seconds: float
    peak_bytes: int


def _time_median(fn, reps: int) -> tuple[float, int]:
    times = []
    peak = 0
    for _ in range(reps):
        tracemalloc.start()
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
        _, p = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        peak = max(peak, p)
    return float(np.median(times)), peak


def bench_conv(cfg: ExperimentConfig) -> dict:
    """Median wall-clock of the efficient vs naive Lorentz convolution."""
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.dtype
    lcfg = LayerConfig(rescale=RescaleConfig(
        s=cfg.tightness, profile=PrecisionProfile.for_dtype(dt, cfg.xtmax_or_default)))
    h = ManifoldHandle("bench", cfg.bench_cin, dtype=dt)
    conv = LorentzConv2d(h, cfg.bench_cout, cfg.bench_kernel, cfg.bench_kernel,
                         stride=1, padding=cfg.bench_kernel // 2, cfg=lcfg, rng=rng)
    sp = (rng.normal(size=(cfg.bench_batch, cfg.bench_cin, cfg.bench_size,
                           cfg.bench_size)) * 0.3).astype(dt)
    coords = np.concatenate([np.sqrt((sp ** 2).sum(1, keepdims=True) + h.K), sp],
                            axis=1).astype(dt)
    fm = LorentzFeatureMap(coords, h, check=False)

    a = conv.forward(fm, method="efficient").data
    b = conv.forward(fm, method="naive").data
    gap = float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64))))
    tol = 1e-10 if dt == np.float64 else 1e-3
    if gap > tol:
        raise NumericError(f"bench-conv equivalence failed: max |eff - naive| = {gap:.3e}")

    with runtime.benchmark_mode():
        t_eff, m_eff = _time_median(lambda: conv.forward(fm, method="efficient"),
                                    cfg.bench_reps)
        t_naive, m_naive = _time_median(lambda: conv.forward(fm, method="naive"),
                                        cfg.bench_reps)
    return {
        "equivalence_gap": gap,
        "rows": [BenchRow("efficient", t_eff, m_eff), BenchRow("naive", t_naive, m_naive)],
        "speedup": t_naive / t_eff if t_eff > 0 else float("inf"),
    }


def bench_kernels(cfg: ExperimentConfig) -> dict:
    """Compiled extension vs pure-numpy fallback on the raw hot kernels."""
    rng = np.random.default_rng(cfg.seed)
    x = rng.normal(size=(cfg.bench_batch, cfg.bench_cin, cfg.bench_size,
                         cfg.bench_size))
    w = rng.normal(size=(cfg.bench_cout, cfg.bench_cin, cfg.bench_kernel,
                         cfg.bench_kernel))
    k = cfg.bench_kernel
    p = k // 2
    backends = ["fallback"]
    if kernels.BACKEND == "compiled":
        backends.insert(0, "compiled")
    rows = []
    results = {}
    for name in backends:
        impl = kernels.get_backend(name)
        cols = impl.unfold(x, k, k, 1, 1, p, p)
        results[name] = cols
        t_unfold, _ = _time_median(lambda: impl.unfold(x, k, k, 1, 1, p, p),
                                   cfg.bench_reps)
        t_fold, _ = _time_median(
            lambda: impl.fold_add(cols, x.shape[1], x.shape[2], x.shape[3],
                                  k, k, 1, 1, p, p), cfg.bench_reps)
        t_direct, _ = _time_median(lambda: impl.conv2d_direct(x, w, 1, 1, p, p),
                                   cfg.bench_reps)
        rows.append(BenchRow(f"{name}.unfold", t_unfold, 0))
        rows.append(BenchRow(f"{name}.fold_add", t_fold, 0))
        rows.append(BenchRow(f"{name}.conv2d_direct", t_direct, 0))
    agree = True
    if len(backends) == 2:
        agree = bool(np.array_equal(results["compiled"], results["fallback"]))
    return {"rows": rows, "backends": backends, "unfold_bitwise_equal": agree,
            "active_backend": kernels.BACKEND}


def write_bench_csv(rows: list[BenchRow], path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["name", "median_seconds", "peak_bytes"])
        for r in rows:
            w.writerow([r.name, format(r.median_seconds, ".6f"), r.peak_bytes])
