"""Command-line experiment runner.

Subcommands: check, gradcheck, bench-conv, bench-kernels, train-classify,
train-metric, embed-tree, eval. Global flags: --config PATH, --seed N,
--precision {f32,f64}, --out DIR, plus the stability knobs --tightness and
--xtmax and the ablation switches --fixed-curve, --no-scaling,
--naive-curvature-optim.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..errors import LorentzkitError
from . import bench, invariants, train
from .config import ExperimentConfig, load_config


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--precision", choices=["f32", "f64"], default=None)
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--tightness", type=float, default=None,
                   help="rescaling tightness factor s")
    p.add_argument("--xtmax", type=float, default=None,
                   help="override the max time component of the profile")
    p.add_argument("--fixed-curve", action="store_true", default=None,
                   help="freeze curvatures (ablation)")
    p.add_argument("--no-scaling", action="store_true", default=None,
                   help="bypass max-distance rescaling (ablation)")
    p.add_argument("--naive-curvature-optim", action="store_true", default=None,
                   help="mis-ordered optimizer, for the divergence demo (ablation)")
    p.add_argument("--timing", action="store_true", default=None,
                   help="record wall-clock seconds in the metrics CSV")


def _build_config(args: argparse.Namespace, task: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    cfg.task = task
    overrides = {
        "seed": args.seed, "precision": args.precision, "out_dir": args.out,
        "tightness": args.tightness, "xtmax": args.xtmax,
        "fixed_curve": args.fixed_curve, "no_scaling": args.no_scaling,
        "naive_curvature_optim": args.naive_curvature_optim, "timing": args.timing,
    }
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    return cfg


def cmd_check(args) -> int:
    cfg = _build_config(args, "check")
    dtypes = (np.float64, np.float32) if args.precision is None else (cfg.dtype,)
    results = invariants.run_invariant_suite(dtypes=dtypes, trials=cfg.trials,
                                             seed=cfg.seed,
                                             inject_fault=args.inject_fault or cfg.inject_fault)
    print(invariants.format_report(results))
    out = Path(cfg.out_dir)
    invariants.write_report_csv(results, out / "invariants.csv")
    ok = all(r.passed for r in results)
    print(f"{'OK' if ok else 'FAILED'}: {sum(r.passed for r in results)}/{len(results)} "
          f"properties passed; report at {out / 'invariants.csv'}")
    return 0 if ok else 1


def cmd_gradcheck(args) -> int:
    from . import gradchecks

    cfg = _build_config(args, "gradcheck")
    results = gradchecks.run_gradcheck_suite(seed=cfg.seed, configs=args.configs)
    worst = 0.0
    for name, rep in results:
        status = "PASS" if rep.ok else "FAIL"
        print(f"{status}  {name:<28} max_rel_err={rep.max_rel_err:.3e}  tol={rep.tol:.1e}")
        worst = max(worst, rep.max_rel_err)
    ok = all(rep.ok for _, rep in results)
    print(f"{'OK' if ok else 'FAILED'}: worst relative error {worst:.3e}")
    return 0 if ok else 1


def cmd_bench_conv(args) -> int:
    cfg = _build_config(args, "bench-conv")
    res = bench.bench_conv(cfg)
    out = Path(cfg.out_dir)
    bench.write_bench_csv(res["rows"], out / "bench_conv.csv")
    for row in res["rows"]:
        print(f"{row.name:<12} median {row.median_seconds * 1e3:9.3f} ms   "
              f"peak {row.peak_bytes / 1e6:8.2f} MB")
    print(f"equivalence gap {res['equivalence_gap']:.3e}; "
          f"speedup (naive/efficient) {res['speedup']:.2f}x; "
          f"report at {out / 'bench_conv.csv'}")
    return 0


def cmd_bench_kernels(args) -> int:
    cfg = _build_config(args, "bench-kernels")
    res = bench.bench_kernels(cfg)
    out = Path(cfg.out_dir)
    bench.write_bench_csv(res["rows"], out / "bench_kernels.csv")
    for row in res["rows"]:
        print(f"{row.name:<28} median {row.median_seconds * 1e3:9.3f} ms")
    print(f"active backend: {res['active_backend']}; "
          f"unfold bitwise equal across backends: {res['unfold_bitwise_equal']}")
    return 0


def cmd_train_classify(args) -> int:
    cfg = _build_config(args, "train-classify")
    summary = train.train_classify(cfg, Path(cfg.out_dir))
    print(f"train accuracy {summary['train_accuracy']:.4f}, "
          f"test accuracy {summary['test_accuracy']:.4f}")
    for mid, k in summary["curvatures"].items():
        print(f"K.{mid} = {k:.6f}")
    print(f"outputs in {summary['out_dir']}")
    return 0


def cmd_train_metric(args) -> int:
    cfg = _build_config(args, "train-metric")
    summary = train.train_metric(cfg, Path(cfg.out_dir))
    rec = ", ".join(f"R@{k}={v:.4f}" for k, v in summary["recalls"].items())
    print(f"loss {summary['loss']:.6f}; {rec}")
    for mid, k in summary["curvatures"].items():
        print(f"K.{mid} = {k:.6f}")
    print(f"outputs in {summary['out_dir']}")
    return 0


def cmd_embed_tree(args) -> int:
    cfg = _build_config(args, "embed-tree")
    summary = train.embed_tree(cfg, Path(cfg.out_dir))
    print(f"stress {summary['loss']:.6f}, distortion {summary['distortion']:.4f}, "
          f"max residual {summary['max_residual']:.3e}, K {summary['K']:.6f}")
    print(f"outputs in {summary['out_dir']}")
    return 0


def cmd_eval(args) -> int:
    cfg = _build_config(args, "eval")
    ckpt = Path(args.checkpoint)
    if args.task == "classify":
        res = train.eval_classify(cfg, ckpt, Path(cfg.out_dir))
        print(f"test accuracy {res['test_accuracy']:.4f}")
    else:
        res = train.eval_metric(cfg, ckpt, Path(cfg.out_dir))
        print(", ".join(f"R@{k}={v:.4f}" for k, v in res["recalls"].items()))
    for w in res["warnings"]:
        print(f"warning: {w}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lorentzkit",
                                     description="Lorentz-manifold numerics harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="run the invariant property suite")
    _add_common(p)
    p.add_argument("--inject-fault", choices=["pt-sign"], default=None,
                   help="flip the PT correction sign to prove the suite fails")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _add_common(p)
    p.add_argument("--configs", type=int, default=10,
                   help="random configurations per operation")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench-conv", help="efficient vs naive convolution timing")
    _add_common(p)
    p.set_defaults(fn=cmd_bench_conv)

    p = sub.add_parser("bench-kernels", help="compiled vs fallback kernel timing")
    _add_common(p)
    p.set_defaults(fn=cmd_bench_kernels)

    p = sub.add_parser("train-classify", help="desk-scale image classification")
    _add_common(p)
    p.set_defaults(fn=cmd_train_classify)

    p = sub.add_parser("train-metric", help="desk-scale hierarchical metric learning")
    _add_common(p)
    p.set_defaults(fn=cmd_train_metric)

    p = sub.add_parser("embed-tree", help="joint tree embedding + curvature learning")
    _add_common(p)
    p.set_defaults(fn=cmd_embed_tree)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--task", choices=["classify", "metric"], default="classify")
    p.set_defaults(fn=cmd_eval)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except LorentzkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
