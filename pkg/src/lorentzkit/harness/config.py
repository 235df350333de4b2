"""Experiment configuration: defaults, file parsing, CLI overrides.

Config files are line-oriented `key = value` text; blank lines and lines
starting with `#` are ignored. Unknown keys are errors. The documented key
list is the field set of ExperimentConfig (see README).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import ConfigError


def _parse_bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "on", "yes"):
        return True
    if s in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


@dataclass
class ExperimentConfig:
    # run
    task: str = "check"
    seed: int = 0
    precision: str = "f32"          # f32 | f64
    tightness: float = 2.0
    xtmax: float = 0.0              # 0 means the per-precision default
    out_dir: str = "out"
    timing: bool = False            # wall-clock in the metrics CSV (breaks byte determinism)
    threads: int = 1

    # tree dataset
    tree_depth: int = 3
    tree_branching: int = 3
    data_dim: int = 8
    data_noise: float = 0.12
    label_depth: int = 2
    tree_edge_length: float = 0.35

    # image dataset
    image_size: int = 32
    train_count: int = 256
    test_count: int = 128
    image_noise: float = 0.25
    dataset_path: str = ""

    # model
    channels: int = 8
    blocks: int = 1
    embed_dim: int = 8
    class_count: int = 2
    curvature_init: float = 1.0
    hidden_dim: int = 32
    proto_margin: float = 1.0
    logit_scale: float = 2.0

    # optimizer
    optimizer: str = "radamw"       # rsgd | radam | radamw
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    momentum: float = 0.0
    curvature_lr_scale: float = 0.1
    clip_norm: float = 5.0          # 0 disables
    epochs: int = 20
    batch_size: int = 64

    # lhier
    lhier: bool = True
    proxy_count: int = 64
    margin_delta: float = 0.1
    knn_k: int = 3
    miner_seed: int = 0
    lhier_weight: float = 1.0

    # ablations
    fixed_curve: bool = False
    no_scaling: bool = False
    naive_curvature_optim: bool = False

    # bench
    bench_size: int = 32
    bench_cin: int = 16
    bench_cout: int = 32
    bench_kernel: int = 3
    bench_batch: int = 8
    bench_reps: int = 5

    # invariant suite
    trials: int = 1000
    inject_fault: str = ""

    @property
    def dtype(self):
        if self.precision == "f32":
            return np.float32
        if self.precision == "f64":
            return np.float64
        raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")

    @property
    def xtmax_or_default(self) -> float | None:
        return self.xtmax if self.xtmax > 0 else None


_FIELDS = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        set_key(cfg, key, value)
    return cfg


def set_key(cfg: ExperimentConfig, key: str, value: str) -> None:
    anno = _FIELDS[key]
    current = getattr(cfg, key)
    try:
        if anno in ("bool",) or isinstance(current, bool):
            parsed = _parse_bool(value)
        elif isinstance(current, int):
            parsed = int(value)
        elif isinstance(current, float):
            parsed = float(value)
        else:
            parsed = value
    except ValueError as e:
        raise ConfigError(f"key {key!r}: {e}") from e
    setattr(cfg, key, parsed)


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), base=base)
