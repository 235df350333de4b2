"""Experiment harness: CLI, configs, datasets, training loops, benchmarks,
invariant and gradient suites, checkpointing."""

from . import bench, checkpoint, config, data, gradchecks, invariants, metrics, models, train

__all__ = ["bench", "checkpoint", "config", "data", "gradchecks", "invariants",
           "metrics", "models", "train"]
