"""Append-only metrics records and their CSV serialization.

CSV header is exactly `epoch,split,metric,value,seconds`; per-manifold
curvature snapshots are rows with metric name `K.<manifold_id>`. With timing
disabled (the default) the seconds column is written as 0.000000 so that
identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

HEADER = ["epoch", "split", "metric", "value", "seconds"]


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    split: str
    metric: str
    value: float
    seconds: float = 0.0


class MetricsLog:
    def __init__(self, timing: bool = False):
        self.timing = timing
        self.rows: list[MetricsRecord] = []

    def add(self, epoch: int, split: str, metric: str, value: float,
            seconds: float = 0.0) -> None:
        self.rows.append(MetricsRecord(epoch, split, metric, float(value),
                                       seconds if self.timing else 0.0))

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(HEADER)
            for r in self.rows:
                w.writerow([r.epoch, r.split, r.metric,
                            format(r.value, ".9g"), format(r.seconds, ".6f")])
        return path
