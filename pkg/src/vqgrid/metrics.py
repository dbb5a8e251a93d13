"""Append-only CSV metric logs.

Floats are written with repr (shortest round-trip form), so a run repeated
with the same config and seed produces a bit-identical file. Wall-clock
timings go to a separate file that is excluded from reproducibility checks.
"""

from __future__ import annotations

import csv
import time
from pathlib import Path


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsLog:
    def __init__(self, path, fieldnames: list[str]):
        self.path = Path(path)
        self.fieldnames = list(fieldnames)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._last_step = -1
        with open(self.path, "w", newline="") as f:
            f.write(",".join(self.fieldnames) + "\n")

    def append(self, **record) -> None:
        step = record.get("step")
        if step is not None:
            if step < self._last_step:
                raise ValueError(f"non-monotone step {step} after {self._last_step}")
            self._last_step = step
        missing = set(self.fieldnames) - set(record)
        if missing:
            raise ValueError(f"metrics record missing fields {sorted(missing)}")
        with open(self.path, "a", newline="") as f:
            f.write(",".join(_fmt(record[k]) for k in self.fieldnames) + "\n")


class TimingLog:
    """Wall-clock sidecar; deliberately not part of the metrics CSV."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w") as f:
            f.write("step,wall_clock\n")
        self._t0 = time.perf_counter()

    def append(self, step: int) -> None:
        with open(self.path, "a") as f:
            f.write(f"{step},{time.perf_counter() - self._t0:.6f}\n")


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        return [dict(row) for row in csv.DictReader(f)]
