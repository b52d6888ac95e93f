"""Deterministic compute accounting for shadow-model construction.

A *layer evaluation* is one example passing forward (or backward) through
one dense layer. Counting these instead of seconds makes cost comparisons
reproducible; wall-clock is recorded alongside but never compared exactly.
"""

from __future__ import annotations

import csv
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass

from .exceptions import InputError

_COUNTERS = ("forward", "backward", "updates")


class CostLedger:
    def __init__(self):
        self._runs = {}
        self._lock = threading.Lock()

    def __getstate__(self):
        return {"_runs": self._runs}

    def __setstate__(self, state):
        self._runs = state["_runs"]
        self._lock = threading.Lock()

    def _run(self, run_id):
        return self._runs.setdefault(run_id, {"forward": 0, "backward": 0, "updates": 0,
                                              "wallclock_s": 0.0})

    def record(self, run_id, forward=0, backward=0, updates=0):
        if min(forward, backward, updates) < 0:
            raise InputError("cost increments must be non-negative")
        with self._lock:
            run = self._run(run_id)
            run["forward"] += int(forward)
            run["backward"] += int(backward)
            run["updates"] += int(updates)

    @contextmanager
    def timed(self, run_id):
        start = time.perf_counter()
        try:
            yield
        finally:
            with self._lock:
                self._run(run_id)["wallclock_s"] += time.perf_counter() - start

    def __contains__(self, run_id):
        return run_id in self._runs

    def run_ids(self):
        return list(self._runs)

    def get(self, run_id) -> dict:
        if run_id not in self._runs:
            raise InputError(f"unknown run id {run_id!r}")
        return dict(self._runs[run_id])

    def evaluations(self, run_id) -> int:
        run = self.get(run_id)
        return run["forward"] + run["backward"]

    def merge(self, other: "CostLedger", prefix: str = ""):
        for rid, vals in other._runs.items():
            run = self._run(prefix + str(rid))
            for k in _COUNTERS:
                run[k] += vals[k]
            run["wallclock_s"] += vals["wallclock_s"]

    def total(self, run_ids, into=None) -> dict:
        """Sum several runs; stored under ``into`` when given."""
        agg = {"forward": 0, "backward": 0, "updates": 0, "wallclock_s": 0.0}
        for rid in run_ids:
            for k, v in self.get(rid).items():
                agg[k] += v
        if into is not None:
            self._runs[into] = dict(agg)
        return agg

    def to_rows(self, include_wallclock: bool = True):
        rows = []
        for rid in sorted(self._runs, key=str):
            run = self._runs[rid]
            for k in _COUNTERS:
                rows.append((rid, k, run[k]))
            rows.append((rid, "evaluations", run["forward"] + run["backward"]))
            if include_wallclock:
                rows.append((rid, "wallclock_s", run["wallclock_s"]))
        return rows

    def to_csv(self, path, include_wallclock: bool = True):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["run_id", "metric", "value"])
            w.writerows(self.to_rows(include_wallclock))


@dataclass(frozen=True)
class CostReport:
    run_a: str
    run_b: str
    evaluation_ratio: float
    wallclock_ratio: float

    @property
    def reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.evaluation_ratio)

    def format_reduction(self) -> str:
        """Cost change of B relative to A, e.g. ``↓88%``."""
        pct = round(self.reduction_pct)
        if pct > 0:
            return f"↓{pct}%"
        if pct < 0:
            return f"↑{-pct}%"
        return "="


def cost_compare(ledger: CostLedger, run_a, run_b) -> CostReport:
    """Cost of run B relative to run A (ratio ``B / A``)."""
    a, b = ledger.get(run_a), ledger.get(run_b)
    ev_a = a["forward"] + a["backward"]
    ev_b = b["forward"] + b["backward"]
    if ev_a == 0:
        raise InputError(f"run {run_a!r} recorded no evaluations")
    wall = b["wallclock_s"] / a["wallclock_s"] if a["wallclock_s"] > 0 else float("nan")
    return CostReport(str(run_a), str(run_b), ev_b / ev_a, wall)
