"""Timing benchmarks for synthesis, rank-1 maintenance and rectification.

Absolute milliseconds depend on the host; the assertable quantity is the
relative speedup of the rank-1 insert over a dense rebuild. Results go to
a CSV so runs can be compared across machines.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import barrier as gcbf_barrier
from .barrier import GcbfWeights
from .gp import Dataset, GpModel
from .kernel import Hyperparameters
from .safety_filter import barrier_constraint, double_integrator, ecbf_gains_from_poles, rectify

__all__ = ["BenchRow", "run_benchmarks", "write_bench_csv"]


@dataclass
class BenchRow:
    name: str
    n_samples: int
    mean_ms: float
    repeats: int


def _time(fn, repeats: int) -> float:
    """Mean wall-clock milliseconds over `repeats` calls (after one warmup)."""
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return 1000.0 * (time.perf_counter() - t0) / repeats


def run_benchmarks(sizes=(100, 300, 500), seed: int = 0, repeats: int = 10) -> list:
    rng = np.random.default_rng(seed)
    theta = Hyperparameters(np.array([0.15, 0.15]), 1.0, 1e-3)
    weights = GcbfWeights(1.0, 4.0)
    dyn = double_integrator(3)
    gains = ecbf_gains_from_poles(-2.0, -2.0)
    rows: list[BenchRow] = []

    for n in sizes:
        X = rng.uniform(-2.0, 2.0, size=(n, 2))
        y = rng.normal(size=n)

        def rebuild():
            GpModel(Dataset(X, y, capacity=n), theta)

        rows.append(BenchRow("full_rebuild", n, _time(rebuild, repeats), repeats))

        base = GpModel(Dataset(X[: n - 1], y[: n - 1], capacity=n), theta)

        def insert():
            work = base.snapshot()
            work.gram_inverse = base.gram_inverse.copy()
            work.try_add_sample(X[n - 1], float(y[n - 1]))

        rows.append(BenchRow("rank1_insert", n, _time(insert, repeats), repeats))

        model = GpModel(Dataset(X, y, capacity=n), theta)
        x_state = np.array([0.1, -0.2, 0.0, 0.3, 0.1, 0.0])

        def tick():
            ev = gcbf_barrier.evaluate(model, weights, x_state[:2]).embed([0, 1], 6)
            a, b = barrier_constraint(ev, dyn, x_state, gains)
            rectify(np.array([1.0, 0.5, 0.0]), a, b)

        rows.append(BenchRow("rectification_tick", n, _time(tick, repeats), repeats))

    def qp_only():
        rectify(np.array([1.0, 0.5, 0.0]), np.array([0.2, -1.0, 0.0]), 0.5)

    rows.append(BenchRow("qp_only", 0, _time(qp_only, max(repeats, 100)), max(repeats, 100)))
    return rows


def write_bench_csv(rows, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "n_samples", "mean_ms", "repeats"])
        for r in rows:
            writer.writerow([r.name, r.n_samples, f"{r.mean_ms:.6f}", r.repeats])
    tmp.replace(path)


def format_report(rows) -> str:
    lines = ["benchmark results (wall-clock, mean over repeats)"]
    for r in rows:
        lines.append(f"  {r.name:<20} N={r.n_samples:<5} {r.mean_ms:10.3f} ms")
    rebuilds = {r.n_samples: r.mean_ms for r in rows if r.name == "full_rebuild"}
    inserts = {r.n_samples: r.mean_ms for r in rows if r.name == "rank1_insert"}
    for n in sorted(set(rebuilds) & set(inserts)):
        if inserts[n] > 0:
            lines.append(f"  speedup rank-1 vs rebuild at N={n}: {rebuilds[n] / inserts[n]:.1f}x")
    return "\n".join(lines)
