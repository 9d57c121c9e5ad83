"""Scenario-runner CLI: run, verify, bench and grid subcommands.

Exit codes: 0 on success (for `run`: no infeasible tick and the barrier
never dipped below -1e-3 on the ground-truth trace), 1 when a run or
verification suite reports a violation, 2 on usage or configuration
errors. GCBF_LOG_LEVEL in {error, warn, info, debug} tunes logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import verify as verify_mod
from .barrier import grid_evaluate, grid_to_csv
from .config import ConfigError, ScenarioConfig, load_config
from .scenarios import GP_DIMS, ScenarioResult, build_model, run_scenario
from .plots import render_timeseries, render_trajectory

__all__ = ["main"]

log = logging.getLogger("gcbf")

H_MIN_SLACK = 1e-3  # numerical slack on the forward-invariance check

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging() -> None:
    name = os.environ.get("GCBF_LOG_LEVEL", "warn").lower()
    level = _LOG_LEVELS.get(name)
    if level is None:
        print(f"warning: unknown GCBF_LOG_LEVEL {name!r}; using 'warn'", file=sys.stderr)
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = str(args.out)
    return cfg


def _write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def summarize(result: ScenarioResult) -> dict:
    trace = result.trace
    du = np.linalg.norm(
        np.column_stack([trace.column(f"urect_{c}") for c in "xyz"])
        - np.column_stack([trace.column(f"unom_{c}") for c in "xyz"]),
        axis=1,
    )
    wall = result.wall_per_tick
    return {
        "min_h_gp": float(np.min(trace.column("h_gp"))),
        "max_rectification": float(np.max(du)) if du.size else 0.0,
        "ticks": {
            "total": int(len(trace.data)),
            "active": int(np.sum(trace.column("active") > 0.5)),
            "infeasible": int(np.sum(trace.column("infeasible") > 0.5)),
        },
        "wall_clock": {
            "mean_tick_s": float(np.mean(wall)) if wall.size else 0.0,
            "max_tick_s": float(np.max(wall)) if wall.size else 0.0,
            "total_s": float(np.sum(wall)),
        },
    }


def _grid_for(cfg: ScenarioConfig, result: ScenarioResult):
    """(xs, ys, H, MU, VAR) over the config domain, or None if unavailable."""
    if cfg.barrier_source == "disk_cbf":
        (x_lo, x_hi), (y_lo, y_hi) = cfg.domain
        xs = np.linspace(x_lo, x_hi, cfg.grid_resolution)
        ys = np.linspace(y_lo, y_hi, cfg.grid_resolution)
        XX, YY = np.meshgrid(xs, ys)
        H = cfg.disk_radius ** 2 - XX ** 2 - YY ** 2
        return xs, ys, H, H.copy(), np.zeros_like(H)
    model = result.model
    if model is None or len(model.dataset) == 0 or model.theta.dim != 2:
        return None
    return grid_evaluate(model, result.weights, cfg.domain, cfg.grid_resolution)


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(cfg.output_dir or "out")
    out.mkdir(parents=True, exist_ok=True)

    result = run_scenario(cfg)
    summary = summarize(result)

    result.trace.to_csv(out / "trace.csv")
    grid = _grid_for(cfg, result)
    if grid is not None:
        grid_to_csv(out / "contour.csv", *grid)
    _write_json_atomic(out / "summary.json", summary)

    if not args.no_figures:
        render_trajectory(
            out / "trajectory.png",
            result.trace,
            grid=(grid[0], grid[1], grid[2]) if grid is not None else None,
            world=result.world,
            start=result.start,
            disk_radius=cfg.disk_radius if cfg.scenario == "noisy_state" else None,
        )
        render_timeseries(out / "timeseries.png", result.trace)

    ok = (
        summary["ticks"]["infeasible"] == 0
        and summary["min_h_gp"] >= -H_MIN_SLACK
    )
    print(
        f"run {cfg.scenario}: min_h={summary['min_h_gp']:.6f} "
        f"active={summary['ticks']['active']}/{summary['ticks']['total']} "
        f"infeasible={summary['ticks']['infeasible']} -> {'OK' if ok else 'VIOLATION'}"
    )
    print(f"outputs written to {out}")
    return 0 if ok else 1


def cmd_grid(args) -> int:
    cfg = _load(args)
    out = Path(cfg.output_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    if cfg.barrier_source == "disk_cbf":
        (x_lo, x_hi), (y_lo, y_hi) = cfg.domain
        xs = np.linspace(x_lo, x_hi, cfg.grid_resolution)
        ys = np.linspace(y_lo, y_hi, cfg.grid_resolution)
        XX, YY = np.meshgrid(xs, ys)
        H = cfg.disk_radius ** 2 - XX ** 2 - YY ** 2
        grid = (xs, ys, H, H.copy(), np.zeros_like(H))
    else:
        model = build_model(cfg, rng)
        if model is None or len(model.dataset) == 0:
            print("error: config provides no dataset to synthesize a map from",
                  file=sys.stderr)
            return 2
        from .barrier import GcbfWeights

        weights = GcbfWeights(cfg.gcbf.mean_weight, cfg.gcbf.variance_weight)
        grid = grid_evaluate(model, weights, cfg.domain, cfg.grid_resolution)
    grid_to_csv(out / "contour.csv", *grid)
    if not args.no_figures:
        import matplotlib.pyplot as plt

        xs, ys, H = grid[0], grid[1], grid[2]
        fig, ax = plt.subplots(figsize=(6, 5))
        cf = ax.contourf(xs, ys, H, levels=21, cmap="RdYlGn")
        ax.contour(xs, ys, H, levels=[0.0], colors="k", linewidths=2.0)
        fig.colorbar(cf, ax=ax, label="h")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_aspect("equal")
        fig.tight_layout()
        fig.savefig(out / "contour.png", dpi=130)
        plt.close(fig)
    print(f"grid written to {out}")
    return 0


def cmd_verify(args) -> int:
    names = list(verify_mod.SUITES) if args.suite == "all" else [args.suite]
    all_ok = True
    for name in names:
        kwargs = {"seed": args.seed if args.seed is not None else 0}
        report = verify_mod.run_suite(name, **kwargs)
        print(report.format_table())
        all_ok &= report.passed
    print("verification:", "PASS" if all_ok else "FAIL")
    return 0 if all_ok else 1


def cmd_bench(args) -> int:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    rows = bench_mod.run_benchmarks(seed=args.seed if args.seed is not None else 0)
    print(bench_mod.format_report(rows))
    bench_mod.write_bench_csv(rows, out / "bench.csv")
    print(f"benchmark CSV written to {out / 'bench.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcbf",
        description="Data-driven safety filters: scenario runner and verification suites",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario and export trace, contour, summary")
    run_p.add_argument("--config", required=True, type=Path)
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.add_argument("--out", type=Path, default=None, help="override the output dir")
    run_p.add_argument("--no-figures", action="store_true")
    run_p.set_defaults(func=cmd_run)

    grid_p = sub.add_parser("grid", help="export the contour grid of a configured map")
    grid_p.add_argument("--config", required=True, type=Path)
    grid_p.add_argument("--seed", type=int, default=None)
    grid_p.add_argument("--out", type=Path, default=None)
    grid_p.add_argument("--no-figures", action="store_true")
    grid_p.set_defaults(func=cmd_grid)

    verify_p = sub.add_parser("verify", help="run the oracle suites")
    verify_p.add_argument(
        "--suite",
        default="all",
        choices=sorted(verify_mod.SUITES) + ["all"],
    )
    verify_p.add_argument("--seed", type=int, default=None)
    verify_p.set_defaults(func=cmd_verify)

    bench_p = sub.add_parser("bench", help="measure synthesis and rectification timings")
    bench_p.add_argument("--seed", type=int, default=None)
    bench_p.add_argument("--out", type=Path, default=None)
    bench_p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
