"""Command line: run, batch, compare, astar."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .baseline import NoPath, astar, rasterize
from .harness import (
    SUITE_DIR,
    MetricsReport,
    ScenarioError,
    aggregate,
    compare_paths,
    default_output_dir,
    export_trajectories,
    load_scenario,
    load_suite,
    run_single,
    run_suite,
)
from .world import load_arena


def _cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    if args.no_task_allocation:
        cfg = replace(cfg, task_allocation_enabled=False)
    if args.max_ticks:
        cfg = replace(cfg, max_ticks=args.max_ticks)
    n = args.robots or cfg.robot_count
    res = run_single(cfg, args.seed, n, workers=args.workers, record_trajectories=bool(args.export_traj))
    print(json.dumps(res.row, indent=2, default=str))
    if res.state is not None:
        print(f"trace_hash {res.row['trace_hash']}")
    if args.export_traj and res.state is not None:
        out = Path(args.export_traj)
        if not out.is_absolute():
            out = default_output_dir() / out
        print(f"trajectories written to {export_trajectories(res, out)}")
    return 0 if res.row["status"] != "Fault" else 1


def _cmd_batch(args) -> int:
    configs = load_suite(args.suite)

    def progress(res):
        r = res.row
        print(
            f"{r['environment']:>16} seed={r['seed']:<3} n={r['robot_count']:<4} {r['status']:<10} "
            f"ticks={r['ticks']:<6} rr={r['resource_reduction']:.1f}%",
            flush=True,
        )

    report = run_suite(configs, args.seeds, workers=args.workers, progress=progress)
    out = Path(args.out)
    if not out.is_absolute():
        out = default_output_dir() / out
    csv_path, side = report.write(out)
    print(json.dumps(report.aggregates, indent=2))
    print(f"report {csv_path}\naggregates {side}")
    return 0


def _cmd_compare(args) -> int:
    report = MetricsReport.read(args.report)
    print(f"{'environment':>16} {'seed':>4} {'A*':>7} {'raw':>7} {'opt':>7} {'opt/A*':>7} {'opt/raw':>7} flag")
    for r in report.rows:
        if r["status"] != "PathFormed":
            print(f"{r['environment']:>16} {r['seed']:>4} {r['status']}")
            continue
        c = compare_paths(r["raw_length"], r["optimized_length"], r["astar_length"])
        flag = "ANOMALY" if c["anomaly"] else ""
        print(
            f"{r['environment']:>16} {r['seed']:>4} {c['astar_length']:7.3f} {c['raw_length']:7.3f} "
            f"{c['optimized_length']:7.3f} {c['ratio_opt_astar']:7.3f} {c['ratio_opt_raw']:7.3f} {flag}"
        )
    agg = aggregate(report.rows)
    print(json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in agg.items()}, indent=2))
    return 0


def _cmd_astar(args) -> int:
    arena = load_arena(args.arena)
    grid = rasterize(arena, args.resolution, args.radius)
    try:
        path = astar(grid, grid.cell_of(arena.nest.center), grid.cell_of(arena.goal.center))
    except NoPath:
        print("no path")
        return 2
    rows, cols = grid.shape
    print(f"grid {cols}x{rows} at {args.resolution} m, {int(grid.cells.sum())} occupied cells")
    print(f"length {path.length:.6f} m over {len(path.cells)} cells")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmpath", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--robots", type=int, default=None, help="override robot_count")
    r.add_argument("--max-ticks", type=int, default=None)
    r.add_argument("--no-task-allocation", action="store_true")
    r.add_argument("--export-traj", default=None, metavar="PATH")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=_cmd_run)

    b = sub.add_parser("batch", help="run every scenario of a suite directory")
    b.add_argument("--suite", default=str(SUITE_DIR))
    b.add_argument("--seeds", type=int, default=5)
    b.add_argument("--out", default="report.csv")
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=_cmd_batch)

    c = sub.add_parser("compare", help="path comparison table from a report")
    c.add_argument("--report", required=True)
    c.set_defaults(func=_cmd_compare)

    a = sub.add_parser("astar", help="A* baseline length for an arena")
    a.add_argument("--arena", required=True)
    a.add_argument("--resolution", type=float, default=0.05)
    a.add_argument("--radius", type=float, default=0.085)
    a.set_defaults(func=_cmd_astar)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
