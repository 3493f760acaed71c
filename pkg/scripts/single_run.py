"""Simulate one bundled environment and export its trajectories.

usage: python3 scripts/single_run.py env4_obstacle --seed 1 --robots 70
"""

import argparse

from swarmpath.harness import SUITE_DIR, default_output_dir, export_trajectories, load_scenario, run_single


def run() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("environment")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--robots", type=int, default=None)
    args = ap.parse_args()
    cfg = load_scenario(SUITE_DIR / f"{args.environment}.json")
    res = run_single(cfg, args.seed, args.robots or cfg.robot_count, record_trajectories=True)
    for key, value in res.row.items():
        print(f"{key:>20} {value}")
    out = default_output_dir() / f"{args.environment}_s{args.seed}_traj.csv"
    print(f"trajectories {export_trajectories(res, out)}")
    return 0 if res.row["status"] == "PathFormed" else 1


if __name__ == "__main__":
    raise SystemExit(run())
