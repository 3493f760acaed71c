"""Run the bundled 8-environment suite and print the acceptance aggregates.

usage: python3 scripts/run_suite.py [--seeds 5] [--out suite_report.csv]
"""

import argparse
import time

from swarmpath.cli import main


def run() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default="suite_report.csv")
    args = ap.parse_args()
    t0 = time.perf_counter()
    code = main(["batch", "--seeds", str(args.seeds), "--out", args.out])
    print(f"wall time {time.perf_counter() - t0:.0f} s")
    if code == 0:
        code = main(["compare", "--report", args.out])
    return code


if __name__ == "__main__":
    raise SystemExit(run())
