#!/usr/bin/env python3
"""Reproduce the full traffic and energy study.

Runs two sweeps and builds a report for each:

  results/full  7 fluxes x 11 penetrations, 1 h cells, replanning every
                5 steps (0.5 s), with per-flux travel-time calibration
  results/k1    {500, 2000} veh/h x {0, 30, 50, 70, 100}% penetration at
                full-rate replanning (every step), reusing the ceiling
                calibrated by the full sweep for the matching flux

Both sweeps are resumable: rerunning the script skips completed cells,
so an interrupted run picks up where it stopped.  Pass --quick for a
minutes-scale smoke version of the same pipeline.
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from mixedsim.report import build_report
from mixedsim.sweep import SweepPlan, run_sweep


def seed_calibration(src_root: Path, dst_root: Path, fluxes) -> None:
    """Copy calibrated ceilings so the subset sweep skips recalibration."""
    src = src_root / "calibration.json"
    dst = dst_root / "calibration.json"
    if not src.exists() or dst.exists():
        return
    table = json.loads(src.read_text())
    keep = {f"{int(round(f))}" for f in fluxes}
    dst.parent.mkdir(parents=True, exist_ok=True)
    dst.write_text(json.dumps(
        {k: v for k, v in table.items() if k in keep}, indent=2,
        sort_keys=True))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output-root", default="results")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--quick", action="store_true",
                    help="small grid, short cells, for a pipeline check")
    ap.add_argument("--skip-report", action="store_true")
    args = ap.parse_args()

    root = Path(args.output_root)
    if args.quick:
        full = SweepPlan(fluxes=(500.0, 2000.0), penetrations=(0.0, 0.5, 1.0),
                         seed=args.seed, replan_every=5, duration=300.0,
                         output_root=str(root / "full"))
        subset = SweepPlan(fluxes=(2000.0,), penetrations=(0.0, 1.0),
                           seed=args.seed, replan_every=1, duration=300.0,
                           output_root=str(root / "k1"))
    else:
        full = SweepPlan(seed=args.seed, replan_every=5, duration=3600.0,
                         output_root=str(root / "full"))
        subset = SweepPlan(fluxes=(500.0, 2000.0),
                           penetrations=(0.0, 0.3, 0.5, 0.7, 1.0),
                           seed=args.seed, replan_every=1, duration=3600.0,
                           output_root=str(root / "k1"))

    print("== full grid sweep ==", flush=True)
    summary = run_sweep(full, workers=args.workers)
    failed = list(summary["failed"])

    seed_calibration(root / "full", root / "k1", subset.fluxes)
    print("== full-rate replanning subset ==", flush=True)
    summary = run_sweep(subset, workers=args.workers)
    failed += summary["failed"]

    if not args.skip_report:
        for name in ("full", "k1"):
            print(f"== report: {name} ==", flush=True)
            build_report(root / name)

    if failed:
        print(f"failed cells: {', '.join(failed)}", file=sys.stderr)
        return 1
    print("all cells complete")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
