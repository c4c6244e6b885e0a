"""Command-line entry points.

Subcommands:
  run        simulate one scenario cell and save its log and manifest
  sweep      run a flux x penetration grid, resumable
  calibrate  tune the automated velocity ceiling against a human baseline
  energy     evaluate powertrain consumption over a saved log
  report     bundle a completed sweep into tables, heatmaps, and JSON

The output directory defaults to the MIXEDSIM_OUTPUT_DIR environment
variable when set, else ./out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_scenario
from .energy import consume
from .engine import (
    ScenarioConfig,
    TrajectoryLog,
    calibrate_travel_time,
    run,
    run_manifest,
    save_manifest,
    trim_control_volume,
)
from .report import POWERTRAINS, build_report
from .sweep import SweepPlan, run_sweep


def _default_out() -> str:
    return os.environ.get("MIXEDSIM_OUTPUT_DIR", "out")


def _base_config(args) -> ScenarioConfig:
    cfg = load_scenario(args.config) if args.config else ScenarioConfig()
    overrides = {}
    for name in ("seed", "demand_flux", "cav_penetration", "duration",
                 "replan_every"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if overrides:
        cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _add_common(p) -> None:
    p.add_argument("--config", help="scenario YAML file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output-dir", default=_default_out())


def cmd_run(args) -> int:
    cfg = _base_config(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = run(cfg)
    log.save_npz(out / "log.npz")
    manifest = run_manifest(cfg, log)
    try:
        manifest["mean_travel_time"] = log.mean_travel_time()
    except ValueError:
        manifest["mean_travel_time"] = None
    save_manifest(out / "manifest.json", manifest)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def _float_list(text: str):
    return tuple(float(x) for x in text.split(","))


def cmd_sweep(args) -> int:
    base = load_scenario(args.config) if args.config else ScenarioConfig()
    plan = SweepPlan(
        fluxes=_float_list(args.fluxes),
        penetrations=_float_list(args.penetrations),
        seed=args.seed if args.seed is not None else 0,
        replan_every=args.replan_every,
        duration=args.duration,
        output_root=args.output_dir,
        calibrate=not args.no_calibrate,
    )
    summary = run_sweep(plan, base=base, workers=args.workers)
    if summary["failed"]:
        print(f"failed cells: {', '.join(summary['failed'])}",
              file=sys.stderr)
        return 1
    print(f"{summary['n_cells']} cells complete in {args.output_dir}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _base_config(args)
    cfg = replace(cfg, cav_penetration=1.0)
    if args.baseline_tt is not None:
        baseline = args.baseline_tt
    else:
        baseline = run(replace(cfg, cav_penetration=0.0)).mean_travel_time()
    override, dev, converged = calibrate_travel_time(cfg, baseline)
    result = {"cav_vmax_override": override, "deviation": dev,
              "converged": converged, "baseline_mean_tt": baseline}
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0 if converged else 1


def cmd_energy(args) -> int:
    log = TrajectoryLog.load_npz(args.log)
    if args.trim > 0:
        cfg = ScenarioConfig(road_length=log.road_length,
                             control_volume_trim=args.trim)
        log = trim_control_volume(log, cfg)
    spec = POWERTRAINS[args.powertrain.upper()]()
    res = consume(spec, log)
    out = {"unit": res.unit, "vehicles": len(res.per_vehicle)}
    for kind, label in ((None, "fleet"), (0, "human"), (1, "cav")):
        try:
            out[label] = res.fleet_mean(kind)
        except ValueError:
            out[label] = None
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    build_report(args.sweep_dir, out_dir=args.output_dir, trim=args.trim,
                 heatmaps=not args.no_heatmaps)
    target = args.output_dir or str(Path(args.sweep_dir) / "report")
    print(f"report written to {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedsim",
        description="single-lane mixed human/automated traffic simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario")
    _add_common(p)
    p.add_argument("--demand-flux", dest="demand_flux", type=float)
    p.add_argument("--cav-penetration", dest="cav_penetration", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--replan-every", dest="replan_every", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a flux x penetration grid")
    _add_common(p)
    p.add_argument("--fluxes", default="500,750,1000,1250,1500,1750,2000")
    p.add_argument("--penetrations",
                   default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--duration", type=float, default=3600.0)
    p.add_argument("--replan-every", dest="replan_every", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-calibrate", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate",
                       help="match automated travel time to a human baseline")
    _add_common(p)
    p.add_argument("--demand-flux", dest="demand_flux", type=float,
                   required=True)
    p.add_argument("--duration", type=float)
    p.add_argument("--replan-every", dest="replan_every", type=int)
    p.add_argument("--baseline-tt", type=float, default=None,
                   help="known baseline mean travel time in seconds; "
                        "computed from an all-human run when omitted")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("energy", help="consumption over a saved log")
    p.add_argument("--log", required=True, help="path to log.npz")
    p.add_argument("--powertrain", default="CV",
                   choices=["CV", "EV", "HEV", "cv", "ev", "hev"])
    p.add_argument("--trim", type=float, default=500.0)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("report", help="bundle a sweep into artifacts")
    p.add_argument("--sweep-dir", required=True)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--trim", type=float, default=500.0)
    p.add_argument("--no-heatmaps", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
