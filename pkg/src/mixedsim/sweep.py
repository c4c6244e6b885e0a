"""Flux x penetration sweep orchestration.

A sweep runs one simulation cell per (demand flux, automated-vehicle
penetration) pair and leaves each result in its own directory:

    <output_root>/cells/f<flux>_p<penetration>/log.npz
    <output_root>/cells/f<flux>_p<penetration>/manifest.json
    <output_root>/calibration.json
    <output_root>/sweep_manifest.json

Phases run in order: all-human baselines for every flux, then one
travel-time calibration per flux (tuning the automated velocity ceiling
against that flux's baseline), then every remaining cell reusing the
calibrated ceiling.  A cell whose manifest already matches the requested
configuration hash is skipped, so an interrupted sweep resumes where it
left off and a completed sweep is a no-op.  Per-cell failures are
recorded in the cell manifest and the sweep continues.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .config import config_hash
from .engine import (
    ScenarioConfig,
    calibrate_travel_time,
    run,
    run_manifest,
    save_manifest,
)

DEFAULT_FLUXES = (500.0, 750.0, 1000.0, 1250.0, 1500.0, 1750.0, 2000.0)
DEFAULT_PENETRATIONS = tuple(round(0.1 * k, 1) for k in range(11))


@dataclass
class SweepPlan:
    fluxes: tuple = DEFAULT_FLUXES
    penetrations: tuple = DEFAULT_PENETRATIONS
    seed: int = 0
    replan_every: int = 5
    duration: float = 3600.0
    output_root: str = "sweep_out"
    calibrate: bool = True

    def validate(self) -> None:
        if not self.fluxes or not self.penetrations:
            raise ValueError("empty sweep grid")
        if 0.0 not in [float(p) for p in self.penetrations]:
            raise ValueError("penetration grid must include the all-human "
                             "baseline (0.0)")

    def cells(self):
        for flux in self.fluxes:
            for p in self.penetrations:
                yield float(flux), float(p)


def cell_dir(root, flux: float, p: float) -> Path:
    return Path(root) / "cells" / f"f{int(round(flux)):04d}_p{int(round(p * 100)):03d}"


def cell_config(plan: SweepPlan, base: ScenarioConfig, flux: float, p: float,
                override: float | None) -> ScenarioConfig:
    return replace(base, demand_flux=flux, cav_penetration=p,
                   seed=plan.seed, duration=plan.duration,
                   replan_every=plan.replan_every,
                   cav_vmax_override=override if p > 0.0 else None)


def _manifest_path(d: Path) -> Path:
    return d / "manifest.json"


def cell_done(d: Path, cfg: ScenarioConfig) -> bool:
    mp = _manifest_path(d)
    if not mp.exists() or not (d / "log.npz").exists():
        return False
    try:
        manifest = json.loads(mp.read_text())
    except json.JSONDecodeError:
        return False
    return (manifest.get("status") == "ok"
            and manifest.get("config_hash") == config_hash(cfg))


def run_cell(cfg: ScenarioConfig, d: Path) -> dict:
    """Run one cell and persist its log and manifest; never raises."""
    d.mkdir(parents=True, exist_ok=True)
    started = time.time()
    try:
        log = run(cfg)
        manifest = run_manifest(cfg, log)
        manifest["mean_travel_time"] = log.mean_travel_time()
        manifest["status"] = "ok"
        log.save_npz(d / "log.npz")
    except Exception as exc:  # recorded, sweep continues
        manifest = {"status": "failed", "error": f"{type(exc).__name__}: {exc}",
                    "seed": cfg.seed, "demand_flux": cfg.demand_flux,
                    "cav_penetration": cfg.cav_penetration}
    manifest["config_hash"] = config_hash(cfg)
    manifest["wall_seconds"] = round(time.time() - started, 2)
    save_manifest(_manifest_path(d), manifest)
    return manifest


def _run_cell_at(args):
    cfg, d = args
    return str(d), run_cell(cfg, Path(d))


def _map(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_run_cell_at(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell_at, jobs))


def _baseline_tt(root, flux: float) -> float:
    manifest = json.loads(_manifest_path(cell_dir(root, flux, 0.0)).read_text())
    return manifest["mean_travel_time"]


def _calibration_path(root) -> Path:
    return Path(root) / "calibration.json"


def _load_calibration(root) -> dict:
    p = _calibration_path(root)
    return json.loads(p.read_text()) if p.exists() else {}


def calibrate_flux(plan: SweepPlan, base: ScenarioConfig, flux: float,
                   baseline_tt: float) -> dict:
    cfg = cell_config(plan, base, flux, 1.0, None)
    override, dev, converged = calibrate_travel_time(cfg, baseline_tt)
    return {"override": override, "deviation": dev, "converged": converged,
            "baseline_mean_tt": baseline_tt}


def run_sweep(plan: SweepPlan, base: ScenarioConfig | None = None,
              workers: int = 1, progress=print) -> dict:
    """Execute a sweep; returns the sweep manifest (also written to disk)."""
    plan.validate()
    base = base if base is not None else ScenarioConfig()
    root = Path(plan.output_root)
    root.mkdir(parents=True, exist_ok=True)

    # phase 1: all-human baselines
    jobs = []
    for flux in plan.fluxes:
        cfg = cell_config(plan, base, flux, 0.0, None)
        d = cell_dir(root, flux, 0.0)
        if not cell_done(d, cfg):
            jobs.append((cfg, d))
    if jobs:
        progress(f"baselines: running {len(jobs)} cell(s)")
        _map(jobs, workers)

    # phase 2: one travel-time calibration per flux
    calibration = _load_calibration(root)
    if plan.calibrate:
        for flux in plan.fluxes:
            key = f"{int(round(flux))}"
            if key in calibration:
                continue
            progress(f"calibrating flux {key}")
            calibration[key] = calibrate_flux(plan, base, flux,
                                              _baseline_tt(root, flux))
            _calibration_path(root).write_text(
                json.dumps(calibration, indent=2, sort_keys=True))

    # phase 3: remaining cells with the calibrated ceiling
    jobs = []
    for flux, p in plan.cells():
        if p == 0.0:
            continue
        key = f"{int(round(flux))}"
        override = calibration.get(key, {}).get("override")
        cfg = cell_config(plan, base, flux, p, override)
        d = cell_dir(root, flux, p)
        if not cell_done(d, cfg):
            jobs.append((cfg, d))
    if jobs:
        progress(f"cells: running {len(jobs)} cell(s)")
        _map(jobs, workers)

    # collect
    cells = {}
    failed = []
    for flux, p in plan.cells():
        d = cell_dir(root, flux, p)
        manifest = json.loads(_manifest_path(d).read_text())
        name = d.name
        cells[name] = manifest
        if manifest.get("status") != "ok":
            failed.append(name)
    summary = {
        "fluxes": list(plan.fluxes),
        "penetrations": list(plan.penetrations),
        "seed": plan.seed,
        "replan_every": plan.replan_every,
        "duration": plan.duration,
        "n_cells": len(cells),
        "failed": failed,
        "calibration": calibration,
        "cells": cells,
    }
    save_manifest(root / "sweep_manifest.json", summary)
    return summary


def sweep_fluxes_and_penetrations(summary: dict):
    return summary["fluxes"], summary["penetrations"]


def load_cell_log(root, flux: float, p: float):
    from .engine import TrajectoryLog

    return TrajectoryLog.load_npz(cell_dir(root, flux, p) / "log.npz")


def supported_flux_table(root, plan: SweepPlan) -> dict:
    out = {}
    for flux, p in plan.cells():
        manifest = json.loads(_manifest_path(cell_dir(root, flux, p)).read_text())
        if manifest.get("status") != "ok":
            continue
        out[(flux, p)] = manifest["injected"] * 3600.0 / plan.duration
    return out
