"""Bundle one completed sweep into tables, heatmaps, and a summary.

Every number is recomputed from the stored trajectory logs inside the
control volume (road trimmed at both ends, samples before the first
network exit dropped), so a report can always be regenerated from the
raw sweep artifacts.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .energy import consume, cv_spec, ev_spec, hev_spec
from .engine import ScenarioConfig, TrajectoryLog, trim_control_volume
from .metrics import (
    accel_variance,
    bimodality,
    density_map,
    headway_stats,
    savings_table,
    shockwave_ridge,
    supported_flux,
)

POWERTRAINS = {"CV": cv_spec, "EV": ev_spec, "HEV": hev_spec}


def load_sweep_manifest(sweep_dir) -> dict:
    return json.loads((Path(sweep_dir) / "sweep_manifest.json").read_text())


def _trim(log: TrajectoryLog, trim: float) -> TrajectoryLog:
    cfg = ScenarioConfig(road_length=log.road_length,
                         control_volume_trim=trim)
    return trim_control_volume(log, cfg)


def analyze_cell(log: TrajectoryLog, duration: float,
                 trim: float = 500.0, powertrains=("CV",)) -> dict:
    """All per-cell metrics used by the report and the acceptance suite."""
    trimmed = _trim(log, trim)
    hs = headway_stats(trimmed)
    dmap = density_map(trimmed, road_length=log.road_length,
                       duration=duration)
    ridge = shockwave_ridge(dmap)
    out = {
        "supported_flux": supported_flux(log, duration),
        "mean_travel_time": log.mean_travel_time(),
        "headway_mean": {k: hs.means[k] for k in (0, 1)},
        "headway_samples": {k: hs.samples[k] for k in (0, 1)},
        "headway_counts": {k: hs.counts[k].tolist() for k in (0, 1)},
        "headway_bimodal_cav": bool(bimodality(hs.counts[1])),
        "accel_variance": accel_variance(trimmed),
        "ridge": {"slope": ridge.slope, "present": ridge.present,
                  "fraction_tracked": ridge.fraction_tracked},
        "energy": {},
    }
    for name in powertrains:
        res = consume(POWERTRAINS[name](), trimmed)
        entry = {"unit": res.unit}
        for kind, label in ((None, "fleet"), (0, "human"), (1, "cav")):
            try:
                entry[label] = res.fleet_mean(kind)
            except ValueError:
                entry[label] = None
        out["energy"][name] = entry
    return out, dmap


def plot_density(dmap: np.ndarray, path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    im = ax.imshow(dmap, origin="lower", aspect="auto", cmap="inferno",
                   extent=[0, dmap.shape[1] * 10.0 / 60.0,
                           0, dmap.shape[0] * 0.1])
    ax.set_xlabel("time (min)")
    ax.set_ylabel("position (km)")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="density (veh/km)")
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def _csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(str(x) for x in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def build_report(sweep_dir, out_dir=None, trim: float = 500.0,
                 powertrains=("CV", "EV", "HEV"), heatmaps: bool = True,
                 progress=print) -> dict:
    sweep_dir = Path(sweep_dir)
    out = Path(out_dir) if out_dir else sweep_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    manifest = load_sweep_manifest(sweep_dir)
    duration = manifest["duration"]

    cells = {}
    consumption = {name: {} for name in powertrains}
    for name, cell in manifest["cells"].items():
        if cell.get("status") != "ok":
            continue
        flux = float(cell["demand_flux"])
        p = float(cell["cav_penetration"])
        progress(f"analyzing {name}")
        log = TrajectoryLog.load_npz(sweep_dir / "cells" / name / "log.npz")
        stats, dmap = analyze_cell(log, duration, trim=trim,
                                   powertrains=powertrains)
        stats["demand_flux"] = flux
        stats["cav_penetration"] = p
        cells[name] = stats
        for pt in powertrains:
            fleet = stats["energy"][pt]["fleet"]
            if fleet is not None:
                consumption[pt][(flux, p)] = fleet
        if heatmaps:
            plot_density(dmap, out / f"density_{name}.png",
                         f"{flux:.0f} veh/h, {100 * p:.0f}% automated")

    savings = {}
    for pt in powertrains:
        try:
            savings[pt] = {f"{f:.0f},{p:.2f}": round(v, 4) for (f, p), v
                           in savings_table(consumption[pt]).items()}
        except KeyError:
            savings[pt] = {}

    _csv(out / "supported_flux.csv",
         ["demand_flux", "cav_penetration", "supported_flux"],
         [(c["demand_flux"], c["cav_penetration"],
           round(c["supported_flux"], 1)) for c in cells.values()])
    _csv(out / "headway_means.csv",
         ["demand_flux", "cav_penetration", "human_mean_m", "cav_mean_m"],
         [(c["demand_flux"], c["cav_penetration"],
           round(c["headway_mean"][0], 2), round(c["headway_mean"][1], 2))
          for c in cells.values()])
    for pt in powertrains:
        _csv(out / f"consumption_{pt}.csv",
             ["demand_flux", "cav_penetration", "fleet", "human", "cav"],
             [(c["demand_flux"], c["cav_penetration"],
               c["energy"][pt]["fleet"], c["energy"][pt]["human"],
               c["energy"][pt]["cav"]) for c in cells.values()])

    summary = {
        "sweep": {k: manifest[k] for k in
                  ("fluxes", "penetrations", "seed", "replan_every",
                   "duration", "failed")},
        "trim": trim,
        "cells": cells,
        "savings": savings,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2,
                                                 sort_keys=True))
    return summary
