"""Traffic and energy analysis products computed from trajectory logs.

All functions are pure: the same log always yields the same tables.
Headway is front-bumper-to-front-bumper distance between physically
adjacent vehicles, sampled once per vehicle per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def supported_flux(log, duration: float) -> float:
    """Vehicles actually injected, scaled to an hourly rate."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    return log.injected * 3600.0 / duration


@dataclass
class HeadwayStats:
    bin_edges: np.ndarray
    counts: dict = field(default_factory=dict)   # kind -> histogram counts
    means: dict = field(default_factory=dict)    # kind -> mean headway (m)
    samples: dict = field(default_factory=dict)  # kind -> sample count


def _tick_blocks(log):
    """Yield slices of rows sharing one timestamp; rows within a step are
    recorded front to back."""
    if len(log.t) == 0:
        return
    starts = np.flatnonzero(np.diff(log.t, prepend=np.nan) != 0.0)
    bounds = np.append(starts, len(log.t))
    for k in range(len(starts)):
        yield slice(bounds[k], bounds[k + 1])


def headway_stats(log, bin_width: float = 4.0,
                  max_headway: float = 60.0) -> HeadwayStats:
    """Per-kind headway histogram and means over a trimmed log."""
    edges = np.arange(0.0, max_headway + bin_width, bin_width)
    acc = {0: [], 1: []}
    for sl in _tick_blocks(log):
        s = log.s[sl]
        if len(s) < 2:
            continue
        hw = s[:-1] - s[1:]
        kinds = log.kind[sl][1:]
        for kind in (0, 1):
            m = kinds == kind
            if m.any():
                acc[kind].append(hw[m])
    out = HeadwayStats(bin_edges=edges)
    for kind in (0, 1):
        if acc[kind]:
            hw = np.concatenate(acc[kind])
            out.counts[kind], _ = np.histogram(hw, bins=edges)
            out.means[kind] = float(hw.mean())
            out.samples[kind] = len(hw)
        else:
            out.counts[kind] = np.zeros(len(edges) - 1, int)
            out.means[kind] = np.nan
            out.samples[kind] = 0
    return out


def bimodality(counts: np.ndarray, min_separation_bins: int = 2,
               mode_fraction: float = 0.05) -> bool:
    """Two local mass concentrations separated by >= the given number of
    empty-or-near-empty bins."""
    total = counts.sum()
    if total == 0:
        return False
    significant = counts >= mode_fraction * total
    low = counts <= 0.01 * total
    idx = np.flatnonzero(significant)
    if len(idx) < 2:
        return False
    # look for a run of low bins strictly between two significant bins
    for i in range(len(idx) - 1):
        a, b = idx[i], idx[i + 1]
        if b - a - 1 >= min_separation_bins and low[a + 1:b].all():
            return True
    return False


def density_map(log, road_length: float, duration: float,
                cell_length: float = 100.0, time_bin: float = 10.0,
                sim_step: float | None = None) -> np.ndarray:
    """Mean vehicle density (veh/km) per road cell per time bin."""
    sim_step = sim_step if sim_step is not None else log.sim_step
    n_cells = int(np.ceil(road_length / cell_length))
    n_bins = int(np.ceil(duration / time_bin))
    if len(log.t) == 0:
        return np.zeros((n_cells, n_bins))
    counts, _, _ = np.histogram2d(
        log.s, log.t,
        bins=[np.arange(n_cells + 1) * cell_length,
              np.arange(n_bins + 1) * time_bin])
    ticks_per_bin = time_bin / sim_step
    return counts / ticks_per_bin / (cell_length / 1e3)


@dataclass
class RidgeStats:
    slope: float           # m/s, duration-weighted over backward ridges
    peak_density: float    # veh/km, maximum over the map
    fraction_tracked: float  # share of time bins inside a backward ridge
    present: bool
    tracks: list = field(default_factory=list)  # (n_bins, slope) per ridge


def shockwave_ridge(dmap: np.ndarray, cell_length: float = 100.0,
                    time_bin: float = 10.0, density_factor: float = 1.5,
                    continue_factor: float = 1.2,
                    max_jump_cells: int = 3, min_track_bins: int = 6,
                    min_fraction: float = 0.05,
                    min_backward_speed: float = 0.3) -> RidgeStats:
    """Detect backward-propagating high-density ridges.

    Follows density-peak trajectories through the space-time map: a
    track starts at the argmax cell of any time bin whose peak exceeds
    density_factor times the map's median (over occupied cells) and is
    extended bin by bin to the argmax within max_jump_cells of its last
    position, for as long as that local peak stays above
    continue_factor times the median.  Several tracks may run
    concurrently, so simultaneous waves are followed independently
    instead of averaged together.  Each track of at least
    min_track_bins gets a fitted slope; a ridge is "present" when the
    bins covered by tracks sloping upstream faster than
    min_backward_speed make up at least min_fraction of the map.
    """
    if dmap.size == 0 or dmap.max() <= 0:
        return RidgeStats(np.nan, 0.0, 0.0, False)
    med = float(np.median(dmap[dmap > 0]))
    spawn_thr = density_factor * med
    keep_thr = continue_factor * med
    n_cells, n_bins = dmap.shape
    active: list[tuple[int, list[int]]] = []   # (start_bin, cells)
    finished: list[tuple[int, list[int]]] = []
    for j in range(n_bins):
        col = dmap[:, j]
        still, claimed = [], []
        for start, tr in active:
            c0 = tr[-1]
            lo = max(0, c0 - max_jump_cells)
            hi = min(n_cells, c0 + max_jump_cells + 1)
            c = lo + int(col[lo:hi].argmax())
            if col[c] > keep_thr:
                tr.append(c)
                still.append((start, tr))
                claimed.append(c)
            else:
                finished.append((start, tr))
        active = still
        # spawn new tracks at remaining qualifying peaks, brightest
        # first, suppressing the neighborhood of anything already claimed
        free = col.copy()
        for c in claimed:
            lo = max(0, c - max_jump_cells)
            free[lo:c + max_jump_cells + 1] = 0.0
        while True:
            g = int(free.argmax())
            if free[g] <= spawn_thr:
                break
            active.append((j, [g]))
            lo = max(0, g - max_jump_cells)
            free[lo:g + max_jump_cells + 1] = 0.0
    finished += active

    tracks = []
    covered = np.zeros(n_bins, bool)
    for start, tr in finished:
        if len(tr) < min_track_bins:
            continue
        slope = float(np.polyfit(np.arange(len(tr)) * time_bin,
                                 np.asarray(tr) * cell_length, 1)[0])
        tracks.append((len(tr), slope))
        if slope < -min_backward_speed:
            covered[start:start + len(tr)] = True
    frac = float(covered.mean())
    back = [(n, sl) for n, sl in tracks if sl < -min_backward_speed]
    if back:
        slope = sum(n * sl for n, sl in back) / sum(n for n, _ in back)
    else:
        slope = np.nan
    return RidgeStats(slope, float(dmap.max()), frac,
                      frac >= min_fraction, tracks)


def savings_table(mean_consumption: dict) -> dict:
    """Fractional savings versus the 0% penetration baseline per flux.

    mean_consumption maps (flux, penetration) to fleet mean consumption.
    """
    out = {}
    for (flux, p), c in mean_consumption.items():
        base = mean_consumption.get((flux, 0.0))
        if base is None:
            raise KeyError(f"missing 0% baseline for flux {flux}")
        out[(flux, p)] = 1.0 - c / base
    return out


def cav_vs_human_efficiency(results: dict) -> dict:
    """Mean fractional improvement of automated over human consumption,
    averaged across penetrations per flux.

    results maps (flux, penetration) to an EnergyResult; cells lacking
    either kind are skipped.
    """
    per_flux: dict = {}
    for (flux, _p), res in results.items():
        human = [c for vid, c in res.per_vehicle.items()
                 if res.kind_of[vid] == 0]
        cav = [c for vid, c in res.per_vehicle.items()
               if res.kind_of[vid] == 1]
        if not human or not cav:
            continue
        per_flux.setdefault(flux, []).append(
            1.0 - np.mean(cav) / np.mean(human))
    return {flux: float(np.mean(vals)) for flux, vals in per_flux.items()}


def accel_variance(log, kind: int | None = None) -> float:
    m = np.ones(len(log.t), bool) if kind is None else log.kind == kind
    if m.sum() < 2:
        return np.nan
    return float(log.a[m].var())
