import json

import pytest

import mixedsim.sweep as sweep_mod
from mixedsim.engine import ScenarioConfig
from mixedsim.sweep import (
    DEFAULT_FLUXES,
    DEFAULT_PENETRATIONS,
    SweepPlan,
    cell_dir,
    run_sweep,
)


SHORT_ROAD = ScenarioConfig(road_length=600.0, control_volume_trim=100.0)


def small_plan(tmp_path, **kw):
    defaults = dict(fluxes=(600.0,), penetrations=(0.0, 1.0), seed=3,
                    replan_every=5, duration=40.0,
                    output_root=str(tmp_path / "out"), calibrate=False)
    defaults.update(kw)
    return SweepPlan(**defaults)


def test_default_grid_shape():
    plan = SweepPlan()
    assert len(list(plan.cells())) == 7 * 11
    assert DEFAULT_FLUXES[0] == 500.0 and DEFAULT_FLUXES[-1] == 2000.0
    assert DEFAULT_PENETRATIONS[0] == 0.0 and DEFAULT_PENETRATIONS[-1] == 1.0


def test_plan_requires_baseline():
    with pytest.raises(ValueError):
        SweepPlan(penetrations=(0.5, 1.0)).validate()


def test_single_cell_sweep_and_resume(tmp_path):
    plan = small_plan(tmp_path, penetrations=(0.0,))
    summary = run_sweep(plan, base=SHORT_ROAD, progress=lambda *_: None)
    assert summary["n_cells"] == 1
    assert summary["failed"] == []
    d = cell_dir(plan.output_root, 600.0, 0.0)
    assert (d / "log.npz").exists()
    before = (d / "log.npz").read_bytes()
    stamp = (d / "manifest.json").stat().st_mtime_ns

    # rerun: completed cells are skipped, artifacts untouched
    run_sweep(plan, base=SHORT_ROAD, progress=lambda *_: None)
    assert (d / "log.npz").read_bytes() == before
    assert (d / "manifest.json").stat().st_mtime_ns == stamp


def test_config_change_invalidates_cell(tmp_path):
    plan = small_plan(tmp_path, penetrations=(0.0,))
    run_sweep(plan, base=SHORT_ROAD, progress=lambda *_: None)
    d = cell_dir(plan.output_root, 600.0, 0.0)
    first = json.loads((d / "manifest.json").read_text())

    plan2 = small_plan(tmp_path, penetrations=(0.0,), seed=4)
    run_sweep(plan2, base=SHORT_ROAD, progress=lambda *_: None)
    second = json.loads((d / "manifest.json").read_text())
    assert second["config_hash"] != first["config_hash"]
    assert second["seed"] == 4


def test_cell_failure_recorded_and_sweep_continues(tmp_path, monkeypatch):
    plan = small_plan(tmp_path)

    real_run = sweep_mod.run

    def flaky(cfg):
        if cfg.cav_penetration > 0.0:
            raise RuntimeError("boom")
        return real_run(cfg)

    monkeypatch.setattr(sweep_mod, "run", flaky)
    summary = run_sweep(plan, base=SHORT_ROAD, progress=lambda *_: None)
    assert summary["failed"] == ["f0600_p100"]
    assert summary["cells"]["f0600_p000"]["status"] == "ok"
    assert "boom" in summary["cells"]["f0600_p100"]["error"]

    # retry with the failure gone: only the failed cell reruns
    monkeypatch.setattr(sweep_mod, "run", real_run)
    summary = run_sweep(plan, base=SHORT_ROAD, progress=lambda *_: None)
    assert summary["failed"] == []


def test_calibration_runs_and_is_cached(tmp_path, monkeypatch):
    plan = small_plan(tmp_path, calibrate=True)
    calls = []

    def fake_calibrate(cfg, baseline_tt, **kw):
        calls.append(cfg.demand_flux)
        return cfg.speed_limit + 1.0, 0.01, True

    monkeypatch.setattr(sweep_mod, "calibrate_travel_time", fake_calibrate)
    summary = run_sweep(plan, base=SHORT_ROAD, progress=lambda *_: None)
    assert calls == [600.0]
    assert summary["calibration"]["600"]["converged"]
    assert summary["cells"]["f0600_p100"]["cav_vmax_override"] == (
        pytest.approx(ScenarioConfig().speed_limit + 1.0))

    run_sweep(plan, base=SHORT_ROAD, progress=lambda *_: None)
    assert calls == [600.0]  # cached, not recomputed
