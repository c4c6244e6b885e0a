import json

import pytest

from mixedsim.cli import main


def test_run_subcommand(tmp_path, capsys):
    cfg = tmp_path / "scenario.yaml"
    cfg.write_text("road_length: 600.0\ncontrol_volume_trim: 100.0\n"
                   "demand_flux: 600\nduration: 40.0\n")
    out = tmp_path / "run_out"
    rc = main(["run", "--config", str(cfg), "--seed", "5",
               "--output-dir", str(out)])
    assert rc == 0
    assert (out / "log.npz").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5
    assert manifest["injected"] > 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["seed"] == 5


def test_sweep_report_energy_pipeline(tmp_path, capsys):
    cfg = tmp_path / "scenario.yaml"
    cfg.write_text("road_length: 600.0\ncontrol_volume_trim: 100.0\n")
    out = tmp_path / "sweep_out"
    rc = main(["sweep", "--config", str(cfg), "--output-dir", str(out),
               "--fluxes", "600", "--penetrations", "0,1",
               "--duration", "60", "--replan-every", "5", "--no-calibrate"])
    assert rc == 0
    assert (out / "sweep_manifest.json").exists()

    rc = main(["report", "--sweep-dir", str(out), "--trim", "100"])
    assert rc == 0
    report = out / "report"
    summary = json.loads((report / "summary.json").read_text())
    assert len(summary["cells"]) == 2
    assert (report / "supported_flux.csv").exists()
    assert (report / "density_f0600_p000.png").exists()

    capsys.readouterr()
    rc = main(["energy", "--log", str(out / "cells/f0600_p000/log.npz"),
               "--powertrain", "cv", "--trim", "100"])
    assert rc == 0
    res = json.loads(capsys.readouterr().out)
    assert res["unit"] == "L/100km"
    assert res["fleet"] is not None and res["fleet"] > 0


def test_output_dir_env_default(monkeypatch, tmp_path):
    monkeypatch.setenv("MIXEDSIM_OUTPUT_DIR", str(tmp_path / "envout"))
    from mixedsim.cli import build_parser

    args = build_parser().parse_args(["run"])
    assert args.output_dir == str(tmp_path / "envout")


def test_unknown_subcommand_errors():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
