import pytest

from mixedsim.config import (
    ConfigError,
    config_hash,
    load_scenario,
    save_scenario,
    scenario_from_dict,
)
from mixedsim.engine import ScenarioConfig


def test_defaults_roundtrip(tmp_path):
    cfg = ScenarioConfig(demand_flux=1500.0, cav_penetration=0.3, seed=7)
    p = tmp_path / "scenario.yaml"
    save_scenario(cfg, p)
    back = load_scenario(p)
    assert back.demand_flux == 1500.0
    assert back.cav_penetration == 0.3
    assert config_hash(back) == config_hash(cfg)


def test_nested_sections_applied():
    cfg = scenario_from_dict({
        "demand_flux": 800,
        "comm": {"delivery_prob": 1.0},
        "mpc_connected": {"q_a": 5000.0},
        "human": {"headway_dist": "fixed", "headway_value": 1.2},
    })
    assert cfg.comm.delivery_prob == 1.0
    assert cfg.mpc_connected.q_a == 5000.0
    assert cfg.mpc_connected.N == 17  # untouched section defaults survive
    assert cfg.mpc_anticipative.N == 16
    assert cfg.human.headway_value == 1.2


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key 'demand_flx'"):
        scenario_from_dict({"demand_flx": 800})
    with pytest.raises(ConfigError, match="section 'comm'"):
        scenario_from_dict({"comm": {"delivery_probability": 0.9}})


def test_invalid_values_rejected():
    with pytest.raises(ValueError):
        scenario_from_dict({"cav_penetration": 1.5})


def test_hash_sensitive_to_changes():
    a = scenario_from_dict({"seed": 1})
    b = scenario_from_dict({"seed": 2})
    assert config_hash(a) != config_hash(b)
