"""Scenario configuration files.

A scenario file is YAML with a flat top level plus four optional nested
sections (comm, mpc_anticipative, mpc_connected, human).  Every key maps
one-to-one onto a dataclass field; unknown keys are rejected with the
list of valid names so typos fail loudly instead of silently running the
defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import yaml

from .engine import CommConfig, ScenarioConfig
from .human import PopulationConfig
from .mpc import MpcConfig, anticipative_config, connected_config

_SECTIONS = {
    "comm": (CommConfig, lambda: CommConfig()),
    "mpc_anticipative": (MpcConfig, anticipative_config),
    "mpc_connected": (MpcConfig, connected_config),
    "human": (PopulationConfig, lambda: PopulationConfig()),
}


class ConfigError(ValueError):
    pass


def _field_names(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _apply(obj, data: dict, where: str):
    valid = _field_names(type(obj))
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(
                f"unknown key {key!r} in {where}; valid keys: "
                + ", ".join(sorted(valid)))
        setattr(obj, key, value)
    return obj


def scenario_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("scenario config must be a mapping")
    data = dict(data)
    cfg = ScenarioConfig()
    for name, (_cls, factory) in _SECTIONS.items():
        section = data.pop(name, None)
        obj = factory()
        if section is not None:
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            _apply(obj, section, f"section {name!r}")
        setattr(cfg, name, obj)
    scalar_keys = _field_names(ScenarioConfig) - set(_SECTIONS)
    for key, value in data.items():
        if key not in scalar_keys:
            raise ConfigError(
                f"unknown key {key!r} at top level; valid keys: "
                + ", ".join(sorted(scalar_keys | set(_SECTIONS))))
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return scenario_from_dict(data)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    out = {}
    for f in dataclasses.fields(ScenarioConfig):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            out[f.name] = dataclasses.asdict(value)
        else:
            out[f.name] = value
    return out


def save_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(cfg),
                                         sort_keys=True))


def config_hash(cfg: ScenarioConfig) -> str:
    blob = json.dumps(scenario_to_dict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
