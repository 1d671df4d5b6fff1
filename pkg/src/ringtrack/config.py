"""Run configuration: one flat mapping of dotted keys.

A config file is YAML. Keys may be written flat (``tracker.n_particles: 300``)
or nested (``tracker: {n_particles: 300}``); both load to the same flat dict.
Unknown keys are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


# UR10 standard DH table.
DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "robot.dh_a": [0.0, -0.612, -0.5723, 0.0, 0.0, 0.0],
    "robot.dh_alpha": [math.pi / 2, 0.0, 0.0, math.pi / 2, -math.pi / 2, 0.0],
    "robot.dh_d": [0.1273, 0.0, 0.0, 0.163941, 0.1157, 0.0922],
    "robot.dh_theta_offset": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    "robot.joint_low": [-math.pi, -math.pi, -math.pi, -math.pi, -math.pi, -math.pi],
    "robot.joint_high": [math.pi, 0.0, math.pi, math.pi, math.pi, math.pi],
    "robot.base_z": 0.0,
    "robot.link_radii": [0.075, 0.06, 0.05, 0.045, 0.045, 0.04],
    "robot.max_joint_speed": 0.6,
    "robot.reach_tolerance": 0.01,
    "rings.links": [2, 3, 4],
    "rings.radii": [0.09, 0.08, 0.07],
    "rings.fov_deg": 25.0,
    "rings.max_range": 2.0,
    "rings.cone_rays": 5,
    "human.radius": 0.25,
    "human.height": 1.7,
    "human.speed": 0.5,
    "human.p_turn": 0.05,
    "human.max_turn": math.pi / 2,
    "world.radius": 2.5,
    "world.keepout_radius": 0.5,
    "world.dt": 0.05,
    "world.episode_gap": 10.0,
    "dataset.sigma_range": 0.01,
    "dataset.sigma_angle": 0.002,
    "dataset.sigma_gt": 0.02,
    "dataset.test_fraction": 0.2,
    "dataset.augment_copies": 1,
    "net.hidden": [64, 64, 32],
    "net.activations": ["relu", "tanh", "relu"],
    "net.dropout": 0.2,
    "train.lr0": 0.01,
    "train.decay": 1e-6,
    "train.momentum": 0.9,
    "train.epochs": 100,
    "train.batch_size": 64,
    "tracker.n_particles": 500,
    "tracker.sigma_pos": 0.01,
    "tracker.sigma_vel": 0.05,
    "tracker.sigma_meas": 0.12,
    "tracker.ess_fraction": 0.5,
    "tracker.reset_gap": 5.0,
    "tracker.reflect": True,
}


def _flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{key}: expected a list, got {value!r}")
            if default and isinstance(default[0], str):
                return [str(v) for v in value]
            if default and isinstance(default[0], int) and not isinstance(default[0], bool):
                return [int(v) for v in value]
            return [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key}: cannot interpret {value!r}") from exc
    return value


def parse_value(key: str, text: str) -> Any:
    """Parse a command-line override string for ``key`` (YAML scalar/list syntax)."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    return _coerce(key, yaml.safe_load(text))


def make_config(overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in _flatten(overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value)
    validate(cfg)
    return cfg


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        tree = _flatten(loaded or {})
    tree.update(overrides or {})
    return make_config(tree)


def fingerprint(cfg: dict[str, Any]) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: dict[str, Any]) -> None:
    """Check every parameter against the invariants of the module that uses it."""
    for key in ("robot.dh_a", "robot.dh_alpha", "robot.dh_d", "robot.dh_theta_offset",
                "robot.joint_low", "robot.joint_high", "robot.link_radii"):
        _require(len(cfg[key]) == 6, f"{key}: need exactly 6 entries")
    for j, (lo, hi) in enumerate(zip(cfg["robot.joint_low"], cfg["robot.joint_high"]), 1):
        _require(lo <= hi, f"joint {j}: low limit {lo} above high limit {hi}")
    _require(all(r >= 0 for r in cfg["robot.link_radii"]), "robot.link_radii must be >= 0")
    _require(cfg["robot.max_joint_speed"] > 0, "robot.max_joint_speed must be > 0")
    _require(cfg["robot.reach_tolerance"] > 0, "robot.reach_tolerance must be > 0")

    _require(len(cfg["rings.links"]) == 3, "rings.links: need exactly 3 rings")
    _require(len(cfg["rings.radii"]) == 3, "rings.radii: need exactly 3 radii")
    _require(all(1 <= i <= 6 for i in cfg["rings.links"]), "rings.links: link index must be in 1..6")
    _require(all(r >= 0 for r in cfg["rings.radii"]), "rings.radii must be >= 0")
    _require(0 < cfg["rings.fov_deg"] < 180, "rings.fov_deg must be in (0, 180)")
    _require(cfg["rings.max_range"] > 0, "rings.max_range must be > 0")
    _require(cfg["rings.cone_rays"] >= 1, "rings.cone_rays must be >= 1")

    _require(cfg["human.radius"] > 0, "human.radius must be > 0")
    _require(cfg["human.height"] > 0, "human.height must be > 0")
    _require(cfg["human.speed"] >= 0, "human.speed must be >= 0")
    _require(0 <= cfg["human.p_turn"] <= 1, "human.p_turn must be in [0, 1]")
    _require(cfg["human.max_turn"] >= 0, "human.max_turn must be >= 0")
    _require(cfg["world.radius"] > 0, "world.radius must be > 0")
    _require(0 <= cfg["world.keepout_radius"] < cfg["world.radius"],
             "world.keepout_radius must be in [0, world.radius)")
    _require(cfg["world.dt"] > 0, "world.dt must be > 0")
    _require(cfg["world.episode_gap"] >= 0, "world.episode_gap must be >= 0")

    for key in ("dataset.sigma_range", "dataset.sigma_angle", "dataset.sigma_gt"):
        _require(cfg[key] >= 0, f"{key} must be >= 0")
    _require(0 < cfg["dataset.test_fraction"] < 1, "dataset.test_fraction must be in (0, 1)")
    _require(cfg["dataset.augment_copies"] >= 0, "dataset.augment_copies must be >= 0")

    _require(len(cfg["net.hidden"]) == len(cfg["net.activations"]),
             "net.hidden and net.activations must have equal length")
    _require(all(h > 0 for h in cfg["net.hidden"]), "net.hidden sizes must be > 0")
    _require(all(a in ("relu", "tanh", "identity") for a in cfg["net.activations"]),
             "net.activations: each must be relu, tanh or identity")
    _require(0 <= cfg["net.dropout"] < 1, "net.dropout must be in [0, 1)")
    _require(cfg["train.lr0"] >= 0, "train.lr0 must be >= 0")
    _require(cfg["train.decay"] >= 0, "train.decay must be >= 0")
    _require(0 <= cfg["train.momentum"] < 1, "train.momentum must be in [0, 1)")
    _require(cfg["train.epochs"] >= 0, "train.epochs must be >= 0")
    _require(cfg["train.batch_size"] >= 1, "train.batch_size must be >= 1")

    _require(cfg["tracker.n_particles"] >= 2, "tracker.n_particles must be >= 2")
    for key in ("tracker.sigma_pos", "tracker.sigma_vel"):
        _require(cfg[key] >= 0, f"{key} must be >= 0")
    _require(cfg["tracker.sigma_meas"] > 0, "tracker.sigma_meas must be > 0")
    _require(0 < cfg["tracker.ess_fraction"] <= 1, "tracker.ess_fraction must be in (0, 1]")
    _require(cfg["tracker.reset_gap"] > 0, "tracker.reset_gap must be > 0")
