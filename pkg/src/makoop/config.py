"""Experiment configuration: one YAML (or JSON) file with full defaulting.

Two shipped profiles: ``paper`` carries the full-size protocol, ``desk``
shrinks the run so the whole pipeline finishes in minutes. A config file
overrides profile values key by key; ``--seed`` and ``--out`` override last.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .benchmark import ScaleConfig
from .errors import ConfigError
from .koopman import RHO_TARGET, RIDGE

VARIANTS = ("flat", "hier")


@dataclass
class DictionaryConfig:
    n_x: int = 12
    n_y: int = 12
    n_w: int = 4
    kind: str = "gaussian-rbf"
    bandwidth: float = 1.5


@dataclass
class ExperimentConfig:
    variant: str = "flat"
    dictionary: DictionaryConfig = field(default_factory=DictionaryConfig)
    dt_slow: float = 0.1
    m: int = 100
    n_train_ic: int = 10000
    n_test_trajectories: int = 100
    test_horizon: int = 100
    control_horizon: int = 50
    x_bounds: tuple = (-1.0, 1.0)
    u_bounds: tuple = (-1.0, 1.0)
    n_control_ic: int = 100
    control_ic_half_width: float = 0.5
    rho_target: float = RHO_TARGET
    ridge: float = RIDGE
    coupled: bool = True
    seed: int = 0
    workers: int = 1
    n_simulate_ic: int = 1
    simulate_steps: int = 100
    out: str = "runs"

    def __post_init__(self):
        if isinstance(self.dictionary, dict):
            self.dictionary = DictionaryConfig(**self.dictionary)
        self.x_bounds = tuple(float(v) for v in self.x_bounds)
        self.u_bounds = tuple(float(v) for v in self.u_bounds)
        self.validate()

    @property
    def scale(self) -> ScaleConfig:
        return ScaleConfig(self.dt_slow, self.m)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("n_train_ic", "n_test_trajectories", "test_horizon", "control_horizon",
                     "n_control_ic", "workers", "n_simulate_ic", "simulate_steps", "m"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if self.m < 2:
            raise ConfigError("m must be >= 2")
        if not self.dt_slow > 0:
            raise ConfigError("dt_slow must be positive")
        if not 0 < self.rho_target < 1:
            raise ConfigError("rho_target must lie in (0, 1)")
        if self.ridge < 0:
            raise ConfigError("ridge must be nonnegative")
        for name in ("x_bounds", "u_bounds"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} must satisfy lower <= upper")
        if not 0 < self.control_ic_half_width <= 1:
            raise ConfigError("control_ic_half_width must lie in (0, 1]")
        d = self.dictionary
        if d.kind not in ("gaussian-rbf", "polynomial"):
            raise ConfigError(f"unknown dictionary kind {d.kind!r}")
        if min(d.n_x, d.n_y, d.n_w) < 0 or not d.bandwidth > 0:
            raise ConfigError("dictionary sizes must be >= 0 and bandwidth > 0")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["x_bounds"] = list(self.x_bounds)
        out["u_bounds"] = list(self.u_bounds)
        return out


PROFILES = {
    "paper": {},
    "desk": {"n_train_ic": 2000, "n_control_ic": 20, "control_horizon": 50},
}


def _merge(base: dict, over: dict, where="config") -> dict:
    out = dict(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown key {where}.{k}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}.{k}")
        else:
            out[k] = v
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def load_config(path=None, profile="desk", **overrides) -> ExperimentConfig:
    """Profile defaults, then the file, then non-``None`` keyword overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    defaults = {f.name: (f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default)
                for f in dataclasses.fields(ExperimentConfig)}
    defaults["dictionary"] = dataclasses.asdict(defaults["dictionary"])
    merged = _merge(defaults, PROFILES[profile])
    if path is not None:
        merged = _merge(merged, read_config_file(path))
    merged = _merge(merged, {k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(config: ExperimentConfig, path):
    with open(path, "w") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=False)
