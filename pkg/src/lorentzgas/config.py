"""Run configuration: one JSON tree drives every command.

Every field has a default; the default table is the two-disc reference
layout.  The full config is echoed verbatim into every output artifact,
which together with the seed and worker count pins the run bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any

from .errors import InputError
from .forces import ForceModel
from .geometry import Disc, Table


@dataclass
class TableConfig:
    discs: list = field(default_factory=lambda: [
        {"center": [0.0, 0.0], "radius": 0.40},
        {"center": [0.5, 0.5], "radius": 0.20},
    ])
    horizon_bound: float = 2.0


@dataclass
class ForceConfig:
    kind: str = "thermostat"
    epsilon: float = 0.01
    direction_deg: float = 0.0


@dataclass
class IntegratorConfig:
    tol: float = 1e-10
    refine_tol: float = 1e-12
    stat_tol: float = 1e-9   # looser tolerance for long statistical runs


@dataclass
class RunSizes:
    n_collisions: int = 200_000
    burn_in: int = 1_000
    flow_time: float = 20_000.0
    dt_sample: float = 0.01


@dataclass
class HistogramConfig:
    bins_1d: int = 50
    grid: int = 50
    bins_theta: int = 64


@dataclass
class ResponseConfig:
    eps_grid: list = field(default_factory=lambda: [0.002, 0.005, 0.01, 0.02])
    n_samples: int = 20_000
    k_max: int = 30
    fd_step: float = 1e-6
    grazing_threshold: float = 1e-4
    lhs_collisions: int = 200_000
    series_samples: int = 50_000


@dataclass
class RunConfig:
    table: TableConfig = field(default_factory=TableConfig)
    force: ForceConfig = field(default_factory=ForceConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    run: RunSizes = field(default_factory=RunSizes)
    histogram: HistogramConfig = field(default_factory=HistogramConfig)
    response: ResponseConfig = field(default_factory=ResponseConfig)
    seed: int = 20260801
    workers: int = 1
    output_dir: str = "runs/out"

    def build_table(self) -> Table:
        discs = tuple(Disc(center=tuple(d["center"]), radius=d["radius"])
                      for d in self.table.discs)
        return Table(discs=discs, horizon_bound=self.table.horizon_bound)

    def build_force(self) -> ForceModel:
        kind = self.force.kind
        if kind == "zero":
            return ForceModel.zero()
        if kind == "thermostat":
            return ForceModel.thermostat(self.force.epsilon,
                                         self.force.direction_deg)
        raise InputError(
            "general force models are constructed in code, not from config")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _typed(path: str, default: Any, value: Any) -> Any:
    """Coerce a config value to the default's type or reject it."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InputError(f"config {path} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InputError(f"config {path} must be an integer")
        if isinstance(value, float) and value != int(value):
            raise InputError(f"config {path} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InputError(f"config {path} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise InputError(f"config {path} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise InputError(f"config {path} must be a list")
        return value
    return value


def config_from_dict(data: dict) -> RunConfig:
    cfg = RunConfig()
    for section, value in data.items():
        if not hasattr(cfg, section):
            raise InputError(f"unknown config section {section!r}")
        current = getattr(cfg, section)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise InputError(f"config section {section!r} must be an object")
            for k, v in value.items():
                if not hasattr(current, k):
                    raise InputError(f"unknown config key {section}.{k}")
                setattr(current, k, _typed(f"{section}.{k}", getattr(current, k), v))
        else:
            setattr(cfg, section, _typed(section, current, value))
    _validate(cfg)
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        _validate(cfg)
        return cfg
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise InputError(f"config {path} is not valid JSON: {e}") from e
    return config_from_dict(data)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``a.b.c=value`` overrides; values parse as JSON, else strings."""
    data = cfg.to_dict()
    for ov in overrides:
        if "=" not in ov:
            raise InputError(f"override {ov!r} is not of the form key=value")
        key, _, raw = ov.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise InputError(f"unknown config path {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise InputError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return config_from_dict(data)


def _validate(cfg: RunConfig):
    if cfg.workers < 1:
        raise InputError("workers must be >= 1")
    if cfg.run.n_collisions <= cfg.run.burn_in:
        raise InputError("run.n_collisions must exceed run.burn_in")
    if cfg.run.flow_time <= 0 or cfg.run.dt_sample <= 0:
        raise InputError("run.flow_time and run.dt_sample must be positive")
    if cfg.force.kind not in ("zero", "thermostat"):
        raise InputError(f"force.kind {cfg.force.kind!r} not runnable from config")
    if cfg.force.epsilon < 0:
        raise InputError("force.epsilon must be >= 0")
    if len(cfg.response.eps_grid) < 1:
        raise InputError("response.eps_grid must be non-empty")
    cfg.build_table()  # raises on bad geometry


def schema() -> dict:
    """Defaults plus field types, for the config-schema command."""

    def describe(dc) -> dict:
        out = {}
        for f in dataclasses.fields(dc):
            v = getattr(dc, f.name)
            if dataclasses.is_dataclass(v):
                out[f.name] = describe(v)
            else:
                out[f.name] = {"default": v, "type": type(v).__name__}
        return out

    return describe(RunConfig())
