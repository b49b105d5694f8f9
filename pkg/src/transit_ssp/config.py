"""Run configuration: nested dataclasses loaded from JSON, unknown keys rejected."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError
from .feedsim import SimConfig
from .gp import FitConfig
from .online import OnlineConfig
from .planner import PlannerConfig


@dataclass
class Paths:
    network: str | None = None
    feed: str | None = None
    samples: str | None = None
    store: str = "store"
    eta: str | None = None


@dataclass
class Config:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    gp: FitConfig = field(default_factory=FitConfig)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise InputError(f"config section {where or 'root'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise InputError(f"unknown config keys in {where or 'root'}: {unknown}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{where}.{name}".lstrip("."))
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InputError(f"bad config section {where or 'root'}: {exc}") from exc


_SECTIONS = {(Config, "paths"): Paths, (Config, "gp"): FitConfig, (Config, "online"): OnlineConfig,
             (Config, "planner"): PlannerConfig, (Config, "sim"): SimConfig}


def config_from_dict(data: dict) -> Config:
    cfg = _build(Config, data, "")
    # keep the top-level seed authoritative for every random component
    cfg.gp.seed = cfg.seed
    cfg.sim.seed = cfg.seed
    return cfg


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def with_seed(cfg: Config, seed: int | None) -> Config:
    if seed is not None:
        cfg.seed = seed
        cfg.gp.seed = seed
        cfg.sim.seed = seed
    return cfg
