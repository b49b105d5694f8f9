"""On-disk model store.

Layout: ``<root>/<network hash>/<kind>-<config hash>-s<seed>.json`` plus a
``<kind>.latest`` pointer.  Artifacts are never overwritten by a run with
different inputs, since those land under a different name.  Writers hold
``<root>/.lock``.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from filelock import FileLock

from .errors import InputError
from .gp import EdgeModel, KernelParams
from .online import OnlineConfig, OnlineEdgeModel, SkiState

ARTIFACT_VERSION = 1


class ModelStore:
    def __init__(self, root: str | Path, network_hash: str):
        self.root = Path(root)
        self.dir = self.root / network_hash
        self.network_hash = network_hash
        self.lock = FileLock(str(self.root / ".lock"))

    def _name(self, kind: str, config_hash: str, seed: int) -> Path:
        return self.dir / f"{kind}-{config_hash}-s{seed}.json"

    def write(self, kind: str, payload: dict, config_hash: str, seed: int) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        with self.lock:
            self.dir.mkdir(parents=True, exist_ok=True)
            path = self._name(kind, config_hash, seed)
            doc = {"version": ARTIFACT_VERSION, "kind": kind, "network": self.network_hash,
                   "config_hash": config_hash, "seed": seed, "payload": payload}
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(doc, sort_keys=True))
            os.replace(tmp, path)
            (self.dir / f"{kind}.latest").write_text(path.name)
        return path

    def read(self, kind: str) -> dict:
        pointer = self.dir / f"{kind}.latest"
        if not pointer.exists():
            raise InputError(f"no {kind} artifact for network {self.network_hash} in {self.root}")
        path = self.dir / pointer.read_text().strip()
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"unreadable artifact {path}: {exc}") from exc
        if doc.get("version") != ARTIFACT_VERSION:
            raise InputError(f"artifact {path} has unsupported version {doc.get('version')}")
        return doc


def batch_to_dict(models: dict[str, EdgeModel]) -> dict:
    return {e: {"params": m.params.to_dict(), "X": m.X.tolist(), "y": m.y.tolist(), "mean": m.mean,
                "fallback": m.fallback, "log_likelihood": m.log_likelihood}
            for e, m in sorted(models.items())}


def batch_from_dict(d: dict) -> dict[str, EdgeModel]:
    try:
        return {e: EdgeModel(e, KernelParams(**v["params"]), np.array(v["X"], float),
                             np.array(v["y"], float), float(v["mean"]), bool(v["fallback"]),
                             float(v["log_likelihood"]) if v["log_likelihood"] is not None else float("nan"))
                for e, v in d.items()}
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed batch model artifact: {exc}") from exc


def online_to_dict(models: dict[str, OnlineEdgeModel]) -> dict:
    return {e: m.state.to_dict() for e, m in sorted(models.items())}


def online_from_dict(d: dict, cfg: OnlineConfig | None = None) -> dict[str, OnlineEdgeModel]:
    out = {}
    for e, v in d.items():
        state = SkiState.from_dict(v)
        out[e] = OnlineEdgeModel(e, state, cfg or OnlineConfig(m=state.m, r=state.r))
    return out
