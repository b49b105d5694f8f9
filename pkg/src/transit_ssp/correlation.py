"""Time-dependent correlation between edges from hourly median travel times.

Each edge gets a 24-entry vector of hourly medians (plus a day x hour
matrix of per-day medians).  Correlation between two edges at a pair of
hours is computed across days when enough days overlap, otherwise from
the whole 24-entry vectors.  Covariances are assembled lazily at query
time and memoised.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InputError

HOURS = 24


@dataclass
class EtaVector:
    edge: str
    medians: np.ndarray  # (24,) seconds
    counts: np.ndarray  # (24,) samples per bin
    filled: np.ndarray  # (24,) bool, True where interpolated
    days: tuple[str, ...] = ()
    per_day: np.ndarray | None = None  # (n_days, 24), NaN where missing


def _interp_missing(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    missing = np.isnan(values)
    if missing.all():
        raise InputError("no observed bins to interpolate from")
    hours = np.arange(HOURS)
    out = values.copy()
    out[missing] = np.interp(hours[missing], hours[~missing], values[~missing])
    return out, missing


def build_eta_vector(samples: Iterable, edge: str) -> EtaVector:
    """Hourly medians over all days plus the per-day median matrix.

    ``samples`` are objects with ``edge``, ``duration``, ``depart_hour``
    and ``date`` attributes (``TravelTimeSample``).  Empty bins are
    filled by linear interpolation from observed neighbours and flagged.
    """
    bins: list[list[float]] = [[] for _ in range(HOURS)]
    by_day: dict[str, list[list[float]]] = defaultdict(lambda: [[] for _ in range(HOURS)])
    for s in samples:
        if s.edge != edge:
            continue
        h = min(int(math.floor(s.depart_hour)), HOURS - 1)
        bins[h].append(s.duration)
        by_day[s.date][h].append(s.duration)
    counts = np.array([len(b) for b in bins])
    if counts.sum() == 0:
        raise InputError(f"edge {edge}: no samples in any hour bin")
    raw = np.array([np.median(b) if b else np.nan for b in bins])
    medians, filled = _interp_missing(raw)
    days = tuple(sorted(by_day))
    per_day = np.array([[np.median(b) if b else np.nan for b in by_day[d]] for d in days])
    return EtaVector(edge, medians, counts, filled, days, per_day)


def build_eta_vectors(samples: Iterable) -> dict[str, EtaVector]:
    grouped: dict[str, list] = defaultdict(list)
    for s in samples:
        grouped[s.edge].append(s)
    return {e: build_eta_vector(ss, e) for e, ss in sorted(grouped.items())}


def pearson_corr(x, y) -> float:
    """Sample Pearson coefficient; 0.0 when either input is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("pearson_corr needs two 1-D vectors of equal length")
    if len(x) < 3:
        raise InputError("pearson_corr needs at least three points")
    if _is_constant(x) or _is_constant(y):
        return 0.0
    dx = x - x.mean()
    dy = y - y.mean()
    return float(np.clip((dx @ dy) / math.sqrt((dx @ dx) * (dy @ dy)), -1.0, 1.0))


def _is_constant(v: np.ndarray) -> bool:
    return bool(np.ptp(v) <= 1e-12 * max(np.abs(v).max(), 1.0))


@dataclass(frozen=True)
class CorrEstimate:
    value: float
    source: str  # "identity" | "per-day" | "vector" | "degenerate" | "missing"
    n: int = 0


class CorrelationModel:
    """Lazy, memoised edge-pair correlation lookup.

    The memo is a plain dict: inserts are idempotent so concurrent
    readers and writers can only race to store the same value.
    """

    def __init__(self, vectors: dict[str, EtaVector], min_days: int = 3):
        self.vectors = vectors
        self.min_days = min_days
        self._memo: dict[tuple, CorrEstimate] = {}

    def correlation(self, e1: str, h1: int, e2: str, h2: int) -> CorrEstimate:
        h1, h2 = int(h1) % HOURS, int(h2) % HOURS
        if (e1, h1) > (e2, h2):
            e1, h1, e2, h2 = e2, h2, e1, h1
        key = (e1, h1, e2, h2)
        hit = self._memo.get(key)
        if hit is None:
            hit = self._compute(e1, h1, e2, h2)
            self._memo[key] = hit
        return hit

    def _compute(self, e1, h1, e2, h2) -> CorrEstimate:
        if e1 == e2 and h1 == h2:
            return CorrEstimate(1.0, "identity")
        a, b = self.vectors.get(e1), self.vectors.get(e2)
        if a is None or b is None:
            return CorrEstimate(0.0, "missing")
        if a.per_day is not None and b.per_day is not None and len(a.days) and len(b.days):
            common = sorted(set(a.days) & set(b.days))
            ia = {d: i for i, d in enumerate(a.days)}
            ib = {d: i for i, d in enumerate(b.days)}
            xs = np.array([a.per_day[ia[d], h1] for d in common])
            ys = np.array([b.per_day[ib[d], h2] for d in common])
            ok = ~(np.isnan(xs) | np.isnan(ys))
            if ok.sum() >= self.min_days:
                xs, ys = xs[ok], ys[ok]
                if _is_constant(xs) or _is_constant(ys):
                    return CorrEstimate(0.0, "degenerate", len(xs))
                return CorrEstimate(pearson_corr(xs, ys), "per-day", len(xs))
        if _is_constant(a.medians) or _is_constant(b.medians):
            return CorrEstimate(0.0, "degenerate", HOURS)
        return CorrEstimate(pearson_corr(a.medians, b.medians), "vector", HOURS)

    def edge_covariance(self, e1: str, e2: str, t: float, t2: float,
                        sigma1: float, sigma2: float) -> float:
        """corr(e1 at hour(t), e2 at hour(t2)) * sigma1 * sigma2."""
        if sigma1 < 0 or sigma2 < 0:
            raise InputError("standard deviations must be non-negative")
        est = self.correlation(e1, hour_bin(t), e2, hour_bin(t2))
        return est.value * sigma1 * sigma2


class ZeroCorrelation:
    """Stand-in when no correlation data exists: edges treated as independent."""

    def correlation(self, e1, h1, e2, h2) -> CorrEstimate:
        if e1 == e2 and int(h1) % HOURS == int(h2) % HOURS:
            return CorrEstimate(1.0, "identity")
        return CorrEstimate(0.0, "missing")

    def edge_covariance(self, e1, e2, t, t2, sigma1, sigma2) -> float:
        return self.correlation(e1, hour_bin(t), e2, hour_bin(t2)).value * sigma1 * sigma2


def hour_bin(t: float) -> int:
    """Hour-of-day bin for a time given in hours (any real, wrapped to [0, 24))."""
    return int(math.floor(t % HOURS)) % HOURS


def clip_psd(cov: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix by flooring eigenvalues at zero."""
    cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
    w, V = np.linalg.eigh(cov)
    if w.min() >= 0:
        return cov
    return (V * np.clip(w, 0.0, None)) @ V.T


# ---------------------------------------------------------------- store

def write_eta_store(vectors: dict[str, EtaVector], path: str | Path,
                    per_day_path: str | Path | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge", "hour", "median", "count", "filled"])
        for e, v in sorted(vectors.items()):
            for h in range(HOURS):
                w.writerow([e, h, repr(float(v.medians[h])), int(v.counts[h]), int(v.filled[h])])
    if per_day_path is None:
        return
    with open(per_day_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge", "date", "hour", "median"])
        for e, v in sorted(vectors.items()):
            for i, d in enumerate(v.days):
                for h in range(HOURS):
                    if not np.isnan(v.per_day[i, h]):
                        w.writerow([e, d, h, repr(float(v.per_day[i, h]))])


def read_eta_store(path: str | Path, per_day_path: str | Path | None = None) -> dict[str, EtaVector]:
    rows: dict[str, dict[int, tuple[float, int, bool]]] = defaultdict(dict)
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows[row["edge"]][int(row["hour"])] = (
                    float(row["median"]), int(row["count"]), bool(int(row["filled"])))
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"malformed ETA store {path}: {exc}") from exc
    per_day: dict[str, dict[str, dict[int, float]]] = defaultdict(lambda: defaultdict(dict))
    if per_day_path is not None and Path(per_day_path).exists():
        with open(per_day_path, newline="") as fh:
            for row in csv.DictReader(fh):
                per_day[row["edge"]][row["date"]][int(row["hour"])] = float(row["median"])
    out = {}
    for e, hours in rows.items():
        if sorted(hours) != list(range(HOURS)):
            raise InputError(f"ETA store: edge {e} lacks some hour rows")
        med = np.array([hours[h][0] for h in range(HOURS)])
        cnt = np.array([hours[h][1] for h in range(HOURS)])
        fil = np.array([hours[h][2] for h in range(HOURS)])
        days = tuple(sorted(per_day.get(e, {})))
        mat = None
        if days:
            mat = np.full((len(days), HOURS), np.nan)
            for i, d in enumerate(days):
                for h, val in per_day[e][d].items():
                    mat[i, h] = val
        out[e] = EtaVector(e, med, cnt, fil, days, mat)
    return out
