"""Normality evidence for per-edge travel-time samples.

Standardisation, Q-Q / P-P point sets, a one-sample Kolmogorov-Smirnov
test against the standard normal, and a histogram KL divergence used to
compare edge samples against the spread seen between two genuinely normal
samples of the same size.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import kolmogorov, ndtr, ndtri

from .errors import InputError

ALPHA = 0.05

# reference envelope for two N(0,1) samples of size 100
PAPER_BASELINE_100 = {"min": 0.0006, "mean": 0.036, "max": 0.432}


@dataclass(frozen=True)
class SampleSet:
    values: np.ndarray
    standardized: bool = False


def standardize(xs) -> SampleSet:
    """(x - mean) / std with the population std."""
    x = np.asarray(xs.values if isinstance(xs, SampleSet) else xs, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise InputError("standardize needs at least two values")
    sd = x.std()
    if not sd > 1e-12 * max(np.abs(x).max(), 1.0):
        raise InputError("cannot standardize a constant sample")
    return SampleSet((x - x.mean()) / sd, True)


def _values(xs) -> np.ndarray:
    return np.asarray(xs.values if isinstance(xs, SampleSet) else xs, dtype=float)


def qq_points(xs) -> np.ndarray:
    """Rows (normal quantile at (i - 0.5)/n, i-th order statistic)."""
    y = np.sort(_values(xs))
    n = len(y)
    if n == 0:
        raise InputError("empty sample")
    q = ndtri((np.arange(1, n + 1) - 0.5) / n)
    return np.column_stack([q, y])


def pp_points(xs) -> np.ndarray:
    """Rows (Phi(i-th order statistic), (i - 0.5)/n)."""
    y = np.sort(_values(xs))
    n = len(y)
    if n == 0:
        raise InputError("empty sample")
    return np.column_stack([ndtr(y), (np.arange(1, n + 1) - 0.5) / n])


def histogram(xs, bins: int | None = None) -> dict:
    """Density histogram with the standard normal pdf at bin centres."""
    x = _values(xs)
    if len(x) == 0:
        raise InputError("empty sample")
    bins = bins or _n_bins(len(x))
    counts, edges = np.histogram(x, bins=bins)
    width = np.diff(edges)
    centres = 0.5 * (edges[1:] + edges[:-1])
    density = counts / (len(x) * width)
    return {"left": edges[:-1], "right": edges[1:], "count": counts, "density": density,
            "normal_pdf": np.exp(-0.5 * centres**2) / math.sqrt(2 * math.pi)}


@dataclass(frozen=True)
class KsResult:
    D: float
    p_value: float
    n: int

    @property
    def reject(self) -> bool:
        return self.p_value < ALPHA


def ks_statistic(xs) -> float:
    y = np.sort(_values(xs))
    n = len(y)
    if n == 0:
        raise InputError("KS test needs at least one value")
    F = ndtr(y)
    i = np.arange(1, n + 1)
    return float(max((F - (i - 1) / n).max(), (i / n - F).max()))


def ks_test(xs) -> KsResult:
    """One-sample KS against N(0, 1); asymptotic p-value with small-n scaling."""
    D = ks_statistic(xs)
    n = len(_values(xs))
    sn = math.sqrt(n)
    p = float(kolmogorov((sn + 0.12 + 0.11 / sn) * D))
    return KsResult(D, min(max(p, 0.0), 1.0), n)


def _n_bins(n: int) -> int:
    return int(math.ceil(math.log2(max(n, 1)))) + 1


def kl_divergence(xs, ys, pseudo: float = 0.5) -> float:
    """Histogram KL(xs || ys) in nats on bins shared across the pooled range.

    Bin count ``ceil(log2 n) + 1`` with ``n`` the smaller sample size;
    every bin gets ``pseudo`` added before normalising.
    """
    x, y = _values(xs), _values(ys)
    if len(x) == 0 or len(y) == 0:
        raise InputError("KL divergence needs two non-empty samples")
    B = _n_bins(min(len(x), len(y)))
    lo = min(x.min(), y.min())
    hi = max(x.max(), y.max())
    if hi <= lo:
        return 0.0
    edges = np.linspace(lo, hi, B + 1)
    cx = np.histogram(x, edges)[0] + pseudo
    cy = np.histogram(y, edges)[0] + pseudo
    p = cx / cx.sum()
    q = cy / cy.sum()
    return float(np.sum(p * np.log(p / q)))


def kl_divergence_batch(X: np.ndarray, Y: np.ndarray, pseudo: float = 0.5) -> np.ndarray:
    """Row-wise ``kl_divergence`` for two (iterations, n) arrays."""
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    k, n = X.shape
    B = _n_bins(min(n, Y.shape[1]))
    lo = np.minimum(X.min(1), Y.min(1))[:, None]
    span = (np.maximum(X.max(1), Y.max(1))[:, None] - lo)
    span[span <= 0] = 1.0

    def counts(Z):
        idx = np.clip(np.floor((Z - lo) / span * B).astype(int), 0, B - 1)
        flat = (idx + B * np.arange(k)[:, None]).ravel()
        return np.bincount(flat, minlength=k * B).reshape(k, B) + pseudo

    cx, cy = counts(X), counts(Y)
    p = cx / cx.sum(1, keepdims=True)
    q = cy / cy.sum(1, keepdims=True)
    return np.sum(p * np.log(p / q), axis=1)


def kl_baseline(n: int, iterations: int = 10_000, rng=None, chunk: int = 2000) -> np.ndarray:
    """KL between pairs of independent N(0,1) samples of size ``n``."""
    rng = np.random.default_rng(rng)
    chunk = max(1, min(chunk, 4_000_000 // max(n, 1)))  # bound memory at large n
    out = []
    left = iterations
    while left > 0:
        k = min(chunk, left)
        out.append(kl_divergence_batch(rng.standard_normal((k, n)), rng.standard_normal((k, n))))
        left -= k
    return np.concatenate(out)


@dataclass
class EdgeKld:
    edge: str
    n: int
    kld: float
    inside: bool
    ks: KsResult


@dataclass
class KldReport:
    baselines: dict[int, dict] = field(default_factory=dict)
    edges: list[EdgeKld] = field(default_factory=list)

    @property
    def inside_fraction(self) -> float:
        return sum(e.inside for e in self.edges) / len(self.edges) if self.edges else float("nan")

    def to_dict(self) -> dict:
        return {
            "baselines": {str(n): b for n, b in sorted(self.baselines.items())},
            "reference_size_100": PAPER_BASELINE_100,
            "edges": [{"edge": e.edge, "n": e.n, "kld": e.kld, "inside_envelope": e.inside,
                       "ks_D": e.ks.D, "ks_p": e.ks.p_value} for e in self.edges],
            "inside_fraction": self.inside_fraction,
        }


def relative_kld_experiment(edge_samples: dict[str, np.ndarray], iterations: int = 10_000,
                            seed: int = 0) -> KldReport:
    """Compare each edge's standardised sample with a fresh normal sample.

    An edge is ``inside`` when its KLD lies within the min-max envelope of
    the normal-vs-normal baseline at the same sample size.
    """
    rng = np.random.default_rng(seed)
    report = KldReport()
    for edge in sorted(edge_samples):
        z = standardize(edge_samples[edge]).values
        n = len(z)
        if n not in report.baselines:
            base = kl_baseline(n, iterations, rng)
            report.baselines[n] = {"min": float(base.min()), "mean": float(base.mean()),
                                   "max": float(base.max()), "iterations": iterations}
        env = report.baselines[n]
        kld = kl_divergence(z, rng.standard_normal(n))
        report.edges.append(EdgeKld(edge, n, kld, env["min"] <= kld <= env["max"], ks_test(z)))
    return report


def write_points_csv(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
