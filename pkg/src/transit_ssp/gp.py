"""Batch Gaussian-process regression for per-edge travel times.

Squared-exponential kernel over time of day (hours) with Gaussian
observation noise and a constant prior mean equal to the sample mean of
the training targets.  Hyperparameters are fitted by maximising the
marginal log-likelihood in log space with L-BFGS-B and multi-start.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import InputError, NumericalError

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelParams:
    signal_var: float  # seconds^2
    length_scale: float  # hours
    noise_var: float  # seconds^2

    def __post_init__(self):
        for name in ("signal_var", "length_scale", "noise_var"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise InputError(f"{name} must be positive and finite, got {value}")

    def to_log(self) -> np.ndarray:
        return np.log([self.signal_var, self.length_scale, self.noise_var])

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        s, l, n = np.exp(np.asarray(theta, dtype=float))
        return cls(float(s), float(l), float(n))

    def to_dict(self) -> dict:
        return {"signal_var": self.signal_var, "length_scale": self.length_scale,
                "noise_var": self.noise_var}


def kernel(p: KernelParams, x, x2=None) -> np.ndarray:
    """Squared-exponential covariance between hour arrays ``x`` and ``x2``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = x if x2 is None else np.atleast_1d(np.asarray(x2, dtype=float))
    d = x[:, None] - x2[None, :]
    return p.signal_var * np.exp(-0.5 * (d / p.length_scale) ** 2)


def kernel_eval(p: KernelParams, x: float, x2: float) -> float:
    return float(p.signal_var * math.exp(-0.5 * ((x - x2) / p.length_scale) ** 2))


def _chol(matrix: np.ndarray, scale: float, params: KernelParams | None = None) -> np.ndarray:
    """Lower Cholesky factor with jitter escalation up to 1e-6 * scale."""
    jitter = 0.0
    eye = np.eye(len(matrix))
    for jitter in (0.0, 1e-12, 1e-10, 1e-8, 1e-6):
        try:
            return cholesky(matrix + jitter * scale * eye, lower=True)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("covariance not positive definite after jitter",
                         params=params, jitter=jitter * scale)


def mll(p: KernelParams, X, y) -> float:
    """Log marginal likelihood of ``y`` under mean ``mean(y)`` and K + noise I."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape != y.shape or X.ndim != 1 or len(X) == 0:
        raise InputError("X and y must be equal-length non-empty 1-D arrays")
    r = y - y.mean()
    C = kernel(p, X)
    C[np.diag_indices_from(C)] += p.noise_var
    L = _chol(C, p.signal_var, p)
    alpha = cho_solve((L, True), r)
    return float(-0.5 * r @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(y) * LOG_2PI)


def mll_and_grad(theta, X, y) -> tuple[float, np.ndarray]:
    """MLL and its gradient w.r.t. log(signal_var, length_scale, noise_var)."""
    p = KernelParams.from_log(theta)
    X = np.asarray(X, dtype=float)
    r = np.asarray(y, dtype=float) - np.mean(y)
    d2 = (X[:, None] - X[None, :]) ** 2
    Kf = p.signal_var * np.exp(-0.5 * d2 / p.length_scale**2)
    C = Kf.copy()
    C[np.diag_indices_from(C)] += p.noise_var
    L = _chol(C, p.signal_var, p)
    alpha = cho_solve((L, True), r)
    value = -0.5 * r @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(r) * LOG_2PI
    Linv = solve_triangular(L, np.eye(len(r)), lower=True)
    Cinv = Linv.T @ Linv
    inner = np.outer(alpha, alpha) - Cinv
    grad = np.array([
        0.5 * np.sum(inner * Kf),
        0.5 * np.sum(inner * Kf * d2) / p.length_scale**2,
        0.5 * p.noise_var * np.trace(inner),
    ])
    return float(value), grad


@dataclass
class FitConfig:
    """Optimiser settings for :func:`fit`.

    ``max_points`` caps the training set (a deterministic subsample is
    taken above it) so that a six-month history stays tractable.
    """

    init_length_scales: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0, 8.0)
    seed: int = 0
    floor_frac: float = 1e-6
    length_bounds: tuple[float, float] = (0.05, 200.0)
    rel_tol: float = 1e-5
    patience: int = 10
    max_iter: int = 500
    min_samples: int = 20
    max_points: int = 600


@dataclass
class EdgeModel:
    """A fitted GP for one edge; immutable once built."""

    edge: str
    params: KernelParams
    X: np.ndarray
    y: np.ndarray
    mean: float
    fallback: bool = False
    log_likelihood: float = float("nan")
    chol: np.ndarray = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.shape != self.y.shape:
            raise InputError("training inputs and targets differ in length")
        self._refactor()

    def _refactor(self):
        if len(self.X) == 0:
            self.chol = np.zeros((0, 0))
            self.alpha = np.zeros(0)
            return
        C = kernel(self.params, self.X)
        C[np.diag_indices_from(C)] += self.params.noise_var
        self.chol = _chol(C, self.params.signal_var, self.params)
        self.alpha = cho_solve((self.chol, True), self.y - self.mean)

    def with_params(self, params: KernelParams) -> "EdgeModel":
        return replace(self, params=params, chol=None, alpha=None)

    def posterior(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and variance (noise included) at hours ``t``."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        p = self.params
        if len(self.X) == 0:
            mean = np.full(len(t), self.mean)
            var = np.full(len(t), p.signal_var + p.noise_var)
        else:
            Ks = kernel(p, self.X, t)
            mean = self.mean + Ks.T @ self.alpha
            v = solve_triangular(self.chol, Ks, lower=True)
            var = p.signal_var - np.sum(v * v, axis=0)
            var = np.clip(var, 0.0, p.signal_var) + p.noise_var
        if scalar:
            return float(mean[0]), float(var[0])
        return mean, var

    def summary(self) -> dict:
        return {
            "edge": self.edge,
            "params": self.params.to_dict(),
            "mean": self.mean,
            "n_train": int(len(self.X)),
            "fallback": self.fallback,
            "log_likelihood": self.log_likelihood,
        }


def default_params(y) -> KernelParams:
    var = float(np.var(y)) if len(y) > 1 else 0.0
    var = max(var, 1.0)
    return KernelParams(0.5 * var, 2.0, 0.5 * var)


def _subsample(X, y, max_points, seed):
    if len(X) <= max_points:
        return X, y
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(X), size=max_points, replace=False))
    return X[idx], y[idx]


class _Converged(Exception):
    pass


def _run_start(theta0, X, y, bounds, cfg: FitConfig):
    history: list[float] = []
    best = {"theta": np.array(theta0, float), "value": -np.inf}

    def objective(theta):
        value, grad = mll_and_grad(theta, X, y)
        if value > best["value"]:
            best["theta"], best["value"] = np.array(theta, float), value
        return -value, -grad

    def callback(theta):
        history.append(best["value"])
        if len(history) > cfg.patience:
            old = history[-1 - cfg.patience]
            if abs(history[-1] - old) <= cfg.rel_tol * max(abs(old), 1.0):
                raise _Converged

    try:
        minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                 callback=callback, options={"maxiter": cfg.max_iter})
    except _Converged:
        pass
    return best["theta"], best["value"]


def fit(X, y, cfg: FitConfig | None = None, edge: str = "") -> EdgeModel:
    """Fit kernel hyperparameters by multi-start MLL maximisation.

    Starts use the configured length scales; the split of the data
    variance between signal and noise is drawn from a generator seeded by
    ``cfg.seed`` so the result is deterministic for fixed data and seed.
    """
    cfg = cfg or FitConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) < max(cfg.min_samples, 1):
        raise InputError(f"edge {edge!r}: {len(X)} samples, need {cfg.min_samples}")
    Xf, yf = _subsample(X, y, cfg.max_points, cfg.seed)

    var = max(float(np.var(yf)), 1e-12)
    floor = math.log(max(cfg.floor_frac * var, 1e-12))
    top = math.log(max(var, 1.0) * 1e3)
    bounds = [(floor, top), tuple(np.log(cfg.length_bounds)), (floor, top)]

    rng = np.random.default_rng(cfg.seed)
    best_theta, best_value = None, -np.inf
    for l0 in cfg.init_length_scales:
        frac = rng.uniform(0.2, 0.8)
        theta0 = np.clip(np.log([max(frac * var, 1e-12), l0, max((1 - frac) * var, 1e-12)]),
                         [b[0] for b in bounds], [b[1] for b in bounds])
        try:
            theta, value = _run_start(theta0, Xf, yf, bounds, cfg)
        except NumericalError as exc:
            log.debug("start l0=%s failed: %s", l0, exc)
            continue
        if np.isfinite(value) and value > best_value:
            best_theta, best_value = theta, value

    if best_theta is None:
        log.warning("edge %s: every optimiser start failed; using default hyperparameters", edge)
        return EdgeModel(edge, default_params(yf), Xf, yf, float(yf.mean()), fallback=True)
    return EdgeModel(edge, KernelParams.from_log(best_theta), Xf, yf, float(yf.mean()),
                     log_likelihood=float(best_value))


def fit_edges(data: dict[str, tuple[np.ndarray, np.ndarray]],
              cfg: FitConfig | None = None) -> dict[str, EdgeModel]:
    """Fit every edge; sparse edges inherit the network-median hyperparameters."""
    cfg = cfg or FitConfig()
    models: dict[str, EdgeModel] = {}
    sparse = []
    for edge, (X, y) in sorted(data.items()):
        if len(X) >= cfg.min_samples:
            models[edge] = fit(X, y, cfg, edge=edge)
        else:
            sparse.append(edge)
    if not sparse:
        return models

    fitted = [m for m in models.values() if not m.fallback]
    if fitted:
        logs = np.median([m.params.to_log() for m in fitted], axis=0)
        median_params = KernelParams.from_log(logs)
        median_mean = float(np.median([m.mean for m in fitted]))
    else:
        pooled = np.concatenate([np.asarray(data[e][1], float) for e in sparse] + [np.zeros(0)])
        median_params = default_params(pooled)
        median_mean = float(pooled.mean()) if len(pooled) else float("nan")
    for edge in sparse:
        X, y = (np.asarray(a, dtype=float) for a in data[edge])
        if len(y) == 0:
            log.warning("edge %s has no samples; fallback hyperparameters and network-median mean", edge)
        else:
            log.warning("edge %s has %d samples (< %d); fallback hyperparameters", edge, len(y), cfg.min_samples)
        mean = float(y.mean()) if len(y) else median_mean
        models[edge] = EdgeModel(edge, median_params, X, y, mean, fallback=True)
    return models


def condition(mean, cov, observed: float, tol: float = 1e-12) -> tuple[float, float]:
    """Mean and variance of the second component given the first.

    Standard bivariate Gaussian conditioning.  A zero-variance first
    component is only accepted when the observation equals its mean.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if mean.shape != (2,) or cov.shape != (2, 2):
        raise InputError("condition() expects a 2-vector mean and a 2x2 covariance")
    v1, v2, c = cov[0, 0], cov[1, 1], 0.5 * (cov[0, 1] + cov[1, 0])
    if v1 < 0 or v2 < 0 or v1 * v2 - c * c < -tol * max(v1 * v2, 1.0):
        raise InputError("joint covariance is not positive semi-definite")
    if v1 <= tol:
        if abs(observed - mean[0]) > math.sqrt(tol):
            raise InputError("observation inconsistent with a degenerate first component")
        return float(mean[1]), float(v2)
    m = mean[1] + c / v1 * (observed - mean[0])
    v = max(v2 - c * c / v1, 0.0)
    return float(m), float(v)
