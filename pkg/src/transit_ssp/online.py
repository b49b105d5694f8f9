"""Online GP regression with structured kernel interpolation.

The kernel matrix is approximated as ``W K_UU W^T`` with ``W`` the sparse
cubic interpolation matrix onto an evenly spaced inducing grid ``U``.
The data enter only through sufficient statistics (``W^T W``, ``W^T y``,
``W^T 1``, ``sum y``, ``sum y^2``) and a rank-``r`` root ``L`` with
``L L^T ~ W^T W``.  With ``Q = I + sigma^-2 L^T K L`` the Woodbury identity
gives

    posterior mean coefficients  u = sigma^-2 (K z - K L Q^-1 a),
    a = sigma^-2 (K L)^T z,  z = W^T (y - ybar),
    log|K~ + sigma^2 I| = n log sigma^2 + log|Q|,

so conditioning on a new point costs O(m r^2) regardless of ``n``.

The root is truncated in the metric of ``K_UU``: after the rank-one
append we keep the ``r`` leading eigen-directions of ``M^T K M``.  That
makes ``L^T K L`` diagonal and drops only directions the kernel cannot
see.  ``W^T W`` itself is kept exactly (it is m x m and sparse to
update) so the root can be rebuilt whenever hyperparameters change.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .errors import InputError
from .gp import LOG_2PI, KernelParams, kernel

log = logging.getLogger(__name__)

STATE_VERSION = 1


@dataclass
class OnlineConfig:
    m: int = 128
    r: int = 32
    lo: float = 0.0
    hi: float = 24.0
    refresh_every: int = 500  # 0 disables hyperparameter refresh
    refresh_steps: int = 10
    floor_frac: float = 1e-6

    def __post_init__(self):
        if self.m < 4:
            raise InputError("inducing grid needs at least 4 points")
        if not 1 <= self.r <= self.m:
            raise InputError("root rank r must satisfy 1 <= r <= m")
        if not self.hi > self.lo:
            raise InputError("grid bounds must satisfy hi > lo")


def make_grid(m: int, lo: float = 0.0, hi: float = 24.0) -> np.ndarray:
    if m < 4:
        raise InputError("inducing grid needs at least 4 points")
    return np.linspace(lo, hi, m)


def _keys(s):
    """Cubic convolution kernel, a = -0.5."""
    s = np.abs(s)
    return np.where(
        s <= 1.0, 1.5 * s**3 - 2.5 * s**2 + 1.0,
        np.where(s < 2.0, -0.5 * s**3 + 2.5 * s**2 - 4.0 * s + 2.0, 0.0))


def interpolation_weights(grid: np.ndarray, x):
    """Indices and weights of the 4 grid points used to interpolate at ``x``.

    Interior intervals use cubic convolution; the first and last interval
    fall back to the 4-point Lagrange cubic on the nearest window.  Inputs
    outside the grid are clamped to it.  Returns ``(idx, w, clamped)``
    with shapes ``(n, 4)``, ``(n, 4)``, ``(n,)`` (or 1-D for scalar ``x``).
    """
    grid = np.asarray(grid, dtype=float)
    m = len(grid)
    if m < 4:
        raise InputError("inducing grid needs at least 4 points")
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = grid[0], grid[-1]
    h = (hi - lo) / (m - 1)
    clamped = (x < lo) | (x > hi)
    xc = np.clip(x, lo, hi)
    j = np.clip(np.floor((xc - lo) / h).astype(int), 0, m - 2)
    start = np.clip(j - 1, 0, m - 4)
    idx = start[:, None] + np.arange(4)[None, :]
    w = np.empty((len(x), 4))

    interior = (j >= 1) & (j <= m - 3)
    s = (xc - grid[j]) / h
    si = s[interior][:, None]
    w[interior] = _keys(np.hstack([si + 1.0, si, 1.0 - si, 2.0 - si]))

    edge = ~interior
    if edge.any():
        nodes = grid[idx[edge]]
        xe = xc[edge][:, None]
        lag = np.ones((edge.sum(), 4))
        for a in range(4):
            for b in range(4):
                if a != b:
                    lag[:, a] *= (xe[:, 0] - nodes[:, b]) / (nodes[:, a] - nodes[:, b])
        w[edge] = lag
    if scalar:
        return idx[0], w[0], bool(clamped[0])
    return idx, w, clamped


@dataclass
class SkiState:
    """Sufficient statistics and cached Woodbury quantities for one edge."""

    grid: np.ndarray
    params: KernelParams
    r: int
    n: int = 0
    sum_y: float = 0.0
    sum_yy: float = 0.0
    WtW: np.ndarray = None  # (m, m) exact
    Wty: np.ndarray = None  # (m,) raw targets
    Wt1: np.ndarray = None  # (m,)
    L: np.ndarray = None  # (m, k), k <= r
    KL: np.ndarray = None  # (m, k)
    core: np.ndarray = None  # (k,) = diag(L^T K L)
    Kuu: np.ndarray = field(default=None, repr=False)
    Kz: np.ndarray = field(default=None, repr=False)  # K @ Wty
    K1: np.ndarray = field(default=None, repr=False)  # K @ Wt1
    u: np.ndarray = field(default=None, repr=False)  # mean coefficients
    a: np.ndarray = field(default=None, repr=False)
    b: np.ndarray = field(default=None, repr=False)
    clamped: int = 0
    rebuilds: int = 0
    since_refresh: int = 0

    @classmethod
    def empty(cls, params: KernelParams, cfg: OnlineConfig | None = None) -> "SkiState":
        cfg = cfg or OnlineConfig()
        grid = make_grid(cfg.m, cfg.lo, cfg.hi)
        m = len(grid)
        s = cls(grid=grid, params=params, r=cfg.r,
                WtW=np.zeros((m, m)), Wty=np.zeros(m), Wt1=np.zeros(m),
                L=np.zeros((m, 0)), KL=np.zeros((m, 0)), core=np.zeros(0))
        s.Kuu = kernel(params, grid)
        s.Kz = np.zeros(m)
        s.K1 = np.zeros(m)
        s._refresh_cache()
        return s

    @property
    def m(self) -> int:
        return len(self.grid)

    @property
    def mean(self) -> float:
        return self.sum_y / self.n if self.n else 0.0

    def copy(self) -> "SkiState":
        """Snapshot for concurrent readers."""
        return SkiState.from_dict(self.to_dict())

    # -- cached quantities -------------------------------------------------

    def _refresh_cache(self):
        s2 = self.params.noise_var
        c = self.mean
        zc = self.Wty - c * self.Wt1
        Kzc = self.Kz - c * self.K1
        q = 1.0 + self.core / s2
        self.a = self.KL.T @ zc / s2
        self.b = self.a / q
        self.u = (Kzc - self.KL @ self.b) / s2

    def rebuild_root(self):
        """Recompute the rank-r root of W^T W from scratch."""
        w, V = np.linalg.eigh(self.WtW)
        keep = w > 1e-12 * max(w.max(initial=0.0), 1e-300)
        R = V[:, keep] * np.sqrt(w[keep])
        self._set_root(R, self.Kuu @ R)
        self.rebuilds += 1

    def _set_root(self, M, KM):
        """Diagonalise ``M^T K M`` and keep at most r directions.

        If M has plain rank <= r the root stays exact (only the null space
        of M is dropped); otherwise the r leading K-weighted directions win.
        """
        if M.shape[1] > self.r:
            g, V = np.linalg.eigh(M.T @ M)
            keep = g > 1e-12 * max(g[-1], 1e-300)
            if keep.sum() <= self.r:
                M, KM = M @ V[:, keep], KM @ V[:, keep]
        if M.shape[1] == 0:
            self.L = np.zeros((self.m, 0))
            self.KL = np.zeros((self.m, 0))
            self.core = np.zeros(0)
            self._refresh_cache()
            return True
        C = M.T @ KM
        lam, P = np.linalg.eigh(0.5 * (C + C.T))
        if lam[0] < -1e-8 * max(lam[-1], 1e-300):
            return False
        order = np.argsort(lam)[::-1][: self.r]
        self.L = M @ P[:, order]
        self.KL = KM @ P[:, order]
        self.core = np.clip(lam[order], 0.0, None)
        self._refresh_cache()
        return True

    def set_params(self, params: KernelParams):
        self.params = params
        self.Kuu = kernel(params, self.grid)
        self.Kz = self.Kuu @ self.Wty
        self.K1 = self.Kuu @ self.Wt1
        self.rebuild_root()

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        arr = lambda a: np.asarray(a, dtype=float).tolist()
        return {
            "version": STATE_VERSION,
            "grid": arr(self.grid), "params": self.params.to_dict(), "r": self.r,
            "n": self.n, "sum_y": self.sum_y, "sum_yy": self.sum_yy,
            "WtW": arr(self.WtW), "Wty": arr(self.Wty), "Wt1": arr(self.Wt1),
            "L": arr(self.L), "KL": arr(self.KL), "core": arr(self.core),
            "Kuu": arr(self.Kuu), "Kz": arr(self.Kz), "K1": arr(self.K1),
            "clamped": self.clamped, "rebuilds": self.rebuilds,
            "since_refresh": self.since_refresh,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkiState":
        if d.get("version") != STATE_VERSION:
            raise InputError(f"unsupported SKI state version {d.get('version')}")
        m = len(d["grid"])
        mat = lambda key, cols: np.asarray(d[key], dtype=float).reshape(m, cols)
        k = len(d["core"])
        s = cls(grid=np.asarray(d["grid"], dtype=float), params=KernelParams(**d["params"]),
                r=int(d["r"]), n=int(d["n"]), sum_y=float(d["sum_y"]), sum_yy=float(d["sum_yy"]),
                WtW=mat("WtW", m), Wty=np.asarray(d["Wty"], float), Wt1=np.asarray(d["Wt1"], float),
                L=mat("L", k), KL=mat("KL", k), core=np.asarray(d["core"], float),
                clamped=int(d["clamped"]), rebuilds=int(d["rebuilds"]),
                since_refresh=int(d["since_refresh"]))
        s.Kuu = mat("Kuu", m)
        s.Kz = np.asarray(d["Kz"], float)
        s.K1 = np.asarray(d["K1"], float)
        s._refresh_cache()
        return s

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "SkiState":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise InputError(f"cannot load SKI state {path}: {exc}") from exc


def online_update(s: SkiState, x: float, y: float, cfg: OnlineConfig | None = None) -> SkiState:
    """Condition the state on one observation (in place; returns ``s``)."""
    idx, w, clamped = interpolation_weights(s.grid, x)
    s.clamped += int(clamped)
    y = float(y)
    s.n += 1
    s.sum_y += y
    s.sum_yy += y * y
    s.WtW[np.ix_(idx, idx)] += np.outer(w, w)
    s.Wty[idx] += y * w
    s.Wt1[idx] += w
    Kw = s.Kuu[:, idx] @ w
    s.Kz += y * Kw
    s.K1 += Kw

    # rank-one append to the root, then truncation back to r
    wd = np.zeros(s.m)
    wd[idx] = w
    if not s._set_root(np.column_stack([s.L, wd]), np.column_stack([s.KL, Kw])):
        log.debug("root update lost PSD; rebuilding")
        s.rebuild_root()

    s.since_refresh += 1
    if cfg is not None and cfg.refresh_every and s.since_refresh >= cfg.refresh_every:
        refresh_hyperparameters(s, cfg.refresh_steps, cfg.floor_frac)
    return s


def online_predict(s: SkiState, x):
    """Predictive mean and variance (noise included) at hours ``x``."""
    scalar = np.ndim(x) == 0
    idx, w, _ = interpolation_weights(s.grid, np.atleast_1d(x))
    p = s.params
    if s.n == 0:
        mean = np.zeros(len(w))
    else:
        mean = s.mean + np.einsum("ij,ij->i", w, s.u[idx])
    Kblock = s.Kuu[idx[:, :, None], idx[:, None, :]]
    prior = np.einsum("ij,ijk,ik->i", w, Kblock, w)
    proj = np.einsum("ijk,ij->ik", s.KL[idx], w)  # (n, k)
    q = 1.0 + s.core / p.noise_var
    reduction = (proj**2 / q).sum(axis=1) / p.noise_var
    var = np.clip(prior - reduction, 0.0, None) + p.noise_var
    if scalar:
        return float(mean[0]), float(var[0])
    return mean, var


def online_mll(s: SkiState) -> float:
    """Log marginal likelihood from the cached Woodbury quantities."""
    if s.n == 0:
        return 0.0
    s2 = s.params.noise_var
    c = s.mean
    zc = s.Wty - c * s.Wt1
    Kzc = s.Kz - c * s.K1
    yy = s.sum_yy - s.n * c * c
    q = 1.0 + s.core / s2
    quad = (yy - zc @ Kzc / s2 + s.a @ s.b) / s2
    logdet = s.n * math.log(s2) + np.log(q).sum()
    return float(-0.5 * quad - 0.5 * logdet - 0.5 * s.n * LOG_2PI)


def root_error(s: SkiState, weighted: bool = False) -> float:
    """Relative Frobenius error of L L^T against W^T W.

    With ``weighted`` both sides are sandwiched by K^(1/2), which measures
    the error in the directions the kernel can resolve.
    """
    A = s.WtW
    E = A - s.L @ s.L.T
    if weighted:
        w, V = np.linalg.eigh(s.Kuu)
        half = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
        A = half @ A @ half
        E = half @ E @ half
    denom = np.linalg.norm(A)
    return float(np.linalg.norm(E) / denom) if denom > 0 else 0.0


def refresh_hyperparameters(s: SkiState, steps: int = 10, floor_frac: float = 1e-6) -> bool:
    """A few L-BFGS-B steps on online_mll; keeps the old params unless improved."""
    s.since_refresh = 0
    if s.n < 2:
        return False
    var = max((s.sum_yy - s.n * s.mean**2) / s.n, 1e-12)
    floor = math.log(max(floor_frac * var, 1e-12))
    top = math.log(max(var, 1.0) * 1e3)
    h = (s.grid[-1] - s.grid[0]) / (len(s.grid) - 1)
    bounds = [(floor, top), (math.log(h), math.log(200.0)), (floor, top)]

    old_params = s.params
    old_value = online_mll(s)
    trial = s.copy()

    def objective(theta):
        trial.set_params(KernelParams.from_log(theta))
        value = online_mll(trial)
        return -value if np.isfinite(value) else 1e300

    theta0 = np.clip(old_params.to_log(), [b[0] for b in bounds], [b[1] for b in bounds])
    res = minimize(objective, theta0, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": steps, "eps": 1e-5})
    new_params = KernelParams.from_log(res.x)
    s.set_params(new_params)
    if online_mll(s) <= old_value:
        s.set_params(old_params)
        return False
    return True


def fit_state(X, y, params: KernelParams, cfg: OnlineConfig | None = None) -> SkiState:
    """Bulk-load a batch of observations into a fresh state."""
    cfg = cfg or OnlineConfig()
    s = SkiState.empty(params, cfg)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) == 0:
        return s
    idx, w, clamped = interpolation_weights(s.grid, X)
    s.clamped += int(clamped.sum())
    s.n = len(X)
    s.sum_y = float(y.sum())
    s.sum_yy = float(y @ y)
    rows = np.repeat(idx[:, :, None], 4, axis=2)
    cols = np.repeat(idx[:, None, :], 4, axis=1)
    np.add.at(s.WtW, (rows, cols), w[:, :, None] * w[:, None, :])
    np.add.at(s.Wty, idx, w * y[:, None])
    np.add.at(s.Wt1, idx, w)
    s.Kz = s.Kuu @ s.Wty
    s.K1 = s.Kuu @ s.Wt1
    s.rebuild_root()
    return s


class OnlineEdgeModel:
    """Adapter giving a ``SkiState`` the ``EdgeModel.posterior`` interface."""

    def __init__(self, edge: str, state: SkiState, cfg: OnlineConfig | None = None):
        self.edge = edge
        self.state = state
        self.cfg = cfg or OnlineConfig(m=state.m, r=state.r)

    @property
    def params(self) -> KernelParams:
        return self.state.params

    @property
    def mean(self) -> float:
        return self.state.mean

    def update(self, x: float, y: float):
        online_update(self.state, x, y, self.cfg)

    def posterior(self, t):
        return online_predict(self.state, t)

    def summary(self) -> dict:
        return {"edge": self.edge, "params": self.params.to_dict(), "mean": self.mean,
                "n_train": self.state.n, "backend": "online", "m": self.state.m, "r": self.state.r}
