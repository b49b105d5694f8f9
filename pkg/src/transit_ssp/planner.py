"""Stochastic shortest path ranking over one-transfer candidates.

Each candidate's total travel time is approximated as Gaussian.  Leg laws
come from the per-edge GP models, evaluated at the mean arrival time at
the leg's tail; two legs are joined with the estimated cross-covariance.
Candidates are ranked by their optimality index, the probability of being
strictly shortest under pairwise independence, with a variance tie-break
among near-maxima.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri
from scipy.stats import truncnorm

from .correlation import ZeroCorrelation
from .errors import InputError, IntegrationError
from .graph import PathCandidate, TransitGraph, enumerate_paths

log = logging.getLogger(__name__)

DAY = 86400.0


def hour_of_day(epoch: float) -> float:
    """Fractional hour of day (UTC) for an epoch time in seconds."""
    return (float(epoch) % DAY) / 3600.0


@dataclass(frozen=True)
class Gaussian:
    mean: float
    var: float

    def __post_init__(self):
        if self.var < 0:
            raise InputError("variance must be non-negative")

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


class ConstantEdgeModel:
    """Time-invariant Gaussian edge law; stands in for a fitted GP."""

    def __init__(self, edge: str, mean: float, var: float):
        if var < 0:
            raise InputError("variance must be non-negative")
        self.edge = edge
        self.mean = float(mean)
        self.var = float(var)

    def posterior(self, t):
        if np.ndim(t) == 0:
            return self.mean, self.var
        t = np.asarray(t, dtype=float)
        return np.full(t.shape, self.mean), np.full(t.shape, self.var)


@dataclass
class PlannerConfig:
    nodes: int = 4096
    window: float = 8.0  # half-width of the integration grid in path std units
    band: float = 0.01  # relative width of the near-maximum band
    default_headway: float = 600.0
    max_doublings: int = 4
    hub_only: bool = True
    max_miss: float = 0.5  # drop a transfer when P(missing every listed bus) exceeds this

    def __post_init__(self):
        if self.nodes < 16:
            raise InputError("integration grid needs at least 16 nodes")
        if self.window <= 0:
            raise InputError("integration window must be positive")
        if not 0 <= self.band < 1:
            raise InputError("band must lie in [0, 1)")
        if self.default_headway < 0:
            raise InputError("headway must be non-negative")


# ---------------------------------------------------------------- ETA feed

@dataclass
class EtaFeed:
    """Upcoming bus arrivals per (stop, route), optionally with std devs."""

    arrivals: dict[tuple[str, str], list[tuple[float, float]]] = field(default_factory=dict)
    headways: dict[str, float] = field(default_factory=dict)
    default_headway: float = 600.0

    def __post_init__(self):
        clean = {}
        for key, buses in self.arrivals.items():
            rows = [(float(t), float(s)) for t, s in buses]
            if any(s < 0 for _, s in rows):
                raise InputError(f"negative arrival std at {key}")
            clean[tuple(key)] = sorted(rows)
        self.arrivals = clean

    def has_service(self, stop: str, routes) -> bool:
        return any(self.arrivals.get((stop, r)) for r in routes)

    def buses(self, stop: str, routes, after: float = -math.inf) -> list[tuple[float, float, str]]:
        """Listed arrivals at ``stop`` on any of ``routes`` with time >= ``after``."""
        out = [(t, s, r) for r in sorted(routes) for t, s in self.arrivals.get((stop, r), ())
               if t >= after]
        return sorted(out)

    def headway(self, routes) -> float:
        return min((self.headways.get(r, self.default_headway) for r in routes),
                   default=self.default_headway)

    def to_dict(self) -> dict:
        return {
            "default_headway": self.default_headway,
            "headways": dict(sorted(self.headways.items())),
            "entries": [
                {"stop": s, "route": r, "arrivals": [t for t, _ in rows], "stds": [d for _, d in rows]}
                for (s, r), rows in sorted(self.arrivals.items())
            ],
        }

    @classmethod
    def from_dict(cls, data) -> "EtaFeed":
        if isinstance(data, list):
            data = {"entries": data}
        try:
            arrivals = {}
            for e in data.get("entries", []):
                times = [float(t) for t in e["arrivals"]]
                stds = [float(s) for s in e.get("stds", [0.0] * len(times))]
                if len(stds) != len(times):
                    raise InputError(f"ETA entry {e['stop']}/{e['route']}: stds length mismatch")
                arrivals.setdefault((str(e["stop"]), str(e["route"])), []).extend(zip(times, stds))
            return cls(arrivals, {str(k): float(v) for k, v in data.get("headways", {}).items()},
                       float(data.get("default_headway", 600.0)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed ETA feed: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "EtaFeed":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read ETA feed {path}: {exc}") from exc


# ---------------------------------------------------------------- path laws

@dataclass
class PathDistribution:
    candidate: PathCandidate
    tau0: float
    mean: float
    var: float
    leg_means: tuple[float, ...] = ()
    leg_vars: tuple[float, ...] = ()
    cross_cov: float = 0.0
    wait: float = 0.0  # expected waiting time included in ``mean``
    feasibility: float = 1.0
    floored: bool = False

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


def _leg_law(models: Mapping, edge_id: str, hour: float) -> tuple[float, float]:
    try:
        model = models[edge_id]
    except KeyError:
        raise InputError(f"no model for edge {edge_id}") from None
    m, v = model.posterior(hour)
    return float(m), max(float(v), 0.0)


def _floor(mean: float, var: float) -> tuple[float, bool]:
    if var > 0:
        return var, False
    log.warning("non-positive path variance %.3g; flooring at 1%% of mean^2", var)
    return max(0.01 * mean * mean, 1e-12), True


def path_distribution(cand: PathCandidate, tau0: float, models: Mapping, corr=None) -> PathDistribution:
    """Gaussian law of the in-vehicle travel time along ``cand`` from ``tau0``.

    Leg 2 is evaluated at the mean arrival time at the transfer stop.
    """
    corr = corr or ZeroCorrelation()
    e1 = cand.legs[0].id
    h0 = hour_of_day(tau0)
    m1, v1 = _leg_law(models, e1, h0)
    if len(cand.legs) == 1:
        var, floored = _floor(m1, v1)
        return PathDistribution(cand, tau0, m1, var, (m1,), (v1,), 0.0, floored=floored)
    e2 = cand.legs[1].id
    h1 = hour_of_day(tau0 + m1)
    m2, v2 = _leg_law(models, e2, h1)
    cov = corr.edge_covariance(e1, e2, h0, h1, math.sqrt(v1), math.sqrt(v2))
    mean = m1 + m2
    var, floored = _floor(mean, v1 + v2 + 2.0 * cov)
    return PathDistribution(cand, tau0, mean, var, (m1, m2), (v1, v2), cov, floored=floored)


# ---------------------------------------------------------------- optimality index

def _moments(dists) -> tuple[np.ndarray, np.ndarray]:
    mu, sd = [], []
    for d in dists:
        if isinstance(d, PathDistribution):
            mu.append(d.mean)
            sd.append(d.std)
        else:
            mu.append(float(d[0]))
            sd.append(float(d[1]))
    mu, sd = np.array(mu), np.array(sd)
    if len(mu) == 0:
        raise InputError("need at least one distribution")
    if np.any(~np.isfinite(mu)) or np.any(~(sd > 0)):
        raise InputError("optimality index needs finite means and positive standard deviations")
    return mu, sd


def optimality_indices_raw(dists, nodes: int = 4096, window: float = 8.0) -> np.ndarray:
    """Un-normalised C_j = integral of f_j(x) * prod_{i != j} P(T_i > x) dx.

    ``dists`` holds ``PathDistribution`` objects or ``(mean, std)`` pairs.
    Each integral runs on its own standardised trapezoid grid
    ``x = mu_j + sd_j z`` with ``z`` in ``[-window, window]``.
    """
    mu, sd = _moments(dists)
    k = len(mu)
    if k == 1:
        return np.ones(1)
    z = np.linspace(-window, window, nodes)
    phi = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    out = np.empty(k)
    for j in range(k):
        x = mu[j] + sd[j] * z
        others = np.delete(np.arange(k), j)
        # log P(T_i > x) summed over competitors
        logsurv = log_ndtr(-(x[None, :] - mu[others, None]) / sd[others, None]).sum(axis=0)
        out[j] = np.trapezoid(phi * np.exp(logsurv), z)
    return out


def optimality_indices(dists, nodes: int = 4096, window: float = 8.0, tol: float = 0.02) -> np.ndarray:
    """Optimality indices, renormalised for reporting.

    Raises ``IntegrationError`` when the raw sum leaves ``[1 - tol, 1 + tol]``.
    """
    raw = optimality_indices_raw(dists, nodes, window)
    total = raw.sum()
    if abs(total - 1.0) > tol:
        raise IntegrationError(f"optimality indices sum to {total:.6f}", total=total, nodes=nodes)
    return raw / total


def robust_optimality_indices(dists, cfg: PlannerConfig | None = None) -> np.ndarray:
    """``optimality_indices`` with grid doubling on integration failure."""
    cfg = cfg or PlannerConfig()
    nodes = cfg.nodes
    for attempt in range(cfg.max_doublings + 1):
        try:
            return optimality_indices(dists, nodes, cfg.window)
        except IntegrationError:
            if attempt == cfg.max_doublings:
                raise
            nodes *= 2
            log.info("integration failed; retrying with %d nodes", nodes)
    raise AssertionError("unreachable")


def select_shortest(results: Sequence, band: float = 0.01) -> int:
    """Index of the suggested path.

    ``results`` holds ``(C, sigma)`` or ``(C, sigma, mu)`` tuples.  Among
    candidates with ``C >= (1 - band) * max C`` pick the smallest sigma,
    then the smallest mu, then the earliest.
    """
    if not results:
        raise InputError("select_shortest needs at least one candidate")
    rows = [(float(r[0]), float(r[1]), float(r[2]) if len(r) > 2 else 0.0) for r in results]
    top = max(c for c, _, _ in rows)
    inside = [i for i, (c, _, _) in enumerate(rows) if c >= (1.0 - band) * top]
    return min(inside, key=lambda i: (rows[i][1], rows[i][2], i))


def transfer_probability(current: Gaussian, next_bus: Gaussian) -> float:
    """P(current arrival <= next bus arrival) for independent Gaussians."""
    var = current.var + next_bus.var
    diff = next_bus.mean - current.mean
    if var <= 0:
        return 1.0 if diff >= 0 else 0.0
    return float(ndtr(diff / math.sqrt(var)))


# ---------------------------------------------------------------- ETA-aware ranking

@dataclass
class RankedPath:
    candidate: PathCandidate
    index: float
    mean: float
    std: float
    feasibility: float
    dist: PathDistribution

    def to_dict(self) -> dict:
        return {"path": self.candidate.label, "edges": self.candidate.edge_ids(),
                "optimality_index": self.index, "mean": self.mean, "std": self.std,
                "feasibility": self.feasibility, "wait": self.dist.wait,
                "floored": self.dist.floored}


@dataclass
class PlanResult:
    source: str
    target: str
    tau0: float
    ranked: list[RankedPath]
    reason: str = ""
    excluded: list[str] = field(default_factory=list)
    overlapping: bool = False

    @property
    def best(self) -> RankedPath | None:
        return self.ranked[0] if self.ranked else None

    def to_dict(self) -> dict:
        return {"source": self.source, "target": self.target, "tau0": self.tau0,
                "ranked": [r.to_dict() for r in self.ranked], "reason": self.reason,
                "excluded": self.excluded, "overlapping_candidates": self.overlapping}


def _first_boarding(cand: PathCandidate, tau0: float, eta: EtaFeed):
    """(expected wait, wait variance, boarded route or None); None if no bus."""
    s = cand.source
    routes = cand.legs[0].routes
    if not eta.has_service(s, routes):
        return eta.headway(routes) / 2.0, 0.0, None
    buses = eta.buses(s, routes, after=tau0)
    if not buses:
        return None
    t, sd, r = buses[0]
    return t - tau0, sd * sd, r


def _transfer_leg(cand, tau0, board, m1, v1, models, corr, eta, cfg):
    """Mixture law of (time from tau0 to reaching the target) over leg-2 buses."""
    e1, e2 = cand.legs[0].id, cand.legs[1].id
    v = cand.transfer_stop
    routes2 = cand.legs[1].routes
    arrive = board + m1
    if not eta.has_service(v, routes2):
        w2 = eta.headway(routes2) / 2.0
        dep = arrive + w2
        m2, v2 = _leg_law(models, e2, hour_of_day(dep))
        cov = corr.edge_covariance(e1, e2, hour_of_day(board), hour_of_day(dep),
                                   math.sqrt(v1), math.sqrt(v2))
        return dep - tau0 + m2, v1 + v2 + 2 * cov, 1.0, (m2, v2), cov

    buses = eta.buses(v, routes2)
    s1 = math.sqrt(v1)
    probs, means, varis = [], [], []
    prev_cdf = 0.0
    for eta_k, sd_k, _ in buses:
        if sd_k > 0 or s1 > 0:
            cdf = transfer_probability(Gaussian(arrive, v1), Gaussian(eta_k, sd_k * sd_k))
        else:
            cdf = 1.0 if arrive <= eta_k else 0.0
        cdf = max(cdf, prev_cdf)
        p = cdf - prev_cdf
        lo_cdf, prev_cdf = prev_cdf, cdf
        if p <= 1e-12:
            continue
        m2, v2 = _leg_law(models, e2, hour_of_day(eta_k))
        rho = corr.correlation(e1, int(hour_of_day(board)), e2, int(hour_of_day(eta_k))).value
        # leg-1 duration conditioned on catching bus k (arrival inside its interval)
        if s1 > 0 and rho != 0.0:
            # standardised interval bounds of leg-1 duration
            tm, tv = truncnorm.stats(_quantile(lo_cdf), _quantile(cdf), moments="mv")
            cond_mean = float(tm) * s1
            cond_var = float(tv) * v1
            s2 = math.sqrt(v2)
            w_mean = m2 + rho * s2 * cond_mean / s1
            w_var = v2 * (1 - rho * rho) + rho * rho * v2 * cond_var / v1
        else:
            w_mean, w_var = m2, v2
        probs.append(p)
        means.append(eta_k - tau0 + w_mean)
        varis.append(w_var + sd_k * sd_k)
    miss = 1.0 - prev_cdf
    if miss > cfg.max_miss or not probs:
        return None
    p = np.array(probs) / sum(probs)
    means, varis = np.array(means), np.array(varis)
    mean = float(p @ means)
    var = float(p @ (varis + means**2) - mean**2)
    return mean, max(var, 0.0), 1.0 - miss, None, 0.0


def _quantile(q: float) -> float:
    if q <= 0.0:
        return -math.inf
    if q >= 1.0:
        return math.inf
    return float(ndtri(q))


def candidate_distribution(cand: PathCandidate, tau0: float, models: Mapping, corr,
                           eta: EtaFeed, cfg: PlannerConfig) -> PathDistribution | None:
    """Door-to-door law (waits included) from ``tau0``; None when infeasible."""
    first = _first_boarding(cand, tau0, eta)
    if first is None:
        return None
    wait, wait_var, boarded = first
    board = tau0 + wait
    e1 = cand.legs[0].id
    m1, v1 = _leg_law(models, e1, hour_of_day(board))

    through = len(cand.legs) == 2 and (
        (boarded is not None and boarded in cand.legs[1].routes)
        or (boarded is None and bool(cand.through_routes)))
    if len(cand.legs) == 1 or through:
        base = path_distribution(cand, board, models, corr)
        mean = wait + base.mean
        var, floored = _floor(mean, base.var + wait_var)
        return PathDistribution(cand, tau0, mean, var, base.leg_means, base.leg_vars,
                                base.cross_cov, wait, 1.0, floored or base.floored)

    res = _transfer_leg(cand, tau0, board, m1, v1, models, corr, eta, cfg)
    if res is None:
        return None
    mean, var, feas, leg2, cov = res
    var, floored = _floor(mean, var + wait_var)
    leg_means = (m1, leg2[0]) if leg2 else (m1,)
    leg_vars = (v1, leg2[1]) if leg2 else (v1,)
    return PathDistribution(cand, tau0, mean, var, leg_means, leg_vars, cov,
                            mean - sum(leg_means) if leg2 else wait, feas, floored)


def rank(dists: list[PathDistribution], cfg: PlannerConfig | None = None) -> list[RankedPath]:
    """Optimality indices plus ordering: selected path first, then by index."""
    cfg = cfg or PlannerConfig()
    if not dists:
        return []
    C = robust_optimality_indices(dists, cfg)
    pick = select_shortest([(c, d.std, d.mean) for c, d in zip(C, dists)], cfg.band)
    rows = [RankedPath(d.candidate, float(c), d.mean, d.std, d.feasibility, d)
            for c, d in zip(C, dists)]
    order = [pick] + sorted((i for i in range(len(rows)) if i != pick),
                            key=lambda i: (-rows[i].index, rows[i].std, rows[i].mean, i))
    return [rows[i] for i in order]


def ranked_paths(g: TransitGraph, s: str, t: str, tau0: float, models: Mapping,
                 corr=None, eta: EtaFeed | None = None,
                 cfg: PlannerConfig | None = None) -> PlanResult:
    """Rank every one-transfer candidate from ``s`` to ``t`` departing at ``tau0``."""
    cfg = cfg or PlannerConfig()
    corr = corr or ZeroCorrelation()
    eta = eta or EtaFeed(default_headway=cfg.default_headway)
    cands = enumerate_paths(g, s, t, hub_only=cfg.hub_only)
    if not cands:
        return PlanResult(s, t, tau0, [], reason="no candidate path with at most one transfer")
    dists, excluded = [], []
    for c in cands:
        d = candidate_distribution(c, tau0, models, corr, eta, cfg)
        if d is None:
            excluded.append(c.label)
        else:
            dists.append(d)
    if not dists:
        return PlanResult(s, t, tau0, [], reason="no feasible bus for any candidate", excluded=excluded)
    seen: set[str] = set()
    overlap = False
    for d in dists:
        ids = set(d.candidate.edge_ids())
        overlap |= bool(ids & seen)
        seen |= ids
    return PlanResult(s, t, tau0, rank(dists, cfg), excluded=excluded, overlapping=overlap)


@dataclass
class Replan:
    switch: bool
    recommendation: PathCandidate | None
    remaining: PathCandidate | None
    plan: PlanResult | None


def _remaining(current: PathCandidate, position: str) -> PathCandidate | None:
    if position == current.target:
        return None
    if position == current.source:
        return current
    if position == current.transfer_stop:
        return PathCandidate((current.legs[1],))
    raise InputError(f"stop {position!r} is not on the active path {current.label}")


def replan(g: TransitGraph, current: PathCandidate, position: str, tau_now: float,
           models: Mapping, corr=None, eta: EtaFeed | None = None,
           cfg: PlannerConfig | None = None) -> Replan:
    """Re-rank from ``position``; switch only when the remaining path falls out of the band."""
    cfg = cfg or PlannerConfig()
    rest = _remaining(current, position)
    if rest is None:
        return Replan(False, None, None, None)
    plan = ranked_paths(g, position, current.target, tau_now, models, corr, eta, cfg)
    if not plan.ranked:
        return Replan(False, rest, rest, plan)
    best = plan.ranked[0]
    mine = next((r for r in plan.ranked if r.candidate.edge_ids() == rest.edge_ids()), None)
    if mine is None or mine.index < (1.0 - cfg.band) * best.index:
        return Replan(best.candidate.edge_ids() != rest.edge_ids(), best.candidate, rest, plan)
    return Replan(False, rest, rest, plan)
