"""Synthetic GPS feeds from known edge travel-time laws.

Edge duration (arrival at tail to arrival at head, dwell included) for a
trip entering edge ``e`` at hour ``h`` of day ``d``:

    mu_e(h) + sigma_e(h) * (sqrt(k) * Z[d, h, e] + sqrt(1 - k) * eps)

with ``Z[d, h] ~ N(0, R_h)`` a day-level factor shared by all trips of
that day and hour, ``eps`` independent noise and ``k`` the day-factor
share.  ``R_h`` is the configured edge correlation at hour ``h``; it is
the correlation seen between per-day hourly medians.  Durations are
clipped below at 30 s.

Buses dwell at each stop (terminal included) and move along straight
lines between stops.  Pings fall on a global clock ``k * P + phase`` per
vehicle, so the closest ping to a stop trails the true arrival by less
than one ping period.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, datetime, timezone

import numpy as np

from .correlation import clip_psd
from .errors import InputError
from .graph import TransitGraph
from .ingest import PingColumns, haversine_m

M_PER_DEG_LAT = 111_320.0


@dataclass
class GroundTruthEdgeLaw:
    """Piecewise-linear (periodic over 24 h) mean and std of one edge."""

    edge: str
    mean_knots: list[tuple[float, float]]
    std_knots: list[tuple[float, float]]
    corr: dict[str, float | list[float]] = field(default_factory=dict)  # other edge -> rho or 24 rhos

    def __post_init__(self):
        for name in ("mean_knots", "std_knots"):
            knots = sorted((float(h), float(v)) for h, v in getattr(self, name))
            if not knots:
                raise InputError(f"law {self.edge}: {name} is empty")
            if any(v <= 0 for _, v in knots):
                raise InputError(f"law {self.edge}: {name} must be positive")
            setattr(self, name, knots)

    def mean(self, h):
        xs, ys = zip(*self.mean_knots)
        return np.interp(h, xs, ys, period=24.0)

    def std(self, h):
        xs, ys = zip(*self.std_knots)
        return np.interp(h, xs, ys, period=24.0)

    def rho(self, other: str, hour: int) -> float:
        v = self.corr.get(other, 0.0)
        return float(v[hour] if isinstance(v, (list, tuple)) else v)


@dataclass
class SimConfig:
    ping_period: int = 10
    drop_prob: float = 0.0
    noise_m: float = 0.0
    trips_per_route: int = 36  # per day
    days: int = 1
    seed: int = 0
    start_date: str = "2024-01-01"
    first_departure_h: float = 5.0
    last_departure_h: float = 23.0
    dwell: int = 20  # seconds; at least two ping periods
    day_factor_share: float = 0.85
    min_duration: float = 30.0
    route_offsets: dict[str, float] = field(default_factory=dict)  # seconds added per route

    def __post_init__(self):
        if not self.ping_period > 0:
            raise InputError("ping period must be positive")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise InputError("drop probability must lie in [0, 1]")
        if self.noise_m < 0:
            raise InputError("position noise must be non-negative")
        if self.trips_per_route < 1 or self.days < 1:
            raise InputError("need at least one trip and one day")
        if not 0.0 <= self.day_factor_share <= 1.0:
            raise InputError("day_factor_share must lie in [0, 1]")
        if self.dwell < 0 or self.dwell >= self.min_duration:
            raise InputError("dwell must be in [0, min_duration)")
        if not 0 <= self.first_departure_h <= self.last_departure_h < 48:
            raise InputError("departure window must satisfy 0 <= first <= last")
        date.fromisoformat(self.start_date)

    @property
    def start_epoch(self) -> int:
        d = date.fromisoformat(self.start_date)
        return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())


@dataclass
class TruthRecord:
    """One edge traversal as generated (the oracle for ingestion tests)."""

    day: int
    route: str
    vehicle: str
    edge: str
    tail_arrival: float
    head_arrival: float

    @property
    def duration(self) -> float:
        return self.head_arrival - self.tail_arrival


def _corr_matrices(laws: dict[str, GroundTruthEdgeLaw], edges: list[str]) -> np.ndarray:
    """(24, E, E) correlation matrices, symmetrised and projected to PSD."""
    E = len(edges)
    out = np.empty((24, E, E))
    for h in range(24):
        R = np.eye(E)
        for i, a in enumerate(edges):
            for j, b in enumerate(edges):
                if i != j:
                    r = laws[a].rho(b, h) or laws[b].rho(a, h)
                    R[i, j] = r
        R = clip_psd(0.5 * (R + R.T))
        d = np.sqrt(np.clip(np.diag(R), 1e-12, None))
        out[h] = R / np.outer(d, d)
    return out


def _chol_psd(R: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(R)
    return V * np.sqrt(np.clip(w, 0.0, None))


def trip_schedule(cfg: SimConfig, route: str = "") -> np.ndarray:
    """Seconds after midnight of each trip's departure from its first stop."""
    n = cfg.trips_per_route
    off = float(cfg.route_offsets.get(route, 0.0))
    if n == 1:
        return np.array([cfg.first_departure_h * 3600.0 + off])
    return np.linspace(cfg.first_departure_h, cfg.last_departure_h, n) * 3600.0 + off


def simulate_day(g: TransitGraph, laws: list[GroundTruthEdgeLaw], cfg: SimConfig,
                 day: int, rng: np.random.Generator) -> tuple[PingColumns, list[TruthRecord]]:
    law_map = {l.edge: l for l in laws}
    missing = [e.id for e in g.edges.values() if e.id not in law_map]
    if missing:
        raise InputError(f"no ground-truth law for edges {missing}")
    edges = sorted(law_map)
    col = {e: i for i, e in enumerate(edges)}
    roots = np.array([_chol_psd(R) for R in _corr_matrices(law_map, edges)])
    Z = np.einsum("hij,hj->hi", roots, rng.standard_normal((24, len(edges))))  # (24, E)
    kappa = cfg.day_factor_share
    day0 = cfg.start_epoch + 86400 * day
    P = cfg.ping_period

    parts, truth = [], []
    for rid in sorted(g.routes):
        stops = g.routes[rid].stops
        lat = np.array([g.stops[s].lat for s in stops])
        lon = np.array([g.stops[s].lon for s in stops])
        for k, dep in enumerate(trip_schedule(cfg, rid)):
            vid = f"{rid}_v{k:03d}"
            arrive = np.empty(len(stops))
            arrive[0] = day0 + dep
            for i in range(len(stops) - 1):
                e = f"{stops[i]}->{stops[i + 1]}"
                law = law_map[e]
                h = ((arrive[i] - day0) / 3600.0) % 24.0
                hb = int(h) % 24
                z = math.sqrt(kappa) * Z[hb, col[e]] + math.sqrt(1 - kappa) * rng.standard_normal()
                dur = max(float(law.mean(h) + law.std(h) * z), cfg.min_duration)
                arrive[i + 1] = arrive[i] + dur
                truth.append(TruthRecord(day, rid, vid, e, arrive[i], arrive[i + 1]))
            phase = int(rng.integers(0, P))
            parts.append(_trip_pings(vid, rid, arrive, lat, lon, cfg, phase, rng))
    cols = PingColumns.concat(parts)
    order = np.lexsort((cols.vid, cols.ts))
    cols = PingColumns(cols.vid[order], cols.rid[order], cols.ts[order], cols.lat[order],
                       cols.lon[order], cols.speed[order])
    return cols, truth


def _trip_pings(vid, rid, arrive, lat, lon, cfg: SimConfig, phase: int, rng) -> PingColumns:
    P = cfg.ping_period
    depart = arrive + cfg.dwell  # leave each stop after dwelling; terminal layover too
    t_end = depart[-1]
    first = math.ceil((arrive[0] - phase) / P) * P + phase
    ts = np.arange(first, t_end + 1e-9, P, dtype=np.int64)
    if len(ts) == 0:
        return PingColumns.empty()
    # piecewise-linear position: dwell at stop i over [arrive_i, depart_i], move to i+1 until arrive_{i+1}
    knots_t = np.empty(2 * len(arrive))
    knots_t[0::2] = arrive
    knots_t[1::2] = depart
    plat = np.interp(ts, knots_t, np.repeat(lat, 2))
    plon = np.interp(ts, knots_t, np.repeat(lon, 2))
    seg = np.clip(np.searchsorted(knots_t, ts, side="right") - 1, 0, len(knots_t) - 1)
    moving = seg % 2 == 1
    seg_i = np.minimum(seg // 2, len(arrive) - 2)
    length = haversine_m(lat[:-1], lon[:-1], lat[1:], lon[1:])
    run = arrive[1:] - depart[:-1]
    speed = np.where(moving & (seg // 2 < len(arrive) - 1),
                     length[seg_i] / np.maximum(run[seg_i], 1e-9), 0.0)
    if cfg.noise_m > 0:
        n = rng.normal(0.0, cfg.noise_m, size=(len(ts), 2))
        plat = plat + n[:, 0] / M_PER_DEG_LAT
        plon = plon + n[:, 1] / (M_PER_DEG_LAT * np.cos(np.radians(plat)))
    if cfg.drop_prob > 0:
        keep = rng.random(len(ts)) >= cfg.drop_prob
        ts, plat, plon, speed = ts[keep], plat[keep], plon[keep], speed[keep]
    n = len(ts)
    return PingColumns(np.full(n, vid), np.full(n, rid), ts, plat, plon, speed)


def simulate(g: TransitGraph, laws: list[GroundTruthEdgeLaw], cfg: SimConfig
             ) -> tuple[PingColumns, list[TruthRecord]]:
    """All days; each day draws from its own child of the configured seed."""
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.days)
    parts, truth = [], []
    for d, ss in enumerate(children):
        cols, tr = simulate_day(g, laws, cfg, d, np.random.default_rng(ss))
        parts.append(cols)
        truth.extend(tr)
    return PingColumns.concat(parts), truth


def simulate_feed(g: TransitGraph, laws: list[GroundTruthEdgeLaw], cfg: SimConfig):
    """Stream of ``GpsPing`` day by day."""
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.days)
    for d, ss in enumerate(children):
        cols, _ = simulate_day(g, laws, cfg, d, np.random.default_rng(ss))
        yield from cols


def rush_hour_law(edge: str, base: float, peak_factor: float = 1.6, cv: float = 0.1,
                  peaks: tuple[float, ...] = (8.5, 18.0), corr=None) -> GroundTruthEdgeLaw:
    """Flat base travel time with triangular morning and evening peaks."""
    knots = [(0.0, base)]
    for p in peaks:
        knots += [(p - 2.0, base), (p, base * peak_factor), (p + 2.0, base)]
    knots.append((23.99, base))
    std = [(h, v * cv) for h, v in knots]
    return GroundTruthEdgeLaw(edge, knots, std, dict(corr or {}))


def default_laws(g: TransitGraph, seed: int = 0, speed_mps: float = 6.0,
                 min_base: float = 120.0) -> list[GroundTruthEdgeLaw]:
    """Rush-hour laws scaled by straight-line edge length; no correlation."""
    rng = np.random.default_rng(seed)
    out = []
    for e in sorted(g.edges.values(), key=lambda e: e.id):
        a, b = g.stops[e.tail], g.stops[e.head]
        dist = float(haversine_m(a.lat, a.lon, b.lat, b.lon))
        base = max(dist / speed_mps, min_base)
        out.append(rush_hour_law(e.id, base, peak_factor=float(rng.uniform(1.2, 1.8))))
    return out
