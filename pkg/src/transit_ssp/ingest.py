"""GPS feed ingestion: stop arrivals and per-edge travel-time samples.

A bus's arrival at a stop is the timestamp of its closest ping to that
stop within a trip; stops whose closest ping is further than 100 m are
left unresolved.  Edge durations are arrival-to-arrival, so dwell time
at the tail stop is included.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import InputError
from .graph import TransitGraph, edge_id

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_008.8
MAX_DIST_M = 100.0
TRIP_GAP_S = 15 * 60


@dataclass(frozen=True)
class GpsPing:
    vid: str
    rid: str
    ts: int
    lat: float
    lon: float
    speed: float | None = None

    def __post_init__(self):
        if self.ts <= 0:
            raise InputError("ping timestamp must be positive")
        if not (-90 <= self.lat <= 90 and -180 <= self.lon <= 180):
            raise InputError("ping coordinates out of range")

    def to_json(self) -> str:
        d = {"vid": self.vid, "rid": self.rid, "ts": self.ts, "lat": self.lat, "lon": self.lon}
        if self.speed is not None:
            d["speed"] = self.speed
        return json.dumps(d)


@dataclass
class PingColumns:
    """Columnar ping table; the working representation inside ingestion."""

    vid: np.ndarray  # str
    rid: np.ndarray  # str
    ts: np.ndarray  # int64
    lat: np.ndarray
    lon: np.ndarray
    speed: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ts)

    @classmethod
    def from_pings(cls, pings: Iterable[GpsPing]) -> "PingColumns":
        rows = list(pings)
        return cls(np.array([p.vid for p in rows], dtype=str),
                   np.array([p.rid for p in rows], dtype=str),
                   np.array([p.ts for p in rows], dtype=np.int64),
                   np.array([p.lat for p in rows], dtype=float),
                   np.array([p.lon for p in rows], dtype=float),
                   np.array([np.nan if p.speed is None else p.speed for p in rows], dtype=float))

    @classmethod
    def concat(cls, parts: list["PingColumns"]) -> "PingColumns":
        if not parts:
            return cls.empty()
        sp = [p.speed if p.speed is not None else np.full(len(p), np.nan) for p in parts]
        return cls(np.concatenate([p.vid for p in parts]), np.concatenate([p.rid for p in parts]),
                   np.concatenate([p.ts for p in parts]), np.concatenate([p.lat for p in parts]),
                   np.concatenate([p.lon for p in parts]), np.concatenate(sp))

    @classmethod
    def empty(cls) -> "PingColumns":
        return cls(np.array([], dtype=str), np.array([], dtype=str), np.array([], dtype=np.int64),
                   np.array([]), np.array([]), np.array([]))

    def __iter__(self) -> Iterator[GpsPing]:
        sp = self.speed if self.speed is not None else np.full(len(self), np.nan)
        for v, r, t, a, o, s in zip(self.vid, self.rid, self.ts, self.lat, self.lon, sp):
            yield GpsPing(str(v), str(r), int(t), float(a), float(o),
                          None if np.isnan(s) else float(s))


def write_feed(pings: Iterable[GpsPing] | PingColumns, path: str | Path) -> int:
    n = 0
    with open(path, "w") as fh:
        for p in pings:
            fh.write(p.to_json())
            fh.write("\n")
            n += 1
    return n


def read_feed(path: str | Path) -> tuple[PingColumns, Counter]:
    """Parse a JSONL feed line by line; malformed lines are skipped and counted."""
    counts: Counter = Counter()
    cols: dict[str, list] = {k: [] for k in ("vid", "rid", "ts", "lat", "lon", "speed")}
    try:
        fh = open(path)
    except OSError as exc:
        raise InputError(f"cannot open feed {path}: {exc}") from exc
    with fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                p = GpsPing(str(d["vid"]), str(d["rid"]), int(d["ts"]), float(d["lat"]),
                            float(d["lon"]), None if d.get("speed") is None else float(d["speed"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError):
                counts["malformed_lines"] += 1
                continue
            cols["vid"].append(p.vid)
            cols["rid"].append(p.rid)
            cols["ts"].append(p.ts)
            cols["lat"].append(p.lat)
            cols["lon"].append(p.lon)
            cols["speed"].append(np.nan if p.speed is None else p.speed)
    if counts["malformed_lines"]:
        log.warning("skipped %d malformed feed lines", counts["malformed_lines"])
    return PingColumns(np.array(cols["vid"], dtype=str), np.array(cols["rid"], dtype=str),
                       np.array(cols["ts"], dtype=np.int64), np.array(cols["lat"], dtype=float),
                       np.array(cols["lon"], dtype=float), np.array(cols["speed"], dtype=float)), counts


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in metres."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def estimate_arrival_time(ts, lat, lon, stop, max_dist: float = MAX_DIST_M):
    """(timestamp, distance) of the closest ping to ``stop``, or None.

    Pings must be time-sorted; equal minima resolve to the earliest ping.
    """
    ts = np.asarray(ts)
    if len(ts) == 0:
        return None
    d = haversine_m(np.asarray(lat), np.asarray(lon), stop.lat, stop.lon)
    i = int(np.argmin(d))
    if d[i] > max_dist:
        return None
    return int(ts[i]), float(d[i])


@dataclass
class Trip:
    vid: str
    rid: str
    ts: np.ndarray
    lat: np.ndarray
    lon: np.ndarray

    @property
    def date(self) -> str:
        return utc_date(int(self.ts[0]))


def utc_date(ts: int) -> str:
    return datetime.fromtimestamp(ts, timezone.utc).date().isoformat()


def segment_trips(cols: PingColumns, gap: int = TRIP_GAP_S, counts: Counter | None = None) -> list[Trip]:
    """Deduplicate by (vehicle, timestamp), sort, and split into trips.

    A trip ends when the vehicle's next ping is more than ``gap`` seconds
    later or carries a different route id.
    """
    counts = counts if counts is not None else Counter()
    if len(cols) == 0:
        return []
    order = np.lexsort((cols.ts, cols.vid))
    vid, rid, ts = cols.vid[order], cols.rid[order], cols.ts[order]
    lat, lon = cols.lat[order], cols.lon[order]
    dup = np.zeros(len(ts), dtype=bool)
    dup[1:] = (vid[1:] == vid[:-1]) & (ts[1:] == ts[:-1])
    counts["duplicate_pings"] += int(dup.sum())
    keep = ~dup
    vid, rid, ts, lat, lon = vid[keep], rid[keep], ts[keep], lat[keep], lon[keep]
    brk = np.ones(len(ts), dtype=bool)
    brk[1:] = (vid[1:] != vid[:-1]) | (rid[1:] != rid[:-1]) | (ts[1:] - ts[:-1] > gap)
    starts = np.flatnonzero(brk)
    ends = np.append(starts[1:], len(ts))
    return [Trip(str(vid[a]), str(rid[a]), ts[a:b], lat[a:b], lon[a:b]) for a, b in zip(starts, ends)]


@dataclass(frozen=True)
class TravelTimeSample:
    edge: str
    route: str
    vehicle: str
    date: str
    depart_ts: int
    depart_hour: float
    duration: float
    tail_dist: float
    head_dist: float


@dataclass
class TripArrivals:
    vid: str
    rid: str
    date: str
    arrivals: dict[str, int]  # stop id -> arrival epoch


@dataclass
class IngestResult:
    samples: list[TravelTimeSample]
    arrivals: list[TripArrivals]
    diagnostics: dict = field(default_factory=dict)


def extract_travel_times(trips: list[Trip], g: TransitGraph, counts: Counter | None = None,
                         max_dist: float = MAX_DIST_M) -> tuple[list[TravelTimeSample], list[TripArrivals]]:
    counts = counts if counts is not None else Counter()
    samples: list[TravelTimeSample] = []
    arrivals: list[TripArrivals] = []
    stop_xy = {}
    dist_sum = 0.0
    for trip in trips:
        route = g.routes.get(trip.rid)
        if route is None:
            counts["unmatched_trips"] += 1
            continue
        if trip.rid not in stop_xy:
            stop_xy[trip.rid] = (np.array([g.stops[s].lat for s in route.stops]),
                                 np.array([g.stops[s].lon for s in route.stops]))
        slat, slon = stop_xy[trip.rid]
        d = haversine_m(trip.lat[:, None], trip.lon[:, None], slat[None, :], slon[None, :])
        best = np.argmin(d, axis=0)  # first occurrence = earliest ping
        dmin = d[best, np.arange(len(route.stops))]
        ok = dmin <= max_dist
        counts["trips"] += 1
        counts["stop_visits"] += len(ok)
        counts["stop_visits_resolved"] += int(ok.sum())
        counts["stop_visits_discarded_far"] += int((~ok).sum())
        counts["trips_fully_resolved"] += int(ok.all())
        dist_sum += float(dmin[ok].sum())
        t_arr = trip.ts[best]
        date = trip.date
        arrivals.append(TripArrivals(trip.vid, trip.rid, date,
                                     {route.stops[i]: int(t_arr[i]) for i in np.flatnonzero(ok)}))
        for i in range(len(route.stops) - 1):
            if not (ok[i] and ok[i + 1]):
                continue
            dur = float(t_arr[i + 1] - t_arr[i])
            if dur <= 0:
                counts["non_monotone_dropped"] += 1
                continue
            t0 = int(t_arr[i])
            samples.append(TravelTimeSample(
                edge_id(route.stops[i], route.stops[i + 1]), trip.rid, trip.vid, date, t0,
                (t0 % 86400) / 3600.0, dur, float(dmin[i]), float(dmin[i + 1])))
    counts["_dist_sum"] = dist_sum
    samples.sort(key=lambda s: (s.depart_ts, s.edge, s.vehicle))
    return samples, arrivals


def ingest(pings: PingColumns | Iterable[GpsPing], g: TransitGraph,
           counts: Counter | None = None, max_dist: float = MAX_DIST_M) -> IngestResult:
    """Full pipeline from pings to samples, trip arrivals and diagnostics."""
    counts = Counter(counts or {})
    cols = pings if isinstance(pings, PingColumns) else PingColumns.from_pings(pings)
    counts["pings"] += len(cols)
    known = np.isin(cols.rid, np.array(sorted(g.routes), dtype=str))
    counts["unmatched_route_pings"] += int((~known).sum())
    if not known.all():
        cols = PingColumns(cols.vid[known], cols.rid[known], cols.ts[known], cols.lat[known],
                           cols.lon[known], None if cols.speed is None else cols.speed[known])
    trips = segment_trips(cols, counts=counts)
    samples, arrivals = extract_travel_times(trips, g, counts, max_dist)
    resolved = counts["stop_visits_resolved"]
    dist_sum = counts.pop("_dist_sum", 0.0)
    diag = {k: int(v) for k, v in sorted(counts.items())}
    diag["samples"] = len(samples)
    diag["coverage_fraction"] = counts["trips_fully_resolved"] / counts["trips"] if counts["trips"] else 0.0
    diag["stop_resolution_fraction"] = resolved / counts["stop_visits"] if counts["stop_visits"] else 0.0
    diag["mean_min_distance_m"] = dist_sum / resolved if resolved else float("nan")
    return IngestResult(samples, arrivals, diag)


def hourly_samples(samples: Iterable[TravelTimeSample], edge: str) -> list[list[TravelTimeSample]]:
    bins: list[list[TravelTimeSample]] = [[] for _ in range(24)]
    for s in samples:
        if s.edge == edge:
            bins[min(int(math.floor(s.depart_hour)), 23)].append(s)
    return bins


SAMPLE_FIELDS = [f for f in TravelTimeSample.__dataclass_fields__]


def write_samples_csv(samples: Iterable[TravelTimeSample], path: str | Path) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SAMPLE_FIELDS)
        for s in samples:
            d = asdict(s)
            w.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in SAMPLE_FIELDS])
            n += 1
    return n


def read_samples_csv(path: str | Path) -> list[TravelTimeSample]:
    out = []
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.append(TravelTimeSample(
                    row["edge"], row["route"], row["vehicle"], row["date"], int(row["depart_ts"]),
                    float(row["depart_hour"]), float(row["duration"]),
                    float(row["tail_dist"]), float(row["head_dist"])))
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"malformed samples CSV {path}: {exc}") from exc
    return out


def samples_by_edge(samples: Iterable[TravelTimeSample]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """edge -> (depart hours, durations), the training layout for the GP fitters."""
    acc: dict[str, tuple[list, list]] = {}
    for s in samples:
        xs, ys = acc.setdefault(s.edge, ([], []))
        xs.append(s.depart_hour)
        ys.append(s.duration)
    return {e: (np.array(x), np.array(y)) for e, (x, y) in sorted(acc.items())}
