"""Static-schedule versus stochastic planning on realized bus movements.

A journey is replayed on a set of trips (scheduled or realized): board
the first bus at or after the query time, ride to the transfer stop, take
the first bus of the second leg at or after alighting, and report the
arrival at the target.  The static planner picks the candidate with the
earliest scheduled arrival; the stochastic planner picks the top-ranked
candidate.  Both choices are then replayed on what actually happened.
"""
from __future__ import annotations

import bisect
import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import InputError
from .graph import PathCandidate, TransitGraph, enumerate_paths
from .planner import EtaFeed, PlannerConfig, hour_of_day, ranked_paths

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- schedule

@dataclass(frozen=True)
class ScheduleRow:
    route_id: str
    trip_id: str
    stop_id: str
    arrival: int  # seconds after midnight


def _hms(text: str) -> int:
    try:
        h, m, s = (int(x) for x in text.split(":"))
    except ValueError:
        raise InputError(f"bad HH:MM:SS time {text!r}") from None
    if not (0 <= m < 60 and 0 <= s < 60 and h >= 0):
        raise InputError(f"bad HH:MM:SS time {text!r}")
    return 3600 * h + 60 * m + s


def _fmt_hms(sec: int) -> str:
    sec = int(round(sec))
    return f"{sec // 3600:02d}:{sec % 3600 // 60:02d}:{sec % 60:02d}"


def read_schedule(path: str | Path) -> list[ScheduleRow]:
    """CSV with columns route_id, trip_id, stop_id, arrival (HH:MM:SS)."""
    try:
        with open(path, newline="") as fh:
            return [ScheduleRow(r["route_id"], r["trip_id"], r["stop_id"], _hms(r["arrival"]))
                    for r in csv.DictReader(fh)]
    except (OSError, KeyError) as exc:
        raise InputError(f"malformed schedule {path}: {exc}") from exc


def write_schedule(rows: Iterable[ScheduleRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["route_id", "trip_id", "stop_id", "arrival"])
        for r in rows:
            w.writerow([r.route_id, r.trip_id, r.stop_id, _fmt_hms(r.arrival)])


def schedule_from_nominal(g: TransitGraph, departures: Mapping[str, Iterable[float]],
                          nominal: Mapping[str, float]) -> list[ScheduleRow]:
    """Timetable from per-route departure times and nominal edge durations."""
    rows = []
    for rid in sorted(g.routes):
        stops = g.routes[rid].stops
        for k, dep in enumerate(departures.get(rid, ())):
            t = float(dep)
            rows.append(ScheduleRow(rid, f"{rid}_{k:03d}", stops[0], int(round(t))))
            for a, b in zip(stops, stops[1:]):
                try:
                    t += nominal[f"{a}->{b}"]
                except KeyError:
                    raise InputError(f"no nominal duration for edge {a}->{b}") from None
                rows.append(ScheduleRow(rid, f"{rid}_{k:03d}", b, int(round(t))))
    return rows


# ---------------------------------------------------------------- journey replay

@dataclass
class TripTimes:
    route: str
    key: str
    times: dict[str, float]  # stop -> epoch


class JourneyIndex:
    """Per (stop, route) sorted arrivals over a set of trips."""

    def __init__(self, trips: Iterable[TripTimes]):
        self.trips = list(trips)
        self._at: dict[tuple[str, str], tuple[list[float], list[int]]] = defaultdict(lambda: ([], []))
        rows = defaultdict(list)
        for i, tr in enumerate(self.trips):
            for stop, t in tr.times.items():
                rows[(stop, tr.route)].append((t, i))
        for key, items in rows.items():
            items.sort()
            self._at[key] = ([t for t, _ in items], [i for _, i in items])

    @classmethod
    def from_schedule(cls, rows: Iterable[ScheduleRow], day_epoch: float) -> "JourneyIndex":
        trips: dict[str, TripTimes] = {}
        for r in rows:
            tr = trips.setdefault(r.trip_id, TripTimes(r.route_id, r.trip_id, {}))
            tr.times[r.stop_id] = day_epoch + r.arrival
        return cls(trips.values())

    @classmethod
    def from_arrivals(cls, arrivals) -> "JourneyIndex":
        return cls(TripTimes(a.rid, f"{a.vid}@{a.date}@{min(a.arrivals.values(), default=0)}",
                             {s: float(t) for s, t in a.arrivals.items()}) for a in arrivals)

    def _board(self, stop: str, routes, after: float, alight: str):
        """Earliest trip on ``routes`` at ``stop`` at or after ``after`` that reaches ``alight``."""
        best = None
        for r in routes:
            times, idx = self._at.get((stop, r), ([], []))
            j = bisect.bisect_left(times, after)
            while j < len(times):
                tr = self.trips[idx[j]]
                if alight in tr.times and tr.times[alight] > times[j]:
                    if best is None or times[j] < best[0]:
                        best = (times[j], tr)
                    break
                j += 1
        return best

    def travel(self, cand: PathCandidate, tau0: float) -> float | None:
        """Arrival epoch at the target following ``cand`` from ``tau0``; None if impossible."""
        first = self._board(cand.source, sorted(cand.legs[0].routes), tau0, cand.legs[0].head)
        if first is None:
            return None
        _, trip = first
        if len(cand.legs) == 1:
            return trip.times[cand.target]
        v = cand.transfer_stop
        if trip.route in cand.legs[1].routes and cand.target in trip.times \
                and trip.times[cand.target] > trip.times[v]:
            return trip.times[cand.target]
        second = self._board(v, sorted(cand.legs[1].routes), trip.times[v], cand.target)
        if second is None:
            return None
        return second[1].times[cand.target]


def eta_feed_from_schedule(rows: Iterable[ScheduleRow], day_epoch: float,
                           default_headway: float = 600.0) -> EtaFeed:
    arrivals: dict[tuple[str, str], list[tuple[float, float]]] = defaultdict(list)
    for r in rows:
        arrivals[(r.stop_id, r.route_id)].append((day_epoch + r.arrival, 0.0))
    return EtaFeed(dict(arrivals), default_headway=default_headway)


# ---------------------------------------------------------------- comparison

@dataclass
class QueryOutcome:
    source: str
    target: str
    tau0: float
    day: str
    stochastic_path: str
    static_path: str
    stochastic_time: float
    static_time: float
    indices: dict[str, float]
    realized: dict[str, float]
    scheduled: dict[str, float]

    @property
    def savings(self) -> float:
        return self.static_time - self.stochastic_time

    @property
    def relative_savings(self) -> float:
        return self.savings / self.static_time


@dataclass
class SavingsReport:
    outcomes: list[QueryOutcome] = field(default_factory=list)
    skipped: int = 0

    @property
    def n(self) -> int:
        return len(self.outcomes)

    @property
    def beat_fraction(self) -> float:
        return float(np.mean([o.savings > 0 for o in self.outcomes])) if self.outcomes else float("nan")

    @property
    def mean_savings(self) -> float:
        return float(np.mean([o.savings for o in self.outcomes])) if self.outcomes else float("nan")

    @property
    def mean_relative_savings(self) -> float:
        return float(np.mean([o.relative_savings for o in self.outcomes])) if self.outcomes else float("nan")

    def curves(self) -> dict[str, dict[int, dict[str, float]]]:
        """label -> hour -> {model, empirical, schedule} likelihoods."""
        acc: dict[str, dict[int, dict[str, list]]] = defaultdict(
            lambda: defaultdict(lambda: {"model": [], "empirical": [], "schedule": []}))
        for o in self.outcomes:
            h = int(hour_of_day(o.tau0))
            best_real = min(o.realized.values())
            best_sched = min(o.scheduled.values())
            for label in o.indices:
                acc[label][h]["model"].append(o.indices[label])
                acc[label][h]["empirical"].append(float(o.realized.get(label) == best_real))
                acc[label][h]["schedule"].append(float(o.scheduled.get(label) == best_sched))
        return {lab: {h: {k: float(np.mean(v)) for k, v in d.items()} for h, d in sorted(hours.items())}
                for lab, hours in sorted(acc.items())}

    def summary(self) -> dict:
        return {"queries": self.n, "skipped": self.skipped, "beat_fraction": self.beat_fraction,
                "tie_fraction": float(np.mean([o.savings == 0 for o in self.outcomes])) if self.outcomes else float("nan"),
                "mean_savings_s": self.mean_savings, "mean_relative_savings": self.mean_relative_savings}

    def to_dict(self) -> dict:
        return {"summary": self.summary(),
                "curves": {lab: {str(h): v for h, v in hrs.items()} for lab, hrs in self.curves().items()},
                "queries": [{"source": o.source, "target": o.target, "tau0": o.tau0, "day": o.day,
                             "stochastic_path": o.stochastic_path, "static_path": o.static_path,
                             "stochastic_time": o.stochastic_time, "static_time": o.static_time,
                             "savings": o.savings, "indices": o.indices} for o in self.outcomes]}


def curves_cross(curves: dict, a: str, b: str) -> bool:
    """True when the model likelihood of ``a`` minus ``b`` changes sign across hours."""
    hours = sorted(set(curves.get(a, {})) & set(curves.get(b, {})))
    diff = [curves[a][h]["model"] - curves[b][h]["model"] for h in hours]
    return any(x > 0 for x in diff) and any(x < 0 for x in diff)


def evaluate_static_vs_stochastic(g: TransitGraph, models: Mapping, corr,
                                  schedule: list[ScheduleRow],
                                  realized: Mapping[str, JourneyIndex],
                                  day_epochs: Mapping[str, float],
                                  queries: Iterable[tuple[str, str, float]],
                                  cfg: PlannerConfig | None = None) -> SavingsReport:
    """Replay each query on every evaluation day.

    ``queries`` hold ``(source, target, seconds after midnight)``;
    ``realized`` maps day -> index built from that day's trip arrivals.
    """
    cfg = cfg or PlannerConfig()
    report = SavingsReport()
    queries = list(queries)
    for day in sorted(realized):
        epoch = day_epochs[day]
        sched_idx = JourneyIndex.from_schedule(schedule, epoch)
        eta = eta_feed_from_schedule(schedule, epoch, cfg.default_headway)
        for s, t, sec in queries:
            tau0 = epoch + sec
            cands = enumerate_paths(g, s, t, hub_only=cfg.hub_only)
            scheduled = {c.label: sched_idx.travel(c, tau0) for c in cands}
            actual = {c.label: realized[day].travel(c, tau0) for c in cands}
            plan = ranked_paths(g, s, t, tau0, models, corr, eta, cfg)
            sched_ok = {k: v for k, v in scheduled.items() if v is not None}
            if not plan.ranked or not sched_ok:
                report.skipped += 1
                continue
            static_label = min(sched_ok, key=lambda k: (sched_ok[k], k))
            stoch_label = plan.best.candidate.label
            if actual.get(static_label) is None or actual.get(stoch_label) is None:
                report.skipped += 1
                continue
            report.outcomes.append(QueryOutcome(
                s, t, tau0, day, stoch_label, static_label,
                actual[stoch_label] - tau0, actual[static_label] - tau0,
                {r.candidate.label: r.index for r in plan.ranked},
                {k: v - tau0 for k, v in actual.items() if v is not None},
                {k: v - tau0 for k, v in sched_ok.items()}))
    return report
