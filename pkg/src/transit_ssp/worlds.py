"""Small synthetic networks and an end-to-end pipeline over them."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .correlation import CorrelationModel, build_eta_vectors
from .evaluation import (JourneyIndex, SavingsReport, evaluate_static_vs_stochastic,
                         schedule_from_nominal)
from .feedsim import GroundTruthEdgeLaw, SimConfig, simulate, trip_schedule
from .gp import FitConfig, fit_edges
from .graph import RouteDef, Stop, TransitGraph, build_graph
from .ingest import ingest, samples_by_edge, utc_date
from .planner import PlannerConfig

log = logging.getLogger(__name__)


def fig3_network() -> TransitGraph:
    """Five stops, three routes: blue vs-v1-v2-vt, green v1-v3-vt, red v1-vt."""
    stops = [Stop("vs", "vs", 28.600, 77.200), Stop("v1", "v1", 28.610, 77.210),
             Stop("v2", "v2", 28.620, 77.230), Stop("v3", "v3", 28.600, 77.235),
             Stop("vt", "vt", 28.615, 77.250)]
    routes = [RouteDef("blue", ("vs", "v1", "v2", "vt")), RouteDef("green", ("v1", "v3", "vt")),
              RouteDef("red", ("v1", "vt"))]
    return build_graph(stops, routes)


def _plateau(base: float, peak: float, start: float, end: float, ramp: float = 1.0):
    return [(0.0, base), (start - ramp, base), (start, peak), (end, peak),
            (end + ramp, base), (23.99, base)]


@dataclass
class World:
    graph: TransitGraph
    laws: list[GroundTruthEdgeLaw]
    sim: SimConfig
    nominal: dict[str, float]
    queries: list[tuple[str, str, float]]
    labels: tuple[str, str] = ("via a", "via b")


def alternating_world(train_days: int = 20, eval_days: int = 10, seed: int = 7,
                      headway_min: float = 10.0) -> World:
    """Two transfer paths s-a-t and s-b-t; which is faster depends on the hour.

    Path A is quick off-peak but congested from 8 to 20 h; path B is
    steady.  The timetable uses A's free-flow times, so a schedule-based
    planner always prefers A.  A short a->b route makes both transfer
    stops hubs without adding candidates.
    """
    stops = [Stop("s", "s", 28.60, 77.20), Stop("a", "a", 28.63, 77.23),
             Stop("b", "b", 28.57, 77.23), Stop("t", "t", 28.60, 77.26)]
    routes = [RouteDef("SA", ("s", "a")), RouteDef("AT", ("a", "t")),
              RouteDef("SB", ("s", "b")), RouteDef("BT", ("b", "t")),
              RouteDef("AB", ("a", "b"))]
    g = build_graph(stops, routes)
    cv = 0.08
    laws = []
    for e, base, peak in (("s->a", 450.0, 1000.0), ("a->t", 450.0, 1000.0),
                          ("s->b", 600.0, 600.0), ("b->t", 600.0, 600.0), ("a->b", 400.0, 400.0)):
        mk = _plateau(base, peak, 8.0, 20.0)
        laws.append(GroundTruthEdgeLaw(e, mk, [(h, v * cv) for h, v in mk]))
    first, last = 5.0, 23.0
    n_trips = int(round((last - first) * 60 / headway_min)) + 1
    sim = SimConfig(days=train_days + eval_days, seed=seed, trips_per_route=n_trips,
                    first_departure_h=first, last_departure_h=last,
                    route_offsets={"AT": 540.0, "BT": 720.0})
    nominal = {"s->a": 450.0, "a->t": 450.0, "s->b": 600.0, "b->t": 600.0, "a->b": 400.0}
    queries = [("s", "t", h * 3600.0) for h in np.arange(7.0, 22.0, 0.5)]
    return World(g, laws, sim, nominal, queries)


@dataclass
class WorldRun:
    report: SavingsReport
    models: dict
    corr: CorrelationModel
    timings: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def run_world(world: World, train_days: int, fit_cfg: FitConfig | None = None,
              planner_cfg: PlannerConfig | None = None) -> WorldRun:
    """Simulate, ingest, fit on the first ``train_days`` days, evaluate on the rest."""
    timings = {}
    t0 = time.perf_counter()
    cols, _ = simulate(world.graph, world.laws, world.sim)
    timings["simulate_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    res = ingest(cols, world.graph)
    timings["ingest_s"] = time.perf_counter() - t0
    start = world.sim.start_epoch
    day_of = {}
    for d in range(world.sim.days):
        day_of[utc_date(start + 86400 * d)] = d
    train = [s for s in res.samples if day_of[s.date] < train_days]

    t0 = time.perf_counter()
    models = fit_edges(samples_by_edge(train), fit_cfg or FitConfig())
    corr = CorrelationModel(build_eta_vectors(train))
    timings["fit_s"] = time.perf_counter() - t0

    by_day: dict[str, list] = {}
    for a in res.arrivals:
        if day_of.get(a.date, -1) >= train_days:
            by_day.setdefault(a.date, []).append(a)
    realized = {d: JourneyIndex.from_arrivals(arr) for d, arr in by_day.items()}
    epochs = {d: start + 86400 * day_of[d] for d in realized}
    departures = {rid: trip_schedule(world.sim, rid) for rid in world.graph.routes}
    schedule = schedule_from_nominal(world.graph, departures, world.nominal)

    t0 = time.perf_counter()
    report = evaluate_static_vs_stochastic(world.graph, models, corr, schedule, realized,
                                           epochs, world.queries, planner_cfg)
    timings["evaluate_s"] = time.perf_counter() - t0
    return WorldRun(report, models, corr, timings, res.diagnostics)
