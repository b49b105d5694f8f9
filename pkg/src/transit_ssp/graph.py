"""Transit network graph: stops, route-collapsed directed edges, hubs.

Parallel routes serving the same ordered stop pair share one ``Edge``;
the edge remembers which routes run over it so transfer bookkeeping and
ETA lookups still work.  Candidate paths have at most one transfer.
"""
from __future__ import annotations

import csv
import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import InputError


@dataclass(frozen=True)
class Stop:
    id: str
    name: str
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise InputError(f"stop {self.id!r}: latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise InputError(f"stop {self.id!r}: longitude {self.lon} out of range")


@dataclass(frozen=True)
class RouteDef:
    id: str
    stops: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "stops", tuple(self.stops))
        if len(self.stops) < 2:
            raise InputError(f"route {self.id!r} needs at least two stops")
        for a, b in zip(self.stops, self.stops[1:]):
            if a == b:
                raise InputError(f"route {self.id!r} repeats stop {a!r} consecutively")


@dataclass(frozen=True)
class Edge:
    tail: str
    head: str
    routes: frozenset[str]

    @property
    def key(self) -> tuple[str, str]:
        return (self.tail, self.head)

    @property
    def id(self) -> str:
        return edge_id(self.tail, self.head)


def edge_id(tail: str, head: str) -> str:
    """String form of an edge used in files and model stores."""
    return f"{tail}->{head}"


def parse_edge_id(text: str) -> tuple[str, str]:
    tail, sep, head = text.partition("->")
    if not sep or not tail or not head:
        raise InputError(f"malformed edge id {text!r}")
    return tail, head


@dataclass(frozen=True)
class PathCandidate:
    """One or two legs; ``transfer_stop`` is the joint stop of a 2-leg path."""

    legs: tuple[Edge, ...]
    transfer_stop: str | None = None

    def __post_init__(self):
        if len(self.legs) not in (1, 2):
            raise InputError("a candidate has one or two legs")
        if len(self.legs) == 2:
            a, b = self.legs
            if a.head != b.tail:
                raise InputError(f"legs {a.id} and {b.id} are not contiguous")
            if self.transfer_stop != a.head:
                raise InputError("transfer stop must join the two legs")
        elif self.transfer_stop is not None:
            raise InputError("a single-leg candidate has no transfer stop")

    @property
    def source(self) -> str:
        return self.legs[0].tail

    @property
    def target(self) -> str:
        return self.legs[-1].head

    @property
    def through_routes(self) -> frozenset[str]:
        """Routes serving every leg (riding through without changing bus)."""
        routes = self.legs[0].routes
        for leg in self.legs[1:]:
            routes = routes & leg.routes
        return routes

    @property
    def label(self) -> str:
        return "direct" if self.transfer_stop is None else f"via {self.transfer_stop}"

    def edge_ids(self) -> list[str]:
        return [leg.id for leg in self.legs]


@dataclass
class TransitGraph:
    stops: dict[str, Stop]
    routes: dict[str, RouteDef]
    edges: dict[tuple[str, str], Edge]
    succ: dict[str, set[str]] = field(default_factory=dict)
    pred: dict[str, set[str]] = field(default_factory=dict)
    hubs: frozenset[str] = frozenset()

    def edge(self, tail: str, head: str) -> Edge:
        try:
            return self.edges[(tail, head)]
        except KeyError:
            raise InputError(f"no edge {edge_id(tail, head)}") from None

    def has_edge(self, tail: str, head: str) -> bool:
        return (tail, head) in self.edges

    def edge_by_id(self, text: str) -> Edge:
        return self.edge(*parse_edge_id(text))

    def is_hub(self, stop_id: str) -> bool:
        return stop_id in self.hubs

    def route_edges(self, route_id: str) -> list[Edge]:
        route = self.routes[route_id]
        return [self.edges[(a, b)] for a, b in zip(route.stops, route.stops[1:])]

    def content_hash(self) -> str:
        """Stable digest of stops and routes; keys the model store."""
        payload = json.dumps(network_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def build_graph(stops: Iterable[Stop], routes: Iterable[RouteDef]) -> TransitGraph:
    stop_map: dict[str, Stop] = {}
    for stop in stops:
        if stop.id in stop_map:
            raise InputError(f"duplicate stop id {stop.id!r}")
        stop_map[stop.id] = stop

    route_map: dict[str, RouteDef] = {}
    edge_routes: dict[tuple[str, str], set[str]] = defaultdict(set)
    for route in routes:
        if route.id in route_map:
            raise InputError(f"duplicate route id {route.id!r}")
        unknown = [s for s in route.stops if s not in stop_map]
        if unknown:
            raise InputError(f"route {route.id!r} references unknown stops {unknown}")
        route_map[route.id] = route
        for a, b in zip(route.stops, route.stops[1:]):
            edge_routes[(a, b)].add(route.id)

    edges = {key: Edge(key[0], key[1], frozenset(rs)) for key, rs in sorted(edge_routes.items())}
    succ: dict[str, set[str]] = {s: set() for s in stop_map}
    pred: dict[str, set[str]] = {s: set() for s in stop_map}
    for a, b in edges:
        succ[a].add(b)
        pred[b].add(a)
    g = TransitGraph(stop_map, route_map, edges, succ, pred)
    g.hubs = frozenset(classify_hubs(g))
    return g


def classify_hubs(g: TransitGraph) -> set[str]:
    """Stops where traffic arrives from or leaves towards several directions.

    A stop is a non-hub iff it has exactly one distinct in-neighbour and
    exactly one distinct out-neighbour.  Sources, sinks and isolated stops
    count as hubs so they are never pruned as transfer points.
    """
    hubs = set()
    for s in g.stops:
        ins = g.pred.get(s, set()) - {s}
        outs = g.succ.get(s, set()) - {s}
        if not (len(ins) == 1 and len(outs) == 1):
            hubs.add(s)
    return hubs


def enumerate_paths(g: TransitGraph, s: str, t: str, hub_only: bool = True) -> list[PathCandidate]:
    """Direct edge plus every two-leg path ``s -> v -> t``.

    With ``hub_only`` a two-leg path is kept when ``v`` is a hub or when a
    single route serves both legs (riding through ``v`` needs no transfer
    decision).  Output order: direct first, then by transfer stop id.
    """
    for stop in (s, t):
        if stop not in g.stops:
            raise InputError(f"unknown stop {stop!r}")
    if s == t:
        raise InputError("source and target must differ")

    out = []
    if g.has_edge(s, t):
        out.append(PathCandidate((g.edges[(s, t)],)))
    for v in sorted(g.succ[s] & g.pred[t]):
        if v in (s, t):
            continue
        first, second = g.edges[(s, v)], g.edges[(v, t)]
        if hub_only and v not in g.hubs and not (first.routes & second.routes):
            continue
        out.append(PathCandidate((first, second), transfer_stop=v))
    return out


def reachability_stats(g: TransitGraph) -> tuple[float, float]:
    """Mean fraction of other stops reachable with 0 and with <= 1 transfer."""
    n = len(g.stops)
    if n == 0:
        raise InputError("empty graph")
    if n == 1:
        return 0.0, 0.0
    direct_total = one_total = 0.0
    for s in g.stops:
        direct = g.succ[s] - {s}
        two = set(direct)
        for v in direct:
            two |= g.succ[v]
        two.discard(s)
        direct_total += len(direct) / (n - 1)
        one_total += len(two) / (n - 1)
    return direct_total / n, one_total / n


# ---------------------------------------------------------------- file formats

def network_to_dict(g: TransitGraph) -> dict:
    return {
        "stops": [
            {"id": s.id, "name": s.name, "lat": s.lat, "lon": s.lon}
            for s in sorted(g.stops.values(), key=lambda s: s.id)
        ],
        "routes": [
            {"id": r.id, "stops": list(r.stops)}
            for r in sorted(g.routes.values(), key=lambda r: r.id)
        ],
    }


def network_from_dict(data: dict) -> TransitGraph:
    try:
        stops = [Stop(str(s["id"]), str(s.get("name", s["id"])), float(s["lat"]), float(s["lon"]))
                 for s in data["stops"]]
        routes = [RouteDef(str(r["id"]), tuple(str(x) for x in r["stops"]))
                  for r in data.get("routes", [])]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed network document: {exc}") from exc
    return build_graph(stops, routes)


def save_network(g: TransitGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(g), indent=2))


def load_network(path: str | Path) -> TransitGraph:
    """Load a native JSON network or a GTFS-subset directory.

    A GTFS directory holds ``stops.txt`` (stop_id, stop_name, stop_lat,
    stop_lon) and ``route_stops.txt`` (route_id, stop_sequence, stop_id).
    """
    path = Path(path)
    if path.is_dir():
        return load_gtfs_subset(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read network {path}: {exc}") from exc
    return network_from_dict(data)


def load_gtfs_subset(directory: str | Path) -> TransitGraph:
    directory = Path(directory)
    try:
        with open(directory / "stops.txt", newline="") as fh:
            stops = [Stop(row["stop_id"], row.get("stop_name", row["stop_id"]),
                          float(row["stop_lat"]), float(row["stop_lon"]))
                     for row in csv.DictReader(fh)]
        seqs: dict[str, list[tuple[int, str]]] = defaultdict(list)
        with open(directory / "route_stops.txt", newline="") as fh:
            for row in csv.DictReader(fh):
                seqs[row["route_id"]].append((int(row["stop_sequence"]), row["stop_id"]))
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"malformed GTFS subset in {directory}: {exc}") from exc
    routes = [RouteDef(rid, tuple(s for _, s in sorted(seq))) for rid, seq in sorted(seqs.items())]
    return build_graph(stops, routes)
