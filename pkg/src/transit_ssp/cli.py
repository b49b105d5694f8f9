"""Command-line entry point: ``python -m transit_ssp <command> ...``.

Exit codes: 0 ok, 2 bad input, 3 numerical failure.  Errors are printed
to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import Config, load_config, with_seed
from .correlation import CorrelationModel, ZeroCorrelation, build_eta_vectors, read_eta_store, write_eta_store
from .errors import InputError, NumericalError
from .evaluation import JourneyIndex, evaluate_static_vs_stochastic, read_schedule, _hms
from .feedsim import default_laws, simulate
from .gaussianity import (histogram, kl_divergence, ks_test, pp_points, qq_points,
                          relative_kld_experiment, standardize, write_points_csv)
from .gp import fit_edges
from .graph import enumerate_paths, load_network, save_network
from .ingest import ingest, read_feed, read_samples_csv, samples_by_edge, write_feed, write_samples_csv
from .online import OnlineEdgeModel, fit_state
from .planner import EtaFeed, ranked_paths
from .replay import replay_samples, write_metrics_csv
from .store import ModelStore, batch_from_dict, batch_to_dict, online_from_dict, online_to_dict
from .worlds import alternating_world, fig3_network

log = logging.getLogger("transit_ssp")


def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _network(args, cfg: Config):
    path = getattr(args, "network", None) or cfg.paths.network
    if not path:
        raise InputError("no network given (use --network or paths.network)")
    return load_network(path)


def _samples(args, cfg: Config):
    path = getattr(args, "samples", None) or cfg.paths.samples
    if not path:
        raise InputError("no samples CSV given (use --samples or paths.samples)")
    return read_samples_csv(path)


def _store(args, cfg: Config, g) -> ModelStore:
    return ModelStore(getattr(args, "store", None) or cfg.paths.store, g.content_hash())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float))


def _parse_time(text: str) -> float:
    """Epoch seconds from an integer, or an ISO-8601 timestamp (UTC if naive)."""
    try:
        return float(text)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        raise InputError(f"cannot parse time {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


# ---------------------------------------------------------------- commands

def cmd_simulate(args, cfg: Config) -> dict:
    out = _out(args)
    if args.world == "alternating":
        w = alternating_world(seed=cfg.seed)
        g, laws, sim = w.graph, w.laws, w.sim
        if args.days:
            sim.days = args.days
    else:
        g = fig3_network() if args.world == "fig3" else _network(args, cfg)
        laws = default_laws(g, seed=cfg.seed)
        sim = cfg.sim
        if args.days:
            sim.days = args.days
    cols, truth = simulate(g, laws, sim)
    n = write_feed(cols, out / "feed.jsonl")
    save_network(g, out / "network.json")
    with open(out / "truth.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["day", "route", "vehicle", "edge", "tail_arrival", "head_arrival", "duration"])
        for r in truth:
            wr.writerow([r.day, r.route, r.vehicle, r.edge, repr(r.tail_arrival),
                         repr(r.head_arrival), repr(r.duration)])
    laws_doc = [{"edge": l.edge, "mean_knots": l.mean_knots, "std_knots": l.std_knots, "corr": l.corr}
                for l in laws]
    _write_json(out / "laws.json", laws_doc)
    return {"pings": n, "traversals": len(truth), "feed": str(out / "feed.jsonl")}


def cmd_ingest(args, cfg: Config) -> dict:
    out = _out(args)
    g = _network(args, cfg)
    feed = args.feed or cfg.paths.feed
    if not feed:
        raise InputError("no feed given (use --feed or paths.feed)")
    cols, counts = read_feed(feed)
    res = ingest(cols, g, counts)
    n = write_samples_csv(res.samples, out / "samples.csv")
    diag = dict(res.diagnostics, seed=cfg.seed, config_hash=cfg.hash())
    _write_json(out / "diagnostics.json", diag)
    return {"samples": n, "malformed_lines": diag.get("malformed_lines", 0),
            "unmatched_route_pings": diag.get("unmatched_route_pings", 0)}


def cmd_fit(args, cfg: Config) -> dict:
    g = _network(args, cfg)
    samples = _samples(args, cfg)
    data = samples_by_edge(samples)
    for e in g.edges.values():
        data.setdefault(e.id, (np.zeros(0), np.zeros(0)))
    batch = fit_edges(data, cfg.gp)
    store = _store(args, cfg, g)
    if args.backend == "online":
        models = {e: OnlineEdgeModel(e, fit_state(data[e][0], data[e][1], m.params, cfg.online), cfg.online)
                  for e, m in batch.items()}
        path = store.write("models-online", online_to_dict(models), cfg.hash(), cfg.seed)
    else:
        path = store.write("models-batch", batch_to_dict(batch), cfg.hash(), cfg.seed)
    fallbacks = sorted(e for e, m in batch.items() if m.fallback)
    return {"edges": len(batch), "fallback_edges": fallbacks, "artifact": str(path)}


def cmd_corr(args, cfg: Config) -> dict:
    g = _network(args, cfg)
    vectors = build_eta_vectors(_samples(args, cfg))
    store = _store(args, cfg, g)
    store.dir.mkdir(parents=True, exist_ok=True)
    with store.lock:
        write_eta_store(vectors, store.dir / "eta.csv", store.dir / "eta_per_day.csv")
    return {"edges": len(vectors), "eta_store": str(store.dir / "eta.csv")}


def _load_models(args, cfg, g):
    store = _store(args, cfg, g)
    if args.backend == "online":
        models = online_from_dict(store.read("models-online")["payload"], cfg.online)
    else:
        models = batch_from_dict(store.read("models-batch")["payload"])
    eta_csv = store.dir / "eta.csv"
    corr = (CorrelationModel(read_eta_store(eta_csv, store.dir / "eta_per_day.csv"))
            if eta_csv.exists() else ZeroCorrelation())
    return models, corr


def cmd_plan(args, cfg: Config) -> dict:
    g = _network(args, cfg)
    if args.source == args.target:
        raise InputError("source and target must differ")
    models, corr = _load_models(args, cfg, g)
    eta_path = args.eta or cfg.paths.eta
    eta = EtaFeed.load(eta_path) if eta_path else EtaFeed(default_headway=cfg.planner.default_headway)
    if not enumerate_paths(g, args.source, args.target, cfg.planner.hub_only):
        raise InputError(f"no path with at most one transfer from {args.source} to {args.target}")
    t0 = time.perf_counter()
    plan = ranked_paths(g, args.source, args.target, _parse_time(args.depart), models, corr, eta,
                        cfg.planner)
    doc = dict(plan.to_dict(), backend=args.backend, wall_clock_s=time.perf_counter() - t0,
               seed=cfg.seed, config_hash=cfg.hash())
    if args.out:
        _write_json(_out(args) / "plan.json", doc)
    print(json.dumps(doc, indent=2, default=float))
    return {}


def cmd_replay_online(args, cfg: Config) -> dict:
    out = _out(args)
    samples = _samples(args, cfg)
    results = replay_samples(samples, edges=args.edge or None, online_cfg=cfg.online, fit_cfg=cfg.gp,
                             report_every=args.report_every, seed=cfg.seed)
    write_metrics_csv(results, out / "replay_metrics.csv")
    return {"edges": len(results), "metrics": str(out / "replay_metrics.csv")}


def cmd_evaluate(args, cfg: Config) -> dict:
    out = _out(args)
    g = _network(args, cfg)
    models, corr = _load_models(args, cfg, g)
    schedule = read_schedule(args.schedule)
    cols, counts = read_feed(args.feed or cfg.paths.feed)
    arrivals = ingest(cols, g, counts).arrivals
    by_day = defaultdict(list)
    for a in arrivals:
        by_day[a.date].append(a)
    realized = {d: JourneyIndex.from_arrivals(rows) for d, rows in by_day.items()}
    epochs = {d: datetime.fromisoformat(d).replace(tzinfo=timezone.utc).timestamp() for d in realized}
    try:
        queries = [(q["source"], q["target"], float(_hms(q["time"])))
                   for q in json.loads(Path(args.queries).read_text())]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"bad queries file {args.queries}: {exc}") from exc
    report = evaluate_static_vs_stochastic(g, models, corr, schedule, realized, epochs, queries,
                                           cfg.planner)
    _write_json(out / "evaluation.json", dict(report.to_dict(), seed=cfg.seed, config_hash=cfg.hash()))
    return report.summary()


def cmd_gaussianity(args, cfg: Config) -> dict:
    out = _out(args)
    groups: dict[str, list[float]] = defaultdict(list)
    for s in _samples(args, cfg):
        groups[f"{s.edge}@{int(s.depart_hour):02d}"].append(s.duration)
    groups = {k: np.array(v) for k, v in groups.items()
              if len(v) >= args.min_samples and np.ptp(v) > 0}
    if not groups:
        raise InputError(f"no edge-hour group has {args.min_samples} non-constant samples")
    report = relative_kld_experiment(groups, iterations=args.iterations, seed=cfg.seed)
    for key, vals in groups.items():
        z = standardize(vals)
        safe = key.replace("->", "_").replace("@", "_h")
        write_points_csv(out / f"qq_{safe}.csv", ["theoretical", "sample"], qq_points(z))
        write_points_csv(out / f"pp_{safe}.csv", ["theoretical_cdf", "empirical_cdf"], pp_points(z))
        h = histogram(z)
        write_points_csv(out / f"hist_{safe}.csv", ["left", "right", "count", "density", "normal_pdf"],
                         zip(h["left"], h["right"], h["count"], h["density"], h["normal_pdf"]))
    pvals = [e.ks.p_value for e in report.edges]
    doc = dict(report.to_dict(), median_ks_p=float(np.median(pvals)),
               ks_reject_fraction=float(np.mean([e.ks.reject for e in report.edges])),
               seed=cfg.seed, config_hash=cfg.hash())
    _write_json(out / "gaussianity.json", doc)
    return {"groups": len(groups), "median_ks_p": doc["median_ks_p"],
            "inside_fraction": report.inside_fraction}


COMMANDS = {"simulate": cmd_simulate, "ingest": cmd_ingest, "fit": cmd_fit, "corr": cmd_corr,
            "plan": cmd_plan, "replay-online": cmd_replay_online, "evaluate": cmd_evaluate,
            "gaussianity": cmd_gaussianity}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--backend", choices=["batch", "online"], default="batch")
    common.add_argument("--out", help="output directory")
    common.add_argument("--network", help="network JSON or GTFS-subset directory")
    common.add_argument("--store", help="model store root")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="transit_ssp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="synthetic GPS feed")
    s.add_argument("--world", choices=["network", "fig3", "alternating"], default="network")
    s.add_argument("--days", type=int)

    s = sub.add_parser("ingest", parents=[common], help="feed -> travel-time samples")
    s.add_argument("--feed")

    s = sub.add_parser("fit", parents=[common], help="fit per-edge GP models")
    s.add_argument("--samples")

    s = sub.add_parser("corr", parents=[common], help="hourly ETA vectors for correlation")
    s.add_argument("--samples")

    s = sub.add_parser("plan", parents=[common], help="rank candidate paths")
    s.add_argument("--from", dest="source", required=True)
    s.add_argument("--to", dest="target", required=True)
    s.add_argument("--depart", required=True, help="epoch seconds or ISO timestamp")
    s.add_argument("--eta", help="ETA feed JSON")

    s = sub.add_parser("replay-online", parents=[common], help="stream samples through the online backend")
    s.add_argument("--samples")
    s.add_argument("--edge", action="append")
    s.add_argument("--report-every", type=int, default=500)

    s = sub.add_parser("evaluate", parents=[common], help="static vs stochastic planner")
    s.add_argument("--schedule", required=True)
    s.add_argument("--feed", help="realized feed for the evaluation days")
    s.add_argument("--queries", required=True, help='JSON list of {"source","target","time"}')

    s = sub.add_parser("gaussianity", parents=[common], help="normality evidence per edge-hour")
    s.add_argument("--samples")
    s.add_argument("--iterations", type=int, default=10_000)
    s.add_argument("--min-samples", type=int, default=30)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = with_seed(load_config(args.config), args.seed)
        result = COMMANDS[args.command](args, cfg)
        if result:
            print(json.dumps(result, default=float))
        return 0
    except InputError as exc:
        print(json.dumps({"error": "input", "message": str(exc)}), file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(json.dumps({"error": "numerical", "message": str(exc),
                          "context": {k: str(v) for k, v in exc.context.items()}}), file=sys.stderr)
        return 3
