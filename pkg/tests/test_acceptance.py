"""Acceptance criteria 1-10, one test each; every test prints a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest
from scipy.stats import norm

from transit_ssp.evaluation import curves_cross
from transit_ssp.feedsim import GroundTruthEdgeLaw, SimConfig, default_laws, simulate
from transit_ssp.gaussianity import kl_baseline, ks_test
from transit_ssp.gp import EdgeModel, FitConfig, KernelParams, fit, kernel, mll, mll_and_grad
from transit_ssp.graph import RouteDef, Stop, build_graph
from transit_ssp.ingest import haversine_m, ingest
from transit_ssp.online import OnlineConfig, SkiState, make_grid, online_predict, online_update
from transit_ssp.planner import (ConstantEdgeModel, EtaFeed, PlannerConfig, optimality_indices,
                                 optimality_indices_raw, ranked_paths, select_shortest)
from transit_ssp.replay import replay_edge
from transit_ssp.worlds import alternating_world, fig3_network, run_world

DLAT = 1 / 111_195.0


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


def _mc_indices(mu, sd, draws, rng):
    wins = np.zeros(len(mu))
    for _ in range(draws // 250_000):
        T = rng.standard_normal((250_000, len(mu))) * sd + mu
        wins += np.bincount(T.argmin(axis=1), minlength=len(mu))
    return wins / draws


def _instances():
    rng = np.random.default_rng(2024)
    out = []
    for i in range(100):
        k = 2 + i % 5
        out.append((rng.uniform(500, 900, k), rng.uniform(10, 120, k)))
    return out


def test_criterion_1_optimality_index_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_mc = 0.0
    worst_phi = 0.0
    for mu, sd in _instances():
        C = optimality_indices(list(zip(mu, sd)))
        worst_mc = max(worst_mc, np.abs(C - _mc_indices(mu, sd, 1_000_000, rng)).max())
        if len(mu) == 2:
            c1 = norm.cdf((mu[1] - mu[0]) / math.hypot(*sd))
            worst_phi = max(worst_phi, abs(C[0] - c1))
    elapsed = time.perf_counter() - t0
    ok = worst_mc <= 0.01 and worst_phi <= 1e-4 and elapsed < 60
    report(1, ok, f"max|C-MC|={worst_mc:.4f} (<=0.01) max|C-Phi|={worst_phi:.2e} (<=1e-4) "
                  f"runtime={elapsed:.1f}s (<60s)")


def test_criterion_2_partition(report):
    sums = np.array([optimality_indices_raw(list(zip(mu, sd))).sum() for mu, sd in _instances()])
    ok = bool(np.all((sums >= 0.98) & (sums <= 1.02)))
    report(2, ok, f"raw sums in [{sums.min():.6f}, {sums.max():.6f}] (need [0.98, 1.02])")


SELECTION_TABLE = [
    # (rows of (C, sigma[, mu]), expected index, what is covered)
    ([(0.50, 40), (0.498, 20)], 1, "inside band: smaller sigma wins"),
    ([(0.500, 20), (0.4951, 10)], 1, "edge of band (0.99 * max) still inside"),
    ([(0.500, 20), (0.4949, 10)], 0, "just outside band"),
    ([(0.9, 40), (0.1, 1)], 0, "outside band: dominance regardless of sigma"),
    ([(0.3, 10), (0.3, 10), (0.3, 10)], 0, "exact ties: stable order"),
    ([(0.4, 10, 700), (0.4, 10, 650), (0.2, 5, 600)], 1, "sigma tie broken by mean"),
    ([(0.2, 5), (0.45, 30), (0.35, 1)], 1, "single candidate in band"),
]


def test_criterion_3_selection_rule(report):
    bad = [desc for rows, want, desc in SELECTION_TABLE if select_shortest(rows) != want]
    report(3, not bad, f"{len(SELECTION_TABLE) - len(bad)}/{len(SELECTION_TABLE)} table rows" +
           (f"; failing: {bad}" if bad else ""))


def _dense(p, X, y, t):
    n = len(X)
    K = np.array([[p.signal_var * math.exp(-0.5 * ((a - b) / p.length_scale) ** 2) for b in X] for a in X])
    C = K + p.noise_var * np.eye(n)
    Ci = np.linalg.inv(C)
    m = y.mean()
    ll = -0.5 * (y - m) @ Ci @ (y - m) - 0.5 * np.linalg.slogdet(C)[1] - 0.5 * n * math.log(2 * math.pi)
    Ks = np.array([[p.signal_var * math.exp(-0.5 * ((a - b) / p.length_scale) ** 2) for b in X] for a in t])
    return ll, m + Ks @ Ci @ (y - m)


def _draw(p, n, rng, base=600.0):
    X = np.sort(rng.uniform(0, 24, n))
    f = np.linalg.cholesky(kernel(p, X) + 1e-8 * np.eye(n)) @ rng.standard_normal(n)
    return X, base + f + rng.normal(0, math.sqrt(p.noise_var), n)


def test_criterion_4_gp_correctness(report):
    rng = np.random.default_rng(4)
    dense_err = 0.0
    for n in (5, 20, 50):
        p = KernelParams(rng.uniform(100, 2000), rng.uniform(0.5, 5), rng.uniform(10, 300))
        X, y = _draw(p, n, rng)
        t = np.linspace(0, 24, 25)
        ll, mean = _dense(p, X, y, t)
        pm, _ = EdgeModel("e", p, X, y, float(y.mean())).posterior(t)
        dense_err = max(dense_err, abs(mll(p, X, y) - ll) / abs(ll), np.abs(pm - mean).max() / np.abs(mean).max())

    true = KernelParams(900.0, 1.5, 100.0)
    logs = []
    for r in range(10):
        X, y = _draw(true, 500, np.random.default_rng(100 + r))
        logs.append(fit(X, y, FitConfig(seed=r)).params.to_log())
    dev = np.abs(np.median(np.array(logs), axis=0) - true.to_log())

    X, y = _draw(true, 40, rng)
    theta = true.to_log() + 0.3
    _, g = mll_and_grad(theta, X, y)
    h = 1e-5
    fd = np.array([(mll_and_grad(theta + h * e, X, y)[0] - mll_and_grad(theta - h * e, X, y)[0]) / (2 * h)
                   for e in np.eye(3)])
    grad_err = float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)))

    ok = dense_err <= 1e-8 and np.all(dev <= math.log(1.2)) and grad_err <= 1e-4
    report(4, ok, f"dense rel err={dense_err:.1e} (<=1e-8); median |dlog theta| over 10 replicates "
                  f"(sf2, l, sn2)={np.round(dev, 3).tolist()} (<=log1.2={math.log(1.2):.3f}); "
                  f"FD grad rel err={grad_err:.1e} (<=1e-4)")


def test_criterion_5_online_batch_equivalence(report):
    rng = np.random.default_rng(5)
    p = KernelParams(900.0, 1.5, 100.0)
    cfg = OnlineConfig(m=64, r=64, refresh_every=0)
    g = make_grid(64)
    X = rng.choice(g, 400)
    y = 600 + 40 * np.sin(X / 2) + rng.normal(0, 10, 400)
    s = SkiState.empty(p, cfg)
    for a, b in zip(X, y):
        online_update(s, a, b, cfg)
    md, _ = EdgeModel("e", p, X, y, float(y.mean())).posterior(g)
    on_grid = float(np.max(np.abs(online_predict(s, g)[0] - md) / np.abs(md)))

    p2 = KernelParams(900.0, 2.0, 100.0)
    cfg2 = OnlineConfig(refresh_every=0)
    X2 = rng.uniform(0, 24, 1000)
    y2 = 600 + 30 * np.sin(X2 / 3) + 20 * np.cos(X2) + rng.normal(0, 10, 1000)
    s2 = SkiState.empty(p2, cfg2)
    for a, b in zip(X2, y2):
        online_update(s2, a, b, cfg2)
    q = np.linspace(0, 24, 2001)
    md2, _ = EdgeModel("e", p2, X2, y2, float(y2.mean())).posterior(q)
    ms2, _ = online_predict(s2, q)
    rel_rmse = float(np.sqrt(np.mean((ms2 - md2) ** 2)) / np.sqrt(np.mean((md2 - md2.mean()) ** 2)))
    ok = on_grid <= 1e-6 and rel_rmse <= 0.02
    report(5, ok, f"on-grid max rel err={on_grid:.1e} (<=1e-6); off-grid RMSE / signal RMSE="
                  f"{rel_rmse:.1e} (<=0.02)")


def test_criterion_6_constant_time_updates(report):
    rng = np.random.default_rng(6)
    n = 13_200  # 5% seeds the fit, 20% of the rest is held out, ~10^4 are streamed
    t = np.sort(rng.uniform(0, 60 * 86400, n))
    h = (t % 86400) / 3600
    y = 500 + 80 * np.sin(h / 24 * 2 * np.pi) + rng.normal(0, 25, n)
    t0 = time.perf_counter()
    res = replay_edge(t, h, y, "e", OnlineConfig(), report_every=1000)
    total = time.perf_counter() - t0
    ut = res.update_times
    at_1k = float(np.median(ut[500:1500]))
    at_10k = float(np.median(ut[9000:10000]))
    ok = res.n_stream >= 10_000 and at_10k <= 2 * at_1k and total < 60
    report(6, ok, f"median update {at_1k * 1e3:.3f} ms at n~1e3, {at_10k * 1e3:.3f} ms at n~1e4 "
                  f"(ratio {at_10k / at_1k:.2f} <= 2); replay of {res.n_stream} points {total:.1f}s (<60s)")


def test_criterion_7_end_to_end_world(report):
    t0 = time.perf_counter()
    run = run_world(alternating_world(), train_days=20)
    elapsed = time.perf_counter() - t0
    rep = run.report
    cross = curves_cross(rep.curves(), "via a", "via b")
    ok = cross and rep.beat_fraction >= 0.8 and rep.mean_savings > 0 and elapsed < 300
    report(7, ok, f"curves cross={cross}; beat fraction={rep.beat_fraction:.3f} (>=0.8) over {rep.n} "
                  f"queries; mean savings={rep.mean_savings:.0f}s ({100 * rep.mean_relative_savings:.0f}%) "
                  f"(>0); runtime={elapsed:.0f}s (<300s)")


def _brute_arrival(ts, lat, lon, stop):
    best = None
    for t, a, o in zip(ts, lat, lon):
        d = float(haversine_m(a, o, stop.lat, stop.lon))
        if best is None or d < best[1]:
            best = (int(t), d)
    return best if best[1] <= 100.0 else None


def test_criterion_8_ingestion_rules(report):
    g = fig3_network()
    cfg = SimConfig(days=2, seed=8, trips_per_route=24)
    cols, truth = simulate(g, default_laws(g, seed=8), cfg)
    res = ingest(cols, g)
    truth_by = {(r.vehicle, r.edge, int(r.tail_arrival) // 86400): r.duration for r in truth}
    errs = [abs(s.duration - truth_by[(s.vehicle, s.edge, s.depart_ts // 86400)]) for s in res.samples]
    dur_ok = len(res.samples) == len(truth) and max(errs) <= cfg.ping_period

    # argmin rule against a brute-force loop on a sample of trips
    argmin_ok = True
    for a in res.arrivals[:20]:
        m = (cols.vid == a.vid) & (np.abs(cols.ts - min(a.arrivals.values())) < 6 * 3600)
        for stop, ts in a.arrivals.items():
            sel = m & (cols.ts <= max(a.arrivals.values()) + 60)
            b = _brute_arrival(cols.ts[sel], cols.lat[sel], cols.lon[sel], g.stops[stop])
            argmin_ok &= b is not None and b[0] == ts

    # 100 m rule: a straight line north with the middle stop moved east off the road
    def line_with(offset_m):
        stops = [Stop("s0", "s0", 10.0, 20.0), Stop("s1", "s1", 10.0 + 2000 * DLAT, 20.0 + offset_m * DLAT),
                 Stop("s2", "s2", 10.0 + 4000 * DLAT, 20.0), Stop("s3", "s3", 10.0 + 6000 * DLAT, 20.0)]
        return build_graph(stops, [RouteDef("R", ("s0", "s1", "s2", "s3"))])
    laws = [GroundTruthEdgeLaw(e, [(0, 300.0), (23.99, 300.0)], [(0, 1e-6), (23.99, 1e-6)])
            for e in ("s0->s1", "s1->s2", "s2->s3")]
    feed, _ = simulate(line_with(0.0), laws, SimConfig(trips_per_route=10))
    near = {s.edge for s in ingest(feed, line_with(60.0)).samples}
    far = ingest(feed, line_with(150.0))
    discard_ok = (near == {"s0->s1", "s1->s2", "s2->s3"}
                  and {s.edge for s in far.samples} == {"s2->s3"}
                  and far.diagnostics["stop_visits_discarded_far"] == 10)
    ok = dur_ok and argmin_ok and discard_ok
    report(8, ok, f"{len(res.samples)}/{len(truth)} traversals recovered, max |duration - truth|="
                  f"{max(errs):.1f}s (<=10s); argmin matches brute force={argmin_ok}; "
                  f"100 m rule (60 m kept, 150 m discarded)={discard_ok}")


def test_criterion_9_appendix_statistics(report):
    rng = np.random.default_rng(9)
    p = np.array([ks_test(rng.standard_normal(10_000)).p_value for _ in range(200)])
    med = float(np.median(p))
    means = [float(kl_baseline(n, 10_000, rng).mean()) for n in (100, 1000, 10_000)]
    ok = 0.3 <= med <= 0.7 and 0.015 <= means[0] <= 0.08 and means[0] > means[1] > means[2]
    report(9, ok, f"median KS p over 200 trials={med:.3f} (in [0.3, 0.7]); KL baseline means "
                  f"n=100/1000/10000 = {means[0]:.4f}/{means[1]:.4f}/{means[2]:.5f} "
                  f"(first in [0.015, 0.08], decreasing)")


def _random_graph(rng, n):
    ids = [f"n{i}" for i in range(n)]
    stops = [Stop(s, s, 10.0 + rng.uniform(0, 0.05), 20.0 + rng.uniform(0, 0.05)) for s in ids]
    routes = []
    for k in range(int(rng.integers(2, 7))):
        seq = list(rng.choice(ids, size=int(rng.integers(2, min(n, 6) + 1)), replace=False))
        routes.append(RouteDef(f"r{k}", tuple(seq)))
    return build_graph(stops, routes)


def test_criterion_10_deterministic_limit(report):
    rng = np.random.default_rng(10)
    cfg = PlannerConfig(default_headway=0.0, hub_only=False)
    done = mismatches = 0
    while done < 50:
        g = _random_graph(rng, int(rng.integers(4, 21)))
        w = {e.id: float(rng.integers(60, 900)) for e in g.edges.values()}
        models = {e: ConstantEdgeModel(e, v, 1e-6) for e, v in w.items()}
        # brute force over all paths with at most two edges
        best: dict[tuple[str, str], float] = {}
        for e in g.edges.values():
            best[(e.tail, e.head)] = min(best.get((e.tail, e.head), math.inf), w[e.id])
        for e1 in g.edges.values():
            for e2 in g.edges.values():
                if e1.head == e2.tail and e1.tail != e2.head:
                    k = (e1.tail, e2.head)
                    best[k] = min(best.get(k, math.inf), w[e1.id] + w[e2.id])
        pairs = sorted(best)
        s, t = pairs[int(rng.integers(len(pairs)))]
        plan = ranked_paths(g, s, t, 36_000.0, models, eta=EtaFeed(default_headway=0.0), cfg=cfg)
        got = sum(w[e] for e in plan.best.candidate.edge_ids())
        mismatches += got != best[(s, t)]
        done += 1
    report(10, mismatches == 0, f"{done - mismatches}/{done} random graphs (<=20 nodes) match the "
                                f"brute-force summed-weight shortest path")
