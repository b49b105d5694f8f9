import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from transit_ssp.errors import InputError, IntegrationError
from transit_ssp.graph import PathCandidate, RouteDef, Stop, build_graph, enumerate_paths
from transit_ssp.planner import (ConstantEdgeModel, EtaFeed, Gaussian, PlannerConfig,
                                 optimality_indices, optimality_indices_raw, path_distribution,
                                 ranked_paths, replan, select_shortest, transfer_probability)
from transit_ssp.worlds import fig3_network


def models_for(g, table, default=(500.0, 400.0)):
    ids = [e.id for e in g.edges.values()]
    return {e: ConstantEdgeModel(e, *table.get(e, default)) for e in ids}


def mc_indices(mu, sd, draws=1_000_000, seed=0):
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((draws, len(mu))) * sd + mu
    return np.bincount(T.argmin(axis=1), minlength=len(mu)) / draws


def chain():
    # s -A-> v -B-> t, no through route
    return build_graph([Stop(x, x, 10.0 + i * 0.01, 20.0) for i, x in enumerate("svt")],
                       [RouteDef("A", ("s", "v")), RouteDef("B", ("v", "t"))])


class FixedCorr:
    def __init__(self, cov):
        self.cov = cov

    def edge_covariance(self, *a):
        return self.cov


# ---------------------------------------------------------------- path laws

def test_single_leg_is_edge_posterior():
    g = fig3_network()
    c = PathCandidate((g.edge("v1", "vt"),))
    d = path_distribution(c, 0.0, {"v1->vt": ConstantEdgeModel("v1->vt", 600.0, 225.0)})
    assert (d.mean, d.var) == (600.0, 225.0)


@pytest.mark.parametrize("cov,var", [(0.0, 325.0), (75.0, 475.0)])
def test_two_leg_additivity(cov, var):
    g = fig3_network()
    c = PathCandidate((g.edge("v1", "v2"), g.edge("v2", "vt")), "v2")
    models = {"v1->v2": ConstantEdgeModel("v1->v2", 300.0, 100.0),
              "v2->vt": ConstantEdgeModel("v2->vt", 420.0, 225.0)}
    d = path_distribution(c, 0.0, models, FixedCorr(cov))
    assert d.mean == 720.0 and d.var == pytest.approx(var)


def test_nonpositive_variance_floored():
    g = fig3_network()
    c = PathCandidate((g.edge("v1", "v2"), g.edge("v2", "vt")), "v2")
    models = {"v1->v2": ConstantEdgeModel("v1->v2", 300.0, 100.0),
              "v2->vt": ConstantEdgeModel("v2->vt", 420.0, 100.0)}
    d = path_distribution(c, 0.0, models, FixedCorr(-150.0))
    assert d.floored and d.var == pytest.approx(0.01 * 720.0**2)


def test_missing_model_is_input_error():
    g = fig3_network()
    with pytest.raises(InputError):
        path_distribution(PathCandidate((g.edge("v1", "vt"),)), 0.0, {})


# ---------------------------------------------------------------- optimality index

def test_two_identical():
    np.testing.assert_allclose(optimality_indices([(600, 30), (600, 30)]), [0.5, 0.5], atol=1e-9)


@pytest.mark.parametrize("mu,sd", [((600, 840), (15, 40)), ((600, 660), (45, 60))])
def test_two_path_closed_form(mu, sd):
    c1 = norm.cdf((mu[1] - mu[0]) / math.hypot(*sd))
    C = optimality_indices_raw(list(zip(mu, sd)))
    assert C[0] == pytest.approx(c1, abs=1e-6)
    assert C.sum() == pytest.approx(1.0, abs=1e-6)


def test_three_iid():
    np.testing.assert_allclose(optimality_indices([(700, 50)] * 3), [1 / 3] * 3, atol=0.005)


def test_five_random_against_monte_carlo():
    rng = np.random.default_rng(11)
    mu, sd = rng.uniform(500, 700, 5), rng.uniform(10, 80, 5)
    np.testing.assert_allclose(optimality_indices(list(zip(mu, sd))), mc_indices(mu, sd), atol=0.01)


def test_single_path_index_one():
    assert optimality_indices([(10.0, 1.0)])[0] == 1.0


def test_integration_error_on_coarse_grid():
    # two far-apart paths with very different spreads: 16 nodes miss the narrow one
    with pytest.raises(IntegrationError):
        optimality_indices([(0.0, 1.0), (0.5, 1e-4)], nodes=16, window=1.0)


def test_bad_moments_rejected():
    with pytest.raises(InputError):
        optimality_indices([(1.0, 0.0), (2.0, 1.0)])
    with pytest.raises(InputError):
        optimality_indices([])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(100, 2000), st.floats(5, 300)), min_size=2, max_size=6),
       st.floats(0.1, 10.0), st.floats(-500, 500))
def test_affine_invariance_and_sum(paths, a, b):
    C = optimality_indices_raw(paths)
    assert abs(C.sum() - 1.0) <= 0.02
    C2 = optimality_indices_raw([(a * m + b, a * s) for m, s in paths])
    np.testing.assert_allclose(C, C2, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(100, 2000), st.floats(5, 300)), min_size=2, max_size=5),
       st.floats(1.0, 500.0))
def test_slower_path_loses_index(paths, delta):
    C = optimality_indices_raw(paths)
    slower = [(paths[0][0] + delta, paths[0][1])] + paths[1:]
    assert optimality_indices_raw(slower)[0] <= C[0] + 1e-12


# ---------------------------------------------------------------- selection, transfer

@pytest.mark.parametrize("rows,expected", [
    ([(0.50, 40), (0.498, 20)], 1),
    ([(0.9, 40), (0.1, 1)], 0),
    ([(0.3, 10), (0.3, 10), (0.3, 10)], 0),
    ([(0.5, 10, 700), (0.5, 10, 650)], 1),
])
def test_select_shortest(rows, expected):
    assert select_shortest(rows) == expected


def test_select_shortest_empty():
    with pytest.raises(InputError):
        select_shortest([])


def test_transfer_probability_examples():
    assert transfer_probability(Gaussian(300, 100), Gaussian(300, 100)) == pytest.approx(0.5)
    assert transfer_probability(Gaussian(300, 0), Gaussian(360, 0)) == 1.0
    assert transfer_probability(Gaussian(360, 0), Gaussian(300, 0)) == 0.0
    assert transfer_probability(Gaussian(300, 400), Gaussian(360, 500)) == pytest.approx(norm.cdf(2.0))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1000), st.floats(0.1, 500), st.floats(0, 1000), st.floats(0.1, 500))
def test_transfer_complement(m1, v1, m2, v2):
    a, b = Gaussian(m1, v1), Gaussian(m2, v2)
    assert transfer_probability(a, b) + transfer_probability(b, a) == pytest.approx(1.0)


# ---------------------------------------------------------------- ETA-aware ranking

def test_direct_with_bus_in_120s():
    g = fig3_network()
    eta = EtaFeed({("v1", "red"): [(1120.0, 0.0)]})
    res = ranked_paths(g, "v1", "vt", 1000.0, models_for(g, {"v1->vt": (600.0, 225.0)}, (300.0, 100.0)),
                       eta=eta)
    direct = next(r for r in res.ranked if r.candidate.label == "direct")
    assert direct.mean == pytest.approx(720.0) and direct.std == pytest.approx(15.0)
    assert direct.dist.wait == pytest.approx(120.0)


def test_headway_fallback_is_half_headway():
    g = chain()
    models = {"s->v": ConstantEdgeModel("s->v", 300.0, 100.0), "v->t": ConstantEdgeModel("v->t", 400.0, 100.0)}
    cfg = PlannerConfig(default_headway=600.0, hub_only=False)
    res = ranked_paths(g, "s", "t", 0.0, models, cfg=cfg)
    d = res.best.dist
    assert d.mean == pytest.approx(300 + 300 + 300 + 400)
    assert d.var == pytest.approx(200.0)


def test_infeasible_bus_skipped():
    g = chain()
    models = {"s->v": ConstantEdgeModel("s->v", 600.0, 100.0), "v->t": ConstantEdgeModel("v->t", 400.0, 100.0)}
    eta = EtaFeed({("s", "A"): [(0.0, 0.0)], ("v", "B"): [(500.0, 0.0), (700.0, 0.0)]})
    res = ranked_paths(g, "s", "t", 0.0, models, eta=eta, cfg=PlannerConfig(hub_only=False))
    assert res.best.mean == pytest.approx(700.0 + 400.0, rel=1e-9)
    assert res.best.feasibility == pytest.approx(1.0, abs=1e-12)
    # every listed bus leaves before the rider can reach v
    eta2 = EtaFeed({("s", "A"): [(0.0, 0.0)], ("v", "B"): [(500.0, 0.0)]})
    res2 = ranked_paths(g, "s", "t", 0.0, models, eta=eta2, cfg=PlannerConfig(hub_only=False))
    assert res2.ranked == [] and res2.excluded == ["via v"] and res2.reason


def test_transfer_mixture_matches_monte_carlo():
    g = chain()
    models = {"s->v": ConstantEdgeModel("s->v", 600.0, 900.0), "v->t": ConstantEdgeModel("v->t", 400.0, 100.0)}
    eta = EtaFeed({("s", "A"): [(0.0, 0.0)], ("v", "B"): [(610.0, 0.0), (900.0, 0.0)]})
    d = ranked_paths(g, "s", "t", 0.0, models, eta=eta, cfg=PlannerConfig(hub_only=False)).best.dist
    rng = np.random.default_rng(0)
    arr = 600 + 30 * rng.standard_normal(400_000)
    dep = np.where(arr <= 610, 610.0, np.where(arr <= 900, 900.0, np.nan))
    tt = dep + 400 + 10 * rng.standard_normal(len(arr))
    assert d.feasibility == pytest.approx(np.mean(~np.isnan(dep)), abs=3e-3)
    assert d.mean == pytest.approx(np.nanmean(tt), rel=2e-3)
    assert d.std == pytest.approx(np.nanstd(tt), rel=1e-2)


def test_no_candidates_reason():
    g = chain()
    res = ranked_paths(g, "s", "t", 0.0, {})
    assert res.ranked == [] and "candidate" in res.reason


def test_eta_feed_roundtrip(tmp_path):
    eta = EtaFeed({("v", "B"): [(5.0, 1.0), (2.0, 0.5)]}, {"B": 300.0}, 450.0)
    back = EtaFeed.from_dict(eta.to_dict())
    assert back == eta and back.arrivals[("v", "B")][0] == (2.0, 0.5)
    with pytest.raises(InputError):
        EtaFeed.from_dict({"entries": [{"stop": "v", "route": "B", "arrivals": [1, 2], "stds": [1]}]})
    with pytest.raises(InputError):
        EtaFeed({("v", "B"): [(1.0, -1.0)]})


# ---------------------------------------------------------------- replanning

def _fig3_models(direct=600.0):
    return models_for(fig3_network(), {"vs->v1": (300.0, 100.0), "v1->vt": (direct, 400.0),
                                       "v1->v2": (350.0, 400.0), "v2->vt": (350.0, 400.0),
                                       "v1->v3": (360.0, 400.0), "v3->vt": (360.0, 400.0)})


def test_replan_at_destination():
    g = fig3_network()
    cur = enumerate_paths(g, "vs", "vt")[0]
    r = replan(g, cur, "vt", 0.0, _fig3_models())
    assert not r.switch and r.recommendation is None


def test_replan_idempotent():
    g = fig3_network()
    models = _fig3_models()
    plan = ranked_paths(g, "v1", "vt", 3600.0, models)
    r = replan(g, plan.best.candidate, "v1", 3600.0, models)
    assert not r.switch and r.recommendation.edge_ids() == plan.best.candidate.edge_ids()


def test_replan_switches_after_disruption():
    g = fig3_network()
    cur = PathCandidate((g.edge("vs", "v1"), g.edge("v1", "vt")), "v1")
    calm = replan(g, cur, "v1", 3600.0, _fig3_models())
    assert not calm.switch and calm.recommendation.label == "direct"
    disrupted = replan(g, cur, "v1", 3600.0, _fig3_models(direct=900.0))
    assert disrupted.switch and disrupted.recommendation.label in ("via v2", "via v3")


def test_replan_rejects_off_path_stop():
    g = fig3_network()
    cur = PathCandidate((g.edge("vs", "v1"), g.edge("v1", "vt")), "v1")
    with pytest.raises(InputError):
        replan(g, cur, "v3", 0.0, _fig3_models())


def test_fig3_three_candidates_against_monte_carlo():
    g = fig3_network()
    models = _fig3_models(direct=720.0)
    res = ranked_paths(g, "v1", "vt", 3600.0, models, cfg=PlannerConfig(default_headway=0.0))
    assert len(res.ranked) == 3
    C = np.array([r.index for r in res.ranked])
    assert C.sum() == pytest.approx(1.0, abs=1e-9)
    mu = np.array([r.mean for r in res.ranked])
    sd = np.array([r.std for r in res.ranked])
    np.testing.assert_allclose(C, mc_indices(mu, sd), atol=0.01)
