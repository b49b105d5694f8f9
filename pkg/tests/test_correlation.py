from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transit_ssp.correlation import (CorrelationModel, ZeroCorrelation, build_eta_vector,
                                     build_eta_vectors, clip_psd, hour_bin, pearson_corr,
                                     read_eta_store, write_eta_store)
from transit_ssp.errors import InputError
from transit_ssp.feedsim import SimConfig, default_laws, simulate_day
from transit_ssp.ingest import utc_date
from transit_ssp.worlds import fig3_network


@dataclass
class S:
    edge: str
    duration: float
    depart_hour: float
    date: str


def truth_samples(laws, days, seed, trips=72):
    """Samples straight from the generator's traversal records (no pings)."""
    g = fig3_network()
    cfg = SimConfig(days=days, seed=seed, trips_per_route=trips)
    out = []
    for d, ss in enumerate(np.random.SeedSequence(seed).spawn(days)):
        _, truth = simulate_day(g, laws, cfg, d, np.random.default_rng(ss))
        for r in truth:
            out.append(S(r.edge, r.duration, (r.tail_arrival % 86400) / 3600, utc_date(int(r.tail_arrival))))
    return out


def test_medians_and_fill():
    rows = [S("e", 100.0, 3.2, "d1"), S("e", 120.0, 3.7, "d1"), S("e", 300.0, 10.0, "d1")]
    v = build_eta_vector(rows, "e")
    assert v.medians[3] == 110.0
    assert v.counts.sum() == 3
    assert v.filled[5] and not v.filled[3]
    assert 110.0 < v.medians[5] < 300.0  # interpolated between bins 3 and 10
    with pytest.raises(InputError):
        build_eta_vector(rows, "other")


def test_pearson_oracle_and_degenerate():
    x = np.arange(24.0)
    assert pearson_corr(x, 2 * x + 1) == pytest.approx(1.0)
    assert pearson_corr(x, -x) == pytest.approx(-1.0)
    assert pearson_corr(x, np.full(24, 5.0)) == 0.0
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=50), rng.normal(size=50)
    assert pearson_corr(a, b) == pytest.approx(np.corrcoef(a, b)[0, 1], abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=30), st.data())
def test_pearson_bounded_symmetric(xs, data):
    ys = data.draw(st.lists(st.floats(-1e3, 1e3), min_size=len(xs), max_size=len(xs)))
    r = pearson_corr(xs, ys)
    assert -1.0 <= r <= 1.0
    assert r == pytest.approx(pearson_corr(ys, xs), abs=1e-12)


def test_identity_missing_and_symmetry():
    rows = [S("a", 100.0 + h, h + 0.5, "d") for h in range(24)] + \
           [S("b", 50.0 + 2 * h, h + 0.5, "d") for h in range(24)]
    cm = CorrelationModel(build_eta_vectors(rows))
    assert cm.correlation("a", 4, "a", 4).value == 1.0
    assert cm.correlation("a", 4, "zzz", 4).source == "missing"
    assert cm.correlation("a", 3, "b", 7) == cm.correlation("b", 7, "a", 3)
    # one day only: falls back to the 24-vector correlation
    est = cm.correlation("a", 3, "b", 3)
    assert est.source == "vector" and est.value == pytest.approx(1.0)
    assert cm.edge_covariance("a", "b", 3.2, 3.9, 10.0, 2.0) == pytest.approx(20.0)
    assert ZeroCorrelation().edge_covariance("a", "b", 1, 1, 5, 5) == 0.0


def test_constant_vector_is_degenerate():
    rows = [S("a", 100.0, h + 0.5, "d") for h in range(24)] + [S("b", 50.0 + h, h + 0.5, "d") for h in range(24)]
    est = CorrelationModel(build_eta_vectors(rows)).correlation("a", 2, "b", 2)
    assert est.value == 0.0 and est.source == "degenerate"


def test_hour_bin_wraps():
    assert hour_bin(12.5) == 12
    assert hour_bin(23.99) == 23
    assert hour_bin(24.5) == 0
    assert hour_bin(-0.5) == 23


def test_clip_psd():
    A = np.array([[1.0, 0.99, -0.99], [0.99, 1.0, 0.99], [-0.99, 0.99, 1.0]])
    B = clip_psd(A)
    assert np.linalg.eigvalsh(B).min() >= -1e-12
    assert np.allclose(clip_psd(np.eye(3)), np.eye(3))


def test_store_roundtrip(tmp_path):
    rows = truth_samples(default_laws(fig3_network()), 4, 3, trips=24)
    vecs = build_eta_vectors(rows)
    write_eta_store(vecs, tmp_path / "eta.csv", tmp_path / "per_day.csv")
    back = read_eta_store(tmp_path / "eta.csv", tmp_path / "per_day.csv")
    assert set(back) == set(vecs)
    for e in vecs:
        np.testing.assert_array_equal(back[e].medians, vecs[e].medians)
        np.testing.assert_array_equal(np.isnan(back[e].per_day), np.isnan(vecs[e].per_day))
    a = CorrelationModel(vecs).correlation("v1->v2", 9, "v1->vt", 9)
    b = CorrelationModel(back).correlation("v1->v2", 9, "v1->vt", 9)
    assert a.value == pytest.approx(b.value, abs=1e-12)


def test_store_rejects_incomplete(tmp_path):
    p = tmp_path / "eta.csv"
    p.write_text("edge,hour,median,count,filled\na->b,0,1.0,1,0\n")
    with pytest.raises(InputError):
        read_eta_store(p)


def test_eta_vector_tracks_ground_truth():
    laws = default_laws(fig3_network(), seed=2)
    rows = truth_samples(laws, 20, 11)
    vecs = build_eta_vectors(rows)
    for law in laws:
        v = vecs[law.edge]
        for h in range(6, 22):
            if v.counts[h] >= 10:
                assert abs(v.medians[h] - law.mean(h + 0.5)) <= 0.10 * law.mean(h + 0.5)


def test_independent_edges_small_correlation():
    laws = default_laws(fig3_network(), seed=2)
    vecs = build_eta_vectors(truth_samples(laws, 60, 21))
    cm = CorrelationModel(vecs)
    vals = [cm.correlation("v1->v2", h, "v1->vt", h) for h in range(7, 21)]
    assert all(v.source == "per-day" for v in vals)
    assert np.median([abs(v.value) for v in vals]) < 0.15


def test_correlated_edges_recovered():
    laws = default_laws(fig3_network(), seed=2)
    for law in laws:
        if law.edge == "v1->v2":
            law.corr["v1->vt"] = 0.6
    vecs = build_eta_vectors(truth_samples(laws, 180, 5))
    cm = CorrelationModel(vecs)
    vals = [cm.correlation("v1->v2", h, "v1->vt", h).value for h in range(7, 21)]
    assert abs(np.median(vals) - 0.6) <= 0.15
