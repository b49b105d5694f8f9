"""Replay historical samples as a stream through the online backend.

The first 5% (by time) seeds the hyperparameters through a batch fit.
The rest is split 80/20 at random: the 80% is streamed in time order and
the 20% is held out.  Online metrics are cumulative one-step-ahead (each
point is scored before the model sees it); batch metrics are hindsight
scores of the current model on everything streamed so far.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .gp import FitConfig, KernelParams, default_params, fit
from .online import OnlineConfig, fit_state, online_mll, online_predict, online_update

COLUMNS = ["gp_loss", "batch_rmse", "batch_nll", "online_rmse", "online_nll", "regret",
           "test_rmse", "test_nll", "noise", "step_time", "step"]


def _nll(y, mean, var) -> np.ndarray:
    return 0.5 * (np.log(2 * math.pi * var) + (y - mean) ** 2 / var)


@dataclass
class ReplayResult:
    edge: str
    rows: list[dict] = field(default_factory=list)
    init_params: KernelParams | None = None
    final_params: KernelParams | None = None
    n_init: int = 0
    n_stream: int = 0
    n_test: int = 0
    update_times: np.ndarray | None = None


def replay_edge(times, hours, y, edge: str = "", online_cfg: OnlineConfig | None = None,
                fit_cfg: FitConfig | None = None, report_every: int = 500, init_frac: float = 0.05,
                test_frac: float = 0.2, seed: int = 0) -> ReplayResult:
    """Stream one edge's samples (ordered by ``times``) through a SKI state."""
    online_cfg = online_cfg or OnlineConfig()
    fit_cfg = fit_cfg or FitConfig(seed=seed)
    times, hours, y = (np.asarray(a, dtype=float) for a in (times, hours, y))
    n = len(y)
    if n < 10:
        raise InputError(f"edge {edge!r}: {n} samples are too few to replay")
    order = np.argsort(times, kind="stable")
    hours, y = hours[order], y[order]
    n_init = max(int(round(init_frac * n)), 2)
    rest = np.arange(n_init, n)
    rng = np.random.default_rng(seed)
    is_test = np.zeros(len(rest), dtype=bool)
    is_test[rng.choice(len(rest), size=int(round(test_frac * len(rest))), replace=False)] = True
    test_idx, stream_idx = rest[is_test], rest[~is_test]

    X0, y0 = hours[:n_init], y[:n_init]
    if n_init >= fit_cfg.min_samples:
        params = fit(X0, y0, fit_cfg, edge).params
    else:
        params = default_params(y0)
    state = fit_state(X0, y0, params, online_cfg)
    res = ReplayResult(edge, init_params=params, n_init=n_init,
                       n_stream=len(stream_idx), n_test=len(test_idx))

    Xt, yt = hours[test_idx], y[test_idx]
    seen = []
    sq_sum = nll_sum = 0.0
    times_acc = np.empty(len(stream_idx))
    since = 0
    for step, i in enumerate(stream_idx, start=1):
        mu, var = online_predict(state, hours[i])
        sq_sum += (y[i] - mu) ** 2
        nll_sum += float(_nll(y[i], mu, var))
        t0 = time.perf_counter()
        online_update(state, hours[i], y[i], online_cfg)
        times_acc[step - 1] = time.perf_counter() - t0
        seen.append(i)
        since += 1
        if step % report_every == 0 or step == len(stream_idx):
            S = np.array(seen)
            mb, vb = online_predict(state, hours[S])
            batch_nll = float(_nll(y[S], mb, vb).mean())
            row = {
                "gp_loss": -online_mll(state) / state.n,
                "batch_rmse": float(np.sqrt(np.mean((y[S] - mb) ** 2))),
                "batch_nll": batch_nll,
                "online_rmse": math.sqrt(sq_sum / step),
                "online_nll": nll_sum / step,
                "regret": nll_sum / step - batch_nll,
                "test_rmse": float("nan"),
                "test_nll": float("nan"),
                "noise": state.params.noise_var,
                "step_time": float(times_acc[step - since:step].mean()),
                "step": step,
            }
            if len(Xt):
                mt, vt = online_predict(state, Xt)
                row["test_rmse"] = float(np.sqrt(np.mean((yt - mt) ** 2)))
                row["test_nll"] = float(_nll(yt, mt, vt).mean())
            res.rows.append(row)
            since = 0
    res.final_params = state.params
    res.update_times = times_acc
    return res


def replay_samples(samples, edges=None, **kw) -> dict[str, ReplayResult]:
    """Group ``TravelTimeSample`` rows by edge and replay each edge."""
    by_edge: dict[str, list] = {}
    for s in samples:
        by_edge.setdefault(s.edge, []).append(s)
    wanted = sorted(by_edge) if edges is None else list(edges)
    out = {}
    for e in wanted:
        rows = by_edge.get(e)
        if not rows:
            raise InputError(f"no samples for edge {e!r}")
        out[e] = replay_edge([s.depart_ts for s in rows], [s.depart_hour for s in rows],
                             [s.duration for s in rows], edge=e, **kw)
    return out


def write_metrics_csv(results: dict[str, ReplayResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge"] + COLUMNS)
        for e, r in sorted(results.items()):
            for row in r.rows:
                w.writerow([e] + [row[c] for c in COLUMNS])
