"""Stream one simulated edge through the online backend and compare with a batch fit.

Prints the replay metrics every --report-every updates and the final gap
between online and batch posterior means over the day.
"""
import argparse

import numpy as np

from transit_ssp.feedsim import SimConfig, default_laws, simulate
from transit_ssp.gp import FitConfig, fit
from transit_ssp.ingest import ingest
from transit_ssp.online import OnlineConfig, fit_state, online_predict
from transit_ssp.replay import COLUMNS, replay_edge
from transit_ssp.worlds import fig3_network


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--days", type=int, default=120)
    ap.add_argument("--edge", default="v1->vt")
    ap.add_argument("--m", type=int, default=128)
    ap.add_argument("--r", type=int, default=32)
    ap.add_argument("--report-every", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    g = fig3_network()
    cols, _ = simulate(g, default_laws(g, args.seed), SimConfig(days=args.days, seed=args.seed))
    rows = [s for s in ingest(cols, g).samples if s.edge == args.edge]
    t = np.array([s.depart_ts for s in rows], float)
    h = np.array([s.depart_hour for s in rows])
    y = np.array([s.duration for s in rows])
    ocfg = OnlineConfig(m=args.m, r=args.r)
    res = replay_edge(t, h, y, args.edge, ocfg, FitConfig(seed=args.seed), args.report_every, seed=args.seed)

    print(f"{args.edge}: {len(y)} samples, {res.n_init} seed / {res.n_stream} streamed / {res.n_test} held out")
    print(" ".join(f"{c:>11}" for c in COLUMNS))
    for r in res.rows:
        print(" ".join(f"{r[c]:11.4g}" for c in COLUMNS))

    batch = fit(h, y, FitConfig(seed=args.seed, max_points=len(y)))
    state = fit_state(h, y, batch.params, OnlineConfig(m=args.m, r=args.r, refresh_every=0))
    q = np.linspace(0, 24, 241)
    gap = online_predict(state, q)[0] - batch.posterior(q)[0]
    print(f"same hyperparameters, all data: max |online - batch| mean = {np.abs(gap).max():.3f} s "
          f"(batch used {len(batch.X)} points)")
    print(f"median update time {np.median(res.update_times) * 1e3:.3f} ms")


if __name__ == "__main__":
    main()
