"""KL divergence between pairs of independent standard normal samples, by sample size."""
import argparse

import numpy as np

from transit_ssp.gaussianity import PAPER_BASELINE_100, kl_baseline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 1000, 10_000])
    ap.add_argument("--iterations", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'size':>7} {'min':>9} {'mean':>9} {'max':>9}")
    for n in args.sizes:
        b = kl_baseline(n, args.iterations, rng)
        print(f"{n:>7} {b.min():9.5f} {b.mean():9.5f} {b.max():9.5f}")
    ref = PAPER_BASELINE_100
    print(f"reference at size 100: min {ref['min']} mean {ref['mean']} max {ref['max']}")


if __name__ == "__main__":
    main()
