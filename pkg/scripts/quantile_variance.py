"""Spread of a population-quantile estimate: decile-stratified hashing vs uniform sampling.

Draws repeated samples from a fixed skewed score population and reports the
standard deviation of the weighted stratified estimate and of the plain
uniform-sample estimate for a few quantiles.
"""

import argparse

import numpy as np

from recall_forge.sampler import assign_deciles, build_calibration_sample, stratified_quantile


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--population", type=int, default=200_000)
    ap.add_argument("--sample", type=int, default=2_000)
    ap.add_argument("--repeats", type=int, default=100)
    ap.add_argument("--quantiles", type=float, nargs="+", default=[0.1, 0.5, 0.9, 0.99])
    ap.add_argument("--seed", type=int, default=8)
    args = ap.parse_args()

    scores = np.random.default_rng(args.seed).beta(0.4, 4.0, args.population)
    strata = assign_deciles(scores)
    pops = np.bincount(strata, minlength=10)
    print("stratum populations:", pops.tolist())
    rng = np.random.default_rng(args.seed + 1)
    strat = {q: [] for q in args.quantiles}
    unif = {q: [] for q in args.quantiles}
    for rep in range(args.repeats):
        ids = build_calibration_sample(scores.size, scores, args.sample, seed=1000 + rep)
        u = rng.choice(scores.size, size=args.sample, replace=False)
        for q in args.quantiles:
            strat[q].append(stratified_quantile(scores[ids], strata[ids], pops, q))
            unif[q].append(stratified_quantile(scores[u], np.zeros(u.size, np.int64), [scores.size], q))
    print(f"{'q':>6} {'true':>8} {'SD stratified':>14} {'SD uniform':>11} {'ratio':>6}")
    for q in args.quantiles:
        s, u = np.std(strat[q], ddof=1), np.std(unif[q], ddof=1)
        print(f"{q:>6g} {np.quantile(scores, q):>8.4f} {s:>14.5f} {u:>11.5f} {s / u:>6.2f}")


if __name__ == "__main__":
    main()
