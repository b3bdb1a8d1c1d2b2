"""Empirical observability constant versus sample size, with held-out violation counts."""

import argparse

import numpy as np

from degen_actuator.config import ExperimentConfig, build_problem
from degen_actuator.game import estimate_Clambda, observability_ratios, random_densities, sphere_samples


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--lams", type=float, nargs="+", default=[0.3, 0.5, 0.7])
    ap.add_argument("--samples", type=int, nargs="+", default=[50, 200, 800])
    ap.add_argument("--heldout", type=int, default=1000)
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()

    cfg = ExperimentConfig()
    cfg.grid.alpha = args.alpha
    base = build_problem(cfg)
    print(f"{'lambda':>7} {'samples':>8} {'median C^':>12} {'seeds with violations':>22}")
    for lam in args.lams:
        prob = base.with_(lam=lam)
        for k in args.samples:
            cs, bad = [], 0
            for s in range(args.seeds):
                C = estimate_Clambda(prob, lam, k, seed=s)
                rng = np.random.default_rng(10_000 + s)
                r = observability_ratios(prob, sphere_samples(prob, args.heldout, rng),
                                         random_densities(prob, lam, args.heldout, rng))
                cs.append(C)
                bad += bool(np.any(r > C))
            print(f"{lam:7.2f} {k:8d} {np.median(cs):12.4g} {bad:>14d}/{args.seeds}")


if __name__ == "__main__":
    main()
