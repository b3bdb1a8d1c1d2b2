"""Relaxed outer maximisation against exhaustive binary actuator enumeration."""

import argparse
import time

import numpy as np

from degen_actuator.config import ExperimentConfig, build_problem
from degen_actuator.game import build_ball, outer_sup
from degen_actuator.oracles import oracle_best_actuator


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.5, 1.5])
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--epsilon-cut", type=float, default=0.375)
    ap.add_argument("--n-steps", type=int, default=64)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    for alpha in args.alphas:
        cfg = ExperimentConfig()
        cfg.grid.n, cfg.grid.alpha, cfg.grid.epsilon_cut = args.n, alpha, args.epsilon_cut
        cfg.time.n_steps = args.n_steps
        prob = build_problem(cfg)
        m = prob.grid.m
        prob = prob.with_(lam=args.k / m)
        ball = build_ball(prob, 200, args.seed)
        t = time.perf_counter()
        mask, best, _, scores = oracle_best_actuator(prob, args.k, delta0=ball.delta0, seed=args.seed)
        t_enum = time.perf_counter() - t
        t = time.perf_counter()
        beta, phi, _ = outer_sup(prob, ball, seed=args.seed)
        t_outer = time.perf_counter() - t
        print(f"alpha={alpha} m={m} k={args.k}: binary best {best:.8g} at {np.flatnonzero(mask).tolist()} "
              f"({scores.size} masks, {t_enum:.1f}s)")
        print(f"  relaxed sup {phi:.8g} ({t_outer:.1f}s), margin {phi - best:.3g}, "
              f"support {np.round(beta.values, 3).tolist()}")


if __name__ == "__main__":
    main()
