"""Command line runner: ``degen-actuator <command> --config cfg.json --out dir``.

Exit codes: 0 success, 2 verification failure, 3 solver non-convergence,
4 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import audits
from .config import ConfigError, ExperimentConfig, build_problem, load_config, make_density, make_field, validate
from .control import DensityError, extract_control, minimize_J_eps
from .density import extract_level_set
from .game import RangeError, build_ball, double_oracle, inner_inf, outer_sup
from .pde import GridError, norm
from .test_hooks import corrupt_operator

log = logging.getLogger("degen_actuator")

EXIT_OK, EXIT_VERIFY, EXIT_NONCONVERGED, EXIT_CONFIG = 0, 2, 3, 4
SEED_DERIVATION = "numpy SeedSequence(root_seed).spawn(k); child i drives task i in command order"


def write_field_csv(path: Path, x, widths, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "width", "value"])
        for row in zip(x, widths, values):
            w.writerow([repr(float(v)) for v in row])


def _omega1_csv(path, grid, values):
    write_field_csv(path, grid.centers[grid.omega1], grid.omega1_widths, values)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


class Run:
    def __init__(self, command: str, cfg: ExperimentConfig, out: Path, seed: int):
        self.record = {
            "command": command,
            "config": cfg.to_dict(),
            "config_hash": cfg.digest(),
            "seed": seed,
            "seed_derivation": SEED_DERIVATION,
            "started": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "outputs": {},
            "diagnostics": {},
            "files": [],
        }
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))

    def field(self, name, grid, values):
        write_field_csv(self.out / name, grid.centers, grid.widths, values)
        self.record["files"].append(name)

    def omega1_field(self, name, grid, values):
        _omega1_csv(self.out / name, grid, values)
        self.record["files"].append(name)

    def finish(self, status: str):
        self.record["status"] = status
        self.record["finished"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        (self.out / "summary.json").write_text(json.dumps(self.record, indent=2, default=_jsonable))


def _seeds(seed: int, k: int):
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def cmd_solve_control(cfg: ExperimentConfig, run: Run, seed: int) -> int:
    (s_field,) = _seeds(seed, 1)
    rng = np.random.default_rng(s_field)
    prob = build_problem(cfg, rng)
    if cfg.problem.y0 == "worst-case":
        raise ConfigError("solve-control needs an explicit problem.y0, not 'worst-case'")
    y0 = make_field(cfg.problem.y0, prob.grid, rng)
    beta = make_density(cfg.control.beta, prob.grid, cfg.problem.lam)
    s = cfg.solver
    r = minimize_J_eps(prob, beta, y0, tol=s.tol, max_iters=s.max_iters, method=s.method)
    u = extract_control(prob, r.eta_star, beta)
    run.record["outputs"] = {
        "N": r.N, "V": r.V, "el_residual": r.el_residual, "terminal_residual": r.terminal_residual,
        "duality_gap": r.duality_gap, "eta_norm": float(norm(r.eta_star, prob.grid)),
    }
    run.record["diagnostics"] = {"iterations": r.iterations, "converged": r.converged, "assumption_H": r.assumption_H,
                                 "method_used": r.method,
                                 "tau_rounding": prob.tg.tau_rounding}
    g = prob.grid
    run.field("eta_star.csv", g, r.eta_star)
    run.field("y0.csv", g, y0)
    run.field("y_d.csv", g, prob.y_d)
    run.field("control_energy.csv", g, prob.tg.dt * np.sum(u.values**2, axis=0))
    run.omega1_field("beta.csv", g, beta.values)
    if not r.converged:
        run.finish("nonconverged")
        return EXIT_NONCONVERGED
    run.finish("ok")
    return EXIT_OK


def _ball(cfg, prob, seed, run):
    ball = build_ball(prob, cfg.solver.clambda_samples, seed)
    run.record["diagnostics"].update(
        C_lambda_hat=ball.C_lambda_hat, delta0=ball.delta0, yhat0_norm=float(norm(ball.yhat0, prob.grid)),
        yhat0_residual=ball.range_residual,
    )
    run.field("yhat0.csv", prob.grid, ball.yhat0)
    return ball


def cmd_optimize_actuator(cfg: ExperimentConfig, run: Run, seed: int) -> int:
    s_ball, s_outer, s_game = _seeds(seed, 3)
    prob = build_problem(cfg, np.random.default_rng(seed))
    s = cfg.solver
    ball = _ball(cfg, prob, s_ball, run)
    beta_o, phi_o, hist = outer_sup(prob, ball, max_iters=s.outer_iters, n_starts=s.n_starts, seed=s_outer,
                                    cut_iters=s.cut_iters)
    res = double_oracle(prob, ball, tol=s.game_tol, max_rounds=s.game_rounds, n_starts=s.n_starts, seed=s_game,
                        init_betas=[beta_o])
    g = prob.grid
    ls = res.level_set
    gap_ok = res.gap <= max(s.game_tol * abs(res.V_minus), 1e-6)
    run.record["outputs"] = {
        "V_minus": res.V_minus, "V_plus": res.V_plus, "gap": res.gap, "outer_sup_value": phi_o,
        "level_threshold": res.level_threshold, "omega_star_cells": int(res.omega_star.sum()),
        "level_set_mismatch": ls.mismatch, "fractional_cells": res.fractional_cells,
    }
    run.record["diagnostics"].update(
        rounds=res.rounds, history=res.history, outer_history=hist, level_set_degenerate=ls.degenerate,
        gap_warning=not gap_ok,
    )
    if not gap_ok:
        log.warning("game gap %.3g above target %.3g |V-|", res.gap, s.game_tol)
    run.omega1_field("beta_star.csv", g, res.beta_star.values)
    run.omega1_field("beta_outer.csv", g, beta_o.values)
    run.omega1_field("omega_star.csv", g, res.omega_star.astype(int))
    run.omega1_field("H.csv", g, res.H)
    run.finish("ok")
    return EXIT_OK


def cmd_game_value(cfg: ExperimentConfig, run: Run, seed: int) -> int:
    s_ball, s_inner = _seeds(seed, 2)
    prob = build_problem(cfg, np.random.default_rng(seed))
    ball = _ball(cfg, prob, s_ball, run)
    beta = make_density(cfg.control.beta, prob.grid, cfg.problem.lam)
    eta, phi = inner_inf(prob, beta, ball, n_starts=cfg.solver.n_starts, seed=s_inner)
    run.record["outputs"] = {"Phi": phi, "eta_norm": float(norm(eta, prob.grid))}
    run.field("eta_hat.csv", prob.grid, eta)
    run.omega1_field("beta.csv", prob.grid, beta.values)
    run.finish("ok")
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, run: Run, seed: int) -> int:
    prob = build_problem(cfg, np.random.default_rng(seed))
    if cfg.test_hooks.get("corrupt_operator"):
        prob = prob.with_(M=corrupt_operator(prob.M, float(cfg.test_hooks.get("scale", 1e-2))))
    s, v = cfg.solver, cfg.verify
    results = audits.run_all(prob, seed, n_samples=v.n_samples, tol=s.tol, method=s.method, game=v.game,
                             rounds=s.game_rounds, game_tol=s.game_tol, n_starts=s.n_starts)
    run.record["audits"] = [r.to_dict() for r in results]
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.value:.3e} <= {r.threshold:.1e}  [{r.anchor}]")
    ok = all(r.passed for r in results)
    run.record["outputs"] = {"passed": sum(r.passed for r in results), "failed": sum(not r.passed for r in results)}
    run.finish("ok" if ok else "verify-failed")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {
    "solve-control": cmd_solve_control,
    "optimize-actuator": cmd_optimize_actuator,
    "game-value": cmd_game_value,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="degen-actuator", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config; defaults are used when omitted")
        p.add_argument("--out", type=Path, default=Path("runs") / name)
        p.add_argument("--seed", type=int, help="override solver.seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, help="BLAS threads (default $DEGEN_ACTUATOR_THREADS or 1)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else validate(ExperimentConfig())
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.solver.seed = args.seed
        threads = args.threads or int(os.environ.get("DEGEN_ACTUATOR_THREADS", "1"))
        if threads < 1:
            raise ConfigError("thread count must be >= 1")
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    run = Run(args.command, cfg, args.out, cfg.solver.seed)
    try:
        with threadpool_limits(threads):
            return COMMANDS[args.command](cfg, run, cfg.solver.seed)
    except (ConfigError, GridError, DensityError) as e:
        print(f"config error: {e}", file=sys.stderr)
        run.finish("config-error")
        return EXIT_CONFIG
    except (RangeError, FloatingPointError) as e:
        print(f"solver error: {e}", file=sys.stderr)
        run.finish("nonconverged")
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
