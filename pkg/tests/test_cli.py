import csv
import json

import numpy as np
import pytest

from degen_actuator.cli import EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_OK, EXIT_VERIFY, main


def small_config(**over):
    cfg = {
        "grid": {"n": 16, "alpha": 0.5, "epsilon_cut": 0.375},
        "time": {"T": 0.2, "tau": 0.1, "n_steps": 64},
        "problem": {"lambda": 0.4, "eps0": 0.05},
        "solver": {"clambda_samples": 60, "outer_iters": 15, "cut_iters": 15, "game_rounds": 10, "n_starts": 2},
        "verify": {"n_samples": 4},
    }
    for key, val in over.items():
        section, name = key.split("__")
        cfg.setdefault(section, {})[name] = val
    return cfg


def run(tmp_path, command, cfg, name="run", extra=()):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main([command, "--config", str(path), "--out", str(out), *extra])
    summary = json.loads((out / "summary.json").read_text()) if (out / "summary.json").exists() else None
    return code, out, summary


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], float)


def test_solve_control_outputs(tmp_path):
    code, out, s = run(tmp_path, "solve-control", small_config())
    assert code == EXIT_OK and s["status"] == "ok"
    o = s["outputs"]
    assert o["N"] > 0
    assert o["duality_gap"] <= 1e-8 * max(1.0, o["N"] ** 2)
    assert o["terminal_residual"] <= 0.05 * (1 + 1e-6)
    header, data = read_csv(out / "eta_star.csv")
    assert header == ["x", "width", "value"] and data.shape == (16, 3)
    header, data = read_csv(out / "beta.csv")
    assert data.shape == (10, 3)
    assert json.loads((out / "config.json").read_text())["problem"]["lam"] == 0.4


def test_solve_control_null_when_target_already_met(tmp_path):
    cfg = small_config(problem__y0={"kind": "zero"}, problem__y_d={"kind": "sine", "amplitude": 0.01})
    code, _, s = run(tmp_path, "solve-control", cfg)
    assert code == EXIT_OK
    assert s["outputs"]["N"] == 0 and not s["diagnostics"]["assumption_H"]


def test_solve_control_nonconvergence_exit(tmp_path):
    code, _, s = run(tmp_path, "solve-control", small_config(solver__max_iters=2))
    assert code == EXIT_NONCONVERGED and s["status"] == "nonconverged"


@pytest.mark.parametrize(
    "key,val",
    [("grid__alpha", 2.0), ("grid__alpha", 0.0), ("time__tau", 0.2), ("problem__lambda", 1.0),
     ("problem__eps0", 0.0), ("grid__epsilon_cut", 1.0), ("solver__method", "cg")],
)
def test_invalid_configs_rejected(tmp_path, capsys, key, val):
    code, _, _ = run(tmp_path, "solve-control", small_config(**{key: val}))
    assert code == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_unknown_key_and_bad_seed(tmp_path):
    cfg = small_config()
    cfg["grid"]["size"] = 3
    assert run(tmp_path, "solve-control", cfg)[0] == EXIT_CONFIG
    assert run(tmp_path, "solve-control", small_config(), name="b", extra=["--seed", "-1"])[0] == EXIT_CONFIG


def test_bad_mask_length_rejected(tmp_path):
    cfg = small_config(control__beta={"mask": [1, 0, 1]})
    assert run(tmp_path, "solve-control", cfg)[0] == EXIT_CONFIG


def test_game_value_runs(tmp_path):
    code, out, s = run(tmp_path, "game-value", small_config())
    assert code == EXIT_OK
    assert s["outputs"]["Phi"] <= 0
    assert s["diagnostics"]["C_lambda_hat"] > 0 and s["diagnostics"]["delta0"] > 0
    assert (out / "yhat0.csv").exists()


def test_optimize_actuator_mask_size(tmp_path):
    code, out, s = run(tmp_path, "optimize-actuator", small_config())
    assert code == EXIT_OK
    o = s["outputs"]
    assert o["V_minus"] <= o["V_plus"] + 1e-9 * abs(o["V_minus"])
    target = round(0.4 * 0.625 / 0.0625)
    assert abs(o["omega_star_cells"] - target) <= 1
    assert o["fractional_cells"] <= 1
    header, data = read_csv(out / "omega_star.csv")
    assert header == ["x", "width", "value"]
    assert set(np.unique(data[:, 2])) <= {0.0, 1.0}


def test_range_failure_exit(tmp_path):
    cfg = small_config(problem__y_d={"kind": "checkerboard", "amplitude": 1.0})
    code, _, s = run(tmp_path, "game-value", cfg)
    assert code == EXIT_NONCONVERGED and s["status"] == "nonconverged"


def test_outputs_bitwise_reproducible(tmp_path):
    cfg = small_config()
    _, a, sa = run(tmp_path, "optimize-actuator", cfg, name="a")
    _, b, sb = run(tmp_path, "optimize-actuator", cfg, name="b")
    assert sa["outputs"] == sb["outputs"] and sa["config_hash"] == sb["config_hash"]
    for f in sa["files"]:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_seed_flag_changes_stochastic_parts(tmp_path):
    cfg = small_config()
    _, _, sa = run(tmp_path, "game-value", cfg, name="a", extra=["--seed", "1"])
    _, _, sb = run(tmp_path, "game-value", cfg, name="b", extra=["--seed", "2"])
    assert sa["seed"] == 1 and sb["seed"] == 2
    assert sa["diagnostics"]["C_lambda_hat"] != sb["diagnostics"]["C_lambda_hat"]


def test_verify_passes_and_detects_corruption(tmp_path, capsys):
    cfg = small_config(verify__game=False)
    code, _, s = run(tmp_path, "verify", cfg, name="ok")
    assert code == EXIT_OK and s["outputs"]["failed"] == 0
    assert "PASS" in capsys.readouterr().out
    cfg["test_hooks"] = {"corrupt_operator": True}
    code, _, s = run(tmp_path, "verify", cfg, name="bad")
    assert code == EXIT_VERIFY and s["status"] == "verify-failed"
    failed = {a["name"] for a in s["audits"] if not a["passed"]}
    assert "operator_symmetry" in failed


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("DEGEN_ACTUATOR_THREADS", "0")
    assert run(tmp_path, "solve-control", small_config())[0] == EXIT_CONFIG
    monkeypatch.setenv("DEGEN_ACTUATOR_THREADS", "2")
    assert run(tmp_path, "solve-control", small_config(), name="b")[0] == EXIT_OK
