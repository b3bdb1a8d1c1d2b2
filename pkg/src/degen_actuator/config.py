"""JSON experiment configuration.

A config is one JSON document with sections ``grid``, ``time``, ``problem``,
``solver`` and optional command sections (``control``, ``verify``). Unknown
keys are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .control import ActuatorDensity, Problem
from .pde import SpatialGrid, assemble_operator, build_grid, build_time_grid, norm


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    n: int = 64
    alpha: float = 0.5
    epsilon_cut: float = 0.8125


@dataclass
class TimeConfig:
    T: float = 0.2
    tau: float = 0.1
    n_steps: int = 256


@dataclass
class ProblemConfig:
    lam: float = 1 / 3
    eps0: float = 0.05
    y_d: Any = field(default_factory=lambda: {"kind": "sine", "amplitude": 0.5})
    y0: Any = field(default_factory=lambda: {"kind": "sine", "amplitude": 1.0})
    a: Any = None


@dataclass
class SolverConfig:
    tol: float = 1e-7
    max_iters: int = 50_000
    method: str = "apg"
    n_starts: int = 4
    seed: int = 0
    clambda_samples: int = 200
    outer_iters: int = 60
    cut_iters: int = 60
    game_rounds: int = 40
    game_tol: float = 0.05


@dataclass
class ControlConfig:
    beta: Any = field(default_factory=lambda: {"kind": "uniform"})


@dataclass
class VerifyConfig:
    n_samples: int = 20
    game: bool = True


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    test_hooks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {
    "grid": GridConfig,
    "time": TimeConfig,
    "problem": ProblemConfig,
    "solver": SolverConfig,
    "control": ControlConfig,
    "verify": VerifyConfig,
}
_ALIASES = {"lambda": "lam"}


def _section(cls, raw: dict, name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be an object")
    known = {f.name for f in fields(cls)}
    kw = {}
    for k, v in raw.items():
        k = _ALIASES.get(k, k)
        if k not in known:
            raise ConfigError(f"unknown key '{name}.{k}'")
        kw[k] = v
    return cls(**kw)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    g, t, p, s = cfg.grid, cfg.time, cfg.problem, cfg.solver
    if not 0.0 < g.alpha < 2.0:
        raise ConfigError(f"grid.alpha={g.alpha} violates 0 < alpha < 2 (degeneracy exponent)")
    if not 0.0 < g.epsilon_cut < 1.0:
        raise ConfigError(f"grid.epsilon_cut={g.epsilon_cut} violates 0 < epsilon < 1 (actuator region (epsilon, 1))")
    if int(g.n) != g.n or g.n < 4:
        raise ConfigError("grid.n must be an integer >= 4")
    if not t.T > 0:
        raise ConfigError(f"time.T={t.T} must be positive")
    if not 0.0 < t.tau < t.T:
        raise ConfigError(f"time.tau={t.tau} violates 0 < tau < T={t.T} (controls act on (tau, T))")
    if not 0.0 < p.lam < 1.0:
        raise ConfigError(f"problem.lambda={p.lam} violates 0 < lambda < 1 (actuator mass fraction)")
    if not p.eps0 > 0:
        raise ConfigError(f"problem.eps0={p.eps0} violates eps0 > 0 (approximate target radius)")
    if s.method not in ("apg", "spectral", "auto"):
        raise ConfigError(f"solver.method must be 'apg', 'spectral' or 'auto', got {s.method!r}")
    if not s.tol > 0 or s.max_iters < 1:
        raise ConfigError("solver.tol must be positive and solver.max_iters >= 1")
    return cfg


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    kw = {}
    for k, v in raw.items():
        if k == "test_hooks":
            kw[k] = dict(v)
        elif k in _SECTIONS:
            kw[k] = _section(_SECTIONS[k], v, k)
        elif k.startswith("_"):
            continue  # comments
        else:
            raise ConfigError(f"unknown section '{k}'")
    return validate(ExperimentConfig(**kw))


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(raw)


# ---------------------------------------------------------------- field specs

def make_field(spec, grid: SpatialGrid, rng: np.random.Generator | None = None) -> np.ndarray:
    """Cell values from a field spec.

    Accepted: a list of n numbers; {"kind": "zero"}; {"kind": "sine",
    "amplitude", "mode"} (unit-norm sin(mode pi x) times amplitude);
    {"kind": "bump", "center", "width", "amplitude"}; {"kind": "checkerboard",
    "amplitude"}; {"kind": "random", "amplitude"} (unit-norm Gaussian noise).
    """
    x = grid.centers
    if isinstance(spec, (list, tuple)):
        v = np.asarray(spec, float)
        if v.shape != (grid.n,):
            raise ConfigError(f"field needs {grid.n} values, got {v.shape}")
        return v
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"bad field spec {spec!r}")
    kind = spec["kind"]
    amp = float(spec.get("amplitude", 1.0))
    if kind == "zero":
        return np.zeros(grid.n)
    if kind == "sine":
        v = np.sin(spec.get("mode", 1) * np.pi * x)
    elif kind == "bump":
        v = np.exp(-(((x - spec.get("center", 0.5)) / spec.get("width", 0.15)) ** 2))
    elif kind == "checkerboard":
        v = np.where(np.arange(grid.n) % 2 == 0, 1.0, -1.0)
    elif kind == "random":
        if rng is None:
            raise ConfigError("random field needs a seeded generator")
        v = rng.standard_normal(grid.n)
    else:
        raise ConfigError(f"unknown field kind {kind!r}")
    return amp * v / norm(v, grid)


def make_density(spec, grid: SpatialGrid, lam: float) -> ActuatorDensity:
    """{"kind": "uniform"}, {"mask": [0/1 per actuator cell]} or {"values": [...]}."""
    if isinstance(spec, dict) and spec.get("kind") == "uniform":
        return ActuatorDensity.uniform(grid, lam)
    if isinstance(spec, dict) and "mask" in spec:
        mask = np.asarray(spec["mask"], bool)
        if mask.shape != (grid.m,):
            raise ConfigError(f"mask needs {grid.m} entries (actuator cells)")
        return ActuatorDensity.from_mask(mask, grid)
    if isinstance(spec, dict) and "values" in spec:
        return ActuatorDensity(np.asarray(spec["values"], float), grid, lam)
    raise ConfigError(f"bad density spec {spec!r}")


def build_problem(cfg: ExperimentConfig, rng: np.random.Generator | None = None) -> Problem:
    grid = build_grid(cfg.grid.n, cfg.grid.alpha, cfg.grid.epsilon_cut)
    tg = build_time_grid(cfg.time.T, cfg.time.tau, cfg.time.n_steps)
    M = assemble_operator(grid, cfg.problem.a)
    y_d = make_field(cfg.problem.y_d, grid, rng)
    return Problem(tg, M, y_d, cfg.problem.eps0, cfg.problem.lam)
