import numpy as np
import pytest

from degen_actuator.control import Problem
from degen_actuator.pde import assemble_operator, build_grid, build_time_grid, norm

ACCEPTANCE_LINES: list[str] = []


def make_problem(n=64, alpha=0.5, epsilon_cut=0.8125, T=0.2, tau=0.1, n_steps=256, lam=1 / 3, eps0=0.05,
                 y_d="sine", amp=0.5, a=None):
    grid = build_grid(n, alpha, epsilon_cut)
    tg = build_time_grid(T, tau, n_steps)
    M = assemble_operator(grid, a)
    x = grid.centers
    if isinstance(y_d, str):
        v = {"sine": np.sin(np.pi * x), "zero": np.zeros(n)}[y_d]
        y_d = amp * v / norm(v, grid) if np.any(v) else v
    return Problem(tg, M, y_d, eps0, lam)


def unit(prob, rng):
    v = rng.standard_normal(prob.grid.n)
    return v / norm(v, prob.grid)


@pytest.fixture(scope="session")
def desk():
    return make_problem()


@pytest.fixture(scope="session")
def small():
    """n=8 corpus member: 4 actuator cells, 32 steps."""
    return make_problem(n=8, epsilon_cut=0.5, n_steps=32, lam=0.5)


@pytest.fixture(scope="session")
def enum_problem():
    """10 actuator cells, 4 of them switched on (lambda = 0.4)."""
    return make_problem(n=16, epsilon_cut=0.375, n_steps=64, lam=0.4)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
