import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degen_actuator.pde import (
    GridError,
    assemble_operator,
    build_grid,
    build_time_grid,
    inner,
    norm,
    solve_adjoint,
    solve_forward,
)

from conftest import make_problem


def test_grid_small_example():
    g = build_grid(4, 1.0, 0.5)
    assert np.allclose(g.widths, 0.25)
    assert list(g.omega1) == [2, 3]
    assert np.allclose(g.centers[g.omega1], [0.625, 0.875])


@pytest.mark.parametrize("alpha", [0.0, 2.0, -1.0, 2.5])
def test_grid_rejects_alpha(alpha):
    with pytest.raises(GridError, match="alpha"):
        build_grid(4, alpha, 0.5)


@pytest.mark.parametrize("eps", [0.0, 1.0, 1.5])
def test_grid_rejects_epsilon(eps):
    with pytest.raises(GridError):
        build_grid(8, 0.5, eps)


def test_omega1_measure():
    g = build_grid(128, 0.5, 0.3)
    assert abs(g.omega1_measure - 0.7) <= 1 / 128
    assert abs(g.widths.sum() - 1) < 1e-12
    assert np.all(g.centers[g.omega1] >= 0.3)


def test_desk_grid_has_twelve_actuator_cells():
    assert build_grid(64, 0.5, 0.8125).m == 12


def test_time_grid_rounds_tau():
    tg = build_time_grid(1.0, 0.33, 10)
    assert tg.k_tau == 3 and tg.tau == pytest.approx(0.3)
    assert tg.tau_rounding == pytest.approx(-0.03)
    with pytest.raises(GridError):
        build_time_grid(1.0, 1.0, 10)
    with pytest.raises(GridError):
        build_time_grid(1.0, 0.01, 10)  # rounds onto t = 0


@settings(max_examples=30, deadline=None)
@given(alpha=st.sampled_from([0.25, 0.5, 0.75, 1.0, 1.5, 1.9]), n=st.integers(4, 80), seed=st.integers(0, 2**32 - 1))
def test_operator_self_adjoint_and_dissipative(alpha, n, seed):
    g = build_grid(n, alpha, 0.5)
    M = assemble_operator(g)
    rng = np.random.default_rng(seed)
    v, w = rng.standard_normal((2, n))
    lhs, rhs = inner(M.apply(v), w, g), inner(v, M.apply(w), g)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs)) * norm(v, g) * norm(w, g)
    assert inner(M.apply(v), v, g) <= 1e-12


def test_left_face_flux_vanishes_for_alpha_one():
    M = assemble_operator(build_grid(4, 1.0, 0.5))
    assert M.bc_left == "zero-flux"
    # row sums of the first cell: only the interior face remains
    assert M.diag[0] + M.upper[0] == pytest.approx(0.0, abs=1e-14)


def test_left_dirichlet_for_alpha_below_one():
    M = assemble_operator(build_grid(8, 0.5, 0.5))
    assert M.bc_left == "dirichlet"
    assert M.diag[0] + M.upper[0] < 0


def test_potential_enters_with_minus_sign():
    g = build_grid(8, 0.5, 0.5)
    M0, M1 = assemble_operator(g), assemble_operator(g, {"poly": [1.0, 2.0]})
    assert np.allclose(M0.diag - M1.diag, 1 + 2 * g.centers)


def test_smallest_eigenvalue_grid_convergence():
    def lam1(n):
        M = assemble_operator(build_grid(n, 0.5, 0.5)).dense()
        return np.sort(np.linalg.eigvals(-M).real)[0]

    assert abs(lam1(8) - lam1(256)) / lam1(256) <= 0.05


def test_eigenmode_decay():
    n, T = 128, 0.2
    g = build_grid(n, 0.5, 0.5)
    M = assemble_operator(g)
    tg = build_time_grid(T, 0.1, 1024)
    ev, V = np.linalg.eigh(M.dense())  # symmetric on a uniform grid
    y0 = V[:, -1]
    ratio = norm(solve_forward(y0, tg, M).final, g) / norm(y0, g)
    assert ratio == pytest.approx(np.exp(ev[-1] * T), rel=0.02)


def test_forward_zero_and_monotone():
    prob = make_problem(n=32, n_steps=64)
    tg, M, g = prob.tg, prob.M, prob.grid
    assert np.all(solve_forward(np.zeros(32), tg, M).values == 0)
    y0 = np.random.default_rng(0).standard_normal(32)
    norms = norm(solve_forward(y0, tg, M).values.T, g)
    assert np.all(np.diff(norms) <= 1e-14)


def test_forward_argument_checks():
    prob = make_problem(n=16, n_steps=32)
    with pytest.raises(ValueError):
        solve_forward(np.zeros(16), prob.tg, prob.M, beta=np.ones(16))
    with pytest.raises(GridError):
        solve_forward(np.zeros(15), prob.tg, prob.M)
    with pytest.raises(GridError):
        solve_forward(np.zeros(16), prob.tg, prob.M, beta=np.ones(16), u=np.zeros((3, 16)))


def test_adjoint_reuses_forward_exactly():
    prob = make_problem(n=32, n_steps=64)
    eta = np.random.default_rng(1).standard_normal(32)
    phi = solve_adjoint(eta, prob.tg, prob.M)
    assert np.array_equal(phi.at(0.0), solve_forward(eta, prob.tg, prob.M).at(prob.tg.T))
    assert np.array_equal(phi.at(prob.tg.T), eta)
    assert np.all(solve_adjoint(np.zeros(32), prob.tg, prob.M).values == 0)
    assert norm(phi.at(0.0), prob.grid) <= norm(eta, prob.grid)


def test_trajectory_rejects_off_node_times():
    prob = make_problem(n=8, epsilon_cut=0.5, n_steps=32)
    traj = solve_forward(np.ones(8), prob.tg, prob.M)
    assert len(traj) == 33
    with pytest.raises(GridError):
        traj.at(0.2 / 64)


def test_inner_and_norm_basics():
    g = build_grid(16, 0.5, 0.5)
    f = np.random.default_rng(2).standard_normal(16)
    assert inner(f, np.zeros(16), g) == 0
    assert norm(np.ones(16), g) == pytest.approx(1.0)
    with pytest.raises(GridError):
        inner(f, np.ones(15), g)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=16, max_size=16), st.lists(st.floats(-1e3, 1e3), min_size=16, max_size=16))
def test_cauchy_schwarz(f, h):
    g = build_grid(16, 0.5, 0.5)
    f, h = np.array(f), np.array(h)
    assert abs(inner(f, h, g)) <= norm(f, g) * norm(h, g) * (1 + 1e-12) + 1e-300


def test_grid_convergence_of_terminal_norm():
    vals = []
    for n in (64, 256):
        g = build_grid(n, 0.5, 0.5)
        tg = build_time_grid(0.2, 0.1, 256)
        y0 = np.sin(np.pi * g.centers)
        vals.append(norm(solve_forward(y0, tg, assemble_operator(g)).final, g))
    assert abs(vals[0] - vals[1]) / vals[1] <= 0.02
