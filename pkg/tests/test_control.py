import numpy as np
import pytest

from degen_actuator.control import (
    ActuatorDensity,
    ControlSignal,
    DensityError,
    DualQuadratic,
    check_assumption_H,
    compute_G,
    el_residual,
    eval_J_eps,
    extract_control,
    gramian_apply,
    gramian_matrix,
    grad_J_eps,
    minimize_J_eps,
)
from degen_actuator.density import project_density
from degen_actuator.oracles import fd_gradient, oracle_min_norm
from degen_actuator.pde import inner, norm

from conftest import make_problem, unit


def test_density_validation(small):
    g = small.grid
    with pytest.raises(DensityError):
        ActuatorDensity(np.full(g.m, 0.7), g, 0.5)  # wrong mass
    with pytest.raises(DensityError):
        ActuatorDensity(np.array([1.2, 0.8, 0.0, 0.0]), g, 0.5)
    with pytest.raises(DensityError):
        ActuatorDensity(np.full(g.m + 1, 0.5), g, 0.5)
    b = ActuatorDensity.from_mask([1, 1, 0, 0], g)
    assert b.lam == 0.5 and b.fractional_cells == 0
    assert np.array_equal(b.full()[: g.n - g.m], np.zeros(g.n - g.m))


def test_gramian_is_self_adjoint_psd(desk):
    g = desk.grid
    beta = ActuatorDensity.uniform(g, desk.lam)
    L = gramian_matrix(beta, desk.tg, desk.M)
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, g.n))
    assert inner(L @ a, b, g) == pytest.approx(inner(a, L @ b, g), rel=1e-12)
    assert inner(L @ a, a, g) == pytest.approx(inner(beta.full(), compute_G(a, desk.tg, desk.M), g), rel=1e-10)
    assert np.allclose(L @ a, gramian_apply(beta, a, desk.tg, desk.M), rtol=1e-12, atol=1e-16)


def test_assumption_H_fails_gives_null_control(desk):
    beta = ActuatorDensity.uniform(desk.grid, desk.lam)
    y0 = np.zeros(desk.grid.n)
    prob = desk.with_(y_d=np.full(desk.grid.n, 0.01))
    assert not check_assumption_H(prob, beta, y0)
    r = minimize_J_eps(prob, beta, y0)
    assert r.N == 0 and r.V == 0 and not r.assumption_H
    assert np.all(r.eta_star == 0)
    assert np.all(extract_control(prob, r.eta_star, beta).values == 0)


def test_value_negative_when_H_holds(desk):
    rng = np.random.default_rng(3)
    beta = ActuatorDensity.uniform(desk.grid, desk.lam)
    y0 = unit(desk, rng)
    r = minimize_J_eps(desk, beta, y0)
    assert r.assumption_H and r.converged
    assert r.V < 0
    assert r.duality_gap <= 1e-8 * max(1, r.N**2)


def test_apg_and_spectral_agree(desk):
    rng = np.random.default_rng(4)
    beta = ActuatorDensity.uniform(desk.grid, desk.lam)
    y0 = unit(desk, rng)
    a = minimize_J_eps(desk, beta, y0, method="apg")
    b = minimize_J_eps(desk, beta, y0, method="spectral")
    assert a.N == pytest.approx(b.N, rel=1e-6)
    assert b.el_residual <= 1e-8
    with pytest.raises(ValueError):
        minimize_J_eps(desk, beta, y0, method="cg")


def test_iteration_cap_reports_nonconvergence(desk):
    beta = ActuatorDensity.uniform(desk.grid, desk.lam)
    r = minimize_J_eps(desk, beta, unit(desk, np.random.default_rng(5)), max_iters=3)
    assert not r.converged and r.iterations == 3
    assert r.V <= 0


def test_control_energy_matches_G(desk):
    rng = np.random.default_rng(6)
    beta = ActuatorDensity.uniform(desk.grid, desk.lam)
    eta = unit(desk, rng) * 50
    u = extract_control(desk, eta, beta)
    assert isinstance(u, ControlSignal)
    energy = u.norm(desk.grid) ** 2
    assert energy == pytest.approx(inner(beta.full(), compute_G(eta, desk.tg, desk.M), desk.grid), rel=1e-10)


@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_N_matches_least_norm_oracle(alpha):
    prob = make_problem(n=8, alpha=alpha, epsilon_cut=0.5, n_steps=32, lam=0.5)
    rng = np.random.default_rng(7)
    for _ in range(3):
        beta = project_density(rng.uniform(-0.5, 1.5, 4), prob.grid, 0.5)
        y0 = unit(prob, rng)
        r = minimize_J_eps(prob, beta, y0, method="spectral")
        assert r.N == pytest.approx(oracle_min_norm(prob, beta, y0), rel=1e-4)


def test_gradient_matches_finite_differences(desk):
    rng = np.random.default_rng(8)
    beta = ActuatorDensity.uniform(desk.grid, desk.lam)
    y0, eta = unit(desk, rng), unit(desk, rng) * 10
    an = grad_J_eps(desk, eta, beta, y0)
    fd = fd_gradient(lambda e: eval_J_eps(desk, e, beta, y0), eta, 1e-5, desk.grid.widths)
    assert norm(an - fd, desk.grid) <= 1e-5 * norm(an, desk.grid)


def test_el_residual_undefined_at_zero(desk):
    beta = ActuatorDensity.uniform(desk.grid, desk.lam)
    with pytest.raises(ValueError):
        el_residual(desk, np.zeros(desk.grid.n), beta, np.zeros(desk.grid.n))


def test_dual_quadratic_ball_constraint(desk):
    beta = ActuatorDensity.uniform(desk.grid, desk.lam)
    Q = DualQuadratic(gramian_matrix(beta, desk.tg, desk.M), desk.grid)
    c = desk.free_terminal(unit(desk, np.random.default_rng(9))) - desk.y_d
    free = Q.solve(c, desk.eps0)
    r = 0.5 * norm(free, desk.grid)
    capped = Q.solve(c, desk.eps0, radius=r)
    assert norm(capped, desk.grid) == pytest.approx(r, rel=1e-8)
    assert Q.value(capped, c, desk.eps0) >= Q.value(free, c, desk.eps0)
    assert np.all(Q.solve(np.zeros(desk.grid.n), desk.eps0) == 0)


def test_auto_method_falls_back_to_spectral(desk):
    beta = ActuatorDensity.uniform(desk.grid, desk.lam)
    y0 = unit(desk, np.random.default_rng(10))
    r = minimize_J_eps(desk, beta, y0, method="auto", max_iters=3)
    s = minimize_J_eps(desk, beta, y0, method="spectral")
    assert r.converged and r.method == "spectral"
    assert r.N == pytest.approx(s.N, rel=1e-12)
    assert minimize_J_eps(desk, beta, y0, method="auto").method == "apg"
