"""Minimum-norm approximate controls through the dual functional J_eps.

For terminal data eta the adjoint trajectory phi(.; eta) is paired with the
control on step (t_{k-1}, t_k] at its left node t_{k-1}. With that convention
the discrete identity

    sum_k dt <u^k, sqrt(beta) phi^{k-1}> + <y0, phi(0)> = <y(T), eta>

holds exactly, and the control-to-terminal-state Gramian

    Lam_beta eta = y(T; 0, beta; sqrt(beta) phi(.; eta))

is self-adjoint and positive semidefinite in the quadrature inner product.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.optimize

from .pde import DiscreteOperator, GridError, SpatialGrid, TimeGrid, inner, march, norm, solve_adjoint

log = logging.getLogger(__name__)


class DensityError(ValueError):
    """Raised when an actuator density leaves the admissible set."""


@dataclass(frozen=True)
class ActuatorDensity:
    """Relaxed actuator on the cells of the actuator region (values in [0, 1])."""

    values: np.ndarray
    grid: SpatialGrid = field(repr=False)
    lam: float
    check_mass: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.m,):
            raise DensityError(f"density needs {self.grid.m} values, got {v.shape}")
        if not 0.0 < self.lam < 1.0:
            raise DensityError(f"lambda={self.lam} outside (0, 1)")
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12) or not np.all(np.isfinite(v)):
            raise DensityError("density values must lie in [0, 1]")
        if self.check_mass and abs(self.mass - self.target_mass) > 1e-10:
            raise DensityError(f"density mass {self.mass} differs from lambda|Omega_1| = {self.target_mass}")

    @property
    def mass(self) -> float:
        return float(self.grid.omega1_widths @ self.values)

    @property
    def target_mass(self) -> float:
        return self.lam * self.grid.omega1_measure

    def full(self) -> np.ndarray:
        """Extension by zero to the whole grid."""
        out = np.zeros(self.grid.n)
        out[self.grid.omega1] = self.values
        return out

    @property
    def fractional_cells(self) -> int:
        return int(np.sum((self.values > 1e-12) & (self.values < 1 - 1e-12)))

    @classmethod
    def uniform(cls, grid: SpatialGrid, lam: float) -> "ActuatorDensity":
        return cls(np.full(grid.m, lam), grid, lam)

    @classmethod
    def from_mask(cls, mask, grid: SpatialGrid, lam: float | None = None) -> "ActuatorDensity":
        mask = np.asarray(mask, bool)
        if lam is None:
            lam = float(grid.omega1_widths @ mask) / grid.omega1_measure
        return cls(mask.astype(float), grid, lam)


@dataclass(frozen=True)
class ControlSignal:
    """u(x_i, t) on the steps inside (tau, T); ``values[j]`` acts on step k_tau + 1 + j."""

    values: np.ndarray
    tg: TimeGrid

    def norm(self, grid: SpatialGrid) -> float:
        return math.sqrt(self.tg.dt * float(np.sum(grid.widths * self.values**2)))


@dataclass(frozen=True)
class Problem:
    """Discrete setting shared by the control and game modules."""

    tg: TimeGrid
    M: DiscreteOperator
    y_d: np.ndarray
    eps0: float
    lam: float = 0.5

    def __post_init__(self):
        if self.eps0 <= 0:
            raise ValueError(f"eps0={self.eps0} must be positive")
        object.__setattr__(self, "y_d", np.asarray(self.y_d, float))
        if self.y_d.shape != (self.M.grid.n,):
            raise GridError("target state does not match the grid")

    @property
    def grid(self) -> SpatialGrid:
        return self.M.grid

    @cached_property
    def R(self) -> np.ndarray:
        return self.M.resolvent(self.tg.dt)

    @cached_property
    def P(self) -> np.ndarray:
        """Free propagator over [0, T]; also maps eta to phi(0; eta)."""
        return march(self.R, np.eye(self.grid.n), self.tg)[-1]

    def free_terminal(self, y0) -> np.ndarray:
        return march(self.R, np.asarray(y0, float), self.tg)[-1]

    def with_(self, **kw) -> "Problem":
        return replace(self, **kw)


def _full(beta) -> np.ndarray:
    return beta.full() if hasattr(beta, "full") else np.asarray(beta, float)


def _window(phi_values: np.ndarray, tg: TimeGrid) -> np.ndarray:
    # left nodes t_{k-1} of the steps inside (tau, T)
    return phi_values[tg.k_tau : tg.n_steps]


def compute_G(eta, tg: TimeGrid, M: DiscreteOperator) -> np.ndarray:
    """Pointwise time-integrated adjoint energy, sum over window nodes of dt phi^2."""
    phi = solve_adjoint(eta, tg, M).values
    return tg.dt * np.sum(_window(phi, tg) ** 2, axis=0)


def gramian_apply(beta, eta, tg: TimeGrid, M: DiscreteOperator) -> np.ndarray:
    eta = np.asarray(eta, float)
    b = _full(beta).reshape((1, -1) + (1,) * (eta.ndim - 1))
    phi = solve_adjoint(eta, tg, M).values
    R = M.resolvent(tg.dt)
    return march(R, np.zeros_like(eta), tg, b * _window(phi, tg))[-1]


def gramian_matrix(beta, tg: TimeGrid, M: DiscreteOperator) -> np.ndarray:
    """Lam_beta as a dense matrix acting on cell values (columns are Lam e_i)."""
    return gramian_apply(beta, np.eye(M.grid.n), tg, M)


def eval_J_eps(prob: Problem, eta, beta, y0) -> float:
    grid = prob.grid
    eta = np.asarray(eta, float)
    G = compute_G(eta, prob.tg, prob.M)
    phi0 = prob.free_terminal(eta)
    return float(
        0.5 * inner(_full(beta), G, grid)
        + inner(y0, phi0, grid)
        - inner(prob.y_d, eta, grid)
        + prob.eps0 * norm(eta, grid)
    )


def grad_J_eps(prob: Problem, eta, beta, y0) -> np.ndarray:
    """Riesz gradient in the quadrature inner product.

    At eta = 0 this is the minimum-norm subgradient of the smooth part only,
    Lam 0 + y(T; y0; 0) - y_d; zero is optimal iff its norm is at most eps0.
    """
    eta = np.asarray(eta, float)
    g = gramian_apply(beta, eta, prob.tg, prob.M) + prob.free_terminal(y0) - prob.y_d
    r = norm(eta, prob.grid)
    if r > 0:
        g = g + prob.eps0 * eta / r
    return g


def el_residual(prob: Problem, eta_star, beta, y0) -> float:
    if norm(eta_star, prob.grid) == 0:
        raise ValueError("Euler-Lagrange defect is undefined at eta* = 0; use the subgradient test")
    return float(norm(grad_J_eps(prob, eta_star, beta, y0), prob.grid))


def check_assumption_H(prob: Problem, beta, y0) -> bool:
    """True iff the uncontrolled terminal state misses the eps0-ball around y_d."""
    return bool(norm(prob.free_terminal(y0) - prob.y_d, prob.grid) > prob.eps0)


def extract_control(prob: Problem, eta_star, beta) -> ControlSignal:
    phi = solve_adjoint(eta_star, prob.tg, prob.M).values
    return ControlSignal(np.sqrt(_full(beta))[None, :] * _window(phi, prob.tg), prob.tg)


class DualQuadratic:
    """Materialised smooth part of J_eps: eta -> 1/2 <eta, Lam eta> + <c, eta>.

    Works in the coordinates z = sqrt(w) eta, where the quadrature inner
    product becomes Euclidean and Lam becomes a symmetric matrix.
    """

    def __init__(self, Lam: np.ndarray, grid: SpatialGrid):
        self.grid = grid
        self.Lam = Lam
        self.d = np.sqrt(grid.widths)
        S = self.d[:, None] * Lam / self.d[None, :]
        self.S = 0.5 * (S + S.T)
        sig, self.Q = np.linalg.eigh(self.S)
        self.sig = np.clip(sig, 0.0, None)

    @property
    def L(self) -> float:
        return float(self.sig[-1])

    def value(self, eta, c, eps0) -> float:
        z = self.d * eta
        return float(0.5 * z @ self.S @ z + (self.d * c) @ z + eps0 * np.linalg.norm(z))

    def solve(self, c, eps0: float, radius: float = np.inf) -> np.ndarray:
        """Exact minimiser over ||eta|| <= radius via the scalar secular equation.

        Stationarity reads (Lam + mu) eta = -c with mu = eps0/||eta||, and
        mu -> ||mu (Lam + mu)^{-1} c|| is increasing, so mu is a 1-D root.
        """
        ch = self.Q.T @ (self.d * c)
        cn = np.linalg.norm(ch)
        if cn <= eps0:
            return np.zeros_like(c)

        def resid(logmu):
            mu = math.exp(logmu)
            return np.linalg.norm(mu * ch / (self.sig + mu)) - eps0

        hi = math.log(max(self.L, eps0, 1e-300)) + 1.0
        while resid(hi) <= 0:
            hi += 5.0
        lo = hi - 5.0
        while resid(lo) > 0 and lo > -690:
            lo -= 5.0
        if resid(lo) > 0:
            mu = 0.0  # J unbounded below along the numerical null space; the ball decides
        else:
            mu = math.exp(scipy.optimize.brentq(resid, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500))
        with np.errstate(divide="ignore"):
            z = -ch / (self.sig + mu) if mu > 0 else np.full_like(ch, np.inf)
        if not np.isfinite(radius) and not np.all(np.isfinite(z)):
            raise FloatingPointError("dual functional is not coercive at this resolution")
        if np.linalg.norm(z) > radius:
            kmin = eps0 / radius

            def rad(logk):
                return np.linalg.norm(ch / (self.sig + math.exp(logk))) - radius

            lo_k = math.log(kmin)
            hi_k = lo_k + 1.0
            while rad(hi_k) > 0:
                hi_k += 5.0
            z = -ch / (self.sig + math.exp(scipy.optimize.brentq(rad, lo_k, hi_k, xtol=1e-15, rtol=1e-15)))
        return self.Q @ z / self.d


def _ray_polish(Lam, c, eps0, eta, grid, radius=np.inf):
    """Exact minimisation of J along the ray through eta."""
    q = float(inner(eta, Lam @ eta, grid))
    r = float(norm(eta, grid))
    l = float(inner(c, eta, grid)) + eps0 * r
    if r == 0 or q <= 0 or l >= 0:
        return eta
    s = min(-l / q, radius / r)
    return s * eta


@dataclass
class DualSolveReport:
    eta_star: np.ndarray
    V: float
    N: float
    el_residual: float
    terminal_residual: float
    iterations: int
    converged: bool
    assumption_H: bool
    duality_gap: float = 0.0  # |N^2 + 2V|
    method: str = "apg"  # solver that produced eta_star


def _apg(Q: DualQuadratic, c, eps0, tol, max_iters, radius, eta0=None):
    """FISTA with exact prox of eps0 ||.||, backtracking and function restarts."""
    grid = Q.grid
    Lam = Q.Lam
    w = grid.widths
    wc = w * c

    # plain weighted dots: this loop runs up to max_iters times on tiny vectors
    def ip(a, b):
        return float(a @ (w * b))

    def nrm(a):
        return math.sqrt(ip(a, a))

    def f(eta, Leta):
        return 0.5 * ip(eta, Leta) + float(wc @ eta)

    def prox(v, t):
        r = nrm(v)
        s = max(0.0, 1.0 - t * eps0 / r) if r > 0 else 0.0
        v = s * v
        r = s * r
        return v * (radius / r) if r > radius else v

    L = max(Q.L, 1e-300)
    L_cap = 4.0 * L  # Q.L is the exact constant; backtracking only absorbs rounding
    x = np.zeros(grid.n) if eta0 is None else np.array(eta0, float)
    Lx = Lam @ x
    y, Ly = x.copy(), Lx.copy()
    t = 1.0
    Fx = f(x, Lx) + eps0 * nrm(x)
    scale = max(1.0, nrm(c))
    for it in range(1, max_iters + 1):
        gy = Ly + c
        fy = f(y, Ly)
        while True:
            xn = prox(y - gy / L, 1.0 / L)
            Lxn = Lam @ xn
            d = xn - y
            # slack covers rounding in f, which grows with |f|
            slack = 1e-13 * max(scale, abs(fy))
            if f(xn, Lxn) <= fy + ip(gy, d) + 0.5 * L * ip(d, d) + slack or L >= L_cap:
                break
            L *= 2.0
        gmap = L * nrm(d)
        Fn = f(xn, Lxn) + eps0 * nrm(xn)
        if Fn > Fx:  # restart momentum
            t = 1.0
            y, Ly = xn, Lxn
        else:
            tn = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
            mom = (t - 1) / tn
            y = xn + mom * (xn - x)
            Ly = Lxn + mom * (Lxn - Lx)
            t = tn
        x, Lx, Fx = xn, Lxn, Fn
        if gmap <= tol:
            return x, it, True
    return x, max_iters, False


def minimize_J_eps(
    prob: Problem,
    beta,
    y0,
    tol: float = 1e-7,
    max_iters: int = 50_000,
    method: str = "apg",
    radius: float = np.inf,
    quad: DualQuadratic | None = None,
) -> DualSolveReport:
    """Minimise J_eps(., beta) and certify the minimum-norm control it generates.

    ``method="apg"`` runs accelerated proximal gradient with a stopping test on
    the gradient-map norm (``tol * max(1, ||y_d||)``); ``method="spectral"``
    solves the stationarity system exactly from an eigendecomposition of the
    Gramian. Both finish with an exact line search along the ray through the
    iterate, which makes N^2 = -2V hold to rounding.
    """
    grid = prob.grid
    y0 = np.asarray(y0, float)
    if quad is None:
        quad = DualQuadratic(gramian_matrix(beta, prob.tg, prob.M), grid)
    c = prob.free_terminal(y0) - prob.y_d
    H = bool(norm(c, grid) > prob.eps0)
    if method not in ("apg", "spectral", "auto"):
        raise ValueError(f"unknown method {method!r}")
    it, converged, used = 0, True, method
    if not H:
        eta, used = np.zeros(grid.n), "none"
    elif method in ("apg", "auto"):
        eta, it, converged = _apg(quad, c, prob.eps0, tol * max(1.0, float(norm(prob.y_d, grid))), max_iters, radius)
        used = "apg"
        if not converged and method == "auto":
            log.info("APG hit the iteration cap (%d); switching to the spectral solve", max_iters)
            eta, converged, used = quad.solve(c, prob.eps0, radius), True, "spectral"
        elif not converged:
            log.warning("APG hit the iteration cap (%d) before reaching tol=%g", max_iters, tol)
    else:
        eta = quad.solve(c, prob.eps0, radius)
    eta = _ray_polish(quad.Lam, c, prob.eps0, eta, grid, radius)
    if quad.value(eta, c, prob.eps0) > 0:
        eta = np.zeros(grid.n)

    V = eval_J_eps(prob, eta, beta, y0)
    u = extract_control(prob, eta, beta)
    N = u.norm(grid)
    if norm(eta, grid) > 0:
        el = el_residual(prob, eta, beta, y0)
    else:
        el = 0.0
    yT = march(prob.R, y0, prob.tg, np.sqrt(_full(beta))[None, :] * u.values)[-1]
    term = float(norm(yT - prob.y_d, grid))
    if used == "spectral":
        # the eigen-solve has no iteration to watch, so certify the result a posteriori
        converged = el <= 10 * tol * max(1.0, float(norm(prob.y_d, grid))) and term <= prob.eps0 * (1 + 1e-6)
        if not converged:
            log.warning("spectral solve failed its certificate (E-L %.2e, terminal %.4g)", el, term)
    return DualSolveReport(eta, V, N, el, term, it, converged, H, abs(N * N + 2 * V), used)
