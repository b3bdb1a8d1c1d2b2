"""Finite-volume discretisation of the degenerate operator (x^alpha v_x)_x on (0, 1).

Fields are plain float arrays of cell averages. Inner products use the cell
widths as quadrature weights, so ``inner(f, g, grid) = sum(w * f * g)``.
Batched fields (shape ``(n, k)``) are accepted by the solvers and treated
column by column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class GridError(ValueError):
    """Raised for inconsistent grids or out-of-range discretisation parameters."""


@dataclass(frozen=True)
class SpatialGrid:
    n: int
    alpha: float
    epsilon_cut: float
    centers: np.ndarray = field(repr=False)
    widths: np.ndarray = field(repr=False)
    omega1: np.ndarray = field(repr=False)  # indices of cells with center >= epsilon_cut

    @property
    def faces(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.widths)])

    @property
    def omega1_widths(self) -> np.ndarray:
        return self.widths[self.omega1]

    @property
    def omega1_measure(self) -> float:
        return float(self.omega1_widths.sum())

    @property
    def m(self) -> int:
        """Number of cells in the actuator region."""
        return len(self.omega1)


def build_grid(n: int, alpha: float, epsilon_cut: float) -> SpatialGrid:
    if n < 4:
        raise GridError(f"need at least 4 cells, got n={n}")
    if not 0.0 < alpha < 2.0:
        raise GridError(f"alpha={alpha} outside (0, 2): degeneracy exponent must lie in (0, 2)")
    if not 0.0 < epsilon_cut < 1.0:
        raise GridError(f"epsilon_cut={epsilon_cut} outside (0, 1)")
    widths = np.full(n, 1.0 / n)
    centers = (np.arange(n) + 0.5) / n
    omega1 = np.flatnonzero(centers >= epsilon_cut)
    if omega1.size == 0:
        raise GridError(f"no cell center lies in [{epsilon_cut}, 1) at n={n}")
    return SpatialGrid(n, float(alpha), float(epsilon_cut), centers, widths, omega1)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    tau: float
    n_steps: int
    tau_requested: float

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def k_tau(self) -> int:
        return int(round(self.tau / self.dt))

    @property
    def tau_rounding(self) -> float:
        return self.tau - self.tau_requested

    @property
    def n_control(self) -> int:
        """Number of steps (t_{k-1}, t_k] lying inside the control window."""
        return self.n_steps - self.k_tau

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


def build_time_grid(T: float, tau: float, n_steps: int) -> TimeGrid:
    """Time grid whose control window starts on a step boundary (tau is rounded)."""
    if T <= 0:
        raise GridError(f"T={T} must be positive")
    if not 0.0 < tau < T:
        raise GridError(f"tau={tau} must satisfy 0 < tau < T={T}")
    if n_steps < 2:
        raise GridError("need at least two time steps")
    dt = T / n_steps
    k_tau = int(round(tau / dt))
    if not 0 < k_tau < n_steps:
        raise GridError(f"tau={tau} rounds to a window boundary at n_steps={n_steps}")
    return TimeGrid(float(T), k_tau * dt, int(n_steps), float(tau))


def coefficient_values(grid: SpatialGrid, a=None) -> np.ndarray:
    """Sample the potential a(x) on cell centers.

    ``a`` may be None (a = 0), a scalar, a sequence of polynomial coefficients
    ``{"poly": [c0, c1, ...]}`` (a = c0 + c1 x + ...), or ``{"values": [...]}``.
    """
    if a is None:
        vals = np.zeros(grid.n)
    elif isinstance(a, dict):
        if "poly" in a:
            vals = np.polynomial.polynomial.polyval(grid.centers, np.asarray(a["poly"], float))
        elif "values" in a:
            vals = np.asarray(a["values"], float)
        else:
            raise GridError(f"unknown coefficient spec {sorted(a)}")
    elif np.isscalar(a):
        vals = np.full(grid.n, float(a))
    else:
        vals = np.asarray(a, float)
    if vals.shape != (grid.n,) or not np.all(np.isfinite(vals)):
        raise GridError("coefficient a(x) must give n finite values")
    return vals


@dataclass(frozen=True)
class DiscreteOperator:
    """Tridiagonal matrix of A - a on cell averages, stored as (lower, diag, upper)."""

    grid: SpatialGrid
    lower: np.ndarray = field(repr=False)  # M[i+1, i]
    diag: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)  # M[i, i+1]
    a: np.ndarray = field(repr=False)
    bc_left: str

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.upper, 1) + np.diag(self.lower, -1)

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = self.diag.reshape((-1,) + (1,) * (v.ndim - 1)) * v
        up = self.upper.reshape((-1,) + (1,) * (v.ndim - 1))
        lo = self.lower.reshape((-1,) + (1,) * (v.ndim - 1))
        out[:-1] += up * v[1:]
        out[1:] += lo * v[:-1]
        return out

    def resolvent(self, dt: float) -> np.ndarray:
        """Dense (I - dt M)^{-1}, one implicit Euler step."""
        n = self.grid.n
        ab = np.zeros((3, n))
        ab[0, 1:] = -dt * self.upper
        ab[1] = 1.0 - dt * self.diag
        ab[2, :-1] = -dt * self.lower
        return scipy.linalg.solve_banded((1, 1), ab, np.eye(n))


def assemble_operator(grid: SpatialGrid, a=None) -> DiscreteOperator:
    """Cell-centred finite volumes for (x^alpha v_x)_x - a v.

    Interior face flux is x_f^alpha (v_{i+1} - v_i)/h. At x = 1 the Dirichlet
    value enters through a ghost cell. At x = 0 the face coefficient vanishes
    for alpha >= 1 (zero weighted flux); for alpha < 1 the Dirichlet condition
    v(0) = 0 is imposed through the exact half-cell conductance
    (1 - alpha) (h/2)^(alpha - 1), since 0^alpha would switch it off.
    """
    avals = coefficient_values(grid, a)
    h = grid.widths
    faces = grid.faces
    alpha = grid.alpha
    # conductance k_f with flux = k_f * (v_right - v_left)
    interior = faces[1:-1] ** alpha / (grid.centers[1:] - grid.centers[:-1])
    if alpha < 1.0:
        bc_left = "dirichlet"
        left = (1.0 - alpha) * (grid.centers[0] - faces[0]) ** (alpha - 1.0)
    else:
        bc_left = "zero-flux"
        left = 0.0
    right = faces[-1] ** alpha / (faces[-1] - grid.centers[-1])

    diag = np.empty(grid.n)
    diag[:] = 0.0
    diag[:-1] -= interior / h[:-1]
    diag[1:] -= interior / h[1:]
    diag[0] -= left / h[0]
    diag[-1] -= right / h[-1]
    diag -= avals
    upper = interior / h[:-1]
    lower = interior / h[1:]
    return DiscreteOperator(grid, lower, diag, upper, avals, bc_left)


def inner(f: np.ndarray, g: np.ndarray, grid: SpatialGrid) -> float | np.ndarray:
    f = np.asarray(f)
    g = np.asarray(g)
    if f.shape[0] != grid.n or g.shape[0] != grid.n:
        raise GridError(f"field length {f.shape[0]}/{g.shape[0]} does not match grid n={grid.n}")
    nd = max(f.ndim, g.ndim)  # a single field pairs with every column of a batch
    f = f.reshape(f.shape + (1,) * (nd - f.ndim))
    g = g.reshape(g.shape + (1,) * (nd - g.ndim))
    w = grid.widths.reshape((-1,) + (1,) * (nd - 1))
    return np.sum(w * f * g, axis=0)


def norm(f: np.ndarray, grid: SpatialGrid) -> float | np.ndarray:
    return np.sqrt(inner(f, f, grid))


@dataclass(frozen=True)
class Trajectory:
    """Field values at every time node; ``values[k]`` is the state at ``t_k``."""

    values: np.ndarray
    tg: TimeGrid

    def at(self, t: float) -> np.ndarray:
        k = int(round(t / self.tg.dt))
        if not 0 <= k <= self.tg.n_steps or abs(k * self.tg.dt - t) > 1e-9 * max(1.0, self.tg.T):
            raise GridError(f"t={t} is not a time node")
        return self.values[k]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def __len__(self) -> int:
        return len(self.values)


def march(R: np.ndarray, y0: np.ndarray, tg: TimeGrid, source: np.ndarray | None = None) -> np.ndarray:
    """Implicit Euler: y^k = R (y^{k-1} + dt s^k), s^k nonzero only for k > k_tau.

    ``source[j]`` is the source on step k = k_tau + 1 + j.
    """
    y0 = np.asarray(y0, float)
    out = np.empty((tg.n_steps + 1,) + y0.shape)
    out[0] = y0
    dt = tg.dt
    k0 = tg.k_tau
    y = y0
    for k in range(1, tg.n_steps + 1):
        if source is not None and k > k0:
            y = R @ (y + dt * source[k - k0 - 1])
        else:
            y = R @ y
        out[k] = y
    return out


def solve_forward(y0, tg: TimeGrid, M: DiscreteOperator, beta=None, u=None) -> Trajectory:
    """State trajectory of y' = M y + chi_(tau,T) sqrt(beta) u.

    ``beta`` is a full-grid array (zero off the actuator region) or an
    ActuatorDensity; ``u`` an array of shape ``(n_control, n, ...)`` or a
    ControlSignal.
    """
    if (beta is None) != (u is None):
        raise ValueError("u must be given exactly when beta is given")
    y0 = np.asarray(y0, float)
    if y0.shape[0] != M.grid.n:
        raise GridError("initial state does not match the grid")
    R = M.resolvent(tg.dt)
    source = None
    if beta is not None:
        b = beta.full() if hasattr(beta, "full") else np.asarray(beta, float)
        uv = u.values if hasattr(u, "values") else np.asarray(u, float)
        if uv.shape[0] != tg.n_control or uv.shape[1] != M.grid.n:
            raise GridError(f"control has shape {uv.shape}, expected ({tg.n_control}, {M.grid.n}, ...)")
        source = np.sqrt(b).reshape((1, -1) + (1,) * (uv.ndim - 2)) * uv
    return Trajectory(march(R, y0, tg, source), tg)


def solve_adjoint(eta, tg: TimeGrid, M: DiscreteOperator) -> Trajectory:
    """Backward solve phi' + M phi = 0, phi(T) = eta, by reversing a forward solve."""
    fwd = solve_forward(eta, tg, M)
    return Trajectory(fwd.values[::-1], tg)
