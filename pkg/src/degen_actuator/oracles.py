"""Brute-force reference solvers used to cross-check the optimizers.

Everything here materialises dense operators or enumerates, so it is only
meant for small grids.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .control import ActuatorDensity, Problem, _full, minimize_J_eps
from .density import project_capped_simplex
from .game import InnerSolver, inner_inf
from .pde import norm


class OracleInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class DenseControlOperator:
    """y(T; y0, beta; u) = K u.ravel() + b, with u of shape (n_control, n)."""

    K: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    prob: Problem = field(repr=False)

    @classmethod
    def build(cls, prob: Problem, beta, y0) -> "DenseControlOperator":
        tg, n = prob.tg, prob.grid.n
        R = prob.R
        sb = np.sqrt(_full(beta))
        # step k contributes R^(N-k+1) dt sqrt(beta) u^k to the terminal state
        blocks = []
        Rp = R.copy()
        for _ in range(tg.n_control):
            blocks.append(tg.dt * Rp * sb[None, :])
            Rp = R @ Rp
        K = np.hstack(blocks[::-1])
        b = np.linalg.matrix_power(R, tg.n_steps) @ np.asarray(y0, float)
        return cls(K, b, prob)

    def apply(self, u) -> np.ndarray:
        return self.K @ np.asarray(u, float).ravel() + self.b


def oracle_min_norm(prob: Problem, beta, y0, eps0: float | None = None, return_trace: bool = False):
    """min ||u|| s.t. ||K u + b - y_d|| <= eps0, by bisection on the Tikhonov weight."""
    eps0 = prob.eps0 if eps0 is None else eps0
    g, tg = prob.grid, prob.tg
    op = DenseControlOperator.build(prob, beta, y0)
    r = prob.y_d - op.b
    if norm(r, g) <= eps0:
        return (0.0, []) if return_trace else 0.0
    sw = np.sqrt(g.widths)
    su = np.sqrt(tg.dt * np.tile(g.widths, tg.n_control))
    Kt = sw[:, None] * op.K / su[None, :]
    U, s, _ = np.linalg.svd(Kt, full_matrices=False)
    rt = sw * r
    c = U.T @ rt
    perp2 = max(float(rt @ rt - c @ c), 0.0)

    def resid(gam):
        return math.sqrt(float(np.sum((gam / (s**2 + gam) * c) ** 2)) + perp2)

    if resid(1e-14) > eps0:
        raise OracleInfeasible(f"residual floor {resid(1e-14):.3g} exceeds eps0 at this resolution")
    lo, hi = math.log(1e-14), math.log(1e14)
    trace = []
    gam = 1e-14
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gam = math.exp(mid)
        rr = resid(gam)
        trace.append((gam, rr))
        if eps0 * (1 - 1e-8) <= rr <= eps0:
            break
        if rr > eps0:
            hi = mid
        else:
            lo = mid
    if not rr <= eps0:
        gam = math.exp(lo)
    val = math.sqrt(float(np.sum((s / (s**2 + gam) * c) ** 2)))
    return (val, trace) if return_trace else val


def fd_gradient(f, eta, step: float = 1e-6, widths=None) -> np.ndarray:
    """Central differences; dividing by ``widths`` gives the quadrature Riesz gradient."""
    eta = np.asarray(eta, float)
    out = np.empty_like(eta)
    for i in range(eta.size):
        e = np.zeros_like(eta)
        e[i] = step
        out[i] = (f(eta + e) - f(eta - e)) / (2 * step)
    if widths is not None:
        out /= np.asarray(widths, float)
    return out


def _sphere_net(rank: int, net_points: int) -> np.ndarray:
    if rank == 1:
        return np.array([[1.0], [-1.0]])
    if rank == 2:
        th = np.linspace(0, 2 * np.pi, net_points, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    k = max(2, int(round(net_points ** (1 / rank))))
    ax = np.linspace(-1, 1, k)
    pts = np.array(list(itertools.product(ax, repeat=rank)))
    r = np.linalg.norm(pts, axis=1)
    return pts[r > 0] / r[r > 0, None]


def lowrank_inner_oracle(prob: Problem, beta, delta0: float, rank: int = 2, net_points: int = 10_000,
                         return_eta: bool = False):
    """Minimum of J(beta, .) on the span of the top Gramian eigenvectors, inside the ball.

    The span is scanned by a net of directions; along each ray J is a convex
    quadratic in the radius and is minimised exactly.
    """
    if not 1 <= rank <= 3:
        raise ValueError("rank must be 1, 2 or 3")
    g = prob.grid
    solver = InnerSolver(prob, beta, delta0)
    quad = solver.quad
    V = quad.Q[:, ::-1][:, :rank] / quad.d[:, None]  # orthonormal in the quadrature product
    dirs = _sphere_net(rank, net_points) @ V.T  # unit-norm eta directions, shape (k, n)
    Lam, P = quad.Lam, solver.P
    q = np.einsum("ki,i,ki->k", dirs, g.widths, (Lam @ dirs.T).T)
    lin = -norm((P @ dirs.T), g) - dirs @ (g.widths * prob.y_d) + prob.eps0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(q > 0, np.clip(-lin / q, 0.0, delta0), np.where(lin < 0, delta0, 0.0))
    vals = 0.5 * q * s**2 + lin * s
    j = int(np.argmin(vals))
    best = min(0.0, float(vals[j]))
    if return_eta:
        return best, (s[j] * dirs[j] if vals[j] < 0 else np.zeros(g.n))
    return best


def oracle_best_actuator(prob: Problem, k_cells: int, delta0: float | None = None, y0_set=None,
                         n_starts: int = 4, seed=0, budget: int = 100_000):
    """Enumerate all masks with ``k_cells`` actuator cells.

    Worst-case mode (``y0_set`` None) scores a mask by Phi(chi_mask), to be
    maximised; otherwise by max over y0 in the set of N(y0, chi_mask), to be
    minimised. Returns (best mask, best score, masks, scores).
    """
    g = prob.grid
    m = g.m
    if not 1 <= k_cells < m:
        raise ValueError(f"k_cells must lie in [1, {m - 1}]")
    if math.comb(m, k_cells) > budget:
        raise ValueError(f"C({m},{k_cells}) exceeds the enumeration budget {budget}")
    masks, scores = [], []
    for idx in itertools.combinations(range(m), k_cells):
        mask = np.zeros(m, bool)
        mask[list(idx)] = True
        beta = ActuatorDensity.from_mask(mask, g)
        b = beta.full()
        if y0_set is None:
            if delta0 is None:
                raise ValueError("worst-case mode needs delta0")
            p = prob.with_(lam=beta.lam)
            _, val = inner_inf(p, b, delta0, n_starts=n_starts, seed=seed)
        else:
            val = max(minimize_J_eps(prob, b, y0, method="spectral").N for y0 in y0_set)
        masks.append(mask)
        scores.append(val)
    scores = np.array(scores)
    j = int(np.argmax(scores)) if y0_set is None else int(np.argmin(scores))
    return masks[j], float(scores[j]), np.array(masks), scores


def matrix_game_lp(A):
    """Value and maximiser strategy of max_p min_q p^T A q by linear programming."""
    A = np.atleast_2d(np.asarray(A, float))
    m, k = A.shape
    # variables (p, v); maximise v s.t. A^T p >= v, sum p = 1, p >= 0
    cost = np.r_[np.zeros(m), -1.0]
    A_ub = np.c_[-A.T, np.ones(k)]
    A_eq = np.r_[np.ones(m), 0.0][None, :]
    res = scipy.optimize.linprog(cost, A_ub=A_ub, b_ub=np.zeros(k), A_eq=A_eq, b_eq=[1.0],
                                 bounds=[(0, None)] * m + [(None, None)], method="highs")
    if not res.success:
        raise RuntimeError(res.message)
    return float(res.x[-1]), res.x[:m]


def random_feasible_betas(grid, lam: float, k: int, rng) -> np.ndarray:
    """Random relaxed densities, shape (k, m)."""
    mass = lam * grid.omega1_measure
    return project_capped_simplex(rng.uniform(-1, 2, (k, grid.m)).T, grid.omega1_widths, mass).T
