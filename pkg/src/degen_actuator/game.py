"""Worst-initial-state actuator placement as a zero-sum game.

The maximiser picks a density beta, the minimiser picks terminal data eta in
the ball ||eta|| <= delta0 (or a finite mixture of them). The payoff

    J(beta, eta) = 1/2 <beta, G(eta)> - ||phi(0; eta)|| - <y_d, eta> + eps0 ||eta||

is affine in beta, so a mixture over betas collapses to its average and a
best response to a mixture over etas is a bathtub problem on the averaged
field H = sum_k q_k G(eta_k).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .control import ActuatorDensity, DualQuadratic, Problem, _full, compute_G, gramian_apply, gramian_matrix
from .density import LevelSet, bathtub, bathtub_maximize, extract_level_set, project_capped_simplex, project_density
from .pde import inner, norm

log = logging.getLogger(__name__)


class RangeError(RuntimeError):
    """The discrete range of the free propagator cannot reach y_d to eps0/2."""


# ---------------------------------------------------------------- payoff

def _payoff_rest(prob: Problem, eta) -> np.ndarray | float:
    """The beta-independent part -||P eta|| - <y_d, eta> + eps0 ||eta||."""
    g = prob.grid
    return -norm(prob.free_terminal(eta), g) - inner(prob.y_d, eta, g) + prob.eps0 * norm(eta, g)


def eval_J_game(prob: Problem, beta, eta):
    """Payoff J(beta, eta); ``eta`` may be a batch of shape (n, k)."""
    eta = np.asarray(eta, float)
    G = compute_G(eta, prob.tg, prob.M)
    b = _full(beta).reshape((-1,) + (1,) * (eta.ndim - 1))
    val = 0.5 * inner(b, G, prob.grid) + _payoff_rest(prob, eta)
    return float(val) if eta.ndim == 1 else val


def _smooth_norm(v, grid, sigma):
    return math.sqrt(float(inner(v, v, grid)) + sigma * sigma)


def grad_J_game(prob: Problem, beta, eta, sigma: float = 0.0) -> np.ndarray:
    """Riesz gradient of J(beta, .); norms are smoothed by sqrt(||v||^2 + sigma^2)."""
    g = prob.grid
    eta = np.asarray(eta, float)
    Peta = prob.free_terminal(eta)
    out = gramian_apply(beta, eta, prob.tg, prob.M) - prob.y_d
    rp = _smooth_norm(Peta, g, sigma)
    if rp > 0:
        out -= prob.free_terminal(Peta) / rp
    re = _smooth_norm(eta, g, sigma)
    if re > 0:
        out += prob.eps0 * eta / re
    return out


# ---------------------------------------------------------------- the ball

@dataclass(frozen=True)
class BallSpec:
    delta0: float
    C_lambda_hat: float
    yhat0: np.ndarray = field(repr=False)
    range_residual: float  # ||P yhat0 - y_d||, certified < eps0/2

    def __post_init__(self):
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")


def find_yhat0(prob: Problem, gamma0: float = 1.0, factor: float = 0.1, gamma_min: float = 1e-14):
    """Tikhonov ladder for ||P z - y_d|| < eps0/2, gamma decreased geometrically.

    Returns (z, gamma, residual).
    """
    g = prob.grid
    target = 0.5 * prob.eps0
    if norm(prob.y_d, g) < target:
        return np.zeros(g.n), gamma0, float(norm(prob.y_d, g))
    d = np.sqrt(g.widths)
    S = d[:, None] * prob.P / d[None, :]
    sig, Q = np.linalg.eigh(0.5 * (S + S.T))
    yh = Q.T @ (d * prob.y_d)
    gamma = gamma0
    while gamma >= gamma_min:
        zh = sig * yh / (sig**2 + gamma)
        z = Q @ zh / d
        res = float(norm(prob.free_terminal(z) - prob.y_d, g))
        if res < target:
            return z, gamma, res
        gamma *= factor
    err = RangeError(f"Tikhonov ladder reached gamma < {gamma_min:g} with residual {res:.3g} >= eps0/2 = {target:.3g}")
    err.residual = res
    raise err


def compute_delta0(C_lambda_hat: float, eps0: float, yhat0_norm: float) -> float:
    return C_lambda_hat * (1.0 + yhat0_norm) ** 2 / eps0


def measure_bound(lam: float) -> float:
    """Lower bound on |{beta >= sqrt(lam/2)}| / |Omega_1| for feasible beta; may be <= 0."""
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    s = math.sqrt(2 * lam)
    return (2 * lam - s) / (2 - s)


def random_unit_fields(prob: Problem, k: int, rng: np.random.Generator) -> np.ndarray:
    """Half white noise, half smooth random sine series; unit norm columns, shape (n, k)."""
    g = prob.grid
    x = g.centers
    out = rng.standard_normal((g.n, k))
    n_smooth = k // 2
    modes = np.arange(1, 9)
    coef = rng.standard_normal((len(modes), n_smooth)) / modes[:, None]
    out[:, :n_smooth] = np.sin(np.pi * np.outer(x, modes)) @ coef
    return out / norm(out, g)


def random_densities(prob: Problem, lam: float, k: int, rng: np.random.Generator) -> np.ndarray:
    """Feasible densities on Omega_1 cells, shape (m, k): one third bathtub-extreme."""
    g = prob.grid
    V = rng.uniform(-1, 2, (k, g.m)).T
    mass = lam * g.omega1_measure
    out = project_capped_simplex(V, g.omega1_widths, mass)
    for j in range(0, k, 3):
        out[:, j] = bathtub(V[:, j], g.omega1_widths, mass)[0]
    return out


def observability_ratios(prob: Problem, etas: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """||phi(0; eta)||^2 / <beta, G(eta)> column by column (denominator floored at 1e-300)."""
    g = prob.grid
    G = compute_G(etas, prob.tg, prob.M)[g.omega1]
    den = np.sum(g.omega1_widths[:, None] * betas * G, axis=0)
    num = norm(prob.free_terminal(etas), g) ** 2
    return num / np.maximum(den, 1e-300)


def sphere_samples(prob: Problem, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from the unit sphere of the quadrature norm, shape (n, k)."""
    e = rng.standard_normal((prob.grid.n, k)) / np.sqrt(prob.grid.widths)[:, None]
    return e / norm(e, prob.grid)


def estimate_Clambda(prob: Problem, lam: float, n_samples: int, seed) -> float:
    """Empirical observability constant, 2 x the largest sampled ratio.

    Each unit eta is paired with a random feasible density and with the
    bathtub-extreme density minimising <beta, G(eta)>, which is the worst
    density for that eta.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    g = prob.grid
    rng = np.random.default_rng(seed)
    etas = sphere_samples(prob, n_samples, rng)
    G = compute_G(etas, prob.tg, prob.M)[g.omega1]
    mass = lam * g.omega1_measure
    worst = np.stack([bathtub(-G[:, j], g.omega1_widths, mass)[0] for j in range(n_samples)], axis=1)
    rand = random_densities(prob, lam, n_samples, rng)
    num = norm(prob.free_terminal(etas), g) ** 2
    den = np.minimum(np.sum(g.omega1_widths[:, None] * worst * G, axis=0),
                     np.sum(g.omega1_widths[:, None] * rand * G, axis=0))
    if np.all(den <= 1e-300):
        raise RuntimeError("all observability denominators vanished; check that tau < T")
    return 2.0 * float(np.max(num / np.maximum(den, 1e-300)))


def build_ball(prob: Problem, n_samples: int = 200, seed=0) -> BallSpec:
    yhat0, _, res = find_yhat0(prob)
    C = estimate_Clambda(prob, prob.lam, n_samples, seed)
    return BallSpec(compute_delta0(C, prob.eps0, float(norm(yhat0, prob.grid))), C, yhat0, res)


# ---------------------------------------------------------------- inner problem

class InnerSolver:
    """Minimises J(beta, .) over the ball by DC iterations from several starts.

    Each DC step replaces -||P eta|| by its supporting hyperplane at the
    current iterate, i.e. fixes the worst unit initial state
    y0 = -P eta_k / ||P eta_k||, and solves the resulting convex dual problem
    exactly.
    """

    def __init__(self, prob: Problem, beta, radius: float):
        self.prob = prob
        self.beta = beta
        self.radius = radius
        self.grid = prob.grid
        self.P = prob.P
        self.quad = DualQuadratic(gramian_matrix(beta, prob.tg, prob.M), self.grid)

    def value(self, eta) -> float:
        g = self.grid
        return float(
            0.5 * inner(eta, self.quad.Lam @ eta, g)
            - norm(self.P @ eta, g)
            - inner(self.prob.y_d, eta, g)
            + self.prob.eps0 * norm(eta, g)
        )

    def dca(self, y0, max_iter: int = 500, tol: float = 1e-12):
        g, prob = self.grid, self.prob
        best_eta, best = np.zeros(g.n), 0.0
        prev = np.inf
        for _ in range(max_iter):
            c = self.P @ y0 - prob.y_d
            eta = self.quad.solve(c, prob.eps0, self.radius)
            Peta = self.P @ eta
            r = norm(Peta, g)
            if r == 0:
                break
            val = self.value(eta)
            if val < best:
                best_eta, best = eta, val
            if prev - val <= tol * max(1.0, abs(val)):
                break
            prev = val
            y0 = -Peta / r
        return best_eta, best

    def candidate_y0s(self, rng, n_random: int, warm=()):
        g, prob = self.grid, self.prob
        cands = []
        for eta in warm:
            Peta = self.P @ eta
            r = norm(Peta, g)
            if r > 0:
                cands.append(-Peta / r)
        for v in (prob.y_d, self.P @ prob.y_d):
            r = norm(v, g)
            if r > 0:
                cands += [v / r, -v / r]
        # directions maximising <P y0, (Lam + mu)^{-1} P y0>: the hardest to steer
        d = self.quad.d
        SP = d[:, None] * self.P / d[None, :]
        SP = 0.5 * (SP + SP.T)
        mu = max(prob.eps0 / max(self.radius, 1e-300), 1e-12 * max(self.quad.L, 1e-300))
        for mu_k in (mu, 1e3 * mu, 1e6 * mu):
            Sinv = (self.quad.Q / (self.quad.sig + mu_k)) @ self.quad.Q.T
            _, V = np.linalg.eigh(SP @ Sinv @ SP)
            for j in range(1, 3):
                v = V[:, -j] / d
                v /= norm(v, g)
                cands += [v, -v]
        if n_random:
            R = random_unit_fields(prob, n_random, rng)
            cands += list(R.T)
        return cands


def inner_inf(prob: Problem, beta, ball: BallSpec | float, n_starts: int = 4, seed=0, tol: float = 1e-12,
              warm=(), solver: InnerSolver | None = None):
    """Best-found minimiser of J(beta, .) over ||eta|| <= delta0; returns (eta, value)."""
    radius = ball.delta0 if isinstance(ball, BallSpec) else float(ball)
    solver = solver or InnerSolver(prob, beta, radius)
    rng = np.random.default_rng(seed)
    best_eta, best = np.zeros(prob.grid.n), 0.0
    for eta in warm:  # known strategies are candidates in their own right
        if norm(eta, prob.grid) <= radius * (1 + 1e-9):
            v = solver.value(eta)
            if v < best:
                best_eta, best = np.asarray(eta, float), v
    for y0 in solver.candidate_y0s(rng, n_starts, warm):
        eta, val = solver.dca(y0, tol=tol)
        if val < best:
            best_eta, best = eta, val
    return best_eta, best


# ---------------------------------------------------------------- outer problem

def _kelley_step(prob: Problem, cuts_G, cuts_c):
    """Maximiser of the cutting-plane model min_k 1/2 <beta, G_k> + c_k over densities."""
    g = prob.grid
    W = g.omega1_widths
    m = g.m
    A = np.array(cuts_G) * W[None, :]
    # variables (beta, t): maximise t s.t. t - 1/2 A beta <= c
    cost = np.r_[np.zeros(m), -1.0]
    A_ub = np.c_[-0.5 * A, np.ones(len(cuts_c))]
    res = scipy.optimize.linprog(
        cost, A_ub=A_ub, b_ub=np.array(cuts_c), A_eq=np.r_[W, 0.0][None, :], b_eq=[prob.lam * g.omega1_measure],
        bounds=[(0, 1)] * m + [(None, None)], method="highs",
    )
    if not res.success:
        return None, np.inf
    beta = project_density(np.clip(res.x[:m], 0, 1), g, prob.lam)
    return beta, float(res.x[-1])


def outer_sup(prob: Problem, ball: BallSpec, init_beta: ActuatorDensity | None = None, max_iters: int = 60,
              tol: float = 1e-9, n_starts: int = 4, seed=0, cut_iters: int = 60):
    """Maximise the concave Phi(beta) = inf_eta J(beta, eta) over densities.

    Projected supergradient ascent with steps step0/sqrt(k), followed by a
    cutting-plane phase: each inner minimiser eta_k gives the exact affine
    majorant 1/2 <beta, G(eta_k)> + c(eta_k) of Phi, and the next density
    maximises the pointwise minimum of these. Returns (best beta, its Phi
    value, history of Phi values).
    """
    g = prob.grid
    lam = prob.lam
    W = g.omega1_widths
    beta = init_beta or ActuatorDensity.uniform(g, lam)
    warm: list[np.ndarray] = []
    cuts_G, cuts_c = [], []
    best_beta, best, hist = beta, -np.inf, []
    step0 = None

    def evaluate(beta, k):
        nonlocal best_beta, best
        eta, phi = inner_inf(prob, beta, ball, n_starts=n_starts, seed=(seed, k), warm=warm[-8:])
        hist.append(phi)
        if phi > best:
            best_beta, best = beta, phi
        G = compute_G(eta, prob.tg, prob.M)[g.omega1]
        if norm(eta, g) > 0:
            warm.append(eta)
        cuts_G.append(G)
        cuts_c.append(float(_payoff_rest(prob, eta)))
        return eta, phi, G

    for k in range(1, max_iters + 1):
        eta, phi, G = evaluate(beta, k)
        if norm(eta, g) == 0:
            return best_beta, best, hist  # Phi = 0 is the largest possible value
        sg = 0.5 * G
        if step0 is None:
            step0 = 0.5 / max(float(np.abs(sg).max()), 1e-12)
        beta = project_density(beta.values + step0 / math.sqrt(k) * sg, g, lam)

    for k in range(max_iters + 1, max_iters + cut_iters + 1):
        beta, upper = _kelley_step(prob, cuts_G, cuts_c)
        if beta is None or upper - best <= tol * max(1.0, abs(best)):
            break
        evaluate(beta, k)
    log.debug("outer_sup: best %.10g after %d evaluations", best, len(hist))
    return best_beta, best, hist


# ---------------------------------------------------------------- mixtures and best responses

@dataclass(frozen=True)
class DiracMixture:
    weights: np.ndarray
    etas: np.ndarray  # shape (K, n)

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "etas", np.atleast_2d(np.asarray(self.etas, float)))
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12 or len(w) != len(self.etas):
            raise ValueError("mixture weights must be nonnegative and sum to one")

    def check_ball(self, grid, delta0: float) -> bool:
        return bool(np.all(norm(self.etas.T, grid) <= delta0 * (1 + 1e-9)))

    @classmethod
    def dirac(cls, eta) -> "DiracMixture":
        return cls(np.ones(1), np.asarray(eta, float)[None, :])


def mixture_H_field(prob: Problem, h: DiracMixture) -> np.ndarray:
    """H_h = sum_k w_k G(eta_k) on the actuator cells."""
    G = compute_G(h.etas.T, prob.tg, prob.M)[prob.grid.omega1]
    return G @ h.weights


def mixture_payoff(prob: Problem, beta, h: DiracMixture) -> float:
    """J~(beta, h) = sum_k w_k J(beta, eta_k)."""
    return float(h.weights @ eval_J_game(prob, beta, h.etas.T))


def best_response_beta(prob: Problem, h: DiracMixture) -> ActuatorDensity:
    return bathtub_maximize(0.5 * mixture_H_field(prob, h), prob.grid, prob.lam)[0]


# ---------------------------------------------------------------- finite games

def restricted_game_value(A, rounds: int = 10_000, gap_tol: float = 1e-6, step: float = 0.5):
    """Mixed equilibrium of the matrix game max_p min_q p^T A q by optimistic hedge.

    Returns (p, q, value, gap) where value is the midpoint of the certified
    bracket [min_j (p^T A)_j, max_i (A q)_i] of width ``gap``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    m, k = A.shape
    span = float(np.ptp(A))
    if span == 0.0:
        return np.full(m, 1 / m), np.full(k, 1 / k), float(A.flat[0]), 0.0
    An = (A - A.min()) / span
    lp, lq = np.zeros(m), np.zeros(k)
    gp_prev, gq_prev = np.zeros(m), np.zeros(k)
    p_sum, q_sum = np.zeros(m), np.zeros(k)
    best = (None, None, np.inf)
    for t in range(1, rounds + 1):
        p = np.exp(step * (lp + gp_prev - (lp + gp_prev).max()))
        p /= p.sum()
        q = np.exp(-step * (lq + gq_prev - (lq + gq_prev).min()))
        q /= q.sum()
        gp, gq = An @ q, p @ An
        lp += gp
        lq += gq
        gp_prev, gq_prev = gp, gq
        p_sum += p
        q_sum += q
        if t % 50 == 0 or t == rounds:
            pa, qa = p_sum / t, q_sum / t
            lo, hi = (pa @ An).min(), (An @ qa).max()
            if hi - lo < best[2]:
                best = (pa.copy(), qa.copy(), hi - lo)
            if (hi - lo) * span <= gap_tol:
                break
    pa, qa, _ = best
    lo, hi = float((pa @ A).min()), float((A @ qa).max())
    return pa, qa, 0.5 * (lo + hi), max(hi - lo, 0.0)


# ---------------------------------------------------------------- double oracle

@dataclass
class GameResult:
    beta_star: ActuatorDensity
    h_star: DiracMixture
    V_minus: float
    V_plus: float
    gap: float
    level_threshold: float
    omega_star: np.ndarray
    fractional_cells: int
    H: np.ndarray = field(repr=False)
    beta_response: ActuatorDensity = field(repr=False)
    level_set: LevelSet = field(repr=False)
    history: list = field(default_factory=list, repr=False)
    rounds: int = 0


def double_oracle(prob: Problem, ball: BallSpec, tol: float = 0.05, max_rounds: int = 40, n_starts: int = 4,
                  seed=0, abs_tol: float = 1e-6, init_betas=()):
    """Grow finite strategy sets until the certified gap V+ - V- is small.

    V- is the best Phi(beta) found for an averaged maximiser strategy (a lower
    bound on the game value); V+ is the exact bathtub value against the
    minimiser's current mixture (an upper bound). Terminates when
    V+ - V- <= tol |V-| or <= abs_tol.
    """
    g = prob.grid
    lam = prob.lam
    betas = [ActuatorDensity.uniform(g, lam)] + list(init_betas)
    etas = [np.zeros(g.n)]
    Gs = [np.zeros(g.m)]
    rests = [0.0]
    V_minus, V_plus = -np.inf, np.inf
    best_beta = betas[0]
    best_q = DiracMixture.dirac(etas[0])
    hist = []

    def add_eta(eta):
        etas.append(eta)
        Gs.append(compute_G(eta, prob.tg, prob.M)[g.omega1])
        rests.append(float(_payoff_rest(prob, eta)))

    def certify(beta, r):
        nonlocal V_minus, best_beta
        eta, phi = inner_inf(prob, beta, ball, n_starts=n_starts, seed=(seed, r), warm=etas)
        if phi > V_minus:
            V_minus, best_beta = phi, beta
        return eta, phi

    rounds = 0
    for r in range(max_rounds):
        rounds = r + 1
        W = g.omega1_widths
        A = 0.5 * np.array([[(W * b.values) @ G for G in Gs] for b in betas]) + np.array(rests)[None, :]
        p, q, val, rgap = restricted_game_value(A)
        beta_bar = ActuatorDensity(sum(pj * b.values for pj, b in zip(p, betas)), g, lam, check_mass=False)
        beta_bar = ActuatorDensity(beta_bar.values * (beta_bar.target_mass / beta_bar.mass), g, lam)
        H = np.array(Gs).T @ q
        beta_br, _ = bathtub_maximize(0.5 * H, g, lam)
        upper = float(0.5 * (W * beta_br.values) @ H + q @ np.array(rests))
        if upper < V_plus:
            V_plus = upper
            best_q = DiracMixture(q, np.array(etas))
        eta_br, phi_bar = certify(beta_bar, 2 * r)
        _, phi_br = certify(beta_br, 2 * r + 1)
        gap = V_plus - V_minus
        hist.append(dict(round=rounds, V_minus=V_minus, V_plus=V_plus, gap=gap, restricted=val,
                         restricted_gap=rgap, n_betas=len(betas), n_etas=len(etas)))
        log.info("round %d: V- %.6g V+ %.6g gap %.3g", rounds, V_minus, V_plus, gap)
        if gap <= max(tol * abs(V_minus), abs_tol):
            break
        improved = False
        if upper > val + 1e-12 * max(1.0, abs(val)):
            betas.append(beta_br)
            improved = True
        if phi_bar < val - 1e-12 * max(1.0, abs(val)):
            add_eta(eta_br)
            improved = True
        if not improved:
            break

    H_star = mixture_H_field(prob, best_q)
    beta_resp, _ = bathtub_maximize(0.5 * H_star, g, lam)
    ls = extract_level_set(H_star, g.omega1_widths, lam * g.omega1_measure)
    return GameResult(
        beta_star=best_beta, h_star=best_q, V_minus=V_minus, V_plus=V_plus, gap=V_plus - V_minus,
        level_threshold=ls.c, omega_star=ls.mask, fractional_cells=beta_resp.fractional_cells,
        H=H_star, beta_response=beta_resp, level_set=ls, history=hist, rounds=rounds,
    )
