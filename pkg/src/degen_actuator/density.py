"""Operations on the admissible density set {0 <= beta <= 1, sum w beta = mass}."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import ActuatorDensity, DensityError
from .pde import SpatialGrid


def project_capped_simplex(v, widths, mass, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Weighted Euclidean projection onto {0 <= b <= 1, widths @ b = mass}.

    The projection is b_i = clip(v_i - nu, 0, 1); nu is found by bisection on
    the (non-increasing) mass of that clip. ``v`` of shape (m, k) projects
    each column.
    """
    v = np.asarray(v, float)
    widths = np.asarray(widths, float)
    if not 0.0 <= mass <= widths.sum() * (1 + 1e-12):
        raise DensityError(f"mass {mass} infeasible for total width {widths.sum()}")
    V = v.reshape(v.shape[0], -1)

    lo, hi = V.min(axis=0) - 1.0, V.max(axis=0)
    nu = 0.5 * (lo + hi)
    for _ in range(max_iter):
        nu = 0.5 * (lo + hi)
        mnu = widths @ np.clip(V - nu, 0.0, 1.0)
        if np.all(np.abs(mnu - mass) <= tol):
            break
        above = mnu > mass
        lo = np.where(above, nu, lo)
        hi = np.where(above, hi, nu)
    B = np.clip(V - nu, 0.0, 1.0)
    # spread the remaining bisection error over the free cells
    free = (B > 0) & (B < 1)
    err = mass - widths @ B
    fw = widths @ free
    fix = (fw > 0) & (err != 0.0)
    if fix.any():
        shift = np.divide(err, fw, out=np.zeros_like(err), where=fw > 0)
        B = np.where(free & fix, np.clip(B + shift, 0.0, 1.0), B)
    return B.reshape(v.shape)


def project_density(v, grid: SpatialGrid, lam: float) -> ActuatorDensity:
    b = project_capped_simplex(v, grid.omega1_widths, lam * grid.omega1_measure)
    return ActuatorDensity(b, grid, lam)


def _descending_order(phi: np.ndarray) -> np.ndarray:
    # stable sort keeps ascending index among ties
    return np.argsort(-phi, kind="stable")


def bathtub(phi, widths, mass) -> tuple[np.ndarray, float]:
    """Maximise <beta, phi> over the density set; at most one fractional cell.

    Returns the density and the threshold c, the value of phi on the last
    cell receiving mass.
    """
    phi = np.asarray(phi, float)
    widths = np.asarray(widths, float)
    beta = np.zeros_like(phi)
    left = float(mass)
    c = float(phi.max()) if phi.size else 0.0
    for i in _descending_order(phi):
        if left <= 1e-15 * max(1.0, mass):
            break
        take = min(1.0, left / widths[i])
        beta[i] = take
        left -= take * widths[i]
        c = float(phi[i])
    return beta, c


def bathtub_maximize(phi, grid: SpatialGrid, lam: float) -> tuple[ActuatorDensity, float]:
    beta, c = bathtub(phi, grid.omega1_widths, lam * grid.omega1_measure)
    return ActuatorDensity(beta, grid, lam), c


@dataclass(frozen=True)
class LevelSet:
    mask: np.ndarray
    c: float
    mismatch: float  # |selected width - target width|
    degenerate: bool  # selection not determined by the values alone


def extract_level_set(H, widths, mass) -> LevelSet:
    """Binary upper level set {H >= c} whose width is nearest to ``mass``."""
    H = np.asarray(H, float)
    widths = np.asarray(widths, float)
    order = _descending_order(H)
    cum = np.concatenate([[0.0], np.cumsum(widths[order])])
    k = int(np.argmin(np.abs(cum - mass)))
    mask = np.zeros(H.size, bool)
    mask[order[:k]] = True
    c = float(H[order[k - 1]]) if k > 0 else float(H.max()) + 1.0
    scale = max(1.0, float(np.abs(H).max()))
    flat = float(np.ptp(H)) <= 1e-12 * scale
    tie = 0 < k < H.size and abs(H[order[k - 1]] - H[order[k]]) <= 1e-12 * scale
    return LevelSet(mask, c, float(abs(cum[k] - mass)), bool(flat or tie))
