"""Actuator placement for degenerate parabolic equations via minimum-norm controls."""

from .control import (
    ActuatorDensity,
    ControlSignal,
    DensityError,
    DualSolveReport,
    Problem,
    compute_G,
    eval_J_eps,
    extract_control,
    gramian_apply,
    gramian_matrix,
    grad_J_eps,
    minimize_J_eps,
)
from .density import bathtub_maximize, extract_level_set, project_density
from .game import (
    BallSpec,
    DiracMixture,
    GameResult,
    build_ball,
    double_oracle,
    estimate_Clambda,
    eval_J_game,
    find_yhat0,
    grad_J_game,
    inner_inf,
    outer_sup,
)
from .pde import assemble_operator, build_grid, build_time_grid, inner, norm, solve_adjoint, solve_forward

__all__ = [name for name in dir() if not name.startswith("_")]
