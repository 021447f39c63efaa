"""Adaptive probabilistic ODE solvers whose memory is set by the target grid.

Typical use::

    from targetsim import SolverConfig, get_problem, solve_targets, marginals

    bp = get_problem("logistic")
    sol = solve_targets(bp.ode, [0.0, 1.0, 2.0], SolverConfig(rel_tol=1e-8, abs_tol=1e-11))
    means = [sol.layout.derivative(g.mean) for g in marginals(sol)]
"""

from .exceptions import StepDivergedError, UnsupportedProblemError
from .fixedpoint import (
    FixedPointCarry,
    TargetSolution,
    TwoTargetResult,
    marginals,
    sample_joint,
    solve_targets,
    solve_two_targets,
)
from .gaussian import (
    AffineConditional,
    GaussianState,
    condition_affine,
    extrapolate,
    marginalize,
    merge_conditionals,
    qr_sqrt_sum,
)
from .linearization import ODEProblem, linearize_ek0, linearize_ek1, residual
from .prior import StateStack, iwp_transition, taylor_init
from .problems import PROBLEMS, BenchmarkProblem, get_problem
from .rk import RKConfig, solve_rk
from .simulation import Simulation, estimate_stored_floats, simulate
from .stepping import SolverConfig, SolveStats, StepController, attempt_step, pi_control, predict

__version__ = "0.1.0"

__all__ = [
    "AffineConditional",
    "BenchmarkProblem",
    "FixedPointCarry",
    "GaussianState",
    "ODEProblem",
    "PROBLEMS",
    "RKConfig",
    "Simulation",
    "SolveStats",
    "SolverConfig",
    "StateStack",
    "StepController",
    "StepDivergedError",
    "TargetSolution",
    "TwoTargetResult",
    "UnsupportedProblemError",
    "attempt_step",
    "condition_affine",
    "estimate_stored_floats",
    "extrapolate",
    "get_problem",
    "iwp_transition",
    "linearize_ek0",
    "linearize_ek1",
    "marginalize",
    "marginals",
    "merge_conditionals",
    "pi_control",
    "predict",
    "qr_sqrt_sum",
    "residual",
    "sample_joint",
    "simulate",
    "solve_rk",
    "solve_targets",
    "solve_two_targets",
    "taylor_init",
]
