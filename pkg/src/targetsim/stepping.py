"""Single adaptive steps of the probabilistic solver.

A step predicts the state stack over ``dt``, linearises the ODE residual at
the predicted mean, estimates a local output scale and a local error from the
residual, and (if the error is acceptable) conditions the prediction on a
vanishing residual.  All transition arithmetic happens in preconditioned
coordinates; results are mapped back before they leave this module.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .exceptions import StepDivergedError
from .gaussian import (
    AffineConditional,
    GaussianState,
    _trsm,
    condition_affine,
    extrapolate,
    qr_sqrt_sum,
)
from .linearization import linearize_ek0, linearize_ek1
from .prior import StateStack

__all__ = [
    "SolverConfig",
    "StepOutcome",
    "predict",
    "attempt_step",
    "pi_control",
    "calibrate_scale",
    "initial_dt",
    "SolveStats",
    "StepController",
]

_LINEARIZATIONS = {"ek0": linearize_ek0, "ek1": linearize_ek1}


@dataclass(frozen=True)
class SolverConfig:
    num_derivatives: int = 4
    linearization: str = "ek0"
    factorization: str = "dense"
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    safety: float = 0.95
    min_factor: float = 0.1
    max_factor: float = 10.0
    # PI exponents default to 0.7/(L+1) and 0.4/(L+1)
    pi_alpha: Optional[float] = None
    pi_beta: Optional[float] = None
    calibration: str = "dynamic"
    initial_dt: Optional[float] = None
    max_steps: int = 10_000_000

    def __post_init__(self):
        if int(self.num_derivatives) != self.num_derivatives or self.num_derivatives < 1:
            raise ValueError("num_derivatives must be a positive integer")
        if self.linearization not in _LINEARIZATIONS:
            raise ValueError(f"unknown linearization {self.linearization!r}")
        if self.factorization not in ("dense", "isotropic"):
            raise ValueError(f"unknown factorization {self.factorization!r}")
        if self.factorization == "isotropic" and self.linearization != "ek0":
            raise ValueError("the isotropic factorization only supports ek0")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.safety <= 1:
            raise ValueError("safety factor must lie in (0, 1]")
        if not self.min_factor < 1 < self.max_factor:
            raise ValueError("need min_factor < 1 < max_factor")
        if self.calibration not in ("dynamic", "none"):
            raise ValueError(f"unknown calibration {self.calibration!r}")
        if self.initial_dt is not None and not self.initial_dt > 0:
            raise ValueError("initial_dt must be positive")

    @property
    def isotropic(self) -> bool:
        return self.factorization == "isotropic"

    @property
    def alpha(self) -> float:
        return 0.7 / (self.num_derivatives + 1) if self.pi_alpha is None else self.pi_alpha

    @property
    def beta(self) -> float:
        return 0.4 / (self.num_derivatives + 1) if self.pi_beta is None else self.pi_beta

    def layout(self, dim: int) -> StateStack:
        return StateStack(self.num_derivatives, dim, self.isotropic)

    def resolved(self) -> dict:
        """All settings with defaults filled in, suitable for serialisation."""
        out = asdict(self)
        out["pi_alpha"] = self.alpha
        out["pi_beta"] = self.beta
        return out


@dataclass
class StepOutcome:
    accepted: bool
    t: float
    dt_used: float
    dt_next: float
    error: float
    scale: float
    marginal: Optional[GaussianState] = None
    backward: Optional[AffineConditional] = None
    singular: bool = False


def _hat(g: GaussianState, tdiag):
    mean = g.mean / tdiag.reshape((-1,) + (1,) * (g.mean.ndim - 1))
    return GaussianState(mean, g.cov_sqrt / tdiag[:, None])


def _unhat(g: GaussianState, tdiag):
    mean = g.mean * tdiag.reshape((-1,) + (1,) * (g.mean.ndim - 1))
    return GaussianState(mean, g.cov_sqrt * tdiag[:, None])


def _unhat_conditional(cond: AffineConditional, tdiag):
    col = tdiag.reshape((-1,) + (1,) * (cond.offset.ndim - 1))
    linear = cond.linear * (tdiag[:, None] / tdiag[None, :])
    center = None if cond.center is None else cond.center * col
    return AffineConditional(linear, cond.offset * col, cond.noise_sqrt * tdiag[:, None], center)


def predict(
    g: GaussianState,
    dt: float,
    stack: StateStack,
    output_scale: float = 1.0,
    reference_dt: Optional[float] = None,
):
    """Extrapolate ``g`` over ``dt`` under the prior and invert the transition.

    Returns ``(p(x(t+dt)), p(x(t) | x(t+dt)))``.  A zero step is the identity.
    The arithmetic runs in coordinates preconditioned for ``reference_dt``
    (default ``dt``).  When interpolating inside a longer step, pass that
    step's length: the state's covariance is scaled for it, and a much
    shorter preconditioner would mix coordinates of wildly different size.
    """
    if dt < 0 or not math.isfinite(dt):
        raise ValueError(f"cannot predict over dt={dt}")
    if dt == 0:
        return g, AffineConditional.identity(g.dim, g.mean.shape)
    ref = dt if reference_dt is None else max(dt, reference_dt)
    phi, sigma_sqrt = stack.transition()
    if ref != dt:
        L = stack.num_derivatives
        r = stack.expand_diag((dt / ref) ** (L - np.arange(L + 1) + 0.5))
        phi = r[:, None] * phi / r[None, :]
        sigma_sqrt = r[:, None] * sigma_sqrt
    tdiag = stack.precondition_diag(ref)
    pred, back = extrapolate(_hat(g, tdiag), phi, output_scale * sigma_sqrt)
    return _unhat(pred, tdiag), _unhat_conditional(back, tdiag)


def calibrate_scale(z, S_sqrt):
    """Local quasi-maximum-likelihood output scale ``z^T S^{-1} z / k``.

    ``S_sqrt`` is a lower-triangular factor of the innovation covariance.
    Returns ``(sigma_squared, singular)``; a singular ``S`` gives zero.
    """
    z = np.asarray(z, dtype=float)
    S_sqrt = np.atleast_2d(S_sqrt)
    diag = np.abs(S_sqrt.diagonal())
    if diag.size == 0:
        return 0.0, True
    smallest = diag.min()
    if smallest <= 1e-300 or smallest <= 1e-14 * diag.max():
        return 0.0, True
    w = _trsm(S_sqrt, z, lower=True).ravel()
    return float(w @ w) / z.size, False


def pi_control(error: float, dt: float, prev_error: float, config: SolverConfig) -> float:
    """Next step size from the proportional-integral controller."""
    prev_error = max(prev_error, 1e-10)
    if error == 0:
        factor = config.max_factor
    else:
        factor = config.safety * error ** (-config.alpha) * prev_error**config.beta
    return dt * min(config.max_factor, max(config.min_factor, factor))


def initial_dt(problem, initial: GaussianState, config: SolverConfig) -> float:
    """Magnitude heuristic ``0.01 * |u0| / |u0'|`` in tolerance-weighted norms."""
    if config.initial_dt is not None:
        return config.initial_dt
    stack = config.layout(problem.dim)
    u0 = stack.derivative(initial.mean, 0)
    du0 = stack.derivative(initial.mean, 1)
    scale = config.abs_tol + config.rel_tol * np.abs(u0)
    d0 = np.sqrt(np.mean((u0 / scale) ** 2))
    d1 = np.sqrt(np.mean((du0 / scale) ** 2))
    if d0 < 1e-5 or d1 < 1e-5:
        return 1e-6
    return float(min(0.01 * d0 / d1, problem.t1 - problem.t0))


def attempt_step(
    state: GaussianState,
    t: float,
    dt: float,
    problem,
    config: SolverConfig,
    prev_error: float = 1.0,
    force_accept: bool = False,
) -> StepOutcome:
    """Try one step of size ``dt`` from ``(t, state)``.

    Rejected steps only report the error and a smaller proposal.  With
    ``force_accept`` the error estimate is still computed but ignored, which
    turns the routine into a fixed-grid step.
    """
    if not dt > 0:
        raise ValueError(f"step size must be positive, got {dt}")
    stack = config.layout(problem.dim)
    phi, sigma_sqrt = stack.transition()
    tdiag = stack.precondition_diag(dt)
    tcol = tdiag.reshape((-1,) + (1,) * (state.mean.ndim - 1))
    prior_hat = _hat(state, tdiag)
    mean_pred = (phi @ prior_hat.mean) * tcol

    if not math.isfinite(mean_pred.sum()):
        raise StepDivergedError(t, dt, "prediction is not finite")
    try:
        H, b = _LINEARIZATIONS[config.linearization](problem, mean_pred)
    except FloatingPointError as exc:
        raise StepDivergedError(t, dt, "vector field failed") from exc
    z = H @ mean_pred + b
    if not math.isfinite(z.sum()):
        raise StepDivergedError(t, dt, "residual is not finite")

    H_hat = H * tdiag[None, :]
    S_sqrt = qr_sqrt_sum(H_hat, sigma_sqrt)
    sigma2, singular = calibrate_scale(z, S_sqrt)
    sigma = math.sqrt(sigma2)

    u_pred = stack.derivative(mean_pred, 0)
    std = np.linalg.norm(S_sqrt, axis=1)
    if std.shape[0] != u_pred.shape[0]:
        std = np.broadcast_to(std, u_pred.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        err = (dt * sigma) * std / (config.abs_tol + config.rel_tol * np.abs(u_pred))
        err = err.ravel()
        error = math.sqrt(float(err @ err) / err.size)
    if not math.isfinite(error):
        raise StepDivergedError(t, dt, "error estimate is not finite")

    dt_next = pi_control(error, dt, prev_error, config)
    accepted = force_accept or error <= 1.0
    if not accepted:
        return StepOutcome(False, t, dt, dt_next, error, sigma, singular=singular)

    scale = sigma if config.calibration == "dynamic" else 1.0
    pred_hat, back_hat = extrapolate(prior_hat, phi, scale * sigma_sqrt)
    post_hat, _ = condition_affine(pred_hat, H_hat, b)
    marginal = _unhat(post_hat, tdiag)
    backward = _unhat_conditional(back_hat, tdiag)
    if not (math.isfinite(marginal.mean.sum()) and math.isfinite(marginal.cov_sqrt.sum())):
        raise StepDivergedError(t, dt, "posterior is not finite")
    return StepOutcome(True, t + dt, dt, dt_next, error, scale, marginal, backward, singular)


@dataclass
class SolveStats:
    """Scalar summaries of a compute grid; storage does not grow with it."""

    num_steps: int = 0
    num_rejected: int = 0
    num_singular: int = 0
    min_dt: float = math.inf
    max_dt: float = 0.0

    def as_dict(self) -> dict:
        return {
            "num_steps": self.num_steps,
            "num_rejected": self.num_rejected,
            "num_singular": self.num_singular,
            "min_dt": self.min_dt if self.num_steps else None,
            "max_dt": self.max_dt if self.num_steps else None,
        }


class StepController:
    """Produces accepted steps, either adaptively or along a prescribed grid.

    Both the constant-memory driver and the store-everything oracle walk the
    compute grid through this class, which guarantees they visit identical
    points.  ``callback(t, dt)`` is invoked after every accepted step.
    """

    def __init__(self, problem, config: SolverConfig, dt: float, grid=None, callback=None):
        self.problem = problem
        self.config = config
        self.dt = float(dt)
        self.prev_error = 1.0
        self.stats = SolveStats()
        self.callback = callback
        self.grid = None
        if grid is not None:
            grid = np.asarray(grid, dtype=float)
            if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
                raise ValueError("compute grid must be strictly increasing with at least two points")
            if grid[0] != problem.t0 or grid[-1] != problem.t1:
                raise ValueError("compute grid must start at t0 and end at t1")
            self.grid = grid
            self._index = 0

    def step(self, state: GaussianState, t: float) -> StepOutcome:
        if self.stats.num_steps >= self.config.max_steps:
            raise StepDivergedError(t, self.dt, "maximum number of steps exceeded")
        if self.grid is not None:
            return self._fixed(state, t)
        t_end = self.problem.t1
        while True:
            remaining = t_end - t
            last = self.dt >= remaining
            dt = remaining if last else self.dt
            if dt <= 16 * np.finfo(float).eps * max(1.0, abs(t)):
                raise StepDivergedError(t, dt, "step size underflow")
            out = attempt_step(state, t, dt, self.problem, self.config, self.prev_error)
            self.dt = out.dt_next
            if out.accepted:
                self.prev_error = out.error
                if last:
                    out.t = t_end
                return self._record(out)
            self.stats.num_rejected += 1

    def _fixed(self, state, t):
        if self.grid[self._index] != t:
            raise ValueError(f"state time {t} is not on the compute grid")
        t_next = self.grid[self._index + 1]
        out = attempt_step(
            state, t, t_next - t, self.problem, self.config, self.prev_error, force_accept=True
        )
        self._index += 1
        out.t = t_next
        return self._record(out)

    def _record(self, out: StepOutcome) -> StepOutcome:
        s = self.stats
        s.num_steps += 1
        s.num_singular += int(out.singular)
        s.min_dt = min(s.min_dt, out.dt_used)
        s.max_dt = max(s.max_dt, out.dt_used)
        if self.callback is not None:
            self.callback(out.t, out.dt_used)
        return out
