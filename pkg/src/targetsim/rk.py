"""Embedded Runge-Kutta baselines driven by the same PI controller.

The Butcher tableaux are taken from scipy's ``RK23`` (Bogacki-Shampine 3(2))
and ``RK45`` (Dormand-Prince 5(4)) classes; only the stepping loop lives here,
so that the baselines share step-size control with the probabilistic solver.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.integrate

from .exceptions import StepDivergedError
from .problems import first_order_system
from .stepping import SolveStats, pi_control

__all__ = ["Tableau", "TABLEAUS", "RKConfig", "RKSolution", "solve_rk", "solve_rk_fixed"]


@dataclass(frozen=True)
class Tableau:
    name: str
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray  # error weights over the stages plus the FSAL stage
    order: int
    error_order: int

    @classmethod
    def from_scipy(cls, name: str, method) -> "Tableau":
        return cls(
            name,
            np.asarray(method.A, dtype=float),
            np.asarray(method.B, dtype=float),
            np.asarray(method.C, dtype=float),
            np.asarray(method.E, dtype=float),
            int(method.order),
            int(method.error_estimator_order),
        )

    @property
    def num_stages(self) -> int:
        return self.B.size


TABLEAUS = {
    "bosh3": Tableau.from_scipy("bosh3", scipy.integrate.RK23),
    "dopri5": Tableau.from_scipy("dopri5", scipy.integrate.RK45),
}


@dataclass(frozen=True)
class RKConfig:
    tableau: str = "dopri5"
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    safety: float = 0.95
    min_factor: float = 0.1
    max_factor: float = 10.0
    pi_alpha: Optional[float] = None
    pi_beta: Optional[float] = None
    initial_dt: Optional[float] = None
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.tableau not in TABLEAUS:
            raise ValueError(f"unknown tableau {self.tableau!r}; choose from {sorted(TABLEAUS)}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")

    @property
    def method(self) -> Tableau:
        return TABLEAUS[self.tableau]

    # exponents scale with the order of the error estimate
    @property
    def alpha(self) -> float:
        q = self.method.error_order
        return 0.7 / (q + 1) if self.pi_alpha is None else self.pi_alpha

    @property
    def beta(self) -> float:
        q = self.method.error_order
        return 0.4 / (q + 1) if self.pi_beta is None else self.pi_beta

    def resolved(self) -> dict:
        out = asdict(self)
        out["pi_alpha"] = self.alpha
        out["pi_beta"] = self.beta
        return out


@dataclass
class RKSolution:
    times: np.ndarray
    values: np.ndarray  # (len(times), d) values of u, derivatives dropped
    stats: SolveStats = field(default_factory=SolveStats)

    @property
    def stored_floats(self) -> int:
        return self.values.size + self.times.size


def _stages(rhs, t, y, dt, tab: Tableau, k0):
    K = np.empty((tab.num_stages + 1, y.size))
    K[0] = k0
    for s in range(1, tab.num_stages):
        K[s] = rhs(t + tab.C[s] * dt, y + dt * (K[:s].T @ tab.A[s, :s]))
    y_new = y + dt * (K[:-1].T @ tab.B)
    K[-1] = rhs(t + dt, y_new)
    return y_new, K


def _error_norm(K, dt, y, y_new, tab: Tableau, config: RKConfig) -> float:
    err = dt * (K.T @ tab.E)
    scale = config.abs_tol + config.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
    ratio = err / scale
    return math.sqrt(float(ratio @ ratio) / ratio.size)


def _initial_dt(rhs, t0, y0, f0, config: RKConfig, span: float) -> float:
    if config.initial_dt is not None:
        return config.initial_dt
    scale = config.abs_tol + config.rel_tol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    if d0 < 1e-5 or d1 < 1e-5:
        return min(1e-6, span)
    return float(min(0.01 * d0 / d1, span))


def solve_rk(problem, targets, config: RKConfig, callback: Optional[Callable] = None) -> RKSolution:
    """Adaptive embedded RK that steps exactly onto every target."""
    targets = np.asarray(targets, dtype=float)
    if targets.ndim != 1 or targets.size < 1 or np.any(np.diff(targets) <= 0):
        raise ValueError("targets must be strictly increasing")
    if targets[0] < problem.t0 or targets[-1] > problem.t1:
        raise ValueError("targets must lie inside the time span")
    rhs, _, y = first_order_system(problem)
    d = problem.dim
    tab = config.method
    t = problem.t0
    k = rhs(t, y)
    dt = _initial_dt(rhs, t, y, k, config, problem.t1 - problem.t0)
    stats = SolveStats()
    prev_error = 1.0
    out = np.empty((targets.size, d))
    j = 0
    while j < targets.size and targets[j] == t:
        out[j] = y[:d]
        j += 1
    while j < targets.size:
        stop = targets[j]
        remaining = stop - t
        last = dt >= remaining
        h = remaining if last else dt
        if h <= 16 * np.finfo(float).eps * max(1.0, abs(t)):
            raise StepDivergedError(t, h, "step size underflow")
        if stats.num_steps >= config.max_steps:
            raise StepDivergedError(t, h, "maximum number of steps exceeded")
        y_new, K = _stages(rhs, t, y, h, tab, k)
        error = _error_norm(K, h, y, y_new, tab, config)
        if not math.isfinite(error):
            raise StepDivergedError(t, h, "error estimate is not finite")
        dt_next = pi_control(error, h, prev_error, config)
        if error <= 1.0:
            t = stop if last else t + h
            y, k = y_new, K[-1]
            prev_error = error
            stats.num_steps += 1
            stats.min_dt = min(stats.min_dt, h)
            stats.max_dt = max(stats.max_dt, h)
            if callback is not None:
                callback(t, h)
            if last:
                out[j] = y[:d]
                j += 1
            # hitting a target should not shrink the proposal for the next one
            dt = max(dt_next, dt) if last else dt_next
        else:
            stats.num_rejected += 1
            dt = dt_next
    return RKSolution(targets.copy(), out, stats)


def solve_rk_fixed(problem, grid, tableau: str = "dopri5") -> RKSolution:
    """Fixed-step RK along ``grid``; returns the values at every grid point."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing with at least two points")
    rhs, _, y = first_order_system(problem)
    d = problem.dim
    tab = TABLEAUS[tableau]
    out = np.empty((grid.size, d))
    out[0] = y[:d]
    k = rhs(grid[0], y)
    stats = SolveStats()
    for i in range(grid.size - 1):
        h = grid[i + 1] - grid[i]
        y, K = _stages(rhs, grid[i], y, h, tab, k)
        k = K[-1]
        if not np.all(np.isfinite(y)):
            raise StepDivergedError(grid[i], h, "fixed-step solution is not finite")
        out[i + 1] = y[:d]
        stats.num_steps += 1
        stats.min_dt = min(stats.min_dt, h)
        stats.max_dt = max(stats.max_dt, h)
    return RKSolution(grid.copy(), out, stats)
