"""Adaptive target simulation with storage proportional to the number of targets.

The forward pass walks the adaptive compute grid exactly like a plain
filter, but instead of storing every backward conditional it folds them into
a single accumulator ``p(x(a) | x(t))``.  Whenever the solver passes a target
``b`` the accumulator is closed off into ``p(x(a) | x(b))`` and a fresh one is
started at ``b``.  The result is a backward Markov chain over the targets only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from .gaussian import (
    AffineConditional,
    GaussianState,
    condition_affine,
    marginalize,
    merge_conditionals,
)
from .linearization import linearize_ek0, linearize_ek1
from .prior import StateStack, taylor_init
from .stepping import SolverConfig, SolveStats, StepController, initial_dt, predict

__all__ = [
    "FixedPointCarry",
    "TwoTargetResult",
    "TargetSolution",
    "solve_two_targets",
    "solve_targets",
    "initial_state",
    "marginals",
    "sample_joint",
]


@dataclass
class FixedPointCarry:
    """Everything the forward pass keeps alive between targets.

    ``accum`` is ``p(x(a) | x(t))``; ``scale`` is the output scale of the
    step that ended at ``t`` and is reused for interpolation inside it.
    """

    a: float
    p_a: GaussianState
    t: float
    p_t: GaussianState
    accum: AffineConditional
    controller: StepController
    scale: float = 1.0
    step: float = 0.0  # length of the step that ended at t

    def __post_init__(self):
        if self.a > self.t:
            raise ValueError(f"carry needs a <= t, got a={self.a}, t={self.t}")

    @property
    def dt(self) -> float:
        return self.controller.dt


class TwoTargetResult(NamedTuple):
    left: AffineConditional  # p(x(a) | x(b))
    p_b: GaussianState
    right: AffineConditional  # p(x(b) | x(t))
    p_t: GaussianState
    dt: float


def solve_two_targets(carry: FixedPointCarry, b: float, problem, config: SolverConfig) -> TwoTargetResult:
    """Advance the carry to target ``b`` in constant memory.

    The carry is updated in place so that it is ready for the next target:
    afterwards ``a == b`` and ``accum`` holds ``p(x(b) | x(t))``.
    """
    if not b > carry.a:
        raise ValueError(f"target {b} must lie to the right of a={carry.a}")
    stack = config.layout(problem.dim)

    if b < carry.t:
        # b sits inside the current step: interpolate, no time-stepping
        p_b, left = predict(carry.p_a, b - carry.a, stack, carry.scale, carry.step)
        _, right = predict(p_b, carry.t - b, stack, carry.scale, carry.step)
    else:
        acc = None  # identity, merged lazily
        pending = carry.accum
        t_prev, p_prev = carry.a, carry.p_a
        while carry.t < b:
            out = carry.controller.step(carry.p_t, carry.t)
            acc = pending if acc is None else merge_conditionals(acc, pending)
            t_prev, p_prev = carry.t, carry.p_t
            pending = out.backward
            carry.t, carry.p_t = out.t, out.marginal
            carry.scale, carry.step = out.scale, out.t - t_prev
        if carry.t == b:
            left = pending if acc is None else merge_conditionals(acc, pending)
            p_b = carry.p_t
            right = AffineConditional.identity(p_b.dim, p_b.mean.shape)
        else:
            p_b, cond = predict(p_prev, b - t_prev, stack, carry.scale, carry.step)
            left = merge_conditionals(acc, cond)
            _, right = predict(p_b, carry.t - b, stack, carry.scale, carry.step)

    carry.a, carry.p_a, carry.accum = b, p_b, right
    return TwoTargetResult(left, p_b, right, carry.p_t, carry.dt)


@dataclass
class TargetSolution:
    """Backward Markov chain over the targets.

    ``conditionals[m - 1]`` is ``p(x(s_{m-1}) | x(s_m))`` for ``m = 1..M``.
    """

    targets: np.ndarray
    initial: GaussianState
    terminal: GaussianState
    conditionals: List[AffineConditional]
    layout: StateStack
    stats: SolveStats = field(default_factory=SolveStats)
    config: Optional[SolverConfig] = None

    @property
    def num_targets(self) -> int:
        return len(self.conditionals)

    @property
    def stored_floats(self) -> int:
        """Floats held by the Gaussian parameters (target times excluded).

        A centre that is the successor's offset (or the terminal mean) is the
        same array and is not counted twice.
        """
        total = self.initial.num_floats + self.terminal.num_floats
        nxt = self.terminal.mean
        for c in reversed(self.conditionals):
            total += c.num_floats
            if c.center is not None and c.center is nxt:
                total -= c.center.size
            nxt = c.offset
        return total


def _check_targets(problem, targets) -> np.ndarray:
    targets = np.asarray(targets, dtype=float)
    if targets.ndim != 1 or targets.size < 2:
        raise ValueError("need at least two targets")
    if np.any(np.diff(targets) <= 0):
        raise ValueError("targets must be strictly increasing")
    span = problem.t1 - problem.t0
    for got, want in ((targets[0], problem.t0), (targets[-1], problem.t1)):
        if abs(got - want) > 1e-12 * max(1.0, abs(span)):
            raise ValueError("targets must start at t0 and end at t1")
    targets = targets.copy()
    targets[0], targets[-1] = problem.t0, problem.t1
    return targets


def initial_state(problem, config: SolverConfig, initial: Optional[GaussianState] = None):
    """Initial state conditioned on a vanishing residual at ``t0``."""
    if initial is None:
        initial = taylor_init(problem, config.num_derivatives, config.isotropic)
    linearize = linearize_ek1 if config.linearization == "ek1" else linearize_ek0
    H, b = linearize(problem, initial.mean)
    return condition_affine(initial, H, b)[0]


def solve_targets(
    problem,
    targets,
    config: SolverConfig,
    grid=None,
    callback: Optional[Callable[[float, float], None]] = None,
    initial: Optional[GaussianState] = None,
) -> TargetSolution:
    """Adaptive target simulation over ``targets`` (which must span the problem).

    ``grid`` replaces the adaptive controller by a prescribed compute grid.
    ``callback(t, dt)`` sees every accepted step without the solver storing it.
    """
    targets = _check_targets(problem, targets)
    p0 = initial_state(problem, config, initial)
    controller = StepController(
        problem, config, initial_dt(problem, p0, config), grid=grid, callback=callback
    )
    carry = FixedPointCarry(
        a=targets[0],
        p_a=p0,
        t=targets[0],
        p_t=p0,
        accum=AffineConditional.identity(p0.dim, p0.mean.shape),
        controller=controller,
    )
    conditionals = []
    for b in targets[1:]:
        res = solve_two_targets(carry, b, problem, config)
        conditionals.append(res.left)
    terminal = res.p_b if carry.t == targets[-1] else marginalize(res.right, carry.p_t)
    _recenter(conditionals, terminal)
    return TargetSolution(
        targets=targets,
        initial=p0,
        terminal=terminal,
        conditionals=conditionals,
        layout=config.layout(problem.dim),
        stats=controller.stats,
        config=config,
    )


def _recenter(conditionals: List[AffineConditional], terminal: GaussianState) -> None:
    """Centre every conditional at the offset of its successor, in place.

    Walking backwards from the terminal mean, each input is then centred close
    to its smoothed mean, so ``y - center`` stays small when gains are large.
    The centres alias arrays that are stored anyway and cost no extra floats.
    """
    nxt = terminal.mean
    for m in range(len(conditionals) - 1, -1, -1):
        c = conditionals[m]
        shift = nxt if c.center is None else nxt - c.center
        conditionals[m] = AffineConditional(c.linear, c.offset + c.linear @ shift, c.noise_sqrt, nxt)
        nxt = conditionals[m].offset


def marginals(sol: TargetSolution) -> List[GaussianState]:
    """Marginals at all targets in forward time order."""
    out = [sol.terminal]
    for cond in reversed(sol.conditionals):
        out.append(marginalize(cond, out[-1]))
    return out[::-1]


def _batched(matrix, x):
    # apply matrix to axis 1 of a batch of means
    return np.moveaxis(np.tensordot(matrix, x, axes=([1], [1])), 0, 1)


def sample_joint(sol: TargetSolution, num_samples: int, seed=None) -> np.ndarray:
    """Joint posterior draws of ``u`` at all targets, shape ``(K, M + 1, d)``."""
    if num_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    shape = (num_samples,) + sol.terminal.mean.shape
    layout = sol.layout
    out = np.empty((num_samples, len(sol.targets), layout.dim))

    def u_block(x):
        return x.reshape(num_samples, layout.num_derivatives + 1, layout.dim)[:, 0]

    g = sol.terminal
    x = g.mean + _batched(g.cov_sqrt, rng.standard_normal(shape))
    out[:, -1] = u_block(x)
    for m in range(len(sol.conditionals) - 1, -1, -1):
        c = sol.conditionals[m]
        x = c.offset + _batched(c.linear, x if c.center is None else x - c.center)
        x = x + _batched(c.noise_sqrt, rng.standard_normal(shape))
        out[:, m] = u_block(x)
    return out
