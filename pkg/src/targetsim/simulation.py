"""Store-everything adaptive simulation, the reference for target simulation.

Every filtering marginal and backward conditional on the compute grid is
kept, smoothed with a backward pass, and interpolated at arbitrary times.
Memory grows linearly with the number of steps, which is exactly what the
constant-memory driver in :mod:`targetsim.fixedpoint` avoids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .gaussian import AffineConditional, GaussianState, marginalize
from .fixedpoint import _batched, initial_state
from .prior import StateStack
from .stepping import SolverConfig, SolveStats, StepController, initial_dt, predict

__all__ = ["Simulation", "simulate", "per_step_floats", "estimate_stored_floats"]


@dataclass
class Simulation:
    times: np.ndarray
    filtered: List[GaussianState]
    # backward[n] is p(x(t_n) | x(t_{n+1})) with the scale of step n+1
    backward: List[AffineConditional]
    scales: np.ndarray
    layout: StateStack
    stats: SolveStats = field(default_factory=SolveStats)
    _smoothed: Optional[List[GaussianState]] = None

    @property
    def num_steps(self) -> int:
        return len(self.backward)

    @property
    def stored_floats(self) -> int:
        return (
            sum(g.num_floats for g in self.filtered)
            + sum(c.num_floats for c in self.backward)
            + self.times.size
            + self.scales.size
        )

    def smoothed(self) -> List[GaussianState]:
        if self._smoothed is None:
            out = [self.filtered[-1]]
            for cond in reversed(self.backward):
                out.append(marginalize(cond, out[-1]))
            self._smoothed = out[::-1]
        return self._smoothed

    def _interval(self, s):
        n = int(np.searchsorted(self.times, s, side="left"))
        if n > len(self.times) - 1 or (n == 0 and s != self.times[0]):
            raise ValueError(f"time {s} lies outside the simulated span")
        return n

    def interpolate(self, targets, method: str = "two-sided") -> List[GaussianState]:
        """Smoothed marginals at arbitrary times within the span.

        ``"two-sided"`` predicts from the filtering marginal left of each time
        and corrects with the smoothed marginal on the right.  ``"augmented"``
        inserts the times into the grid and runs the backward pass over the
        refined chain, which is the same chain the constant-memory driver
        folds together.  The two agree in exact arithmetic; in floating point
        they can differ in the highest derivatives when a time sits very
        close behind a grid point.
        """
        if method == "augmented":
            return self._interpolate_augmented(targets)
        if method != "two-sided":
            raise ValueError(f"unknown interpolation method {method!r}")
        smoothed = self.smoothed()
        out = []
        for s in np.atleast_1d(targets):
            n = self._interval(s)
            if self.times[n] == s:
                out.append(smoothed[n])
                continue
            # s in (t_{n-1}, t_n): interpolate with the scale of step n
            lo, hi, scale = self.times[n - 1], self.times[n], self.scales[n - 1]
            p_s, _ = predict(self.filtered[n - 1], s - lo, self.layout, scale, hi - lo)
            _, cond = predict(p_s, hi - s, self.layout, scale, hi - lo)
            out.append(marginalize(cond, smoothed[n]))
        return out

    def _interpolate_augmented(self, targets) -> List[GaussianState]:
        targets = np.atleast_1d(np.asarray(targets, dtype=float))
        for s in targets:
            self._interval(s)
        times, terminal, conds = self.augmented_chain(targets)
        want = {float(s): i for i, s in enumerate(targets)}
        out: List[Optional[GaussianState]] = [None] * targets.size
        g = terminal
        for i in range(len(times) - 1, -1, -1):
            if i < len(times) - 1:
                g = marginalize(conds[i], g)
            j = want.get(float(times[i]))
            if j is not None:
                out[j] = g
        return out

    def augmented_chain(self, targets):
        """Backward chain over the compute grid augmented with ``targets``.

        Returns ``(times, terminal, conditionals)`` where ``conditionals[i]``
        is ``p(x(times[i]) | x(times[i+1]))``.
        """
        targets = np.asarray(targets, dtype=float)
        times, conds = [self.times[0]], []
        for n in range(self.num_steps):
            lo, hi, scale = self.times[n], self.times[n + 1], self.scales[n]
            inner = targets[(targets > lo) & (targets < hi)]
            if inner.size == 0:
                conds.append(self.backward[n])
            else:
                g, t_left = self.filtered[n], lo
                for s in inner:
                    g, c = predict(g, s - t_left, self.layout, scale, hi - lo)
                    conds.append(c)
                    t_left = s
                    times.append(s)
                conds.append(predict(g, hi - t_left, self.layout, scale, hi - lo)[1])
            times.append(hi)
        return np.asarray(times), self.filtered[-1], conds

    def sample_targets(self, targets, num_samples: int, seed=None) -> np.ndarray:
        """Joint draws on the augmented grid, subselected at ``targets``."""
        times, terminal, conds = self.augmented_chain(targets)
        keep = {float(s): i for i, s in enumerate(np.asarray(targets, dtype=float))}
        rng = np.random.default_rng(seed)
        shape = (num_samples,) + terminal.mean.shape
        L, d = self.layout.num_derivatives, self.layout.dim
        out = np.empty((num_samples, len(keep), d))

        def record(i, x):
            j = keep.get(float(times[i]))
            if j is not None:
                out[:, j] = x.reshape(num_samples, L + 1, d)[:, 0]

        x = terminal.mean + _batched(terminal.cov_sqrt, rng.standard_normal(shape))
        record(len(times) - 1, x)
        for i in range(len(conds) - 1, -1, -1):
            c = conds[i]
            x = c.offset + _batched(c.linear, x if c.center is None else x - c.center)
            x = x + _batched(c.noise_sqrt, rng.standard_normal(shape))
            record(i, x)
        return out


def _sizes(layout: StateStack):
    D = layout.cov_dim
    mean = int(np.prod(layout.mean_shape))
    tri = D * (D + 1) // 2
    # backward conditionals carry their centre, hence the second mean
    return mean + tri, D * D + 2 * mean + tri


def per_step_floats(layout: StateStack) -> int:
    """Floats one compute-grid point costs a store-everything solver.

    A filtering marginal, a backward conditional, the time and the scale.
    """
    marginal, conditional = _sizes(layout)
    return marginal + conditional + 2


def estimate_stored_floats(num_steps: int, layout: StateStack) -> int:
    """Storage of a store-everything run with ``num_steps`` steps, without running it."""
    marginal, conditional = _sizes(layout)
    return (num_steps + 1) * (marginal + 1) + num_steps * (conditional + 1)


def simulate(
    problem,
    config: SolverConfig,
    grid=None,
    initial: Optional[GaussianState] = None,
    callback=None,
) -> Simulation:
    """Adaptive (or fixed-grid) filter pass that stores every step."""
    p0 = initial_state(problem, config, initial)
    controller = StepController(
        problem, config, initial_dt(problem, p0, config), grid=grid, callback=callback
    )
    t, g = problem.t0, p0
    times, filtered, backward, scales = [t], [g], [], []
    while t < problem.t1:
        out = controller.step(g, t)
        t, g = out.t, out.marginal
        times.append(t)
        filtered.append(g)
        backward.append(out.backward)
        scales.append(out.scale)
    return Simulation(
        times=np.asarray(times),
        filtered=filtered,
        backward=backward,
        scales=np.asarray(scales),
        layout=config.layout(problem.dim),
        stats=controller.stats,
    )
