"""Benchmark runners that produce flat, re-runnable records.

Each runner returns a list of :class:`BenchmarkRecord`.  Solver failures are
recorded as rows with a non-``ok`` status instead of aborting the sweep.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import StepDivergedError
from .fixedpoint import marginals, sample_joint, solve_targets
from .problems import BenchmarkProblem, brusselator
from .rk import RKConfig, solve_rk
from .simulation import estimate_stored_floats, simulate
from .stepping import SolverConfig

__all__ = [
    "BenchmarkRecord",
    "SOLVERS",
    "FIELDS",
    "run_solver",
    "run_workprecision",
    "run_memory_scaling",
    "run_stepcount",
    "run_sampling",
    "write_csv",
    "write_json",
    "rmse",
]

SOLVERS = ("ats", "as-oracle", "rk-bosh3", "rk-dopri5")
BYTES_PER_FLOAT = 8


@dataclass
class BenchmarkRecord:
    problem: str
    solver: str
    dim: int
    num_derivatives: Optional[int]
    linearization: Optional[str]
    factorization: Optional[str]
    rel_tol: float
    abs_tol: float
    num_targets: int
    num_steps: Optional[int]
    rmse: float
    wall_time_seconds: float
    stored_floats: Optional[int]
    as_estimate_floats: Optional[int]
    samples: Optional[int] = None
    status: str = "ok"
    config: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def as_row(self) -> Dict[str, str]:
        """Flat strings for CSV: floats with 17 significant digits, config as JSON."""
        row = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                row[f.name] = ""
            elif isinstance(value, dict):
                row[f.name] = json.dumps(value, sort_keys=True, default=_jsonable)
            elif isinstance(value, float):
                row[f.name] = format(value, ".17g")
            else:
                row[f.name] = str(value)
        return row


FIELDS = [f.name for f in fields(BenchmarkRecord)]


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def write_csv(records: Iterable[BenchmarkRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=FIELDS)
        writer.writeheader()
        for r in records:
            writer.writerow(r.as_row())


def write_json(records: Iterable[BenchmarkRecord], path, metadata: Optional[dict] = None) -> None:
    payload = {"metadata": metadata or {}, "records": [asdict(r) for r in records]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=_jsonable, allow_nan=True)


def rmse(approx, reference) -> float:
    diff = np.asarray(approx, dtype=float) - np.asarray(reference, dtype=float)
    return float(np.sqrt(np.mean(diff**2)))


def _best_of(fn: Callable, repetitions: int):
    """Run ``fn`` ``repetitions`` times; return its last result and the fastest time."""
    best, result = math.inf, None
    for _ in range(max(1, repetitions)):
        start = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - start)
    return result, best


def _u_means(gaussians, layout) -> np.ndarray:
    return np.array([layout.derivative(g.mean, 0) for g in gaussians])


def targets_for(bp: BenchmarkProblem, num_targets: int) -> np.ndarray:
    """``num_targets`` equispaced targets, i.e. ``num_targets + 1`` points."""
    return np.linspace(bp.ode.t0, bp.ode.t1, num_targets + 1)


def _pn_config(bp: BenchmarkProblem, rel_tol, abs_tol, overrides) -> SolverConfig:
    return SolverConfig(**bp.recommended(rel_tol=rel_tol, abs_tol=abs_tol, **overrides))


def run_solver(
    bp: BenchmarkProblem,
    solver: str,
    rel_tol: float,
    abs_tol: float,
    num_targets: int = 5,
    repetitions: int = 1,
    reference: bool = True,
    **overrides,
) -> BenchmarkRecord:
    """One benchmark row: solve, score against the reference, time, count storage."""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    targets = targets_for(bp, num_targets)
    ref = bp.reference(targets) if reference else None
    meta = {"reference": bp.reference_id if reference else None}

    if solver.startswith("rk-"):
        cfg = RKConfig(tableau=solver[3:], rel_tol=rel_tol, abs_tol=abs_tol)
        record = BenchmarkRecord(
            bp.name, solver, bp.ode.dim, None, None, None, rel_tol, abs_tol, num_targets,
            None, math.nan, math.nan, None, None, config={**cfg.resolved(), **meta},
        )
        try:
            sol, wall = _best_of(lambda: solve_rk(bp.ode, targets, cfg), repetitions)
        except StepDivergedError as exc:
            record.status = f"diverged: {exc}"
            return record
        record.num_steps = sol.stats.num_steps
        record.rmse = rmse(sol.values, ref) if reference else math.nan
        record.wall_time_seconds = wall
        record.stored_floats = sol.stored_floats
        return record

    cfg = _pn_config(bp, rel_tol, abs_tol, overrides)
    layout = cfg.layout(bp.ode.dim)
    record = BenchmarkRecord(
        bp.name, solver, bp.ode.dim, cfg.num_derivatives, cfg.linearization, cfg.factorization,
        rel_tol, abs_tol, num_targets, None, math.nan, math.nan, None, None,
        config={**cfg.resolved(), **meta},
    )
    try:
        if solver == "ats":
            sol, wall = _best_of(lambda: solve_targets(bp.ode, targets, cfg), repetitions)
            means = _u_means(marginals(sol), layout)
            steps, stored = sol.stats.num_steps, sol.stored_floats
        else:
            def oracle():
                sim = simulate(bp.ode, cfg)
                return sim, sim.interpolate(targets)

            (sim, interp), wall = _best_of(oracle, repetitions)
            means = _u_means(interp, layout)
            steps, stored = sim.num_steps, sim.stored_floats
    except StepDivergedError as exc:
        record.status = f"diverged: {exc}"
        return record
    record.num_steps = steps
    record.rmse = rmse(means, ref) if reference else math.nan
    record.wall_time_seconds = wall
    record.stored_floats = stored
    record.as_estimate_floats = estimate_stored_floats(steps, layout)
    return record


def run_workprecision(
    bp: BenchmarkProblem,
    solvers: Sequence[str] = SOLVERS,
    tolerances: Sequence[float] = tuple(10.0**-k for k in range(3, 11)),
    num_targets: int = 5,
    repetitions: int = 3,
    abs_tol_ratio: float = 1e-3,
    **overrides,
) -> List[BenchmarkRecord]:
    """RMSE, best-of-R wall time and storage for every (solver, tolerance)."""
    return [
        run_solver(bp, s, tol, tol * abs_tol_ratio, num_targets, repetitions, **overrides)
        for s in solvers
        for tol in tolerances
    ]


def run_memory_scaling(
    d_grid: Sequence[int] = (2, 4, 8, 16, 32, 64),
    num_targets: int = 200,
    tol: float = 1e-8,
    abs_tol_ratio: float = 1e-3,
    budget_bytes: float = 4e9,
    num_derivatives: int = 4,
    repetitions: int = 1,
    materialize: bool = True,
    reference: bool = False,
) -> List[BenchmarkRecord]:
    """Actual target-simulation storage against the store-everything estimate.

    The estimate follows the count-then-multiply protocol: a terminal-value
    solve (two targets, constant memory) counts the steps, which are then
    multiplied by the per-step storage.  The store-everything solver only runs
    when its estimate fits into ``budget_bytes`` and ``materialize`` is set.
    """
    out = []
    for d in d_grid:
        bp = brusselator(d)
        cfg = SolverConfig(
            **bp.recommended(
                rel_tol=tol, abs_tol=tol * abs_tol_ratio, num_derivatives=num_derivatives,
                linearization="ek0", factorization="isotropic",
            )
        )
        layout = cfg.layout(bp.ode.dim)
        targets = targets_for(bp, num_targets)
        ref = bp.reference(targets) if reference else None
        base = dict(
            problem=bp.name, dim=bp.ode.dim, num_derivatives=num_derivatives,
            linearization=cfg.linearization, factorization=cfg.factorization,
            rel_tol=tol, abs_tol=tol * abs_tol_ratio, num_targets=num_targets,
        )
        config = {**cfg.resolved(), "d_points": d, "budget_bytes": budget_bytes}
        try:
            probe = solve_targets(bp.ode, [bp.ode.t0, bp.ode.t1], cfg)
            estimate = estimate_stored_floats(probe.stats.num_steps, layout)
            sol, wall = _best_of(lambda: solve_targets(bp.ode, targets, cfg), repetitions)
        except StepDivergedError as exc:
            out.append(BenchmarkRecord(solver="ats", num_steps=None, rmse=math.nan,
                                       wall_time_seconds=math.nan, stored_floats=None,
                                       as_estimate_floats=None, status=f"diverged: {exc}",
                                       config=config, **base))
            continue
        err = rmse(_u_means(marginals(sol), layout), ref) if reference else math.nan
        out.append(BenchmarkRecord(solver="ats", num_steps=sol.stats.num_steps, rmse=err,
                                   wall_time_seconds=wall, stored_floats=sol.stored_floats,
                                   as_estimate_floats=estimate, config=config, **base))

        oracle = BenchmarkRecord(solver="as-oracle", num_steps=probe.stats.num_steps,
                                 rmse=math.nan, wall_time_seconds=math.nan, stored_floats=None,
                                 as_estimate_floats=estimate, config=config, **base)
        if estimate * BYTES_PER_FLOAT > budget_bytes:
            oracle.status = "skipped: estimate exceeds memory budget"
        elif materialize:
            def run():
                sim = simulate(bp.ode, cfg)
                return sim, sim.interpolate(targets)

            (sim, interp), wall = _best_of(run, repetitions)
            oracle.wall_time_seconds = wall
            oracle.stored_floats = sim.stored_floats
            oracle.num_steps = sim.num_steps
            if reference:
                oracle.rmse = rmse(_u_means(interp, layout), ref)
        else:
            oracle.status = "skipped: not materialised"
        out.append(oracle)
    return out


@dataclass
class StepTrace:
    times: np.ndarray
    dts: np.ndarray


def run_stepcount(
    bp: BenchmarkProblem,
    num_targets: int = 10,
    max_fixed_points: int = 200_000,
    **overrides,
) -> Tuple[List[BenchmarkRecord], StepTrace]:
    """Adaptive solve against two fixed grids built from it.

    One fixed grid uses the adaptive run's smallest step everywhere, the other
    has as many steps as the adaptive run.  Fixed grids larger than
    ``max_fixed_points`` are counted but not solved.
    """
    cfg = SolverConfig(**bp.recommended(**overrides))
    layout = cfg.layout(bp.ode.dim)
    targets = targets_for(bp, num_targets)
    ref = bp.reference(targets)
    t0, t1 = bp.ode.t0, bp.ode.t1
    base = dict(
        problem=bp.name, dim=bp.ode.dim, num_derivatives=cfg.num_derivatives,
        linearization=cfg.linearization, factorization=cfg.factorization,
        rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol, num_targets=num_targets,
    )
    times, dts = [], []

    def record_step(t, dt):
        times.append(t)
        dts.append(dt)

    start = time.perf_counter()
    sol = solve_targets(bp.ode, targets, cfg, callback=record_step)
    wall = time.perf_counter() - start
    adaptive = BenchmarkRecord(
        solver="ats", num_steps=sol.stats.num_steps,
        rmse=rmse(_u_means(marginals(sol), layout), ref), wall_time_seconds=wall,
        stored_floats=sol.stored_floats, as_estimate_floats=None,
        config={**cfg.resolved(), "grid": "adaptive"}, **base,
    )
    records = [adaptive]
    n_smallest = int(math.ceil((t1 - t0) / min(dts)))
    for label, n in (("fixed-smallest-step", n_smallest), ("fixed-matching-count", len(dts))):
        rec = BenchmarkRecord(
            solver="ats", num_steps=n, rmse=math.nan, wall_time_seconds=math.nan,
            stored_floats=None, as_estimate_floats=None,
            config={**cfg.resolved(), "grid": label}, **base,
        )
        records.append(rec)
        if n > max_fixed_points:
            rec.status = "skipped: grid exceeds max_fixed_points"
            continue
        grid = np.union1d(np.linspace(t0, t1, n + 1), targets)
        rec.num_steps = grid.size - 1
        start = time.perf_counter()
        try:
            fixed = solve_targets(bp.ode, targets, cfg, grid=grid)
        except StepDivergedError as exc:
            rec.status = f"diverged: {exc}"
            continue
        rec.wall_time_seconds = time.perf_counter() - start
        rec.stored_floats = fixed.stored_floats
        err = rmse(_u_means(marginals(fixed), layout), ref)
        rec.rmse = err
        if not math.isfinite(err):
            rec.status = "diverged: non-finite solution"
    return records, StepTrace(np.asarray(times), np.asarray(dts))


def _pipeline_b_floats(num_steps: int, num_targets: int, num_samples: int, layout) -> int:
    # store-everything chain on the augmented grid plus the batch of samples in flight
    per_sample = int(np.prod(layout.mean_shape))
    return estimate_stored_floats(num_steps + num_targets, layout) + num_samples * per_sample


def run_sampling(
    bp: BenchmarkProblem,
    tolerances: Sequence[float] = (1e-4, 1e-7, 1e-10),
    sample_grid: Sequence[int] = (5, 50, 500),
    num_targets: int = 50,
    seed: int = 0,
    repetitions: int = 1,
    abs_tol_ratio: float = 1e-3,
    budget_bytes: float = 4e9,
    pipelines: Sequence[str] = ("A", "B"),
    **overrides,
) -> List[BenchmarkRecord]:
    """Joint posterior sampling through both pipelines.

    Pipeline A solves on the targets and samples the target chain.  Pipeline B
    stores every step, augments the grid with the targets, samples the full
    chain and keeps the target values.
    """
    out = []
    for tol in tolerances:
        cfg = _pn_config(bp, tol, tol * abs_tol_ratio, overrides)
        layout = cfg.layout(bp.ode.dim)
        targets = targets_for(bp, num_targets)
        base = dict(
            problem=bp.name, dim=bp.ode.dim, num_derivatives=cfg.num_derivatives,
            linearization=cfg.linearization, factorization=cfg.factorization,
            rel_tol=tol, abs_tol=tol * abs_tol_ratio, num_targets=num_targets,
        )
        for K in sample_grid:
            config = {**cfg.resolved(), "seed": seed}
            if "A" in pipelines:
                def pipeline_a():
                    sol = solve_targets(bp.ode, targets, cfg)
                    return sol, sample_joint(sol, K, seed)

                (sol, draws), wall = _best_of(pipeline_a, repetitions)
                out.append(BenchmarkRecord(
                    solver="ats", num_steps=sol.stats.num_steps, rmse=math.nan,
                    wall_time_seconds=wall, stored_floats=sol.stored_floats,
                    as_estimate_floats=estimate_stored_floats(sol.stats.num_steps, layout),
                    samples=K, config={**config, "pipeline": "A"}, **base,
                ))
            if "B" in pipelines:
                rec = BenchmarkRecord(
                    solver="as-oracle", num_steps=None, rmse=math.nan,
                    wall_time_seconds=math.nan, stored_floats=None, as_estimate_floats=None,
                    samples=K, config={**config, "pipeline": "B"}, **base,
                )
                out.append(rec)
                # the step count is known from pipeline A or from a constant-memory probe
                steps = out[-2].num_steps if "A" in pipelines else solve_targets(
                    bp.ode, [bp.ode.t0, bp.ode.t1], cfg).stats.num_steps
                need = _pipeline_b_floats(steps, num_targets, K, layout)
                rec.as_estimate_floats = need
                if need * BYTES_PER_FLOAT > budget_bytes:
                    rec.status = "skipped: estimate exceeds memory budget"
                    continue

                def pipeline_b():
                    sim = simulate(bp.ode, cfg)
                    return sim, sim.sample_targets(targets, K, seed)

                (sim, draws), wall = _best_of(pipeline_b, repetitions)
                rec.num_steps = sim.num_steps
                rec.wall_time_seconds = wall
                rec.stored_floats = sim.stored_floats
    return out
