"""Command line entry point: ``targetsim solve`` and ``targetsim bench ...``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict
from typing import List, Optional, Sequence

import numpy as np

from . import harness
from .exceptions import StepDivergedError, UnsupportedProblemError
from .fixedpoint import marginals, solve_targets
from .problems import PROBLEMS, get_problem
from .stepping import SolverConfig


class UsageError(Exception):
    pass


def parse_tolerances(text: str) -> List[float]:
    """``"1e-3,1e-5"`` or a decade range such as ``"1e-3..1e-10"``."""
    text = text.strip()
    if ".." in text:
        lo, hi = (float(x) for x in text.split(".."))
        if lo <= 0 or hi <= 0:
            raise argparse.ArgumentTypeError("tolerances must be positive")
        a, b = math.log10(lo), math.log10(hi)
        if not (a.is_integer() and b.is_integer()):
            raise argparse.ArgumentTypeError("range endpoints must be powers of ten")
        step = -1 if b < a else 1
        return [10.0 ** k for k in range(int(a), int(b) + step, step)]
    try:
        values = [float(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("tolerances must be positive")
    return values


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, problem_default: Optional[str] = "logistic"):
    p.add_argument("--problem", default=problem_default, choices=sorted(PROBLEMS))
    p.add_argument("--abs-tol-ratio", type=_positive_float, default=1e-3,
                   help="absolute tolerance as a multiple of the relative one (default 1e-3)")
    p.add_argument("--targets", type=int, default=None, help="number of target intervals M")
    p.add_argument("--num-derivatives", type=int, default=None)
    p.add_argument("--linearization", choices=("ek0", "ek1"), default=None)
    p.add_argument("--factorization", choices=("dense", "isotropic"), default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--out", default=None, help="output file (stdout when omitted)")
    p.add_argument("--format", choices=("csv", "json"), default=None,
                   help="defaults to the --out suffix, else csv")
    p.add_argument("--check", action="store_true",
                   help="exit with status 1 when a run fails or a sanity check does not hold")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="targetsim", description="Adaptive target simulation of ODEs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = sub.add_parser("solve", help="solve one problem and report the target marginals")
    _common(solve)
    solve.add_argument("--tol", type=_positive_float, default=None)

    bench = sub.add_parser("bench", help="benchmark sweeps")
    kinds = bench.add_subparsers(dest="bench", required=True, parser_class=_Parser)

    wp = kinds.add_parser("workprecision", help="error against time and memory over tolerances")
    _common(wp)
    wp.add_argument("--tols", type=parse_tolerances, default=parse_tolerances("1e-3..1e-10"))
    wp.add_argument("--solvers", default=",".join(harness.SOLVERS))

    mem = kinds.add_parser("memory", help="Brusselator storage against dimension")
    _common(mem, problem_default="brusselator")
    mem.add_argument("--d", type=_int_list, default=[2, 4, 8, 16, 32, 64],
                     help="comma separated spatial grid sizes")
    mem.add_argument("--tol", type=_positive_float, default=1e-8)
    mem.add_argument("--budget-bytes", type=_positive_float, default=4e9)
    mem.add_argument("--no-materialize", action="store_true",
                     help="never run the store-everything solver, only estimate it")

    sc = kinds.add_parser("stepcount", help="adaptive grid against two fixed grids")
    _common(sc, problem_default="van-der-pol")
    sc.add_argument("--tol", type=_positive_float, default=1e-3)
    sc.add_argument("--max-fixed-points", type=int, default=200_000)
    sc.add_argument("--trace", default=None, help="write the adaptive (t, dt) trace to this CSV")

    smp = kinds.add_parser("sampling", help="joint sampling through both pipelines")
    _common(smp, problem_default="three-body")
    smp.add_argument("--tols", type=parse_tolerances, default=[1e-4, 1e-7, 1e-10])
    smp.add_argument("--samples", type=_int_list, default=[5, 50, 500])
    smp.add_argument("--budget-bytes", type=_positive_float, default=4e9)
    return parser


def _overrides(args) -> dict:
    out = {}
    for key in ("num_derivatives", "linearization", "factorization"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def _fmt(args) -> str:
    if args.format:
        return args.format
    if args.out and args.out.endswith(".json"):
        return "json"
    return "csv"


def _emit(records, args, metadata) -> None:
    if args.out is not None:
        if _fmt(args) == "json":
            harness.write_json(records, args.out, metadata)
        else:
            harness.write_csv(records, args.out)
        return
    if _fmt(args) == "json":
        payload = {"metadata": metadata, "records": [asdict(r) for r in records]}
        json.dump(payload, sys.stdout, indent=2, default=harness._jsonable)
        sys.stdout.write("\n")
        return
    writer = csv.DictWriter(sys.stdout, fieldnames=harness.FIELDS)
    writer.writeheader()
    for r in records:
        writer.writerow(r.as_row())


def _solve(args) -> int:
    bp = get_problem(args.problem)
    tol = args.tol if args.tol is not None else bp.rel_tol
    cfg = SolverConfig(**bp.recommended(rel_tol=tol, abs_tol=tol * args.abs_tol_ratio, **_overrides(args)))
    m = args.targets if args.targets is not None else 5
    targets = harness.targets_for(bp, m)
    sol = solve_targets(bp.ode, targets, cfg)
    layout = sol.layout
    gs = marginals(sol)
    means = np.array([layout.derivative(g.mean, 0) for g in gs])
    stds = np.array([layout.derivative_std(g, 0) for g in gs])
    payload = {
        "problem": bp.name,
        "config": cfg.resolved(),
        "targets": targets.tolist(),
        "means": means.tolist(),
        "stds": stds.tolist(),
        "num_steps": sol.stats.num_steps,
        "stats": sol.stats.as_dict(),
        "stored_floats": sol.stored_floats,
    }
    ok = bool(np.all(np.isfinite(means)))
    if args.check:
        ref = bp.reference(targets)
        payload["rmse"] = harness.rmse(means, ref)
        payload["reference"] = bp.reference_id
        ok = ok and payload["rmse"] <= 1e3 * tol
    if _fmt(args) == "csv":
        lines = ["t," + ",".join(f"u{i}" for i in range(means.shape[1]))]
        lines += [",".join(format(v, ".17g") for v in (t, *row)) for t, row in zip(targets, means)]
        text = "\n".join(lines) + "\n"
    else:
        text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if ok or not args.check else 1


def _checks(kind: str, records) -> List[str]:
    """Sanity checks applied under ``--check``; returns failure messages."""
    fails = [f"{r.solver} tol={r.rel_tol:g}: {r.status}" for r in records
             if not r.ok and not r.status.startswith("skipped")
             and r.config.get("grid") != "fixed-matching-count"]
    if kind == "workprecision":
        stored = {r.stored_floats for r in records if r.solver == "ats" and r.ok}
        if len(stored) > 1:
            fails.append(f"ats storage varies across tolerances: {sorted(stored)}")
    elif kind == "memory":
        ats = [r for r in records if r.solver == "ats" and r.ok]
        if ats and ats[-1].as_estimate_floats < 1e3 * ats[-1].stored_floats:
            fails.append(
                f"estimate/actual ratio {ats[-1].as_estimate_floats / ats[-1].stored_floats:.3g} < 1e3"
            )
    elif kind == "sampling":
        a = [r for r in records if r.config.get("pipeline") == "A"]
        steps = [r.num_steps for r in a if r.samples == a[0].samples] if a else []
        if any(x >= y for x, y in zip(steps, steps[1:])):
            fails.append(f"step counts do not increase with tightening tolerance: {steps}")
    return fails


def _bench(args) -> int:
    bp_name = args.problem
    over = _overrides(args)
    meta = {"command": f"bench {args.bench}", "argv": sys.argv[1:]}
    if args.bench == "workprecision":
        bp = get_problem(bp_name)
        solvers = [s for s in args.solvers.split(",") if s]
        bad = set(solvers) - set(harness.SOLVERS)
        if bad:
            raise UsageError(f"unknown solver(s) {sorted(bad)}; choose from {harness.SOLVERS}")
        records = harness.run_workprecision(
            bp, solvers, args.tols, args.targets or 5, args.repetitions, args.abs_tol_ratio, **over
        )
        meta["reference"] = bp.reference_id
    elif args.bench == "memory":
        if bp_name != "brusselator":
            raise UsageError("bench memory runs the Brusselator only")
        records = harness.run_memory_scaling(
            args.d, args.targets or 200, args.tol, args.abs_tol_ratio, args.budget_bytes,
            over.get("num_derivatives", 4), repetitions=1, materialize=not args.no_materialize,
        )
    elif args.bench == "stepcount":
        bp = get_problem(bp_name)
        records, trace = harness.run_stepcount(
            bp, args.targets or 10, args.max_fixed_points,
            rel_tol=args.tol, abs_tol=args.tol * args.abs_tol_ratio, **over,
        )
        if args.trace:
            np.savetxt(args.trace, np.column_stack([trace.times, trace.dts]), delimiter=",",
                       header="t,dt", comments="", fmt="%.17g")
        meta["reference"] = bp.reference_id
    else:
        bp = get_problem(bp_name)
        records = harness.run_sampling(
            bp, args.tols, args.samples, args.targets or 50, args.seed, 1,
            args.abs_tol_ratio, args.budget_bytes, **over,
        )
    _emit(records, args, meta)
    if args.check:
        fails = _checks(args.bench, records)
        for msg in fails:
            print(f"check failed: {msg}", file=sys.stderr)
        return 1 if fails else 0
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "targets", None) is not None and args.targets < 1:
            raise UsageError("--targets must be at least 1")
        if args.repetitions < 1:
            raise UsageError("--repetitions must be at least 1")
        return _solve(args) if args.command == "solve" else _bench(args)
    except UsageError as exc:
        msg = str(exc)
        print(msg if "error:" in msg else f"targetsim: error: {msg}", file=sys.stderr)
        return 2
    except (UnsupportedProblemError, ValueError, KeyError) as exc:
        print(f"targetsim: error: {exc}", file=sys.stderr)
        return 2
    except StepDivergedError as exc:
        print(f"targetsim: solver failed: {exc}", file=sys.stderr)
        return 1


cli_main = main

if __name__ == "__main__":
    sys.exit(main())
