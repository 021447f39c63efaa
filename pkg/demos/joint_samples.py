"""Drawing whole trajectories through the targets of the three-body orbit.

The samples come from the backward conditionals kept between targets, so
the orbit is never stored at the solver's own step resolution.
"""

import argparse

import numpy as np

from targetsim.fixedpoint import marginals, sample_joint, solve_targets
from targetsim.problems import three_body
from targetsim.stepping import SolverConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tol", type=float, default=1e-4)
    ap.add_argument("--samples", type=int, default=200)
    args = ap.parse_args()

    bp = three_body()
    targets = np.linspace(bp.ode.t0, bp.ode.t1, 21)
    sol = solve_targets(bp.ode, targets, SolverConfig(**bp.recommended(rel_tol=args.tol, abs_tol=args.tol * 1e-3)))
    draws = sample_joint(sol, args.samples, seed=1)
    ref = bp.reference(targets)

    print(f"{sol.stats.num_steps} steps, {sol.stored_floats} floats kept")
    spread = draws.std(axis=0)
    stds = np.array([np.sqrt(np.diag(g.cov)[: ref.shape[1]]) for g in marginals(sol)])
    err = np.abs(draws.mean(axis=0) - ref)
    print(" t      |mean err|   sample sd    posterior sd")
    for i in range(0, targets.size, 4):
        print(f"{targets[i]:6.2f}  {err[i].max():10.2e}  {spread[i].max():10.2e}  {stds[i].max():10.2e}")


if __name__ == "__main__":
    main()
