"""How much memory does a solver need if it only keeps what the targets need?

We solve the Brusselator on growing spatial grids and compare the floats
held by the target solver with the floats a store-every-step smoother
would need for the same run.  Pass --d 2,4,8,16,32,64,128 for the
large sizes; the default stays quick.
"""

import argparse

from targetsim import harness


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--d", default="2,4,8,16")
    ap.add_argument("--tol", type=float, default=1e-6)
    ap.add_argument("--targets", type=int, default=50)
    args = ap.parse_args()

    d_grid = [int(x) for x in args.d.split(",")]
    recs = harness.run_memory_scaling(d_grid, num_targets=args.targets, tol=args.tol, materialize=False)
    print(f"{'d':>5} {'steps':>7} {'kept':>10} {'store-all':>12} {'ratio':>8}")
    for r in recs:
        if r.solver != "ats":
            continue
        d = r.dim // 2
        print(f"{d:>5} {r.num_steps:>7} {r.stored_floats:>10} {r.as_estimate_floats:>12} "
              f"{r.as_estimate_floats / r.stored_floats:>8.0f}")
    # The kept storage depends on the number of targets and the state size.
    # The store-all figure also grows with the step count, which stiffens with d.


if __name__ == "__main__":
    main()
