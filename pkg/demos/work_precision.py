"""Error against tolerance on the rigid body, next to two Runge-Kutta baselines."""

import argparse

from targetsim import harness
from targetsim.problems import rigid_body


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tols", default="1e-3,1e-5,1e-7")
    args = ap.parse_args()
    tols = [float(t) for t in args.tols.split(",")]

    recs = harness.run_workprecision(rigid_body(), ["ats", "rk-bosh3", "rk-dopri5"], tols,
                                     num_targets=5, repetitions=1)
    print(f"{'solver':<10} {'tol':>8} {'steps':>7} {'rmse':>10} {'seconds':>8} {'floats':>7}")
    for r in recs:
        print(f"{r.solver:<10} {r.rel_tol:>8.0e} {r.num_steps:>7} {r.rmse:>10.2e} "
              f"{r.wall_time_seconds:>8.3f} {r.stored_floats:>7}")
    # note how the "floats" column does not move for ats as the tolerance tightens


if __name__ == "__main__":
    main()
