import numpy as np
import pytest
from hypothesis import given, strategies as st

from targetsim.exceptions import StepDivergedError
from targetsim.fixedpoint import initial_state, solve_targets
from targetsim.gaussian import GaussianState
from targetsim.linearization import ODEProblem
from targetsim.prior import StateStack, iwp_transition, taylor_init
from targetsim.problems import logistic, rigid_body
from targetsim.simulation import simulate
from targetsim.stepping import (
    SolverConfig,
    StepController,
    attempt_step,
    calibrate_scale,
    initial_dt,
    pi_control,
    predict,
)


def decay(u0=1.0, t1=2.0, rate=1.0):
    return ODEProblem(
        lambda u: -rate * u, (np.array([u0]),), 0.0, t1, jacobian=lambda u: -rate * np.eye(1)
    )


# controller


def test_pi_examples():
    cfg = SolverConfig(num_derivatives=3)
    assert pi_control(1.0, 2.0, 1.0, cfg) == pytest.approx(1.9, rel=1e-15)
    assert pi_control(0.0, 2.0, 1.0, cfg) == 20.0
    # error 2^(L+1)/0.7 with prev error 0.5 evaluated by hand
    L = 3
    err = 2 ** (L + 1) / 0.7
    factor = 0.95 * err ** (-0.7 / (L + 1)) * 0.5 ** (0.4 / (L + 1))
    assert pi_control(err, 1.0, 0.5, cfg) == pytest.approx(min(10, max(0.1, factor)), rel=1e-14)
    assert pi_control(1e12, 1.0, 1.0, cfg) == 0.1


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(factorization="isotropic", linearization="ek1")
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(min_factor=2.0)
    resolved = SolverConfig(num_derivatives=4).resolved()
    assert resolved["pi_alpha"] == pytest.approx(0.14) and resolved["pi_beta"] == pytest.approx(0.08)


# calibration


def test_calibration_examples():
    assert calibrate_scale(np.zeros(2), np.eye(2)) == (0.0, False)
    assert calibrate_scale(np.ones(2), np.eye(2)) == (1.0, False)
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3))
    S = A @ A.T + np.eye(3)
    z = rng.standard_normal(3)
    got, singular = calibrate_scale(z, np.linalg.cholesky(S))
    assert not singular
    assert got == pytest.approx(z @ np.linalg.solve(S, z) / 3, rel=1e-12)
    assert calibrate_scale(np.ones(2), np.diag([1.0, 0.0])) == (0.0, True)


# predict


def test_predict_dense_example():
    stack = StateStack(1, 1)
    pred, _ = predict(GaussianState(np.zeros(2), np.eye(2)), 1.0, stack)
    np.testing.assert_allclose(pred.cov, [[7 / 3, 3 / 2], [3 / 2, 2]], rtol=1e-14)


def test_predict_dirac_and_zero_step():
    stack = StateStack(2, 1)
    g = GaussianState.dirac(np.array([1.0, 2.0, 3.0]))
    pred, back = predict(g, 0.5, stack)
    phi, q = iwp_transition(2, 0.5)
    np.testing.assert_allclose(pred.mean, phi @ g.mean, rtol=1e-14)
    np.testing.assert_allclose(pred.cov, q @ q.T, rtol=1e-12)
    assert np.all(back.linear == 0) and np.all(back.noise_sqrt == 0)
    same, ident = predict(g, 0.0, stack)
    assert same is g and np.all(ident.linear == np.eye(3))


@given(st.integers(0, 2**31), st.floats(1e-4, 1.0), st.floats(1.0, 100.0), st.booleans())
def test_predict_reference_step_is_a_coordinate_change(seed, dt, stretch, iso):
    rng = np.random.default_rng(seed)
    stack = StateStack(3, 2, iso)
    n = stack.cov_dim
    A = rng.standard_normal((n, n))
    g = GaussianState(rng.standard_normal(stack.mean_shape), np.linalg.cholesky(A @ A.T + np.eye(n)))
    p1, b1 = predict(g, dt, stack, 1.3)
    p2, b2 = predict(g, dt, stack, 1.3, reference_dt=dt * stretch)
    np.testing.assert_allclose(p1.mean, p2.mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(p1.cov, p2.cov, rtol=1e-9, atol=1e-12 * np.abs(p1.cov).max())
    y = rng.standard_normal(stack.mean_shape)
    np.testing.assert_allclose(b1.mean_at(y), b2.mean_at(y), rtol=1e-8, atol=1e-8)


# attempt_step


def test_zero_field_accepts_with_zero_error():
    ode = ODEProblem(lambda u: 0.0 * u, (np.zeros(2),), 0.0, 1.0, jacobian=lambda u: np.zeros((2, 2)))
    for lin in ("ek0", "ek1"):
        cfg = SolverConfig(num_derivatives=3, linearization=lin)
        g = initial_state(ode, cfg)
        for _ in range(3):
            out = attempt_step(g, 0.0, 0.1, ode, cfg)
            assert out.accepted and out.error == 0.0
            np.testing.assert_array_equal(out.marginal.mean, 0.0)
            g = out.marginal


def test_decay_small_step_accepted():
    ode = decay()
    cfg = SolverConfig(num_derivatives=3, linearization="ek1", rel_tol=1e-3, abs_tol=1e-6)
    out = attempt_step(initial_state(ode, cfg), 0.0, 1e-3, ode, cfg)
    assert out.accepted and out.error < 1e-3
    assert out.marginal.mean[0] == pytest.approx(np.exp(-1e-3), rel=1e-10)


def test_large_step_rejected_without_conditionals():
    bp = rigid_body()
    cfg = SolverConfig(rel_tol=1e-10, abs_tol=1e-13)
    out = attempt_step(initial_state(bp.ode, cfg), 0.0, 5.0, bp.ode, cfg)
    assert not out.accepted and out.marginal is None and out.backward is None
    assert out.dt_next < 5.0
    forced = attempt_step(initial_state(bp.ode, cfg), 0.0, 5.0, bp.ode, cfg, force_accept=True)
    assert forced.accepted and forced.marginal is not None


def test_diverging_field_raises():
    ode = ODEProblem(lambda u: np.exp(1e3 * u), (np.array([1.0]),), 0.0, 1.0)
    cfg = SolverConfig(num_derivatives=2, initial_dt=1.0)
    with np.errstate(over="ignore"), pytest.raises(StepDivergedError):
        g = taylor_init(ODEProblem(lambda u: 0 * u, (np.array([1.0]),), 0.0, 1.0), 2)
        attempt_step(g, 0.0, 1.0, ode, cfg)


def kalman_oracle(rate, grid, L, dynamic):
    """Plain-covariance filter on u' = -rate u with the solver's local calibration."""
    x = np.array([(-rate) ** k for k in range(L + 1)], dtype=float)
    P = np.zeros((L + 1, L + 1))
    H = np.zeros((1, L + 1))
    H[0, 1], H[0, 0] = 1.0, rate
    means, covs = [x], [P]
    for dt in np.diff(grid):
        phi, q = iwp_transition(L, dt)
        Q = q @ q.T
        xp = phi @ x
        z = H @ xp
        s2 = float(z @ np.linalg.solve(H @ Q @ H.T, z)) if dynamic else 1.0
        Pp = phi @ P @ phi.T + s2 * Q
        S = H @ Pp @ H.T
        K = Pp @ H.T / S
        x = xp - (K @ z)
        P = Pp - K @ S @ K.T
        means.append(x)
        covs.append(P)
    return means, covs


@pytest.mark.parametrize("dynamic", [True, False])
def test_fixed_grid_filter_matches_dense_oracle(dynamic):
    rate, L = 0.7, 3
    grid = np.linspace(0.0, 2.0, 21)
    ode = decay(rate=rate, t1=2.0)
    cfg = SolverConfig(num_derivatives=L, linearization="ek1", calibration="dynamic" if dynamic else "none")
    sim = simulate(ode, cfg, grid=grid)
    means, covs = kalman_oracle(rate, grid, L, dynamic)
    for g, m, P in zip(sim.filtered, means, covs):
        np.testing.assert_allclose(g.mean, m, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(g.cov, P, rtol=1e-8, atol=1e-8 * max(np.abs(P).max(), 1e-30))


# controller loop


def test_grid_reproducible():
    bp = rigid_body()
    cfg = SolverConfig(rel_tol=1e-5, abs_tol=1e-8)
    a, b = simulate(bp.ode, cfg), simulate(bp.ode, cfg)
    np.testing.assert_array_equal(a.times, b.times)


def test_looser_tolerance_takes_fewer_steps():
    bp = rigid_body()
    counts = []
    for tol in (1e-8, 1e-7, 1e-6, 1e-5, 1e-4):
        sol = solve_targets(bp.ode, [0.0, 50.0], SolverConfig(rel_tol=tol, abs_tol=tol * 1e-3))
        counts.append(sol.stats.num_steps)
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_logistic_error_decreases_with_tolerance():
    bp = logistic()
    errs = []
    for k in range(2, 11):
        tol = 10.0**-k
        sol = solve_targets(bp.ode, [0.0, 10.0], SolverConfig(rel_tol=tol, abs_tol=tol * 1e-3))
        errs.append(abs(sol.terminal.mean[0] - bp.exact(10.0)[0]))
    inversions = sum(b > a for a, b in zip(errs, errs[1:]))
    assert inversions <= 1, errs


def test_initial_dt_heuristic():
    ode = decay(u0=1.0)
    cfg = SolverConfig(rel_tol=1e-6, abs_tol=1e-9)
    g = initial_state(ode, cfg)
    assert initial_dt(ode, g, cfg) == pytest.approx(0.01, rel=1e-6)
    # u' = 0 at the start: fall back to a tiny first step
    ode0 = ODEProblem(lambda u: u * u, (np.array([0.0]),), 0.0, 1.0)
    assert initial_dt(ode0, initial_state(ode0, cfg), cfg) == 1e-6
    assert initial_dt(ode, g, SolverConfig(initial_dt=0.25)) == 0.25


def test_controller_grid_validation():
    ode = decay()
    with pytest.raises(ValueError):
        StepController(ode, SolverConfig(), 0.1, grid=[0.0, 0.5, 0.4, 2.0])
    with pytest.raises(ValueError):
        StepController(ode, SolverConfig(), 0.1, grid=[0.0, 1.0])


def test_max_steps():
    with pytest.raises(StepDivergedError):
        simulate(decay(), SolverConfig(max_steps=3, rel_tol=1e-10, abs_tol=1e-12))
