import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from targetsim.fixedpoint import (
    FixedPointCarry,
    initial_state,
    marginals,
    sample_joint,
    solve_targets,
    solve_two_targets,
)
from targetsim.gaussian import AffineConditional, GaussianState, marginalize
from targetsim.linearization import ODEProblem
from targetsim.prior import taylor_init
from targetsim.problems import logistic, rigid_body
from targetsim.simulation import simulate
from targetsim.stepping import SolverConfig, StepController, initial_dt

from oracles import dense_posterior

AFFINE = np.array([[-0.5, 1.0], [-1.0, -0.3]])


def affine_ode(t1=2.0):
    return ODEProblem(
        lambda u: AFFINE @ u, (np.array([1.0, 0.5]),), 0.0, t1, jacobian=lambda u: AFFINE
    )


def gaussian_initial(ode, L, seed=0):
    """Exact Taylor mean with a random, full-rank covariance."""
    rng = np.random.default_rng(seed)
    g = taylor_init(ode, L)
    A = 0.3 * rng.standard_normal((g.dim, g.dim))
    P0 = A @ A.T + 1e-2 * np.eye(g.dim)
    return GaussianState(g.mean, np.linalg.cholesky(P0)), P0


def fresh_carry(ode, cfg):
    p0 = initial_state(ode, cfg)
    ctl = StepController(ode, cfg, initial_dt(ode, p0, cfg))
    ident = AffineConditional.identity(p0.dim, p0.mean.shape)
    return FixedPointCarry(ode.t0, p0, ode.t0, p0, ident, ctl)


def rel(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


def fro(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# two-target routine


def test_carry_requires_a_before_t():
    ode = logistic().ode
    p0 = initial_state(ode, SolverConfig())
    with pytest.raises(ValueError):
        FixedPointCarry(1.0, p0, 0.0, p0, AffineConditional.identity(p0.dim), None)


def test_logistic_half():
    ode = logistic().ode
    cfg = SolverConfig(rel_tol=1e-8, abs_tol=1e-11)
    res = solve_two_targets(fresh_carry(ode, cfg), 0.5, ode, cfg)
    assert res.p_b.mean[0] == pytest.approx(1.0 / (1.0 + np.exp(-0.5)), abs=1e-6)


def test_zero_field_dirac():
    ode = ODEProblem(lambda u: 0.0 * u, (np.zeros(2),), 0.0, 1.0, jacobian=lambda u: np.zeros((2, 2)))
    cfg = SolverConfig(num_derivatives=2, linearization="ek1")
    res = solve_two_targets(fresh_carry(ode, cfg), 0.4, ode, cfg)
    np.testing.assert_array_equal(res.p_b.mean, 0.0)
    assert np.all(res.p_b.cov_sqrt == 0)
    np.testing.assert_array_equal(res.left.uncentered().offset, 0.0)


def test_target_on_compute_point():
    # b == t: the stepping loop is skipped and the right conditional is the identity
    ode = logistic().ode
    cfg = SolverConfig(rel_tol=1e-6, abs_tol=1e-9)
    carry = fresh_carry(ode, cfg)
    solve_two_targets(carry, 0.3, ode, cfg)
    t = carry.t
    res = solve_two_targets(carry, t, ode, cfg)
    assert carry.t == t and carry.a == t
    np.testing.assert_array_equal(res.right.linear, np.eye(res.right.dim_out))
    assert np.all(res.right.noise_sqrt == 0)
    assert res.p_b is carry.p_t


def test_targets_must_increase():
    ode = logistic().ode
    cfg = SolverConfig()
    carry = fresh_carry(ode, cfg)
    with pytest.raises(ValueError):
        solve_two_targets(carry, 0.0, ode, cfg)
    with pytest.raises(ValueError):
        solve_targets(ode, [0.0, 5.0, 3.0, 10.0], cfg)
    with pytest.raises(ValueError):
        solve_targets(ode, [0.0, 5.0], cfg)


def test_fixed_point_smoother_reduction():
    L = 3
    ode = affine_ode()
    grid = np.linspace(0.0, 2.0, 20)
    init, P0 = gaussian_initial(ode, L)
    cfg = SolverConfig(num_derivatives=L, linearization="ek1", calibration="none")
    sol = solve_targets(ode, [0.0, 2.0], cfg, grid=grid, initial=init)
    smoothed_t0 = marginalize(sol.conditionals[0], sol.terminal)
    means, covs = dense_posterior(grid, [True] * grid.size, init.mean, P0, AFFINE, L)
    assert rel(smoothed_t0.mean, means[0]) <= 1e-8
    assert rel(smoothed_t0.cov, covs[0]) <= 1e-8
    assert rel(sol.terminal.mean, means[-1]) <= 1e-8


def test_marginals_against_dense_joint_posterior():
    L = 3
    ode = affine_ode()
    grid = np.linspace(0.0, 2.0, 20)
    targets = np.array([0.0, 0.3, 0.7, 2 / 19 * 9, 1.55, 2.0])  # mixes grid and off-grid points
    init, P0 = gaussian_initial(ode, L, seed=3)
    cfg = SolverConfig(num_derivatives=L, linearization="ek1", calibration="none")
    sol = solve_targets(ode, targets, cfg, grid=grid, initial=init)
    got = marginals(sol)

    times = np.union1d(grid, targets)
    observed = np.isin(times, grid)
    means, covs = dense_posterior(times, observed, init.mean, P0, AFFINE, L)
    for s, g in zip(targets, got):
        i = int(np.argmin(np.abs(times - s)))
        assert rel(g.mean, means[i]) <= 1e-8
        assert rel(g.cov, covs[i]) <= 1e-8


def test_decay_means_track_exponential():
    ode = ODEProblem(lambda u: -u, (np.array([1.0]),), 0.0, 2.0, jacobian=lambda u: -np.eye(1))
    cfg = SolverConfig(num_derivatives=3, linearization="ek1")
    targets = np.linspace(0, 2, 5)
    sol = solve_targets(ode, targets, cfg, grid=np.linspace(0, 2, 20))
    u = [g.mean[0] for g in marginals(sol)]
    np.testing.assert_allclose(u, np.exp(-targets), atol=1e-5)


# full solves


def test_single_interval_matches_two_target_routine():
    ode = logistic().ode
    cfg = SolverConfig(rel_tol=1e-6, abs_tol=1e-9)
    sol = solve_targets(ode, [0.0, 10.0], cfg)
    res = solve_two_targets(fresh_carry(ode, cfg), 10.0, ode, cfg)
    assert sol.num_targets == 1
    np.testing.assert_allclose(sol.terminal.mean, res.p_b.mean, rtol=1e-14)
    np.testing.assert_allclose(sol.terminal.cov_sqrt, res.p_b.cov_sqrt, rtol=1e-12, atol=1e-300)


def oracle_marginals(ode, targets, cfg):
    sim = simulate(ode, cfg)
    return sim, sim.interpolate(targets)


def test_rigid_body_matches_store_everything():
    bp = rigid_body()
    cfg = SolverConfig(rel_tol=1e-6, abs_tol=1e-9)
    targets = np.linspace(0, 50, 6)
    sol = solve_targets(bp.ode, targets, cfg)
    _, ref = oracle_marginals(bp.ode, targets, cfg)
    for g, r in zip(marginals(sol), ref):
        assert rel(g.mean, r.mean) <= 1e-8
        assert fro(g.cov, r.cov) <= 1e-6


def test_more_targets_than_steps():
    bp = logistic()
    cfg = SolverConfig(rel_tol=1e-2, abs_tol=1e-5)
    targets = np.linspace(0, 10, 201)
    sol = solve_targets(bp.ode, targets, cfg)
    assert sol.stats.num_steps < 200
    sim, ref = oracle_marginals(bp.ode, targets, cfg)
    for g, r in zip(marginals(sol), ref):
        assert rel(g.mean[:1], r.mean[:1]) <= 1e-8
        assert fro(g.cov, r.cov) <= 1e-6


def test_rigid_body_terminal_accuracy():
    bp = rigid_body()
    tol = 1e-8
    sol = solve_targets(bp.ode, np.linspace(0, 50, 6), SolverConfig(num_derivatives=4, rel_tol=tol, abs_tol=tol * 1e-3))
    err = sol.terminal.mean[:3] - bp.reference([50.0])[0]
    assert np.sqrt(np.mean(err**2)) < 10 * tol


def test_compute_grid_not_affected_by_targets():
    bp = rigid_body()
    cfg = SolverConfig(rel_tol=1e-5, abs_tol=1e-8)
    seen = []
    solve_targets(bp.ode, np.linspace(0, 50, 11), cfg, callback=lambda t, dt: seen.append(t))
    sim = simulate(bp.ode, cfg)
    np.testing.assert_array_equal(seen, sim.times[1:])


def test_storage_independent_of_steps_and_bounded():
    bp = rigid_body()
    targets = np.linspace(0, 50, 6)
    a = solve_targets(bp.ode, targets, SolverConfig(rel_tol=1e-3, abs_tol=1e-6))
    b = solve_targets(bp.ode, targets, SolverConfig(rel_tol=1e-10, abs_tol=1e-13))
    assert b.stats.num_steps > 10 * a.stats.num_steps
    assert a.stored_floats == b.stored_floats
    D = a.layout.cov_dim
    M = a.num_targets
    c = 2 * (D + D * (D + 1) // 2)  # the initial and terminal marginals
    assert a.stored_floats <= M * (D * D + D + D * (D + 1) // 2) + c


def test_isotropic_storage_linear_in_dimension():
    from targetsim.problems import brusselator

    sizes = []
    for d in (2, 4, 8):
        bp = brusselator(d)
        cfg = SolverConfig(factorization="isotropic", rel_tol=1e-3, abs_tol=1e-6)
        sizes.append(solve_targets(bp.ode, np.linspace(0, 10, 4), cfg).stored_floats)
    # per added spatial point: a fixed number of mean entries
    assert sizes[2] - sizes[1] == 2 * (sizes[1] - sizes[0])


# sampling


def test_sampling_dirac_solution():
    ode = ODEProblem(lambda u: 0.0 * u, (np.ones(2),), 0.0, 1.0)
    sol = solve_targets(ode, [0.0, 0.5, 1.0], SolverConfig(num_derivatives=2, calibration="none", initial_dt=0.5))
    sol.conditionals = [
        AffineConditional(c.linear, c.offset, np.zeros_like(c.noise_sqrt), c.center) for c in sol.conditionals
    ]
    sol.terminal = GaussianState(sol.terminal.mean, np.zeros_like(sol.terminal.cov_sqrt))
    draws = sample_joint(sol, 4, seed=1)
    np.testing.assert_allclose(draws, 1.0, atol=1e-12)


def test_sampling_matches_marginals():
    ode = ODEProblem(lambda u: -u, (np.array([1.0]),), 0.0, 1.0, jacobian=lambda u: -np.eye(1))
    cfg = SolverConfig(num_derivatives=2, linearization="ek1", rel_tol=1e-2, abs_tol=1e-2)
    sol = solve_targets(ode, [0.0, 1.0], cfg)
    K = 10_000
    draws = sample_joint(sol, K, seed=0)
    g = marginals(sol)[-1]
    sd = np.sqrt(g.cov[0, 0])
    assert abs(draws[:, -1, 0].mean() - g.mean[0]) <= 5 * sd / np.sqrt(K)
    assert draws[:, -1, 0].std() == pytest.approx(sd, rel=0.05)


def test_sampling_reproducible():
    bp = rigid_body()
    sol = solve_targets(bp.ode, np.linspace(0, 50, 6), SolverConfig(rel_tol=1e-4, abs_tol=1e-7))
    a = sample_joint(sol, 7, seed=42)
    b = sample_joint(sol, 7, seed=42)
    assert a.shape == (7, 6, 3)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        sample_joint(sol, 0)


@settings(max_examples=10)
@given(st.lists(st.floats(0.05, 9.95), min_size=1, max_size=6, unique=True))
def test_random_targets_match_oracle(inner):
    bp = logistic()
    cfg = SolverConfig(rel_tol=1e-5, abs_tol=1e-8)
    targets = np.concatenate([[0.0], np.sort(inner), [10.0]])
    if np.any(np.diff(targets) <= 1e-9):
        return
    sol = solve_targets(bp.ode, targets, cfg)
    _, ref = oracle_marginals(bp.ode, targets, cfg)
    for g, r in zip(marginals(sol), ref):
        assert rel(g.mean[:1], r.mean[:1]) <= 1e-8
        assert fro(g.cov, r.cov) <= 1e-6
