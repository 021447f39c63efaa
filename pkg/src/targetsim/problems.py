"""Benchmark initial value problems with their reference solutions.

Vector fields are written with plain numpy operations so that they also run
on :class:`~targetsim.taylor.Jet` inputs, which is how the initial
derivative stacks are computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.integrate

from .linearization import ODEProblem

__all__ = [
    "BenchmarkProblem",
    "logistic",
    "van_der_pol",
    "rigid_body",
    "brusselator",
    "pleiades",
    "three_body",
    "first_order_system",
    "jacobi_constant",
    "PROBLEMS",
    "get_problem",
]


@dataclass(frozen=True, eq=False)
class BenchmarkProblem:
    """An ODE plus solver recommendations and a reference policy."""

    ode: ODEProblem
    name: str
    num_derivatives: int = 4
    linearization: str = "ek1"
    factorization: str = "dense"
    rel_tol: float = 1e-6
    abs_tol: Optional[float] = None
    exact: Optional[Callable] = None
    reference_method: str = "DOP853"
    reference_rtol: float = 1e-13
    reference_atol: float = 1e-15
    extra: dict = field(default_factory=dict)

    @property
    def reference_id(self) -> str:
        if self.exact is not None:
            return "closed-form"
        return (
            f"scipy.solve_ivp:{self.reference_method}"
            f":rtol={self.reference_rtol:g}:atol={self.reference_atol:g}"
        )

    def reference(self, times) -> np.ndarray:
        """Reference values of ``u`` at ``times``, shape ``(len(times), d)``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if self.exact is not None:
            return np.stack([np.atleast_1d(self.exact(t)) for t in times])
        key = tuple(times.tolist())
        cache = self.extra.setdefault("_reference_cache", {})
        if key not in cache:
            cache[key] = _reference(self, times)
        return cache[key].copy()

    def recommended(self, **overrides) -> dict:
        out = dict(
            num_derivatives=self.num_derivatives,
            linearization=self.linearization,
            factorization=self.factorization,
            rel_tol=self.rel_tol,
            abs_tol=self.abs_tol,
        )
        out.update(overrides)
        if out["abs_tol"] is None:
            out["abs_tol"] = 1e-3 * out["rel_tol"]
        return out


def first_order_system(ode: ODEProblem):
    """``(rhs(t, y), jac(t, y), y0)`` of the equivalent first-order system."""
    d = ode.dim
    if ode.order == 1:
        y0 = ode.initial_values[0]

        def rhs(t, y):
            return np.asarray(ode.vector_field(y), dtype=float)

        def jac(t, y):
            return ode.jacobians(y)[0]

        return rhs, (jac if ode.jacobian is not None else None), y0

    y0 = np.concatenate(ode.initial_values)

    def rhs(t, y):
        return np.concatenate([y[d:], ode.vector_field(y[:d], y[d:])])

    def jac(t, y):
        ju, jv = ode.jacobians(y[:d], y[d:])
        top = np.hstack([np.zeros((d, d)), np.eye(d)])
        return np.vstack([top, np.hstack([ju, jv])])

    return rhs, (jac if ode.jacobian is not None else None), y0


def _reference(problem: BenchmarkProblem, times: np.ndarray) -> np.ndarray:
    ode = problem.ode
    rhs, jac, y0 = first_order_system(ode)
    kwargs = {}
    if problem.reference_method in ("Radau", "BDF", "LSODA") and jac is not None:
        kwargs["jac"] = jac
    sol = scipy.integrate.solve_ivp(
        rhs,
        (ode.t0, ode.t1),
        y0,
        method=problem.reference_method,
        t_eval=np.asarray(times),
        rtol=problem.reference_rtol,
        atol=problem.reference_atol,
        **kwargs,
    )
    if not sol.success:
        raise RuntimeError(f"reference solve for {problem.name} failed: {sol.message}")
    return sol.y[: ode.dim].T.copy()


# the problems


def logistic() -> BenchmarkProblem:
    ode = ODEProblem(
        vector_field=lambda u: u * (1.0 - u),
        initial_values=(np.array([0.5]),),
        t0=0.0,
        t1=10.0,
        jacobian=lambda u: np.diag(1.0 - 2.0 * u),
        name="logistic",
    )
    return BenchmarkProblem(
        ode, "logistic", exact=lambda t: np.array([1.0 / (1.0 + np.exp(-t))])
    )


def van_der_pol(mu: float = 1e3) -> BenchmarkProblem:
    def f(u, du):
        return mu * (du * (1.0 - u * u) - u)

    def jac(u, du):
        return np.diag(mu * (-2.0 * u * du - 1.0)), np.diag(mu * (1.0 - u * u))

    ode = ODEProblem(
        f, (np.array([2.0]), np.array([0.0])), 0.0, 6.3, jacobian=jac,
        name="van-der-pol", params={"mu": mu},
    )
    # tolerance 1e-3 for both the absolute and the relative part
    return BenchmarkProblem(
        ode, "van-der-pol", num_derivatives=4, linearization="ek1", rel_tol=1e-3,
        abs_tol=1e-3, reference_method="Radau", reference_rtol=1e-12, reference_atol=1e-12,
    )


def rigid_body() -> BenchmarkProblem:
    def f(u):
        u1, u2, u3 = u[0], u[1], u[2]
        return np.stack([-2.0 * u2 * u3, 1.25 * u1 * u3, -0.5 * u1 * u2])

    def jac(u):
        u1, u2, u3 = u
        return np.array(
            [[0.0, -2.0 * u3, -2.0 * u2], [1.25 * u3, 0.0, 1.25 * u1], [-0.5 * u2, -0.5 * u1, 0.0]]
        )

    ode = ODEProblem(f, (np.array([1.0, 0.0, 0.9]),), 0.0, 50.0, jacobian=jac, name="rigid-body")
    return BenchmarkProblem(ode, "rigid-body", linearization="ek0")


def brusselator(d_points: int = 16, alpha: float = 1.0 / 50.0) -> BenchmarkProblem:
    """Method-of-lines Brusselator on ``d_points`` nodes of ``[0, 1]``.

    The Laplacian uses ghost nodes one spacing outside the grid whose values
    are frozen at the initial profile's endpoint values (u = 1, v = 3).
    """
    if int(d_points) != d_points or d_points < 2:
        raise ValueError("the Brusselator needs at least two grid points")
    d = int(d_points)
    h = 1.0 / (d - 1)
    x = np.linspace(0.0, 1.0, d)
    lap = (np.diag(-2.0 * np.ones(d)) + np.diag(np.ones(d - 1), 1) + np.diag(np.ones(d - 1), -1)) / h**2
    ghost_u = np.zeros(d)
    ghost_u[[0, -1]] = 1.0 / h**2
    ghost_v = 3.0 * ghost_u
    lap_u = alpha * lap
    bc = np.concatenate([alpha * ghost_u, alpha * ghost_v])

    def f(y):
        u, v = y[:d], y[d:]
        uuv = u * u * v
        du = 1.0 + uuv - 4.0 * u + lap_u @ u
        dv = 3.0 * u - uuv + lap_u @ v
        return np.concatenate([du, dv]) + bc

    def jac(y):
        u, v = y[:d], y[d:]
        J = np.empty((2 * d, 2 * d))
        J[:d, :d] = np.diag(2.0 * u * v - 4.0) + lap_u
        J[:d, d:] = np.diag(u * u)
        J[d:, :d] = np.diag(3.0 - 2.0 * u * v)
        J[d:, d:] = np.diag(-u * u) + lap_u
        return J

    y0 = np.concatenate([1.0 + np.sin(2.0 * np.pi * x), 3.0 * np.ones(d)])
    ode = ODEProblem(
        f, (y0,), 0.0, 10.0, jacobian=jac, name="brusselator",
        params={"d_points": d, "alpha": alpha},
    )
    return BenchmarkProblem(
        ode, "brusselator", linearization="ek0", factorization="isotropic", rel_tol=1e-8,
        reference_method="Radau", reference_rtol=1e-12, reference_atol=1e-14,
    )


_PLEIADES_X = (3.0, 3.0, -1.0, -3.0, 2.0, -2.0, 2.0)
_PLEIADES_Y = (3.0, -3.0, 2.0, 0.0, 0.0, -4.0, 4.0)
_PLEIADES_DX = (0.0, 0.0, 0.0, 0.0, 0.0, 1.75, -1.5)
_PLEIADES_DY = (0.0, 0.0, 0.0, -1.25, 1.0, 0.0, 0.0)


def pleiades() -> BenchmarkProblem:
    """Seven stars in the plane with masses 1..7; ``u = (x_1..x_7, y_1..y_7)``."""
    masses = np.arange(1.0, 8.0)
    eye = np.eye(7)

    def f(u, du=None):
        x, y = u[:7], u[7:]
        dx = x[None, :] - x[:, None]
        dy = y[None, :] - y[:, None]
        r2 = dx * dx + dy * dy + eye  # shift the zero diagonal; dx, dy vanish there
        w = masses[None, :] * r2**-1.5
        return np.concatenate([np.sum(w * dx, axis=1), np.sum(w * dy, axis=1)])

    def jac(u, du):
        p = np.stack([u[:7], u[7:]], axis=1)
        diff = p[None, :, :] - p[:, None, :]  # p_j - p_i
        r2 = np.sum(diff**2, axis=2) + eye
        J = np.zeros((14, 14))
        for i in range(7):
            for j in range(7):
                if i == j:
                    continue
                r = diff[i, j]
                block = masses[j] * (np.eye(2) / r2[i, j] ** 1.5 - 3.0 * np.outer(r, r) / r2[i, j] ** 2.5)
                for a in range(2):
                    for b in range(2):
                        J[a * 7 + i, b * 7 + j] += block[a, b]
                        J[a * 7 + i, b * 7 + i] -= block[a, b]
        return J, np.zeros((14, 14))

    ode = ODEProblem(
        f,
        (np.array(_PLEIADES_X + _PLEIADES_Y), np.array(_PLEIADES_DX + _PLEIADES_DY)),
        0.0,
        3.0,
        jacobian=jac,
        name="pleiades",
    )
    return BenchmarkProblem(ode, "pleiades", linearization="ek1")


THREE_BODY_MU = 0.012277471
THREE_BODY_PERIOD = 17.0652165601579625588917206249


def three_body() -> BenchmarkProblem:
    """Restricted three-body problem on its periodic Arenstorf orbit."""
    mu = THREE_BODY_MU
    nu = 1.0 - mu

    def f(u, du):
        y1, y2 = u[0], u[1]
        d1 = ((y1 + mu) ** 2 + y2**2) ** 1.5
        d2 = ((y1 - nu) ** 2 + y2**2) ** 1.5
        a1 = y1 + 2.0 * du[1] - nu * (y1 + mu) / d1 - mu * (y1 - nu) / d2
        a2 = y2 - 2.0 * du[0] - nu * y2 / d1 - mu * y2 / d2
        return np.stack([a1, a2])

    coriolis = np.array([[0.0, 2.0], [-2.0, 0.0]])

    def jac(u, du):
        y1, y2 = float(u[0]), float(u[1])
        j11 = j22 = 1.0
        j12 = 0.0
        for m, c in ((nu, -mu), (mu, nu)):
            x = y1 - c
            r2 = x * x + y2 * y2
            a, b = m / r2**1.5, 3.0 * m / r2**2.5
            j11 += b * x * x - a
            j22 += b * y2 * y2 - a
            j12 += b * x * y2
        return np.array([[j11, j12], [j12, j22]]), coriolis.copy()

    ode = ODEProblem(
        f,
        (np.array([0.994, 0.0]), np.array([0.0, -2.00158510637908252240537862224])),
        0.0,
        THREE_BODY_PERIOD,
        jacobian=jac,
        name="three-body",
        params={"mu": mu},
    )
    return BenchmarkProblem(ode, "three-body", linearization="ek1")


def jacobi_constant(u, du, mu: float = THREE_BODY_MU) -> float:
    """Conserved quantity of the restricted three-body problem."""
    nu = 1.0 - mu
    r1 = np.hypot(u[0] + mu, u[1])
    r2 = np.hypot(u[0] - nu, u[1])
    return float(u[0] ** 2 + u[1] ** 2 + 2 * nu / r1 + 2 * mu / r2 - du[0] ** 2 - du[1] ** 2)


PROBLEMS = {
    "logistic": logistic,
    "van-der-pol": van_der_pol,
    "rigid-body": rigid_body,
    "brusselator": brusselator,
    "pleiades": pleiades,
    "three-body": three_body,
}


def get_problem(name: str, **kwargs) -> BenchmarkProblem:
    key = name.replace("_", "-").lower()
    if key not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")
    return PROBLEMS[key](**kwargs)
