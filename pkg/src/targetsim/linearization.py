"""ODE problems and affine approximations of the ODE residual.

For an ODE of order ``k`` the residual of a state stack ``x`` is
``u^(k) - f(u, ..., u^(k-1))``.  Both linearisations return ``(H, b)`` with
``H x + b`` equal to the exact residual at the linearisation point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

import numpy as np

from .exceptions import UnsupportedProblemError

__all__ = ["ODEProblem", "ResidualModel", "linearize_ek0", "linearize_ek1", "residual"]


@dataclass(frozen=True)
class ODEProblem:
    """Autonomous initial value problem ``u^(k) = f(u, ..., u^(k-1))``.

    ``initial_values`` holds ``(u0,)`` for first-order and ``(u0, du0)`` for
    second-order problems.  ``jacobian`` takes the same arguments as
    ``vector_field`` and returns one ``d x d`` matrix per argument (a bare
    matrix is accepted for first-order problems).  ``initial_stack`` may
    supply the exact derivative stack when the vector field cannot run on
    Taylor jets.
    """

    vector_field: Callable
    initial_values: tuple
    t0: float
    t1: float
    jacobian: Optional[Callable] = None
    initial_stack: Optional[np.ndarray] = None
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        values = tuple(np.atleast_1d(np.asarray(v, dtype=float)) for v in self.initial_values)
        if len(values) not in (1, 2):
            raise ValueError("only first- and second-order problems are supported")
        if any(v.shape != values[0].shape or v.ndim != 1 for v in values):
            raise ValueError("initial values must be vectors of equal length")
        if not self.t0 < self.t1:
            raise ValueError(f"need t0 < t1, got [{self.t0}, {self.t1}]")
        object.__setattr__(self, "initial_values", values)

    @property
    def order(self) -> int:
        return len(self.initial_values)

    @property
    def dim(self) -> int:
        return self.initial_values[0].shape[0]

    def jacobians(self, *args):
        if self.jacobian is None:
            raise UnsupportedProblemError(f"problem {self.name!r} provides no Jacobian")
        out = self.jacobian(*args)
        if isinstance(out, np.ndarray):
            out = (out,)
        return tuple(np.asarray(j, dtype=float) for j in out)


class ResidualModel(NamedTuple):
    """Affine model ``H x + b`` of the ODE residual."""

    H: np.ndarray
    b: np.ndarray


def _blocks(problem, x):
    stack = np.asarray(x).reshape(-1, problem.dim) if x.ndim == 1 else x
    if stack.shape[0] <= problem.order:
        raise ValueError(
            f"state stack with {stack.shape[0]} blocks cannot hold derivative {problem.order}"
        )
    return stack


def residual(problem: ODEProblem, x) -> np.ndarray:
    """Exact ODE residual of the state-stack mean ``x``."""
    stack = _blocks(problem, np.asarray(x))
    return stack[problem.order] - problem.vector_field(*stack[: problem.order])


@lru_cache(maxsize=None)
def _selector(num_blocks, q, dim, isotropic):
    e = np.zeros((1, num_blocks))
    e[0, q] = 1.0
    out = e if isotropic else np.kron(e, np.eye(dim))
    out.setflags(write=False)
    return out


def linearize_ek0(problem: ODEProblem, x) -> ResidualModel:
    """Zeroth-order linearisation: freeze ``f`` at the mean.

    ``x`` is either a flat dense mean or an ``(L+1, d)`` isotropic mean.
    """
    x = np.asarray(x, dtype=float)
    stack = _blocks(problem, x)
    isotropic = x.ndim == 2
    H = _selector(stack.shape[0], problem.order, problem.dim, isotropic)
    b = -np.asarray(problem.vector_field(*stack[: problem.order]), dtype=float)
    return ResidualModel(H, b[None, :] if isotropic else b)


def linearize_ek1(problem: ODEProblem, x) -> ResidualModel:
    """First-order linearisation with the problem's Jacobians (dense layout only)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise UnsupportedProblemError("first-order linearisation requires the dense layout")
    stack = _blocks(problem, x)
    n, d = stack.shape[0], problem.dim
    inputs = stack[: problem.order]
    jacs = problem.jacobians(*inputs)
    if len(jacs) != problem.order or any(j.shape != (d, d) for j in jacs):
        raise UnsupportedProblemError(
            f"expected {problem.order} Jacobian(s) of shape {(d, d)}"
        )
    H = _selector(n, problem.order, d, False).copy()
    for q, jac in enumerate(jacs):
        H[:, q * d : (q + 1) * d] -= jac
    r = stack[problem.order] - np.asarray(problem.vector_field(*inputs), dtype=float)
    return ResidualModel(H, r - H @ x)
