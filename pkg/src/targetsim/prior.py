"""Integrated-Wiener-process prior over the derivative stack.

The state stack holds ``[u, u', ..., u^(L)]`` for a ``d``-dimensional ODE.
Two layouts are supported:

* dense: a flat vector of length ``(L+1) d`` ordered derivative-major
  (``x[q*d + i]`` is the ``q``-th derivative of coordinate ``i``) with one
  full ``(L+1) d`` covariance;
* isotropic: an ``(L+1, d)`` array whose columns share one ``(L+1)x(L+1)``
  covariance.

Transitions are evaluated in preconditioned coordinates ``T(dt)^{-1} x``,
in which both the transition matrix and the process-noise factor are
independent of the step size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
import scipy.special

from .exceptions import UnsupportedProblemError
from .gaussian import GaussianState
from .taylor import Jet

__all__ = [
    "iwp_transition",
    "precondition",
    "preconditioned_transition",
    "StateStack",
    "taylor_init",
    "taylor_coefficients",
]


def _check_order(L):
    if int(L) != L or L < 1:
        raise ValueError(f"number of derivatives must be a positive integer, got {L}")


def precondition(L: int, dt: float) -> np.ndarray:
    """Diagonal preconditioner ``T(dt)`` as a matrix.

    ``T = diag(sqrt(dt) dt^(L-i) / (L-i)!)`` for ``i = 0..L``.
    """
    return np.diag(_precondition_diag(L, dt))


@lru_cache(maxsize=None)
def _powers_and_factorials(L):
    powers = np.arange(L, -1, -1)
    return powers, scipy.special.factorial(powers)


def _precondition_diag(L, dt):
    powers, fact = _powers_and_factorials(L)
    return math.sqrt(dt) * dt**powers / fact


@lru_cache(maxsize=None)
def preconditioned_transition(L: int):
    """Step-size independent transition and noise factor ``(Phi_hat, sqrt(Sigma_hat))``.

    ``Phi_hat[i, j] = binom(L - i, j - i)`` and ``Sigma_hat`` is the Hilbert
    matrix ``1 / (2L + 1 - i - j)``.
    """
    _check_order(L)
    n = L + 1
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    phi = np.where(j >= i, scipy.special.comb(L - i, j - i), 0.0)
    sigma = 1.0 / (2 * L + 1 - i - j)
    sigma_sqrt = np.linalg.cholesky(sigma)
    phi.setflags(write=False)
    sigma_sqrt.setflags(write=False)
    return phi, sigma_sqrt


def iwp_transition(L: int, dt: float):
    """Transition matrix and lower-triangular noise factor of the ``L``-times IWP.

    ``Phi[i, j] = dt^(j-i) / (j-i)!`` above the diagonal and the noise
    covariance is ``Sigma[i, j] = dt^(2L+1-i-j) / ((2L+1-i-j) (L-i)! (L-j)!)``.
    The factor is assembled from the preconditioned form, which avoids
    underflow for small steps.
    """
    _check_order(L)
    if not dt > 0:
        raise ValueError(f"step size must be positive, got {dt}")
    _, sigma_sqrt_hat = preconditioned_transition(L)
    n = L + 1
    k = np.subtract.outer(np.arange(n), np.arange(n)).T  # j - i
    kk = np.clip(k, 0, None)
    # direct powers: dividing preconditioner entries would underflow for tiny dt
    phi = np.where(k >= 0, dt**kk / scipy.special.factorial(kk), 0.0)
    return phi, _precondition_diag(L, dt)[:, None] * sigma_sqrt_hat


@dataclass(frozen=True)
class StateStack:
    """Layout of the derivative stack of a ``dim``-dimensional ODE."""

    num_derivatives: int
    dim: int
    isotropic: bool = False

    def __post_init__(self):
        _check_order(self.num_derivatives)
        if self.dim < 1:
            raise ValueError("ODE dimension must be positive")

    @property
    def cov_dim(self) -> int:
        """Size of the covariance factor."""
        n = self.num_derivatives + 1
        return n if self.isotropic else n * self.dim

    @property
    def mean_shape(self):
        n = self.num_derivatives + 1
        return (n, self.dim) if self.isotropic else (n * self.dim,)

    def gather(self, stack) -> np.ndarray:
        """Turn an ``(L+1, d)`` derivative array into the layout's mean."""
        stack = np.asarray(stack, dtype=float)
        return stack.copy() if self.isotropic else stack.reshape(-1)

    def scatter(self, mean) -> np.ndarray:
        """Inverse of :meth:`gather`."""
        return np.asarray(mean).reshape(self.num_derivatives + 1, self.dim)

    def derivative(self, mean, q: int = 0) -> np.ndarray:
        """The ``q``-th derivative block of a mean."""
        return self.scatter(mean)[q]

    def projection(self, q: int) -> np.ndarray:
        """Matrix extracting the ``q``-th derivative from the covariance space."""
        e = np.zeros((1, self.num_derivatives + 1))
        e[0, q] = 1.0
        return e if self.isotropic else np.kron(e, np.eye(self.dim))

    def expand(self, matrix) -> np.ndarray:
        """Lift a per-coordinate ``(L+1)x(L+1)`` matrix to the covariance space."""
        return matrix if self.isotropic else np.kron(matrix, np.eye(self.dim))

    def expand_diag(self, diag) -> np.ndarray:
        return diag if self.isotropic else np.repeat(diag, self.dim)

    def derivative_std(self, g: GaussianState, q: int = 0) -> np.ndarray:
        """Marginal standard deviations of the ``q``-th derivative block."""
        if self.isotropic:
            return np.full(self.dim, np.linalg.norm(g.cov_sqrt[q]))
        rows = g.cov_sqrt[q * self.dim : (q + 1) * self.dim]
        return np.linalg.norm(rows, axis=1)

    def derivative_cov(self, g: GaussianState, q: int = 0) -> np.ndarray:
        if self.isotropic:
            return np.dot(g.cov_sqrt[q], g.cov_sqrt[q]) * np.eye(self.dim)
        rows = g.cov_sqrt[q * self.dim : (q + 1) * self.dim]
        return rows @ rows.T

    @lru_cache(maxsize=None)
    def transition(self):
        """Preconditioned transition and noise factor in the covariance space."""
        phi, sigma_sqrt = preconditioned_transition(self.num_derivatives)
        return self.expand(phi), self.expand(sigma_sqrt)

    def precondition_diag(self, dt: float) -> np.ndarray:
        return self.expand_diag(_precondition_diag(self.num_derivatives, dt))


def taylor_coefficients(vector_field, initial_values, num: int):
    """Derivatives ``u(t0), u'(t0), ..., u^(num)(t0)`` of an autonomous ODE.

    ``initial_values`` holds ``u(t0)`` (and ``u'(t0)`` for second-order
    problems); the vector field is called with one jet per entry.
    Returns an array of shape ``(num + 1, d)``.
    """
    order = len(initial_values)
    values = [np.atleast_1d(np.asarray(v, dtype=float)) for v in initial_values]
    # normalised Taylor coefficients c_j = u^(j)(t0) / j!
    coeffs = [v / factorial(j) for j, v in enumerate(values)]
    while len(coeffs) < num + 1:
        n = len(coeffs) - 1
        degree = n - order + 1
        jets = []
        for q in range(order):
            c = [coeffs[j + q] * factorial(j + q) / factorial(j) for j in range(degree + 1)]
            jets.append(Jet(np.stack(c)))
        try:
            out = vector_field(*jets)
        except Exception as exc:  # noqa: BLE001 - any failure means no jet support
            raise UnsupportedProblemError(
                "the vector field cannot be evaluated in Taylor arithmetic; "
                "supply the initial derivative stack explicitly"
            ) from exc
        if not isinstance(out, Jet) or out.coeffs.shape != (degree + 1,) + values[0].shape:
            raise UnsupportedProblemError(
                "the vector field did not return a jet of the expected shape; "
                "supply the initial derivative stack explicitly"
            )
        coeffs.append(out.coeffs[degree] * factorial(degree) / factorial(degree + order))
    coeffs = coeffs[: num + 1]
    return np.stack([c * factorial(j) for j, c in enumerate(coeffs)])


def taylor_init(problem, L: int, isotropic: bool = False) -> GaussianState:
    """Dirac initial state whose mean stacks the exact Taylor derivatives."""
    _check_order(L)
    if L < problem.order:
        raise ValueError(f"L={L} derivatives cannot represent an ODE of order {problem.order}")
    if problem.initial_stack is not None:
        stack = np.asarray(problem.initial_stack, dtype=float)
        if stack.shape[0] < L + 1:
            raise UnsupportedProblemError(
                f"supplied derivative stack has {stack.shape[0]} rows, need {L + 1}"
            )
        stack = stack[: L + 1]
    else:
        stack = taylor_coefficients(problem.vector_field, problem.initial_values, L)
    layout = StateStack(L, problem.dim, isotropic)
    return GaussianState.dirac(layout.gather(stack))
