"""Square-root Gaussian states, affine Gaussian conditionals and their algebra.

Every covariance in this package is stored through a lower-triangular factor
``L`` with ``cov = L @ L.T``.  Means are either flat vectors (dense layout) or
``(n, d)`` arrays whose ``d`` columns share one covariance (isotropic layout);
all operations below act on the leading axis and broadcast over the rest.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg.blas import dtrsm as _dtrsm
from scipy.linalg.lapack import dgeqrf as _geqrf

__all__ = [
    "GaussianState",
    "AffineConditional",
    "qr_sqrt_sum",
    "marginalize",
    "merge_conditionals",
    "extrapolate",
    "condition_affine",
    "sample",
    "triangular_size",
]


def triangular_size(n: int) -> int:
    """Number of free entries of an ``n x n`` triangular matrix."""
    return n * (n + 1) // 2


@dataclass(frozen=True)
class GaussianState:
    """Gaussian ``N(mean, cov_sqrt @ cov_sqrt.T)``."""

    mean: np.ndarray
    cov_sqrt: np.ndarray

    def __post_init__(self):
        n = self.cov_sqrt.shape[0]
        if self.cov_sqrt.shape != (n, n) or self.mean.shape[0] != n:
            raise ValueError(
                f"mean of shape {self.mean.shape} does not match "
                f"covariance factor of shape {self.cov_sqrt.shape}"
            )

    @classmethod
    def dirac(cls, mean) -> "GaussianState":
        mean = np.asarray(mean, dtype=float)
        n = mean.shape[0]
        return cls(mean, np.zeros((n, n)))

    @property
    def dim(self) -> int:
        return self.cov_sqrt.shape[0]

    @property
    def cov(self) -> np.ndarray:
        return self.cov_sqrt @ self.cov_sqrt.T

    @property
    def num_floats(self) -> int:
        return self.mean.size + triangular_size(self.dim)


@dataclass(frozen=True)
class AffineConditional:
    """Conditional ``p(x | y) = N(x; linear @ y + offset, noise_sqrt @ noise_sqrt.T)``.

    If ``center`` is given the mean is ``linear @ (y - center) + offset``
    instead.  Centring the input at its expected value keeps the offset close
    to the mean of ``x`` and avoids cancellation when gains are large.
    """

    linear: np.ndarray
    offset: np.ndarray
    noise_sqrt: np.ndarray
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        n_out, n_in = self.linear.shape
        if self.offset.shape[0] != n_out or self.noise_sqrt.shape != (n_out, n_out):
            raise ValueError(
                "inconsistent conditional: linear "
                f"{self.linear.shape}, offset {self.offset.shape}, "
                f"noise {self.noise_sqrt.shape}"
            )
        if self.center is not None and self.center.shape[0] != n_in:
            raise ValueError(f"center of shape {self.center.shape} does not match inputs {n_in}")

    @classmethod
    def identity(cls, n: int, offset_shape=None) -> "AffineConditional":
        """The noise-free identity map, i.e. a Dirac centred at the input."""
        shape = (n,) if offset_shape is None else tuple(offset_shape)
        return cls(np.eye(n), np.zeros(shape), np.zeros((n, n)))

    @property
    def dim_in(self) -> int:
        return self.linear.shape[1]

    @property
    def dim_out(self) -> int:
        return self.linear.shape[0]

    @property
    def num_floats(self) -> int:
        extra = 0 if self.center is None else self.center.size
        return self.linear.size + self.offset.size + triangular_size(self.dim_out) + extra

    def mean_at(self, y) -> np.ndarray:
        if self.center is None:
            return _apply(self.linear, y) + self.offset
        return _apply(self.linear, y - self.center) + self.offset

    def uncentered(self) -> "AffineConditional":
        """Equivalent conditional in plain ``A y + a`` form."""
        if self.center is None:
            return self
        offset = self.offset - _apply(self.linear, self.center)
        return AffineConditional(self.linear, offset, self.noise_sqrt)

    def __call__(self, y) -> GaussianState:
        """Evaluate the conditional at a fixed input."""
        return GaussianState(self.mean_at(y), self.noise_sqrt)


def _apply(matrix, x):
    # matrix acts on the leading axis of x, broadcasting over the rest
    return matrix @ x


def _qr_r(stacked: np.ndarray) -> np.ndarray:
    # LAPACK directly: numpy's wrapper costs more than the factorisation at these sizes
    m, n = stacked.shape
    qr, _, _, info = _geqrf(stacked)
    if info != 0:
        raise np.linalg.LinAlgError(f"QR decomposition failed (info={info})")
    r = qr[: min(m, n)] * _upper_mask(min(m, n), n)
    r *= np.copysign(1.0, r.diagonal())[:, None]
    return r


@lru_cache(maxsize=None)
def _upper_mask(k: int, n: int) -> np.ndarray:
    mask = np.triu(np.ones((k, n)))
    mask.setflags(write=False)
    return mask


def _trsm(tri: np.ndarray, rhs: np.ndarray, lower: bool) -> np.ndarray:
    """Triangular solve through BLAS, skipping scipy's input validation."""
    rhs = np.asarray(rhs, dtype=float)
    b = rhs.reshape(rhs.shape[0], -1)
    return _dtrsm(1.0, tri, b, lower=int(lower)).reshape(rhs.shape)


def _solve_upper(r: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Minimum-norm solution of ``r @ x = rhs`` for upper-triangular ``r``."""
    diag = np.abs(r.diagonal())
    scale = diag.max(initial=0.0)
    if scale > 0 and diag.min() > 1e-14 * scale:
        return _trsm(r, rhs, lower=False)
    if scale == 0:
        return np.zeros((r.shape[1],) + rhs.shape[1:])
    return np.linalg.lstsq(r, rhs, rcond=1e-14)[0]


def qr_sqrt_sum(A, sqrt_d, sqrt_b=None) -> np.ndarray:
    """Lower-triangular factor of ``A D A^T + B`` from the factors of ``D`` and ``B``.

    The stacked matrix ``[sqrt_d^T A^T; sqrt_b^T]`` is QR-decomposed and the
    transposed triangular factor is returned.  Rows of ``R`` are sign-flipped
    so that the result has a nonnegative diagonal.  Rank-deficient inputs are
    allowed.
    """
    A = np.asarray(A, dtype=float)
    sqrt_d = np.asarray(sqrt_d, dtype=float)
    n, m = A.shape
    if sqrt_d.shape != (m, m):
        raise ValueError(f"factor of shape {sqrt_d.shape} does not match A of shape {A.shape}")
    blocks = [sqrt_d.T @ A.T]
    if sqrt_b is not None:
        sqrt_b = np.asarray(sqrt_b, dtype=float)
        if sqrt_b.shape != (n, n):
            raise ValueError(f"factor of shape {sqrt_b.shape} does not match A of shape {A.shape}")
        blocks.append(sqrt_b.T)
    stacked = np.concatenate(blocks, axis=0)
    if stacked.shape[0] < n:
        stacked = np.concatenate([stacked, np.zeros((n - stacked.shape[0], n))])
    return _qr_r(stacked).T


def marginalize(cond: AffineConditional, g: GaussianState) -> GaussianState:
    """Distribution of ``x`` when ``y ~ g`` and ``x | y ~ cond``."""
    if cond.dim_in != g.dim:
        raise ValueError(f"conditional expects inputs of size {cond.dim_in}, got {g.dim}")
    return GaussianState(cond.mean_at(g.mean), qr_sqrt_sum(cond.linear, g.cov_sqrt, cond.noise_sqrt))


def merge_conditionals(outer: AffineConditional, inner: AffineConditional) -> AffineConditional:
    """Integrate out the middle variable of ``p(x | y) p(y | z)``.

    Returns ``p(x | z)`` with linear map ``A C``, offset ``A c + a`` and noise
    factor of ``A D A^T + B``, where ``outer = (A, a, sqrt B)`` and
    ``inner = (C, c, sqrt D)``.
    """
    if outer.dim_in != inner.dim_out:
        raise ValueError(
            f"cannot merge: outer expects {outer.dim_in} inputs, inner yields {inner.dim_out}"
        )
    A = outer.linear
    noise = qr_sqrt_sum(A, inner.noise_sqrt, outer.noise_sqrt)
    if inner.center is None and outer.center is None:
        return AffineConditional(A @ inner.linear, _apply(A, inner.offset) + outer.offset, noise)
    # keep the inner conditional's centring; the outer one is absorbed
    return AffineConditional(A @ inner.linear, outer.mean_at(inner.offset), noise, inner.center)


def extrapolate(g: GaussianState, linear, noise_sqrt):
    """Push ``g`` through ``x' = linear @ x + noise`` and invert the transition.

    Returns the marginal of ``x'`` and the backward conditional ``p(x | x')``.
    Both come out of a single QR decomposition of the stacked factors; the
    gain is obtained by a triangular solve, never by an explicit inverse.
    """
    n = g.dim
    L = g.cov_sqrt
    stacked = np.zeros((2 * n, 2 * n))
    stacked[:n, :n] = L.T @ linear.T
    stacked[:n, n:] = L.T
    stacked[n:, :n] = noise_sqrt.T
    R = _qr_r(stacked)
    R11, R12, R22 = R[:n, :n], R[:n, n:], R[n:, n:]

    mean_pred = _apply(linear, g.mean)
    gain = _solve_upper(R11, R12).T
    backward = AffineConditional(gain, g.mean, R22.T, center=mean_pred)
    return GaussianState(mean_pred, R11.T), backward


def condition_affine(prior: GaussianState, H, b):
    """Condition ``prior`` on the noise-free observation ``H x + b = 0``.

    Returns the posterior and the conditional of the state given the observed
    quantity ``y = H x + b``, parametrised as ``(gain, mean correction,
    posterior factor)``.  If the innovation covariance is singular, the
    minimum-norm gain is used and the posterior keeps zero variance in the
    observed subspace.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    k, n = H.shape
    if n != prior.dim:
        raise ValueError(f"observation matrix of shape {H.shape} does not match state size {prior.dim}")
    L = prior.cov_sqrt
    stacked = np.zeros((k + n, k + n))
    stacked[k:, :k] = L.T @ H.T
    stacked[k:, k:] = L.T
    R = _qr_r(stacked)
    R11, R12, R22 = R[:k, :k], R[:k, k:], R[k:, k:]

    observed = _apply(H, prior.mean) + b
    gain = _solve_upper(R11, R12).T
    # the offset is the conditional mean at y = 0, i.e. the posterior mean
    offset = prior.mean - _apply(gain, observed)
    posterior = GaussianState(offset, R22.T)
    return posterior, AffineConditional(gain, offset, R22.T)


def sample(g: GaussianState, noise) -> np.ndarray:
    """Transform standard-normal ``noise`` into a draw from ``g``."""
    noise = np.asarray(noise, dtype=float)
    if noise.shape != g.mean.shape:
        raise ValueError(f"noise of shape {noise.shape} does not match mean of shape {g.mean.shape}")
    return g.mean + _apply(g.cov_sqrt, noise)
