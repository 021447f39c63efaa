"""Truncated Taylor polynomials ("jets") with numpy interoperability.

A :class:`Jet` of degree ``K`` holds normalised Taylor coefficients
``c[0..K]`` of a (vector-valued) function of one scalar variable, so that
``x(t) = sum_k c[k] t**k + O(t**(K+1))``.  Vector fields written with plain
numpy operations (arithmetic, ``np.stack``, ``np.concatenate``, ``np.sum``,
``np.exp``, ``np.sin``, ``np.cos``, ``np.sqrt``, powers, constant ``@``) can
be evaluated on jets and thus propagate Taylor coefficients exactly.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Jet"]


def _expand(c, ndim):
    # insert value axes right after the coefficient axis
    missing = ndim - (c.ndim - 1)
    if missing <= 0:
        return c
    return c.reshape(c.shape[:1] + (1,) * missing + c.shape[1:])


def _align(x, y):
    ndim = max(x.ndim, y.ndim) - 1
    return _expand(x, ndim), _expand(y, ndim)


def _const_coeffs(value, degree):
    value = np.asarray(value, dtype=float)
    c = np.zeros((degree + 1,) + value.shape)
    c[0] = value
    return c


class Jet:
    __array_priority__ = 1000

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)

    @classmethod
    def constant(cls, value, degree: int) -> "Jet":
        return cls(_const_coeffs(value, degree))

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def shape(self):
        return self.coeffs.shape[1:]

    @property
    def ndim(self):
        return self.coeffs.ndim - 1

    def __len__(self):
        return self.coeffs.shape[1]

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return Jet(self.coeffs[(slice(None),) + key])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self):
        return f"Jet(degree={self.degree}, shape={self.shape})"

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.degree != self.degree:
                raise ValueError("jets of different degree cannot be combined")
            return other
        return Jet(_const_coeffs(other, self.degree))

    # arithmetic

    def __neg__(self):
        return Jet(-self.coeffs)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Jet):
            x, y = _align(self.coeffs, self._lift(other).coeffs)
            return Jet(x + y)
        other = np.asarray(other, dtype=float)
        x = _expand(self.coeffs, other.ndim)
        c0 = x[0] + other
        c = np.broadcast_to(x, (self.degree + 1,) + c0.shape).copy()
        c[0] = c0
        return Jet(c)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            return Jet(_expand(self.coeffs, other.ndim) * other)
        x, y = _align(self.coeffs, self._lift(other).coeffs)
        K = self.degree
        shape = np.broadcast_shapes(x.shape[1:], y.shape[1:])
        out = np.zeros((K + 1,) + shape)
        for k in range(K + 1):
            out[k] = np.sum(x[: k + 1] * y[k::-1], axis=0)
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            return Jet(_expand(self.coeffs, other.ndim) / other)
        x, y = _align(self.coeffs, self._lift(other).coeffs)
        K = self.degree
        shape = np.broadcast_shapes(x.shape[1:], y.shape[1:])
        out = np.zeros((K + 1,) + shape)
        for k in range(K + 1):
            acc = x[k] - np.sum(y[1 : k + 1] * out[k - 1 :: -1][:k], axis=0) if k else x[0]
            out[k] = acc / y[0]
        return Jet(out)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Jet):
            raise TypeError("jet exponents are not supported")
        alpha = float(exponent)
        if alpha == 2.0:
            return self * self
        if alpha == 1.0:
            return self
        if alpha == 0.0:
            return Jet(_const_coeffs(np.ones(self.shape), self.degree))
        x = self.coeffs
        K = self.degree
        out = np.zeros_like(x)
        out[0] = x[0] ** alpha
        for k in range(1, K + 1):
            j = np.arange(1, k + 1).reshape((-1,) + (1,) * (x.ndim - 1))
            terms = (alpha * j - (k - j)) * x[1 : k + 1] * out[k - 1 :: -1][:k]
            out[k] = np.sum(terms, axis=0) / (k * x[0])
        return Jet(out)

    def __matmul__(self, other):
        other = np.asarray(other, dtype=float)
        return Jet(self.coeffs @ other)

    def __rmatmul__(self, other):
        other = np.asarray(other, dtype=float)
        if self.ndim != 1:
            raise TypeError("constant @ jet is only supported for vector jets")
        return Jet(self.coeffs @ other.T)

    def sum(self, axis=None):
        if axis is None:
            return Jet(self.coeffs.reshape(self.degree + 1, -1).sum(axis=1))
        axis = axis + 1 if axis >= 0 else axis
        return Jet(self.coeffs.sum(axis=axis))

    # elementary functions

    def exp(self):
        x = self.coeffs
        out = np.zeros_like(x)
        out[0] = np.exp(x[0])
        for k in range(1, self.degree + 1):
            j = np.arange(1, k + 1).reshape((-1,) + (1,) * (x.ndim - 1))
            out[k] = np.sum(j * x[1 : k + 1] * out[k - 1 :: -1][:k], axis=0) / k
        return Jet(out)

    def _sincos(self):
        x = self.coeffs
        s, c = np.zeros_like(x), np.zeros_like(x)
        s[0], c[0] = np.sin(x[0]), np.cos(x[0])
        for k in range(1, self.degree + 1):
            j = np.arange(1, k + 1).reshape((-1,) + (1,) * (x.ndim - 1))
            jx = j * x[1 : k + 1]
            s[k] = np.sum(jx * c[k - 1 :: -1][:k], axis=0) / k
            c[k] = -np.sum(jx * s[k - 1 :: -1][:k], axis=0) / k
        return Jet(s), Jet(c)

    def sin(self):
        return self._sincos()[0]

    def cos(self):
        return self._sincos()[1]

    def log(self):
        x = self.coeffs
        out = np.zeros_like(x)
        out[0] = np.log(x[0])
        for k in range(1, self.degree + 1):
            j = np.arange(1, k).reshape((-1,) + (1,) * (x.ndim - 1))
            acc = x[k] - (np.sum(j * out[1:k] * x[k - 1 : 0 : -1], axis=0) / k if k > 1 else 0.0)
            out[k] = acc / x[0]
        return Jet(out)

    # numpy protocols

    _UFUNCS = {
        np.add: lambda a, b: a + b,
        np.subtract: lambda a, b: a - b,
        np.multiply: lambda a, b: a * b,
        np.true_divide: lambda a, b: a / b,
        np.power: lambda a, b: a**b,
        np.negative: lambda a: -a,
        np.positive: lambda a: a,
        np.square: lambda a: a * a,
        np.sqrt: lambda a: a**0.5,
        np.exp: lambda a: a.exp(),
        np.log: lambda a: a.log(),
        np.sin: lambda a: a.sin(),
        np.cos: lambda a: a.cos(),
        np.matmul: lambda a, b: a @ b,
    }

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs or ufunc not in self._UFUNCS:
            return NotImplemented
        args = list(inputs)
        if ufunc in (np.exp, np.log, np.sin, np.cos, np.sqrt, np.square, np.negative, np.positive):
            return self._UFUNCS[ufunc](args[0])
        a, b = args
        if not isinstance(a, Jet):
            if ufunc is np.matmul:
                return b.__rmatmul__(a)
            a = b._lift(a)
        return self._UFUNCS[ufunc](a, b)

    def __array_function__(self, func, types, args, kwargs):
        if func is np.sum:
            return args[0].sum(**kwargs)
        if func in (np.stack, np.concatenate):
            items = list(args[0])
            degree = next(x.degree for x in items if isinstance(x, Jet))
            coeffs = [
                x.coeffs if isinstance(x, Jet) else _const_coeffs(x, degree) for x in items
            ]
            axis = kwargs.get("axis", args[1] if len(args) > 1 else 0)
            axis = axis + 1 if axis >= 0 else axis
            return Jet(func(coeffs, axis=axis))
        return NotImplemented
