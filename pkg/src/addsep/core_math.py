"""Softplus activation family and checked dense linear algebra.

Every function in the softplus family accepts either a Python float (fast
scalar path through :mod:`math`, used by the autodiff tape) or a numpy array
(vectorised path, used by training and the derivative network).
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .errors import DimensionMismatch, UnsupportedActivation

_SCALAR = (int, float)


def softplus(x):
    """``log(exp(x) + 1)`` without overflow for large ``x``."""
    if isinstance(x, _SCALAR):
        if x > 0:
            return x + math.log1p(math.exp(-x))
        return math.log1p(math.exp(x))
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_prime(x):
    """Logistic sigmoid, the first derivative of softplus."""
    if isinstance(x, _SCALAR):
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus_double_prime(x):
    # exp(x)/(exp(x)+1)^2 is even in x, so evaluate at -|x| to keep exp bounded
    if isinstance(x, _SCALAR):
        e = math.exp(-abs(x))
        return e / ((1.0 + e) * (1.0 + e))
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return e / ((1.0 + e) * (1.0 + e))


def softplus_triple_prime(x):
    """Third derivative; only needed to differentiate a recorded second-order sweep."""
    return softplus_double_prime(x) * (1.0 - 2.0 * softplus_prime(x))


class ActivationKind(enum.Enum):
    SOFTPLUS = "softplus"

    def value_of(self, x):
        return _TABLE[self][0](x)

    def prime(self, x):
        return _TABLE[self][1](x)

    def double_prime(self, x):
        return _TABLE[self][2](x)

    @classmethod
    def parse(cls, name: str) -> "ActivationKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise UnsupportedActivation(f"unknown activation {name!r}") from None


_TABLE = {
    ActivationKind.SOFTPLUS: (softplus, softplus_prime, softplus_double_prime),
}


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d vector, got shape {v.shape}")
    return v


def matmul(a, b) -> np.ndarray:
    """Matrix product that refuses to broadcast."""
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matvec(a, v) -> np.ndarray:
    a, v = as_matrix(a), as_vector(v)
    if a.shape[1] != v.shape[0]:
        raise DimensionMismatch(f"cannot apply {a.shape} matrix to length-{v.shape[0]} vector")
    return a @ v


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)
