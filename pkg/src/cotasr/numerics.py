"""Dense float64 numerics shared by every differentiable component.

All arrays are 2-D ``float64`` row-major ``np.ndarray`` objects; biases are
stored as ``(1, n)`` rows so every parameter has a (rows, cols) shape.
Log-probabilities represent zero as ``-inf``.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, ndtr

from .errors import DimensionError, NumericalError

Matrix = np.ndarray

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> Matrix:
    m = np.array(values, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"expected 2-D values, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows or cols is not None and m.shape[1] != cols:
        raise DimensionError(f"expected {rows}x{cols}, got {m.shape[0]}x{m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise NumericalError("matrix contains non-finite entries")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with shape checking.

    Delegates to the BLAS kernel behind ``@``; for fixed shapes and a single
    thread the result is bitwise reproducible.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_row(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise DimensionError("softmax of an empty sequence")
    return softmax(z, axis=-1)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def sigmoid(z):
    """Logistic function, evaluated without overflow on either tail."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def softplus(z):
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def log_sigmoid(z):
    return -softplus(-np.asarray(z, dtype=np.float64))


def gelu(z):
    """Exact GELU, ``z * Phi(z)`` with the Gaussian CDF (not the tanh fit)."""
    z = np.asarray(z, dtype=np.float64)
    out = 0.5 * z * (1.0 + erf(z / _SQRT2))
    return out if out.ndim else float(out)


def gelu_grad(z):
    """d gelu / dz = Phi(z) + z * phi(z)."""
    z = np.asarray(z, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(z / _SQRT2))
    return cdf + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def gelu_with_grad(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(gelu(z), gelu'(z)) sharing one CDF evaluation; used by the feed-forward layers."""
    cdf = ndtr(z)
    return z * cdf, cdf + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def log_sum_exp(z: Sequence[float]) -> float:
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise DimensionError("log_sum_exp of an empty sequence")
    m = np.max(z)
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.sum(np.exp(z - m))))


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x,
    eps: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> float:
    """Compare an analytic gradient with central differences.

    ``f(x)`` must return ``(value, grad)`` with ``grad`` shaped like ``x``.
    Returns the max over the checked coordinates of
    ``|analytic - central| / max(1, |analytic|, |central|)``.
    ``coords`` restricts the check to a subset of flat indices.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    value, analytic = f(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise NumericalError("non-finite value or gradient at the check point")
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += eps
        xm[i] -= eps
        fp = f(xp.reshape(x.shape))[0]
        fm = f(xm.reshape(x.shape))[0]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value near coordinate {i}")
        central = (fp - fm) / (2.0 * eps)
        err = abs(analytic[i] - central) / max(1.0, abs(analytic[i]), abs(central))
        worst = max(worst, err)
    return worst


class Rng:
    """Seeded random stream.

    The stream is numpy's PCG64 bit generator seeded with ``seed``; child
    streams come from ``SeedSequence.spawn``-style keying so per-item seeds
    do not depend on the order items are generated in.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *key: int) -> "Rng":
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key))
        return Rng(int(ss.generate_state(1, dtype=np.uint64)[0]))

    def normal(self, size=None, scale: float = 1.0):
        return self._gen.normal(0.0, scale, size)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        """Integers in ``[low, high)``."""
        return self._gen.integers(low, high, size)

    def random(self, size=None):
        """Uniform draws in [0, 1); a float when ``size`` is None."""
        if size is None:
            return float(self._gen.random())
        return self._gen.random(size)

    def choice(self, seq):
        return seq[int(self._gen.integers(0, len(seq)))]

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
