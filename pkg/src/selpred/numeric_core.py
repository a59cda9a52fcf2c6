"""Dense float64 helpers and a counter-based seeded RNG.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64; helpers
here validate shape and finiteness at module boundaries.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError


def as_matrix(m, name="matrix", *, finite=True) -> np.ndarray:
    """Return ``m`` as a C-contiguous 2-D float64 array, validating it."""
    a = np.ascontiguousarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if finite and not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite values")
    return a


def column_mean_std(m) -> tuple[np.ndarray, np.ndarray]:
    """Column means and population (1/N) standard deviations.

    No epsilon is added; callers that need a floor add their own.
    """
    a = as_matrix(m)
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"empty matrix of shape {a.shape}")
    means = a.mean(axis=0)
    var = ((a - means) ** 2).mean(axis=0)
    return means, np.sqrt(var)


def center_columns(m) -> np.ndarray:
    a = as_matrix(m)
    if a.shape[0] < 1:
        raise DimensionError("cannot center a matrix with zero rows")
    return a - a.mean(axis=0)


def matmul_t(a, b, transpose_a: bool = False) -> np.ndarray:
    """``a @ b`` or ``a.T @ b`` with an explicit inner-dimension check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    left = a.T if transpose_a else a
    if left.shape[1] != b.shape[0]:
        raise DimensionError(
            f"inner dimensions differ: {left.shape} x {b.shape}"
        )
    return left @ b


class Rng:
    """Seeded generator backed by the counter-based Philox bit generator.

    Sub-streams come from :meth:`split`, which keys a fresh generator on
    ``(seed, *keys)``; the result does not depend on how much of the parent
    stream has been consumed, so tasks can be scheduled in any order.
    """

    def __init__(self, seed: int = 0, _keys: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = int(seed)
        self._keys = tuple(int(k) for k in _keys)
        ss = np.random.SeedSequence([self.seed, *self._keys])
        self.generator = np.random.Generator(np.random.Philox(ss))

    def split(self, *keys: int) -> "Rng":
        return Rng(self.seed, self._keys + tuple(keys))

    def normal(self, size=None, scale=1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size)

    def uniform(self, size=None, low=0.0, high=1.0) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, keys={self._keys})"
