"""Dense numerical substrate: 2-D float64 matrices and a seedable RNG.

Matrices are plain ``numpy.ndarray`` values, float64, C-order (row-major),
one sample per row. They are treated as immutable once returned from an
operation; nothing in this package mutates a matrix it did not allocate.

Randomness comes from :class:`Rng`, a thin wrapper over numpy's PCG64
generator. PCG64 is the fixed, documented algorithm: the same seed yields
the same stream, bit for bit, for every consumer in this package. An Rng
is single-owner — pass it along, never share it between concurrent runs.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, NumericalError, ShapeError

Matrix = np.ndarray


class Rng:
    """Deterministic random source (PCG64). Same seed, same stream."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, rows: int, cols: int, mean: float = 0.0, std: float = 1.0) -> Matrix:
        if std < 0:
            raise ArgumentError(f"std must be >= 0, got {std}")
        return self._gen.normal(mean, std, size=(rows, cols)) if std > 0 else np.full(
            (rows, cols), float(mean)
        )

    def uniform(self, rows: int, cols: int) -> Matrix:
        """Uniform samples in [0, 1), shape (rows, cols)."""
        return self._gen.random((rows, cols))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def choice(self, candidates, size=None):
        return self._gen.choice(np.asarray(candidates), size=size)


def as_matrix(values) -> Matrix:
    """Coerce to a 2-D float64 matrix, rejecting other ranks."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return np.ascontiguousarray(m)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product; (n x k) @ (k x m) -> (n x m)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got ndim {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def transpose(a: Matrix) -> Matrix:
    return np.asarray(a, dtype=np.float64).T


def gaussian(rng: Rng, rows: int, cols: int, mean: float = 0.0, std: float = 1.0) -> Matrix:
    """I.i.d. normal samples, deterministic for a fixed seed."""
    return rng.normal(rows, cols, mean, std)


def check_finite(m: Matrix, context: str = "matrix") -> Matrix:
    """Raise NumericalError if any entry is NaN/Inf; return m unchanged."""
    if not np.all(np.isfinite(m)):
        bad = int(np.size(m) - np.count_nonzero(np.isfinite(m)))
        raise NumericalError(f"{context}: {bad} non-finite entries")
    return m
