"""Dense linear-algebra helpers, seeded random streams and a finite-difference
gradient oracle.

Matrices are plain ``numpy`` float64 arrays; the helpers here only add the
shape and finiteness checks the rest of the package relies on.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["as_matrix", "matvec", "RngStream", "uniform", "finite_diff_grad"]


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Return ``data`` as a finite float64 2-D array, optionally reshaping a
    flat row-major sequence to ``rows x cols``."""
    m = np.asarray(data, dtype=np.float64)
    if rows is not None and cols is not None:
        if m.size != rows * cols:
            raise ValueError(f"expected {rows * cols} values for a {rows}x{cols} matrix, got {m.size}")
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def matvec(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if m.ndim != 2 or x.ndim != 1 or m.shape[1] != x.shape[0]:
        raise ValueError(f"cannot multiply matrix {m.shape} with vector {x.shape}")
    return m @ x


class RngStream:
    """Seeded random stream backed by the Philox-4x64 counter-based generator.

    Philox output depends only on (key, counter), so a given seed yields the
    same draws on every platform. Child streams for parallel workers are keyed
    by ``(seed, index)`` through ``numpy.random.SeedSequence``.
    """

    def __init__(self, seed: int | tuple[int, ...] = 0):
        self.seed = seed
        entropy = list(seed) if isinstance(seed, tuple) else int(seed)
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def spawn(self, index: int) -> "RngStream":
        base = self.seed if isinstance(self.seed, tuple) else (int(self.seed),)
        return RngStream(base + (int(index),))

    def uniform_open_closed(self, size=None) -> np.ndarray | float:
        """Draws from U(0, 1]."""
        return 1.0 - self._gen.random(size)

    def uniform(self, lo: float, hi: float, size=None):
        if not lo < hi:
            raise ValueError(f"uniform bounds must satisfy lo < hi, got [{lo}, {hi}]")
        return lo + (hi - lo) * self.uniform_open_closed(size)

    def random(self, size=None):
        """Draws from U[0, 1)."""
        return self._gen.random(size)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def poisson(self, lam, size=None):
        return self._gen.poisson(lam, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)


def uniform(rng: RngStream, lo: float, hi: float) -> float:
    """One draw from the half-open interval (lo, hi]."""
    return float(rng.uniform(lo, hi))


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64, copy=True)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value when perturbing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad.reshape(x.shape)
