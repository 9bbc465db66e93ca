"""Log-space arithmetic, seeded randomness and the finite-difference oracle.

Every probability in the toolkit is carried as a natural log. Negative
infinity stands for probability zero and propagates through the reductions
below without producing NaN.
"""

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

from config.app_config import AppConfig
from utils.errors import EmptyReductionError, NonFiniteError

# Row-major float64 matrix; rows * cols == size.
RealMatrix = np.ndarray


def as_matrix(data: Iterable, rows: int, cols: int) -> RealMatrix:
    """Build a float64 ``rows x cols`` matrix from row-major data."""
    flat = np.asarray(list(data) if not isinstance(data, np.ndarray) else data, dtype=np.float64).ravel()
    if flat.size != rows * cols:
        raise ValueError(f"expected {rows * cols} values for a {rows}x{cols} matrix, got {flat.size}")
    return flat.reshape(rows, cols)


def logsumexp(values: Sequence[float]) -> float:
    """log(sum(exp(v))) with max-shift; -inf iff every input is -inf."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyReductionError()
    if np.isneginf(arr).all():
        return -math.inf
    return float(special.logsumexp(arr))


def log_softmax(scores: Sequence[float], axis: int = -1) -> np.ndarray:
    """Normalized log-probabilities along ``axis``."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise EmptyReductionError()
    if np.isnan(arr).any():
        raise NonFiniteError("log_softmax received NaN scores")
    return special.log_softmax(arr, axis=axis)


def softmax(scores: Sequence[float], axis: int = -1) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64)
    if np.isnan(arr).any():
        raise NonFiniteError("softmax received NaN scores")
    return special.softmax(arr, axis=axis)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: Sequence[float],
                     h: float = AppConfig.FINITE_DIFF_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    ``x`` is never modified; each coordinate is perturbed on a private copy.
    """
    if h <= 0:
        raise ValueError("finite difference step must be positive")
    base = np.array(x, dtype=np.float64)
    shape = base.shape
    flat = base.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += h
        minus[i] -= h
        f_plus = f(plus.reshape(shape))
        f_minus = f(minus.reshape(shape))
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NonFiniteError("non-finite function value during finite differences", coordinate=i)
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(shape)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest |a - n| / max(1, |a|) over all entries."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a))))


class SeededRng:
    """Deterministic generator: numpy ``PCG64`` seeded with a 64-bit integer.

    Instances are single-owner. Parallel or per-epoch work takes a child
    generator whose seed is ``seed + stream_index``.
    """

    algorithm = AppConfig.RNG_ALGORITHM

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, stream_index: int) -> "SeededRng":
        return SeededRng(self.seed + int(stream_index))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._generator.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._generator.normal(loc, scale, size)

    def integers(self, low: int, high: int, size=None):
        """Integers in the half-open range [low, high)."""
        return self._generator.integers(low, high, size=size)

    def random(self, size=None):
        return self._generator.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, n: int, p: Sequence[float]) -> int:
        return int(self._generator.choice(n, p=np.asarray(p, dtype=np.float64)))

    def dirichlet(self, alpha: Sequence[float]) -> np.ndarray:
        return self._generator.dirichlet(np.asarray(alpha, dtype=np.float64))
