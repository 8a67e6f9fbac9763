"""Dense double-precision kernels used by every other module.

All functions take and return float64 numpy arrays, validate their inputs,
and are deterministic: identical inputs give bit-identical outputs.
"""

import math

import numpy as np

from .errors import DimensionError, DomainError, NumericalError


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array or raise."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if m.size and not np.all(np.isfinite(m)):
        raise DomainError(f"{name} contains non-finite values")
    return m


def as_vector(v, name: str = "vector", allow_empty: bool = False) -> np.ndarray:
    """Coerce to a finite 1-D float64 array or raise."""
    a = np.asarray(v, dtype=np.float64).ravel()
    if not allow_empty and a.size == 0:
        raise DomainError(f"{name} must be non-empty")
    if a.size and not np.all(np.isfinite(a)):
        raise DomainError(f"{name} contains non-finite values")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape checking."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def logsumexp(v) -> float:
    """log(sum(exp(v))) with max-shift so large inputs cannot overflow."""
    a = as_vector(v, "logsumexp input")
    m = float(a.max())
    return m + math.log(float(np.sum(np.exp(a - m))))


def logsumexp_rows(m) -> np.ndarray:
    """Row-wise logsumexp of a 2-D array."""
    a = as_matrix(m, "logsumexp input")
    if a.shape[1] == 0:
        raise DomainError("logsumexp of empty rows")
    shift = a.max(axis=1, keepdims=True)
    return (shift + np.log(np.sum(np.exp(a - shift), axis=1, keepdims=True))).ravel()


def softmax(v) -> np.ndarray:
    """Max-shifted softmax of a vector; outputs sum to 1."""
    a = as_vector(v, "softmax input")
    e = np.exp(a - a.max())
    return e / e.sum()


def softmax_rows(m) -> np.ndarray:
    """Row-wise max-shifted softmax of a 2-D array."""
    a = as_matrix(m, "softmax input")
    if a.shape[1] == 0:
        raise DomainError("softmax of empty rows")
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def percentile(v, p: float) -> float:
    """Nearest-rank percentile.

    Sorts ascending and returns the element at 1-based rank
    ceil(p * n / 100), clamped to [1, n]; p = 0 returns the minimum.
    No interpolation, so thresholds are bit-reproducible.
    """
    a = as_vector(v, "percentile input")
    if not 0.0 <= p <= 100.0:
        raise DomainError(f"percentile must be in [0, 100], got {p}")
    n = a.size
    rank = min(n, max(1, math.ceil((p * n) / 100.0)))
    return float(np.sort(a)[rank - 1])


def cholesky_factor(a) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a for symmetric positive-definite a.

    Raises NumericalError naming the failing pivot when a is not SPD.
    """
    m = as_matrix(a, "cholesky input")
    n = m.shape[0]
    if m.shape[1] != n:
        raise DimensionError(f"cholesky input must be square, got {m.shape}")
    lower = np.zeros_like(m)
    for j in range(n):
        d = m[j, j] - lower[j, :j] @ lower[j, :j]
        if d <= 0.0 or not math.isfinite(d):
            raise NumericalError(f"matrix is not positive definite at pivot {j}")
        lower[j, j] = math.sqrt(d)
        if j + 1 < n:
            lower[j + 1:, j] = (m[j + 1:, j] - lower[j + 1:, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def cholesky_solve(lower, b) -> np.ndarray:
    """Solve (L @ L.T) x = b given the lower factor L.

    b may be a vector or a matrix of stacked right-hand sides (one per
    column); the result has the same shape as b.
    """
    low = as_matrix(lower, "cholesky factor")
    n = low.shape[0]
    rhs = np.asarray(b, dtype=np.float64)
    vector_rhs = rhs.ndim == 1
    rhs = as_matrix(rhs.reshape(n, -1) if vector_rhs else rhs, "rhs")
    if rhs.shape[0] != n:
        raise DimensionError(f"rhs has {rhs.shape[0]} rows, factor dimension is {n}")
    y = np.zeros_like(rhs)
    for i in range(n):
        y[i] = (rhs[i] - low[i, :i] @ y[:i]) / low[i, i]
    x = np.zeros_like(rhs)
    for i in reversed(range(n)):
        x[i] = (y[i] - low[i + 1:, i] @ x[i + 1:]) / low[i, i]
    return x.ravel() if vector_rhs else x
