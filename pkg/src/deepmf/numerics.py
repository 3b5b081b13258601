"""Dense matrix helpers and the few linear-algebra kernels the solvers need.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The helpers
here validate shapes and finiteness at the boundaries so that the inner
loops can stay on raw numpy.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import DimensionError, NumericalError

Matrix = np.ndarray

POWER_ITER_TOL = 1e-9
POWER_ITER_MAX = 1000


def as_matrix(a, name: str = "matrix") -> Matrix:
    """Return ``a`` as a finite 2-D float64 array, raising on bad input."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got {m.ndim} dimensions")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"{name} must be nonempty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{name} contains NaN or Inf entries")
    return m


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the same seed gives the same stream."""
    return np.random.default_rng(int(seed))


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for a sub-task, derived from ``(seed, *key)``."""
    return np.random.default_rng([int(seed), *map(int, key)])


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frob_err_sq(a: Matrix, b: Matrix) -> float:
    """Squared Frobenius norm of ``a - b``."""
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
    d = np.asarray(a) - np.asarray(b)
    return float(np.vdot(d, d))


def _start_vector(k: int) -> np.ndarray:
    # fixed pseudo-random start: a structured vector like ones() can be
    # orthogonal to the leading eigenvector
    v = np.random.default_rng(12345).standard_normal(k)
    return v / np.linalg.norm(v)


def top_eigenvalue(g: Matrix, tol: float = POWER_ITER_TOL, max_iter: int = POWER_ITER_MAX) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    v = _start_vector(g.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        w = g @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= tol * abs(new):
            return max(new, float(v @ (g @ v)))
        lam = new
    return max(lam, float(v @ (g @ v)))


def spectral_norm_sq(a: Matrix) -> float:
    """Largest eigenvalue of ``a.T @ a`` (the squared spectral norm).

    The power iteration runs on whichever Gram matrix is smaller,
    ``a.T @ a`` or ``a @ a.T``; both share their nonzero spectrum.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        raise DimensionError("spectral_norm_sq of an empty matrix")
    g = a.T @ a if a.shape[1] <= a.shape[0] else a @ a.T
    return top_eigenvalue(g)


def logdet_and_inverse(g: Matrix, delta: float) -> tuple[float, Matrix]:
    """Return ``log det(g + delta*I)`` and ``(g + delta*I)^{-1}``.

    ``g`` is expected to be a Gram matrix ``W.T @ W``. The shifted matrix is
    factorized by Cholesky; on failure a single diagonal jitter of
    ``1e-12 * trace / r`` is tried before giving up.

    Raises
    ------
    NumericalError
        If the shifted matrix is not positive definite.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DimensionError(f"expected a square matrix, got {g.shape}")
    r = g.shape[0]
    a = 0.5 * (g + g.T) + delta * np.eye(r)
    try:
        c, low = scipy.linalg.cho_factor(a, lower=True)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * abs(np.trace(a)) / r
        try:
            c, low = scipy.linalg.cho_factor(a + jitter * np.eye(r), lower=True)
        except np.linalg.LinAlgError:
            ev = np.linalg.eigvalsh(a)
            raise NumericalError(
                "Gram matrix + delta*I is not positive definite "
                f"(eigenvalues in [{ev[0]:.3e}, {ev[-1]:.3e}])"
            ) from None
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    inv = scipy.linalg.cho_solve((c, low), np.eye(r))
    return logdet, 0.5 * (inv + inv.T)
