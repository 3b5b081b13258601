"""Projections onto the feasible sets of the factor matrices.

Every projection maps a matrix to a matrix of the same shape. Columns are
the unit of work for the simplex and grouped-sparse operators.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import DomainError

GSP_TOL = 1e-3
GSP_BISECTIONS = 60


class ConstraintKind(str, Enum):
    NONE = "none"
    NONNEG = "nonneg"
    SIMPLEX = "simplex"
    SPARSE = "sparse"


@dataclass(frozen=True)
class ConstraintSpec:
    """Feasible set of one factor.

    ``sparsity_target`` is the average column Hoyer sparsity requested by
    the grouped-sparse kind and must be ``None`` for every other kind.
    """

    kind: ConstraintKind = ConstraintKind.NONNEG
    sparsity_target: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ConstraintKind(self.kind))
        if self.kind is ConstraintKind.SPARSE:
            t = self.sparsity_target
            if t is None or not 0.0 < t < 1.0:
                raise DomainError(f"sparsity target must lie in (0, 1), got {t}")
        elif self.sparsity_target is not None:
            raise DomainError(f"{self.kind.value} constraint takes no sparsity target")

    @classmethod
    def parse(cls, text: str) -> "ConstraintSpec":
        """Parse ``none``, ``nonneg``, ``simplex`` or ``sparse:<target>``."""
        text = text.strip().lower()
        if text.startswith("sparse"):
            _, _, value = text.partition(":")
            if not value:
                raise DomainError("sparse constraint needs a target, e.g. sparse:0.33")
            return cls(ConstraintKind.SPARSE, float(value))
        try:
            return cls(ConstraintKind(text))
        except ValueError:
            raise DomainError(f"unknown constraint {text!r}") from None

    def __str__(self):
        if self.kind is ConstraintKind.SPARSE:
            return f"sparse:{self.sparsity_target!r}"
        return self.kind.value

    def projector(self) -> Callable[[np.ndarray], np.ndarray]:
        if self.kind is ConstraintKind.NONE:
            return lambda m: m
        if self.kind is ConstraintKind.NONNEG:
            return project_nonneg
        if self.kind is ConstraintKind.SIMPLEX:
            return project_column_simplex
        target = self.sparsity_target
        return lambda m: project_nonneg_grouped_sparse(m, target)

    def is_feasible(self, m: np.ndarray, tol: float = 1e-9) -> bool:
        if self.kind is ConstraintKind.NONE:
            return True
        if np.any(m < 0):
            return False
        if self.kind is ConstraintKind.SIMPLEX:
            return bool(np.all(np.abs(m.sum(axis=0) - 1.0) <= tol))
        if self.kind is ConstraintKind.SPARSE:
            nz = np.any(m > 0, axis=0)
            if not np.any(nz):
                return False
            return avg_hoyer_sparsity(m[:, nz]) >= self.sparsity_target - GSP_TOL
        return True


def project_nonneg(m: np.ndarray) -> np.ndarray:
    return np.maximum(m, 0.0)


def project_column_simplex(m: np.ndarray) -> np.ndarray:
    """Project each column onto ``{x >= 0, sum(x) = 1}``.

    Sort-and-threshold: with ``u`` the column sorted decreasingly, the
    threshold is ``(cumsum(u)[k] - 1) / (k + 1)`` at the last index ``k``
    where ``u[k]`` exceeds it.
    """
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    u = -np.sort(-m, axis=0, kind="stable")
    css = np.cumsum(u, axis=0) - 1.0
    ind = np.arange(1, n + 1).reshape(-1, 1)
    cond = u - css / ind > 0
    # cond is true on a prefix of each column; its length is the support size
    rho = np.count_nonzero(cond, axis=0)
    theta = css[rho - 1, np.arange(m.shape[1])] / rho
    return np.maximum(m - theta, 0.0)


def hoyer_sparsity(x) -> float:
    """Hoyer sparsity ``(sqrt(n) - |x|_1/|x|_2) / (sqrt(n) - 1)``, in [0, 1]."""
    x = np.asarray(x, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        raise DomainError("Hoyer sparsity needs at least two entries")
    l2 = np.linalg.norm(x)
    if l2 == 0.0:
        raise DomainError("Hoyer sparsity of the zero vector is undefined")
    rn = np.sqrt(n)
    return float((rn - np.abs(x).sum() / l2) / (rn - 1.0))


def _column_hoyer(m: np.ndarray) -> np.ndarray:
    rn = np.sqrt(m.shape[0])
    return (rn - np.abs(m).sum(axis=0) / np.linalg.norm(m, axis=0)) / (rn - 1.0)


def avg_hoyer_sparsity(m: np.ndarray) -> float:
    """Mean Hoyer sparsity of the columns of ``m``."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[0] < 2:
        raise DomainError("Hoyer sparsity needs at least two rows")
    norms = np.linalg.norm(m, axis=0)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DomainError(f"column {int(zero[0])} is zero; Hoyer sparsity undefined")
    return float(np.mean(_column_hoyer(m)))


def _shrink(m: np.ndarray, beta: float, colmax: np.ndarray, norms: np.ndarray) -> np.ndarray:
    if beta >= 1.0:
        # limit beta -> 1: only the entries equal to the column maximum survive
        s = (m == colmax).astype(np.float64)
    else:
        s = np.maximum(m - beta * colmax, 0.0)
    return s * (norms / np.linalg.norm(s, axis=0))


def project_grouped_sparse(m: np.ndarray, target: float) -> np.ndarray:
    """Raise the average column Hoyer sparsity of ``m`` to ``target``.

    All columns share one relative threshold ``beta``: column ``x`` becomes
    ``s * max(x - beta * max(x), 0)``, with ``s`` restoring its l2 norm. The
    smallest ``beta`` reaching the target is found by bisection, so columns
    keep individual sparsity levels while their average hits the target.
    The result satisfies ``target <= avg_hoyer_sparsity < target + 1e-3``,
    hence projecting twice returns the same matrix.

    Parameters
    ----------
    m : ndarray
        Nonnegative matrix with at least two rows and no zero column.
    target : float
        Requested average sparsity in (0, 1).

    Raises
    ------
    DomainError
        If ``m`` has a zero or negative column, or the target cannot be
        reached even by keeping only the maximal entries of each column.
    """
    m = np.asarray(m, dtype=np.float64)
    if not 0.0 < target < 1.0:
        raise DomainError(f"sparsity target must lie in (0, 1), got {target}")
    if np.any(m < 0):
        raise DomainError("grouped sparse projection expects a nonnegative matrix")
    current = avg_hoyer_sparsity(m)
    if current >= target:
        return m
    colmax = m.max(axis=0)
    norms = np.linalg.norm(m, axis=0)
    top = _shrink(m, 1.0, colmax, norms)
    reachable = float(np.mean(_column_hoyer(top)))
    if reachable < target - GSP_TOL:
        raise DomainError(
            f"sparsity target {target} unreachable; keeping only column maxima gives {reachable:.6f}"
        )
    if reachable < target:
        return top
    lo, hi = 0.0, 1.0
    best = top
    for _ in range(GSP_BISECTIONS):
        mid = 0.5 * (lo + hi)
        cand = _shrink(m, mid, colmax, norms)
        if np.mean(_column_hoyer(cand)) >= target:
            hi, best = mid, cand
        else:
            lo = mid
        if hi - lo < 1e-15:
            break
    return best


def project_nonneg_grouped_sparse(m: np.ndarray, target: float) -> np.ndarray:
    """Nonnegative orthant, then grouped sparsity on the nonzero columns.

    Used as the projection step inside the gradient solver, where a column
    may vanish after clipping; zero columns are left at zero and excluded
    from the sparsity average.
    """
    p = np.maximum(m, 0.0)
    nz = np.any(p > 0, axis=0)
    if np.all(nz):
        return project_grouped_sparse(p, target)
    if not np.any(nz):
        return p
    p[:, nz] = project_grouped_sparse(p[:, nz], target)
    return p
