"""Recovery metrics: mean-removed spectral angle and relative layer errors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionError, DomainError, NumericalError
from .objectives import FactorStack, data_errors, layer_errors

ARCCOS_SLACK = 1e-9


def _centered(v, what="vector"):
    v = np.asarray(v, dtype=np.float64).ravel()
    c = v - v.mean()
    nrm = np.linalg.norm(c)
    if nrm == 0.0 or nrm <= 1e-14 * np.abs(v).max():
        raise DomainError(f"{what} is constant; its mean-removed angle is undefined")
    return c / nrm


def _angle(t, e):
    """Scaled angles between unit columns of ``t`` and ``e``.

    The cosine is range-checked, but the angle itself is evaluated as
    ``2 atan2(||t - e||, ||t + e||)``, which equals ``arccos(<t, e>)`` for
    unit vectors and stays accurate for nearly (anti)parallel pairs.
    """
    cos = t.T @ e
    if np.any(cos > 1 + ARCCOS_SLACK) or np.any(cos < -1 - ARCCOS_SLACK):
        raise NumericalError(f"cosine outside [-1, 1]: {cos}")
    diff = np.linalg.norm(t[:, :, None] - e[:, None, :], axis=0)
    summ = np.linalg.norm(t[:, :, None] + e[:, None, :], axis=0)
    return 200.0 / np.pi * np.arctan2(diff, summ)


def mrsa_pair(a, b) -> float:
    """Mean-removed spectral angle between two vectors, scaled to [0, 100]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch {a.size} vs {b.size}")
    return float(_angle(_centered(a)[:, None], _centered(b)[:, None])[0, 0])


def mrsa_matrix(w_true, w_est) -> np.ndarray:
    """``cost[i, j] = MRSA(w_true[:, i], w_est[:, j])``."""
    w_true = np.asarray(w_true, dtype=np.float64)
    w_est = np.asarray(w_est, dtype=np.float64)
    if w_true.shape != w_est.shape:
        raise DimensionError(f"shape mismatch {w_true.shape} vs {w_est.shape}")
    t = np.column_stack([_centered(w_true[:, i], f"true column {i}") for i in range(w_true.shape[1])])
    e = np.column_stack([_centered(w_est[:, j], f"estimated column {j}") for j in range(w_est.shape[1])])
    return _angle(t, e)


def mrsa_matched(w_true, w_est):
    """Mean MRSA under the best one-to-one pairing of columns.

    Returns
    -------
    (mean, perm) : (float, ndarray)
        ``perm[i]`` is the estimated column paired with true column ``i``.
    """
    cost = mrsa_matrix(w_true, w_est)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty_like(cols)
    perm[rows] = cols
    return float(cost[rows, cols].mean()), perm


def relative_errors(x, s: FactorStack, initial_bases: Optional[Sequence[np.ndarray]] = None):
    """Per-layer relative layer-centric and data-centric errors.

    Layer-centric errors are divided by ``||W0[i-1]||^2`` where ``W0`` are
    the supplied initial bases (``W0[-1] = X``); by default the current
    bases are used. Data-centric errors are divided by ``||X||^2``.
    """
    bases = list(initial_bases) if initial_bases is not None else s.W[:-1]
    den = np.array([np.vdot(x, x)] + [np.vdot(w, w) for w in bases[: s.depth - 1]])
    if np.any(den == 0):
        raise DomainError("zero denominator in relative errors")
    return layer_errors(x, s) / den, data_errors(x, s) / den[0]


@dataclass
class MetricReport:
    mrsa: list
    permutations: list
    layer_centric: list
    data_centric: list

    def to_dict(self):
        return {
            "mrsa": list(self.mrsa),
            "permutations": [list(map(int, p)) for p in self.permutations],
            "layer_centric": list(map(float, self.layer_centric)),
            "data_centric": list(map(float, self.data_centric)),
        }


def evaluate(x, s: FactorStack, truth: Sequence[np.ndarray], initial_bases=None) -> MetricReport:
    """Matched MRSA against ground-truth bases (first layers first) plus errors."""
    if len(truth) > s.depth:
        raise DimensionError(f"{len(truth)} ground-truth bases for a {s.depth}-layer stack")
    scores, perms = [], []
    for wt, we in zip(truth, s.W):
        v, p = mrsa_matched(wt, we)
        scores.append(v)
        perms.append(p)
    lc, dc = relative_errors(x, s, initial_bases)
    return MetricReport(scores, perms, lc.tolist(), dc.tolist())
