"""Restarted fast projected gradient method.

Nesterov-type extrapolation with the ``alpha``/``beta`` recurrence and a
restart whenever the objective increases: the extrapolation is dropped and
the next gradient step is taken from the last accepted iterate. The
returned point therefore never has a larger objective than the start.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, NumericalError


class StepMode(str, Enum):
    LIPSCHITZ = "lipschitz"
    BACKTRACKING = "backtracking"


@dataclass(frozen=True)
class FpgmConfig:
    alpha1: float = 0.5
    max_inner_iters: int = 10
    step_mode: StepMode = StepMode.LIPSCHITZ
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    rel_tol: float = 1e-9
    max_backtracks: int = 50

    def __post_init__(self):
        object.__setattr__(self, "step_mode", StepMode(self.step_mode))
        if not 0.0 < self.alpha1 < 1.0:
            raise DomainError("alpha1 must lie in (0, 1)")
        if not 0.0 < self.shrink < 1.0 or not 0.0 < self.sufficient_decrease < 1.0:
            raise DomainError("backtracking factors must lie in (0, 1)")
        if self.max_inner_iters < 1:
            raise DomainError("max_inner_iters must be positive")

    def to_dict(self):
        d = asdict(self)
        d["step_mode"] = self.step_mode.value
        return d


def next_alpha(alpha: float) -> float:
    a2 = alpha * alpha
    return 0.5 * (math.sqrt(a2 * a2 + 4.0 * a2) - a2)


def momentum(alpha: float, alpha_next: float) -> float:
    return alpha * (1.0 - alpha) / (alpha * alpha + alpha_next)


@dataclass
class FpgmResult:
    m: np.ndarray
    value: float
    iterations: int
    restarts: int
    step: Optional[float]
    history: list


def _check(value, k, what="objective"):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite {what} at inner iteration {k}")


def backtracking_step(y, objective, gradient, projection, t0: float, cfg: FpgmConfig,
                      fy: Optional[float] = None, gy: Optional[np.ndarray] = None):
    """Projected gradient step from ``y`` with a backtracked step length.

    Tries ``t0, rho*t0, rho^2*t0, ...`` and accepts the first ``t`` with
    ``f(M) <= f(y) + c (<g, M - y> + ||M - y||^2 / (2t))``.

    Returns
    -------
    (M, t) : tuple
        The accepted point and step. When no step is accepted within
        ``cfg.max_backtracks`` shrinks, ``(y, 0.0)`` is returned.
    """
    fy = objective(y) if fy is None else fy
    gy = gradient(y) if gy is None else gy
    c = cfg.sufficient_decrease
    t = t0
    for _ in range(cfg.max_backtracks + 1):
        m = projection(y - t * gy)
        d = m - y
        dd = float(np.vdot(d, d))
        if dd == 0.0:
            return m, t
        fm = objective(m)
        if np.isfinite(fm) and fm <= fy + c * (float(np.vdot(gy, d)) + dd / (2.0 * t)):
            return m, t
        t *= cfg.shrink
    return y, 0.0


def fpgm_solve(m0, objective: Callable, gradient: Callable, projection: Callable,
               lipschitz: Optional[float], cfg: FpgmConfig = FpgmConfig(),
               t0: Optional[float] = None) -> FpgmResult:
    """Decrease ``objective`` over the set defined by ``projection``.

    Parameters
    ----------
    m0 : ndarray
        Feasible starting point.
    objective, gradient : callable
        Smooth objective and its gradient.
    projection : callable
        Projection onto the feasible set.
    lipschitz : float or None
        Lipschitz constant of the gradient. ``None`` (or a backtracking
        config) selects the backtracking step rule.
    cfg : FpgmConfig
    t0 : float, optional
        Initial trial step for backtracking; defaults to 1. Each later
        search starts at the last accepted step divided by ``cfg.shrink``.

    Returns
    -------
    FpgmResult
        ``result.m`` satisfies ``objective(result.m) <= objective(m0)``;
        ``history`` lists the objective of every accepted iterate.
    """
    f_prev = objective(m0)
    _check(f_prev, 0)
    backtrack = lipschitz is None or cfg.step_mode is StepMode.BACKTRACKING
    if not backtrack and lipschitz <= 0:
        # constant objective in this block
        return FpgmResult(m0, f_prev, 0, 0, None, [f_prev])
    step = (1.0 if t0 is None else t0) if backtrack else 1.0 / lipschitz
    m_prev = m0
    y = m0
    alpha = cfg.alpha1
    history = [f_prev]
    restarts = 0
    plain = True  # y equals the last accepted iterate (no extrapolation)
    k = 0
    for k in range(1, cfg.max_inner_iters + 1):
        gy = gradient(y)
        _check(gy, k, "gradient")
        if backtrack:
            # start one growth factor above the last accepted step so the
            # step can recover after a round-off induced shrink
            m, t = backtracking_step(y, objective, gradient, projection, step / cfg.shrink, cfg, gy=gy)
            if t > 0:
                step = t
        else:
            m = projection(y - step * gy)
        fm = objective(m)
        _check(fm, k)
        alpha_next = next_alpha(alpha)
        if fm > f_prev:
            # restart from the last accepted iterate
            restarts += 1
            y = m_prev
            alpha = cfg.alpha1
            if backtrack and t == 0.0 and plain:
                break
            plain = True
            continue
        decrease = f_prev - fm
        if decrease <= cfg.rel_tol * abs(fm) and not plain:
            # a stalled extrapolated step is not evidence of convergence:
            # accept it, drop the momentum and try a plain step
            m_prev, f_prev = m, fm
            history.append(fm)
            y = m
            alpha = cfg.alpha1
            plain = True
            continue
        beta = momentum(alpha, alpha_next)
        plain = beta == 0.0 or np.array_equal(m, m_prev)
        y = m + beta * (m - m_prev)
        alpha = alpha_next
        m_prev, f_prev = m, fm
        history.append(fm)
        if decrease <= cfg.rel_tol * abs(fm):
            break
    return FpgmResult(m_prev, f_prev, k, restarts, step if backtrack else None, history)
