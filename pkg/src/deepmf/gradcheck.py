"""Finite-difference verification of the analytic loss gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import make_rng
from .objectives import (
    FactorStack,
    LossFamily,
    LossSpec,
    eval_L1,
    eval_L2,
    grad_L1_H,
    grad_L1_W,
    grad_L2_H,
    grad_L2_W,
    random_stack,
)

SIZES = dict(m=5, n=8, ranks=(4, 3, 2))
TOLERANCE = 1e-5

_GRADS = {
    (LossFamily.LAYER_CENTRIC, "W"): grad_L1_W,
    (LossFamily.LAYER_CENTRIC, "H"): grad_L1_H,
    (LossFamily.DATA_CENTRIC, "W"): grad_L2_W,
    (LossFamily.DATA_CENTRIC, "H"): grad_L2_H,
}
_LOSSES = {LossFamily.LAYER_CENTRIC: eval_L1, LossFamily.DATA_CENTRIC: eval_L2}


def finite_difference(f, m: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.empty_like(m)
    for idx in np.ndindex(m.shape):
        old = m[idx]
        m[idx] = old + h
        fp = f()
        m[idx] = old - h
        fm = f()
        m[idx] = old
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def relative_deviation(g, ref) -> float:
    scale = np.abs(ref).max()
    return float(np.abs(g - ref).max() / scale) if scale > 0 else float(np.abs(g).max())


@dataclass
class GradCheckResult:
    deviations: dict = field(default_factory=dict)

    @property
    def worst(self):
        return max(self.deviations.items(), key=lambda kv: kv[1])

    @property
    def ok(self) -> bool:
        return all(v < TOLERANCE for v in self.deviations.values())


def _spec(family, depth, rng, with_minvol):
    weights = tuple(rng.uniform(0.5, 2.0, depth - 1))
    kappas = tuple(rng.uniform(0.05, 0.5, depth)) if with_minvol else ()
    return LossSpec(family, weights, kappas, 0.1)


def check_gradients(instances: int = 20, seed: int = 0, with_minvol: bool = False,
                    sign_flip: bool = False) -> GradCheckResult:
    """Maximum relative deviation per ``(loss, factor, layer)`` over random instances.

    Each instance draws a nonnegative data matrix and stack of sizes
    ``SIZES`` and random positive weights. With ``with_minvol`` every layer
    carries a volume penalty. ``sign_flip`` negates one analytic gradient
    to exercise the detector.
    """
    rng = make_rng(seed)
    m, n, ranks = SIZES["m"], SIZES["n"], SIZES["ranks"]
    res = GradCheckResult()
    for _ in range(instances):
        x = rng.random((m, n))
        s0 = random_stack(rng, m, n, ranks)
        for family in (LossFamily.LAYER_CENTRIC, LossFamily.DATA_CENTRIC):
            spec = _spec(family, len(ranks), rng, with_minvol)
            for which in ("W", "H"):
                for i in range(len(ranks)):
                    s = FactorStack([w.copy() for w in s0.W], [h.copy() for h in s0.H])
                    g = _GRADS[family, which](i, x, s, spec)
                    if sign_flip and family is LossFamily.DATA_CENTRIC and which == "H" and i == 1:
                        g = -g
                    block = (s.W if which == "W" else s.H)[i]
                    fd = finite_difference(lambda: _LOSSES[family](x, s, spec), block)
                    key = (family.value, which, i + 1)
                    res.deviations[key] = max(res.deviations.get(key, 0.0), relative_deviation(g, fd))
    return res
