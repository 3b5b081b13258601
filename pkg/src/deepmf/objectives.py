"""Deep MF loss functions, their gradients and Lipschitz constants.

A factor stack holds ``L`` layers. With 0-based layer index ``i``,
``W[i]`` is ``m x r_i`` and ``H[i]`` is ``r_i x r_{i-1}`` where ``r_{-1} = n``.
``W[-1]`` in the formulas below is the data matrix ``X``.

Layer-centric loss::

    1/2 sum_i w_i (||W[i-1] - W[i] H[i]||^2 + kappa_i logdet(W[i]^T W[i] + delta I))

Data-centric loss::

    1/2 sum_i w_i (||X - W[i] H[i] ... H[0]||^2 + kappa_i logdet(W[i]^T W[i] + delta I))

with term weights ``w = (1, weights[0], ..., weights[L-2])``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError, UsageError
from .numerics import as_matrix, frob_err_sq, logdet_and_inverse, spectral_norm_sq, top_eigenvalue


class LossFamily(str, enum.Enum):
    L0 = "l0"
    LAYER_CENTRIC = "lc"
    DATA_CENTRIC = "dc"


class RankLadderWarning(UserWarning):
    """Ranks increase somewhere along the stack."""


@dataclass
class FactorStack:
    """Ordered per-layer factors ``(W[i], H[i])``."""

    W: list
    H: list

    def __post_init__(self):
        if len(self.W) != len(self.H) or not self.W:
            raise DimensionError("a stack needs the same positive number of W and H factors")
        for i, (w, h) in enumerate(zip(self.W, self.H)):
            if w.shape[1] != h.shape[0]:
                raise DimensionError(f"layer {i}: W has {w.shape[1]} columns, H has {h.shape[0]} rows")
            if i > 0 and h.shape[1] != self.W[i - 1].shape[1]:
                raise DimensionError(
                    f"layer {i}: H has {h.shape[1]} columns, previous rank is {self.W[i - 1].shape[1]}"
                )
            if w.shape[0] != self.W[0].shape[0]:
                raise DimensionError(f"layer {i}: W has {w.shape[0]} rows, expected {self.W[0].shape[0]}")
        ranks = self.ranks
        if any(b > a for a, b in zip(ranks, ranks[1:])):
            warnings.warn(f"rank ladder {ranks} is not non-increasing", RankLadderWarning, stacklevel=2)

    @property
    def depth(self) -> int:
        return len(self.W)

    @property
    def ranks(self) -> list:
        return [w.shape[1] for w in self.W]

    @property
    def shape(self) -> tuple:
        return (self.W[0].shape[0], self.H[0].shape[1])

    def copy(self) -> "FactorStack":
        return FactorStack([w.copy() for w in self.W], [h.copy() for h in self.H])

    def check_data(self, x: np.ndarray):
        if x.shape != self.shape:
            raise DimensionError(f"data is {x.shape} but the stack reconstructs {self.shape}")

    def unfolded_h(self, i: int) -> np.ndarray:
        """``H[i] H[i-1] ... H[0]``."""
        p = self.H[0]
        for j in range(1, i + 1):
            p = self.H[j] @ p
        return p


@dataclass(frozen=True)
class LossSpec:
    """Loss family, layer weights and minimum-volume penalties.

    ``weights`` holds the ``L - 1`` weights of the deeper terms (lambda for
    the layer-centric family, mu for the data-centric one). ``kappas`` holds
    one volume penalty per layer; an empty tuple disables them.
    """

    family: LossFamily = LossFamily.LAYER_CENTRIC
    weights: tuple = ()
    kappas: tuple = ()
    delta: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "family", LossFamily(self.family))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "kappas", tuple(float(k) for k in self.kappas))
        if any(w < 0 for w in self.weights) or any(k < 0 for k in self.kappas):
            raise DomainError("loss weights and volume penalties must be nonnegative")
        if self.delta <= 0:
            raise DomainError("delta must be positive")
        if self.family is LossFamily.L0 and any(k > 0 for k in self.kappas):
            raise UsageError("volume penalties are not supported with the L0 loss")

    def term_weights(self, depth: int) -> np.ndarray:
        if depth > 1 and len(self.weights) != depth - 1:
            raise UsageError(f"expected {depth - 1} layer weights, got {len(self.weights)}")
        return np.array((1.0,) + self.weights[: depth - 1])

    def kappa(self, i: int) -> float:
        return self.kappas[i] if i < len(self.kappas) else 0.0

    @property
    def minvol(self) -> bool:
        return any(k > 0 for k in self.kappas)


def _require(spec: LossSpec, family: LossFamily):
    if spec.family is not family:
        raise UsageError(f"loss spec is {spec.family.value}, operation needs {family.value}")


def _prev_basis(x, s: FactorStack, i: int):
    return x if i == 0 else s.W[i - 1]


def volume_term(w: np.ndarray, delta: float) -> float:
    return logdet_and_inverse(w.T @ w, delta)[0]


def eval_L0(x, s: FactorStack) -> float:
    """``||X - W_L H_L ... H_1||^2`` (no 1/2 factor)."""
    s.check_data(x)
    return frob_err_sq(x, s.W[-1] @ s.unfolded_h(s.depth - 1))


def layer_errors(x, s: FactorStack) -> np.ndarray:
    """Unweighted ``||W[i-1] - W[i] H[i]||^2`` for every layer."""
    s.check_data(x)
    return np.array([frob_err_sq(_prev_basis(x, s, i), s.W[i] @ s.H[i]) for i in range(s.depth)])


def data_errors(x, s: FactorStack) -> np.ndarray:
    """Unweighted ``||X - W[i] H[i] ... H[0]||^2`` for every layer."""
    s.check_data(x)
    out = []
    ht = None
    for i in range(s.depth):
        ht = s.H[0] if i == 0 else s.H[i] @ ht
        out.append(frob_err_sq(x, s.W[i] @ ht))
    return np.array(out)


def volume_terms(s: FactorStack, spec: LossSpec) -> np.ndarray:
    return np.array(
        [volume_term(s.W[i], spec.delta) if spec.kappa(i) > 0 else 0.0 for i in range(s.depth)]
    )


def _penalized(errors, s, spec):
    w = spec.term_weights(s.depth)
    kap = np.array([spec.kappa(i) for i in range(s.depth)])
    rec = 0.5 * float(w @ errors)
    if not spec.minvol:
        return rec, rec
    return rec + 0.5 * float(w @ (kap * volume_terms(s, spec))), rec


def eval_L1(x, s: FactorStack, spec: LossSpec) -> float:
    """Layer-centric loss, including volume penalties when active."""
    _require(spec, LossFamily.LAYER_CENTRIC)
    return _penalized(layer_errors(x, s), s, spec)[0]


def eval_L2(x, s: FactorStack, spec: LossSpec) -> float:
    """Data-centric loss, including volume penalties when active."""
    _require(spec, LossFamily.DATA_CENTRIC)
    return _penalized(data_errors(x, s), s, spec)[0]


def eval_loss(x, s: FactorStack, spec: LossSpec) -> tuple[float, float]:
    """``(penalized total, reconstruction part)`` for the family of ``spec``."""
    if spec.family is LossFamily.L0:
        v = eval_L0(x, s)
        return v, v
    errs = layer_errors(x, s) if spec.family is LossFamily.LAYER_CENTRIC else data_errors(x, s)
    return _penalized(errs, s, spec)


def _z(s, i, spec, z):
    if z is not None:
        return z
    return logdet_and_inverse(s.W[i].T @ s.W[i], spec.delta)[1]


def grad_L1_W(i: int, x, s: FactorStack, spec: LossSpec, z: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of the layer-centric loss with respect to ``W[i]``.

    ``z`` is the frozen inverse ``(W*^T W* + delta I)^{-1}`` of the volume
    term; by default it is evaluated at the current ``W[i]``, which gives
    the exact gradient of the penalized loss.
    """
    _require(spec, LossFamily.LAYER_CENTRIC)
    w = spec.term_weights(s.depth)
    W = s.W[i]
    g = w[i] * (W @ s.H[i] - _prev_basis(x, s, i)) @ s.H[i].T
    if i < s.depth - 1:
        g = g + w[i + 1] * (W - s.W[i + 1] @ s.H[i + 1])
    if spec.kappa(i) > 0:
        g = g + w[i] * spec.kappa(i) * (W @ _z(s, i, spec, z))
    return g


def grad_L1_H(i: int, x, s: FactorStack, spec: LossSpec) -> np.ndarray:
    _require(spec, LossFamily.LAYER_CENTRIC)
    w = spec.term_weights(s.depth)
    W = s.W[i]
    return w[i] * W.T @ (W @ s.H[i] - _prev_basis(x, s, i))


def grad_L2_W(i: int, x, s: FactorStack, spec: LossSpec, z: Optional[np.ndarray] = None) -> np.ndarray:
    _require(spec, LossFamily.DATA_CENTRIC)
    w = spec.term_weights(s.depth)
    ht = s.unfolded_h(i)
    W = s.W[i]
    g = w[i] * (W @ ht - x) @ ht.T
    if spec.kappa(i) > 0:
        g = g + w[i] * spec.kappa(i) * (W @ _z(s, i, spec, z))
    return g


def suffix_bases(s: FactorStack, i: int) -> list:
    """``C[k] = W[k] H[k] ... H[i+1]`` for ``k = i .. L-1`` (``C[i] = W[i]``)."""
    out = []
    for k in range(i, s.depth):
        c = s.W[k]
        for j in range(k, i, -1):
            c = c @ s.H[j]
        out.append(c)
    return out


def grad_L2_H(i: int, x, s: FactorStack, spec: LossSpec) -> np.ndarray:
    """Sum over deeper layers ``k >= i`` of ``w_k C_k^T (C_k H[i] D - X) D^T``."""
    _require(spec, LossFamily.DATA_CENTRIC)
    w = spec.term_weights(s.depth)
    d = s.unfolded_h(i - 1) if i > 0 else None
    hd = s.H[i] if d is None else s.H[i] @ d
    g = np.zeros_like(s.H[i])
    for k, c in zip(range(i, s.depth), suffix_bases(s, i)):
        r = c.T @ (c @ hd - x)
        g += w[k] * (r if d is None else r @ d.T)
    return g


def lipschitz_constant(which: str, i: int, s: FactorStack, spec: LossSpec,
                       z: Optional[np.ndarray] = None) -> Optional[float]:
    """Lipschitz constant of the gradient for one factor block.

    Returns ``None`` for the data-centric ``H`` blocks that couple several
    layers (``i < L - 1``); callers fall back to backtracking there.
    """
    w = spec.term_weights(s.depth)
    kap = spec.kappa(i)
    vol = 0.0
    if which == "W" and kap > 0:
        vol = top_eigenvalue(_z(s, i, spec, z))
    if spec.family is LossFamily.LAYER_CENTRIC:
        if which == "W":
            nxt = w[i + 1] if i < s.depth - 1 else 0.0
            return w[i] * spectral_norm_sq(s.H[i]) + nxt + w[i] * kap * vol
        return w[i] * spectral_norm_sq(s.W[i])
    if spec.family is LossFamily.DATA_CENTRIC:
        if which == "W":
            return w[i] * (spectral_norm_sq(s.unfolded_h(i)) + kap * vol)
        if i < s.depth - 1:
            return None
        d = spectral_norm_sq(s.unfolded_h(i - 1)) if i > 0 else 1.0
        return w[i] * spectral_norm_sq(s.W[i]) * d
    raise UsageError("no block Lipschitz constant for the L0 loss")


# --------------------------------------------------------------------------
# Block subproblems.
#
# Each factor update minimizes a smooth function of one block with the other
# blocks fixed. Products that do not depend on the free block are computed
# once per update. The volume term enters through its majorizer
# tr(W Z W^T) with Z frozen at the start of the update; ``exact`` evaluates
# the true logdet instead and is what the decrease guard compares.
# --------------------------------------------------------------------------


@dataclass
class Subproblem:
    objective: Callable
    gradient: Callable
    lipschitz: Optional[float]
    exact: Callable
    # matrices entering the fit term, for instrumentation: ("left", "right")
    operands: dict = field(default_factory=dict)


def _quadratic_fit(target, left=None, right=None, weight=1.0):
    """Pieces for ``weight/2 ||target - left M right||^2`` (None = identity)."""

    def apply(m):
        out = m if left is None else left @ m
        return out if right is None else out @ right

    ll = None if left is None else left.T @ left
    rr = None if right is None else right @ right.T
    lt = target if left is None else left.T @ target
    ltr = lt if right is None else lt @ right.T

    def f(m):
        return 0.5 * weight * frob_err_sq(target, apply(m))

    def g(m):
        a = m if ll is None else ll @ m
        a = a if rr is None else a @ rr
        return weight * (a - ltr)

    lip = weight * (1.0 if ll is None else top_eigenvalue(ll)) * (1.0 if rr is None else top_eigenvalue(rr))
    return f, g, lip


def _assemble(fits, vol_weight=0.0, z=None, logdet_delta=None, operands=None, lipschitz="sum"):
    fs = [f for f, _, _ in fits]
    gs = [g for _, g, _ in fits]
    lip = sum(l for _, _, l in fits)
    if vol_weight > 0:
        lip += vol_weight * top_eigenvalue(z)

        def objective(m):
            return sum(f(m) for f in fs) + 0.5 * vol_weight * float(np.vdot(m @ z, m))

        def gradient(m):
            return sum(g(m) for g in gs) + vol_weight * (m @ z)

        def exact(m):
            return sum(f(m) for f in fs) + 0.5 * vol_weight * volume_term(m, logdet_delta)
    else:

        def objective(m):
            return sum(f(m) for f in fs)

        def gradient(m):
            return sum(g(m) for g in gs)

        exact = objective
    return Subproblem(objective, gradient, lip if lipschitz == "sum" else None, exact, operands or {})


def frozen_z(w: np.ndarray, delta: float) -> np.ndarray:
    return logdet_and_inverse(w.T @ w, delta)[1]


def layer_subproblem(which: str, i: int, x, s: FactorStack, spec: LossSpec) -> Subproblem:
    """Block subproblem of the layer-centric or data-centric loss."""
    w = spec.term_weights(s.depth)
    kap = spec.kappa(i)
    if spec.family is LossFamily.LAYER_CENTRIC:
        prev = _prev_basis(x, s, i)
        if which == "H":
            return _assemble([_quadratic_fit(prev, left=s.W[i], weight=w[i])],
                             operands={"target": prev, "left": s.W[i], "right": None})
        fits = [_quadratic_fit(prev, right=s.H[i], weight=w[i])]
        if i < s.depth - 1:
            fits.append(_quadratic_fit(s.W[i + 1] @ s.H[i + 1], weight=w[i + 1]))
        z = frozen_z(s.W[i], spec.delta) if kap > 0 else None
        return _assemble(fits, w[i] * kap, z, spec.delta,
                         operands={"target": prev, "left": None, "right": s.H[i]})
    if spec.family is LossFamily.DATA_CENTRIC:
        if which == "W":
            ht = s.unfolded_h(i)
            z = frozen_z(s.W[i], spec.delta) if kap > 0 else None
            return _assemble([_quadratic_fit(x, right=ht, weight=w[i])], w[i] * kap, z, spec.delta,
                             operands={"target": x, "left": None, "right": ht})
        d = s.unfolded_h(i - 1) if i > 0 else None
        bases = suffix_bases(s, i)
        fits = [_quadratic_fit(x, left=c, right=d, weight=w[k]) for k, c in zip(range(i, s.depth), bases)]
        single = len(fits) == 1
        return _assemble(fits, operands={"target": x, "left": bases, "right": d},
                         lipschitz="sum" if single else None)
    raise UsageError("layer subproblems need the layer-centric or data-centric loss")


def fit_subproblem(target, left=None, right=None, kappa=0.0, delta=0.1, z=None) -> Subproblem:
    """``1/2 ||target - left M right||^2`` plus an optional volume term on ``M``."""
    fits = [_quadratic_fit(target, left=left, right=right)]
    return _assemble(fits, kappa, z, delta, operands={"target": target, "left": left, "right": right})


def random_stack(rng, m: int, n: int, ranks: Sequence[int], scale: float = 1.0) -> FactorStack:
    """Stack of uniform(0, scale) factors; a convenience for tests and checks."""
    dims = [n] + list(ranks)
    W = [scale * rng.random((m, r)) for r in ranks]
    H = [scale * rng.random((dims[i + 1], dims[i])) for i in range(len(ranks))]
    return FactorStack(W, H)


def validate_data(x) -> np.ndarray:
    return as_matrix(x, "data matrix")
