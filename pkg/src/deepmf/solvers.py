"""Multilayer, Tri-DMF and consistent deep MF solvers.

All methods share one block update: build the smooth subproblem of a single
factor, decrease it with :func:`deepmf.fpgm.fpgm_solve`, and keep the old
factor if the exact (non-majorized) objective did not go down.

Iteration accounting
--------------------
Every method gets ``outer_iters`` iterations. MMF spreads them evenly over
its layers. Tri-DMF, LC-DMF and DC-DMF spend ``it_in`` of them on a
sequential MMF-style initialization (again spread evenly over layers) and
the rest on global sweeps. Traces have ``outer_iters + 1`` rows; row 0 is
the greedy initialization of all layers.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError, UsageError
from .fpgm import FpgmConfig, fpgm_solve
from .numerics import child_rng, frob_err_sq, logdet_and_inverse, spectral_norm_sq
from .objectives import (
    FactorStack,
    LossFamily,
    LossSpec,
    data_errors,
    eval_L0,
    eval_loss,
    fit_subproblem,
    frozen_z,
    layer_errors,
    layer_subproblem,
)
from .projections import ConstraintKind, ConstraintSpec

logger = logging.getLogger(__name__)

NNLS_ITERS = 200


class Method(str, Enum):
    MMF = "mmf"
    TRIDMF = "tridmf"
    LCDMF = "lcdmf"
    DCDMF = "dcdmf"
    SINGLE = "single"


class InitMode(str, Enum):
    GREEDY = "greedy"
    RANDOM = "random"


class AutoscaleWarning(UserWarning):
    """A parameter autoscaling rule hit a zero denominator."""


def _broadcast(values, n, name):
    if values is None:
        return ()
    if np.isscalar(values):
        return (float(values),) * n
    values = tuple(float(v) for v in values)
    if len(values) != n:
        raise UsageError(f"{name} needs {n} values, got {len(values)}")
    return values


@dataclass(frozen=True)
class SolverConfig:
    """Everything that determines a solver run.

    ``lambda_tilde`` and ``kappa_tilde`` are the initial guesses of the
    autoscaling rules; with ``autoscale=False`` they are used verbatim as
    the layer weights and volume penalties. ``mu`` is the constant weight of
    the data-centric loss.
    """

    method: Method = Method.LCDMF
    ranks: tuple = (6, 3)
    w_constraints: tuple = ()
    h_constraints: tuple = ()
    lambda_tilde: object = 10.0
    mu: float = 1.0
    kappa_tilde: object = None
    delta: float = 0.1
    autoscale: bool = True
    outer_iters: int = 500
    it_in: int = 50
    init_mode: InitMode = InitMode.GREEDY
    seed: int = 0
    fpgm: FpgmConfig = field(default_factory=FpgmConfig)
    record_updates: bool = False

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("method", Method(self.method))
        set_("init_mode", InitMode(self.init_mode))
        set_("ranks", tuple(int(r) for r in self.ranks))
        L = len(self.ranks)
        if L < 1 or any(r < 1 for r in self.ranks):
            raise UsageError(f"ranks must be positive, got {self.ranks}")
        for name in ("w_constraints", "h_constraints"):
            cons = getattr(self, name)
            if not cons:
                cons = (ConstraintSpec(),) * L
            elif isinstance(cons, (ConstraintSpec, str)):
                cons = (cons,) * L
            cons = tuple(c if isinstance(c, ConstraintSpec) else ConstraintSpec.parse(c) for c in cons)
            if len(cons) != L:
                raise UsageError(f"{name} needs {L} entries, got {len(cons)}")
            set_(name, cons)
        set_("lambda_tilde", _broadcast(self.lambda_tilde, L - 1, "lambda_tilde"))
        kt = _broadcast(self.kappa_tilde, L, "kappa_tilde") if self.kappa_tilde is not None else (0.0,) * L
        set_("kappa_tilde", kt)
        if any(k < 0 for k in kt) or any(v < 0 for v in self.lambda_tilde) or self.mu < 0:
            raise DomainError("weights and volume penalties must be nonnegative")
        if self.delta <= 0:
            raise DomainError("delta must be positive")
        if not 0 <= self.it_in <= self.outer_iters:
            raise UsageError("need 0 <= it_in <= outer_iters")
        if self.method is Method.SINGLE and L != 1:
            raise UsageError("single-layer NMF takes exactly one rank")

    @property
    def depth(self) -> int:
        return len(self.ranks)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "ranks": list(self.ranks),
            "w_constraints": [str(c) for c in self.w_constraints],
            "h_constraints": [str(c) for c in self.h_constraints],
            "lambda_tilde": list(self.lambda_tilde),
            "mu": self.mu,
            "kappa_tilde": list(self.kappa_tilde),
            "delta": self.delta,
            "autoscale": self.autoscale,
            "outer_iters": self.outer_iters,
            "it_in": self.it_in,
            "init_mode": self.init_mode.value,
            "seed": self.seed,
            "fpgm": self.fpgm.to_dict(),
            # convention for splitting iteration budgets across layers
            "budget_split": "even",
        }


@dataclass
class SolverReport:
    """Final factors and per-iteration diagnostics of one run.

    ``layer_centric[t, i]`` is ``||W[i-1] - W[i] H[i]||^2 / ||W0[i-1]||^2``
    at logged iteration ``t`` (``W0`` = row-0 factors) and
    ``data_centric[t, i]`` is ``||X - W[i] H[i]...H[0]||^2 / ||X||^2``.
    ``penalized_total`` (and its volume-free part ``reconstruction``) is
    the global loss of the method, defined from iteration ``global_start``
    on once its weights are fixed; it is empty for MMF.
    """

    method: str
    stack: FactorStack
    l0: np.ndarray
    layer_centric: np.ndarray
    data_centric: np.ndarray
    penalized_total: list
    reconstruction: list
    global_start: Optional[int]
    weights: list
    kappas: list
    update_losses: list
    guard_rejections: int
    wall_seconds: float
    seed: int
    config: dict

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "method": self.method,
            "seed": self.seed,
            "config": self.config,
            "ranks": self.stack.ranks,
            "weights": list(self.weights),
            "kappas": list(self.kappas),
            "global_start": self.global_start,
            "guard_rejections": self.guard_rejections,
            "traces": {
                "l0": self.l0.tolist(),
                "layer_centric": self.layer_centric.T.tolist(),
                "data_centric": self.data_centric.T.tolist(),
            },
            "penalized_total": list(self.penalized_total),
            "reconstruction": list(self.reconstruction),
        }
        if self.update_losses:
            d["update_losses"] = list(self.update_losses)
        if timing:
            d["wall_seconds"] = self.wall_seconds
        return d


# --------------------------------------------------------------------------
# initialization


def nnls(w, x, h0=None, iters: int = NNLS_ITERS):
    """Approximate ``argmin_{H >= 0} ||x - w H||^2`` by FPGM."""
    sub = fit_subproblem(x, left=w)
    if h0 is None:
        h0 = np.zeros((w.shape[1], x.shape[1]))
    if sub.lipschitz <= 0:
        return h0
    res = fpgm_solve(h0, sub.objective, sub.gradient, lambda m: np.maximum(m, 0.0), sub.lipschitz,
                     FpgmConfig(max_inner_iters=iters, rel_tol=1e-12))
    return res.m


def greedy_columns(x, r: int) -> list:
    """Greedy column subset selection with nonnegative deflation.

    At each step the column with the largest residual norm is selected,
    where the residual is what remains after a nonnegative least-squares
    fit on the columns chosen so far. The first pick is the column of
    largest norm, as in SPA; unlike orthogonal deflation the nonnegative
    residual stays informative when ``r`` exceeds the rank of ``x``.
    Ties go to the smallest column index.
    """
    n = x.shape[1]
    if not 1 <= r <= n:
        raise DimensionError(f"cannot select {r} columns out of {n}")
    chosen = []
    resid = x
    h = None
    for _ in range(r):
        norms = np.einsum("ij,ij->j", resid, resid)
        norms[chosen] = -np.inf
        j = int(np.argmax(norms))
        chosen.append(j)
        w = x[:, chosen]
        if h is not None:
            h = np.vstack([h, np.zeros((1, n))])
        h = nnls(w, x, h0=h)
        resid = x - w @ h
    return chosen


def init_greedy(x, r: int):
    """``W0`` = ``r`` greedily selected columns of ``x``, ``H0`` = NNLS coefficients."""
    cols = greedy_columns(x, r)
    w = x[:, cols].copy()
    return w, nnls(w, x)


def init_random(x, r: int, rng):
    m, n = x.shape
    return rng.random((m, r)), rng.random((r, n))


def _init_layer(x, r, wcon: ConstraintSpec, hcon: ConstraintSpec, mode: InitMode, rng):
    if mode is InitMode.GREEDY:
        w, h = init_greedy(x, r)
    else:
        w, h = init_random(x, r, rng)
    w = wcon.projector()(w)
    h = hcon.projector()(h)
    return w, h


# --------------------------------------------------------------------------
# parameter rules


def autoscale_lambda(errors: Sequence[float], lambda_tilde: Sequence[float]) -> list:
    """Layer weights ``lambda_l = lambda_tilde_l * err_1 / err_{l+1}``.

    ``errors`` lists the initial per-layer errors (first layer first).
    """
    out = []
    for l, lt in enumerate(lambda_tilde, start=1):
        if errors[0] <= 0 or errors[l] <= 0:
            warnings.warn(f"zero initial error at layer {l + 1}; using lambda = lambda_tilde",
                          AutoscaleWarning, stacklevel=2)
            out.append(float(lt))
        else:
            out.append(float(lt) * errors[0] / errors[l])
    return out


def autoscale_mu(depth: int, mu: float = 1.0) -> list:
    return [float(mu)] * (depth - 1)


def autoscale_kappa(errors: Sequence[float], Ws: Sequence[np.ndarray], kappa_tilde: Sequence[float],
                    delta: float) -> list:
    """Volume penalties ``kappa_l = kappa_tilde_l * err_l / |logdet(W_l^T W_l + delta I)|``."""
    out = []
    for l, (err, w, kt) in enumerate(zip(errors, Ws, kappa_tilde)):
        if kt == 0:
            out.append(0.0)
            continue
        ld = abs(logdet_and_inverse(w.T @ w, delta)[0])
        if ld < 1e-12:
            warnings.warn(f"logdet vanishes at layer {l + 1}; using kappa = kappa_tilde",
                          AutoscaleWarning, stacklevel=2)
            out.append(float(kt))
        else:
            out.append(float(kt) * err / ld)
    return out


def split_budget(total: int, parts: int) -> list:
    q, rem = divmod(total, parts)
    return [q + (1 if i < rem else 0) for i in range(parts)]


# --------------------------------------------------------------------------
# degenerate solutions


def degenerate_transform(s: FactorStack) -> FactorStack:
    """Rewrite a stack so every layer but the first is a padded identity.

    ``H*[0]`` is ``H[L-1]...H[0]`` padded with zero rows to ``r_1`` rows,
    ``H*[i]`` (``i >= 1``) is the ``r_i x r_{i-1}`` matrix with an identity
    block of size ``r_L`` in its top-left corner, and every ``W*[i]`` equals
    ``[W[L-1], 0]``. The unfolded product, hence the L0 loss, is unchanged
    while ``rank(W*[0]) <= r_L``.
    """
    ranks = s.ranks
    if any(b > a for a, b in zip(ranks, ranks[1:])):
        raise DomainError(f"degenerate transform needs non-increasing ranks, got {ranks}")
    L = s.depth
    if L == 1:
        return s.copy()
    rl = ranks[-1]
    m = s.W[0].shape[0]
    top = s.unfolded_h(L - 1)
    h0 = np.zeros((ranks[0], top.shape[1]))
    h0[:rl] = top
    Hs = [h0]
    for i in range(1, L):
        h = np.zeros((ranks[i], ranks[i - 1]))
        h[:rl, :rl] = np.eye(rl)
        Hs.append(h)
    Ws = []
    for i in range(L):
        w = np.zeros((m, ranks[i]))
        w[:, :rl] = s.W[-1]
        Ws.append(w)
    return FactorStack(Ws, Hs)


# --------------------------------------------------------------------------
# the run state shared by all methods


class _Run:
    def __init__(self, x, cfg: SolverConfig):
        self.x = x
        self.cfg = cfg
        self.wproj = [c.projector() for c in cfg.w_constraints]
        self.hproj = [c.projector() for c in cfg.h_constraints]
        self.steps = {}
        self.rejections = 0
        self.update_losses = []
        self.rows = []
        self.penalized = []
        self.reconstruction = []

    # block updates ---------------------------------------------------------

    def reduce(self, key, sub, m, projection):
        res = fpgm_solve(m, sub.objective, sub.gradient, projection, sub.lipschitz, self.cfg.fpgm,
                         t0=self.steps.get(key))
        if res.step is not None:
            self.steps[key] = res.step
        if sub.exact is not sub.objective and sub.exact(res.m) > sub.exact(m):
            self.rejections += 1
            return m
        return res.m

    def layer_sweep(self, stack, i, target, kappa):
        """One MMF iteration on layer ``i``: fit ``target ~ W[i] H[i]``."""
        sub = fit_subproblem(target, left=stack.W[i])
        stack.H[i] = self.reduce(("seqH", i), sub, stack.H[i], self.hproj[i])
        z = frozen_z(stack.W[i], self.cfg.delta) if kappa > 0 else None
        sub = fit_subproblem(target, right=stack.H[i], kappa=kappa, delta=self.cfg.delta, z=z)
        stack.W[i] = self.reduce(("seqW", i), sub, stack.W[i], self.wproj[i])

    # initialization ---------------------------------------------------------

    def init_layer(self, base, i):
        rng = child_rng(self.cfg.seed, i)
        return _init_layer(base, self.cfg.ranks[i], self.cfg.w_constraints[i], self.cfg.h_constraints[i],
                           self.cfg.init_mode, rng)

    def greedy_chain(self):
        Ws, Hs = [], []
        base = self.x
        for i in range(self.cfg.depth):
            w, h = self.init_layer(base, i)
            Ws.append(w)
            Hs.append(h)
            base = w
        return FactorStack(Ws, Hs)

    def sequential(self, stack, budgets, family=LossFamily.LAYER_CENTRIC, record=True):
        """MMF pass: layer by layer, re-initialized from the updated basis."""
        for i, b in enumerate(budgets):
            target = self.x if i == 0 else stack.W[i - 1]
            if i > 0:
                stack.W[i], stack.H[i] = self.init_layer(target, i)
            kappa = 0.0
            if self.cfg.kappa_tilde[i] > 0:
                err = 0.5 * frob_err_sq(target, stack.W[i] @ stack.H[i])
                if self.cfg.autoscale:
                    kappa = autoscale_kappa([err], [stack.W[i]], [self.cfg.kappa_tilde[i]], self.cfg.delta)[0]
                else:
                    kappa = self.cfg.kappa_tilde[i]
            for _ in range(b):
                self.layer_sweep(stack, i, target, kappa)
                if record:
                    self.record(stack)

    # traces -----------------------------------------------------------------

    def start_trace(self, stack0):
        x = self.x
        self.l0_den = None
        self.lc_den = np.array([np.vdot(x, x)] + [np.vdot(w, w) for w in stack0.W[:-1]])
        self.dc_den = float(np.vdot(x, x))
        if np.any(self.lc_den == 0):
            raise DomainError("zero data or initial basis matrix; relative errors undefined")
        self.record(stack0)

    def record(self, stack, spec: Optional[LossSpec] = None):
        le = layer_errors(self.x, stack) / self.lc_den
        de = data_errors(self.x, stack) / self.dc_den
        self.rows.append((eval_L0(self.x, stack), le, de))
        if spec is not None:
            tot, rec = eval_loss(self.x, stack, spec)
            self.penalized.append(tot)
            self.reconstruction.append(rec)

    def report(self, stack, t0, global_start, weights, kappas):
        l0 = np.array([r[0] for r in self.rows])
        lc = np.array([r[1] for r in self.rows])
        dc = np.array([r[2] for r in self.rows])
        return SolverReport(
            method=self.cfg.method.value,
            stack=stack,
            l0=l0,
            layer_centric=lc,
            data_centric=dc,
            penalized_total=self.penalized,
            reconstruction=self.reconstruction,
            global_start=global_start,
            weights=list(weights),
            kappas=list(kappas),
            update_losses=self.update_losses,
            guard_rejections=self.rejections,
            wall_seconds=time.perf_counter() - t0,
            seed=self.cfg.seed,
            config=self.cfg.to_dict(),
        )


def _prepare(x, cfg: SolverConfig):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("data must be a matrix")
    if not np.all(np.isfinite(x)):
        raise DomainError("data contains NaN or Inf")
    ranks = cfg.ranks
    if any(b > a for a, b in zip(ranks, ranks[1:])):
        warnings.warn(f"rank ladder {ranks} is not non-increasing", UserWarning, stacklevel=3)
    if ranks[0] > x.shape[1]:
        raise DimensionError(f"rank {ranks[0]} exceeds the {x.shape[1]} columns of the data")
    for a, b in zip(ranks, ranks[1:]):
        if b > a:
            raise DimensionError(f"rank {b} cannot be initialized from a basis with {a} columns")
    return x


def mmf_solve(x, cfg: SolverConfig) -> SolverReport:
    """Sequential multilayer factorization (no feedback to earlier layers)."""
    if cfg.method not in (Method.MMF, Method.SINGLE):
        raise UsageError(f"mmf_solve got method {cfg.method.value}")
    x = _prepare(x, cfg)
    t0 = time.perf_counter()
    run = _Run(x, cfg)
    stack = run.greedy_chain()
    run.start_trace(stack)
    stack = stack.copy()
    run.sequential(stack, split_budget(cfg.outer_iters, cfg.depth))
    return run.report(stack, t0, None, [], [])


def _global_params(run, stack, family):
    cfg = run.cfg
    x = run.x
    lerr = 0.5 * layer_errors(x, stack)
    derr = 0.5 * data_errors(x, stack)
    if family is LossFamily.LAYER_CENTRIC:
        weights = autoscale_lambda(lerr, cfg.lambda_tilde) if cfg.autoscale else list(cfg.lambda_tilde)
        errs = lerr
    else:
        weights = autoscale_mu(cfg.depth, cfg.mu)
        errs = derr
    if any(k > 0 for k in cfg.kappa_tilde):
        kappas = autoscale_kappa(errs, stack.W, cfg.kappa_tilde, cfg.delta) if cfg.autoscale else list(cfg.kappa_tilde)
    else:
        kappas = [0.0] * cfg.depth
    return weights, kappas


def deep_mf_solve(x, cfg: SolverConfig) -> SolverReport:
    """Block coordinate descent on the layer-centric or data-centric loss.

    Each outer iteration visits layers first to last, updating ``H[i]`` and
    then ``W[i]``; every block update decreases the single global loss.
    """
    if cfg.method not in (Method.LCDMF, Method.DCDMF, Method.SINGLE):
        raise UsageError(f"deep_mf_solve got method {cfg.method.value}")
    x = _prepare(x, cfg)
    family = LossFamily.DATA_CENTRIC if cfg.method is Method.DCDMF else LossFamily.LAYER_CENTRIC
    t0 = time.perf_counter()
    run = _Run(x, cfg)
    stack0 = run.greedy_chain()
    run.start_trace(stack0)
    stack = stack0.copy()
    run.sequential(stack, split_budget(cfg.it_in, cfg.depth))
    weights, kappas = _global_params(run, stack0, family)
    spec = LossSpec(family, weights, kappas if any(k > 0 for k in kappas) else (), cfg.delta)
    global_start = len(run.rows) - 1
    tot, rec = eval_loss(x, stack, spec)
    run.penalized.append(tot)
    run.reconstruction.append(rec)
    if cfg.record_updates:
        run.update_losses.append(tot)
    for _ in range(cfg.outer_iters - cfg.it_in):
        for i in range(cfg.depth):
            for which in ("H", "W"):
                sub = layer_subproblem(which, i, x, stack, spec)
                blocks = stack.H if which == "H" else stack.W
                proj = run.hproj[i] if which == "H" else run.wproj[i]
                blocks[i] = run.reduce((which, i), sub, blocks[i], proj)
                if cfg.record_updates:
                    run.update_losses.append(eval_loss(x, stack, spec)[0])
        run.record(stack, spec)
    return run.report(stack, t0, global_start, weights, kappas)


def tri_dmf_operands(stack: FactorStack, i: int):
    """``(A, B)`` of the Tri-DMF update at layer ``i`` from the current factors.

    ``A = W[L-1]`` for the last layer, ``W[i+1] H[i+1]`` otherwise, and
    ``B = H[i-1]...H[0]`` (``None`` = identity for the first layer).
    """
    L = stack.depth
    a = stack.W[-1] if i == L - 1 else stack.W[i + 1] @ stack.H[i + 1]
    b = stack.unfolded_h(i - 1) if i > 0 else None
    return a, b


def tri_dmf_solve(x, cfg: SolverConfig, probe=None) -> SolverReport:
    """Deep MF updates minimizing ``||X - A H B||`` and ``||X - W H B||``.

    ``probe``, if given, is called as ``probe(which, i, subproblem, stack)``
    before each block update; the subproblem's ``operands`` name the
    matrices that enter its fit term and ``stack`` holds the current factors.
    """
    if cfg.method is not Method.TRIDMF:
        raise UsageError(f"tri_dmf_solve got method {cfg.method.value}")
    x = _prepare(x, cfg)
    t0 = time.perf_counter()
    run = _Run(x, cfg)
    stack0 = run.greedy_chain()
    run.start_trace(stack0)
    stack = stack0.copy()
    run.sequential(stack, split_budget(cfg.it_in, cfg.depth))
    _, kappas = _global_params(run, stack0, LossFamily.DATA_CENTRIC)
    spec = LossSpec(LossFamily.L0)
    global_start = len(run.rows) - 1
    run.penalized.append(eval_L0(x, stack))
    run.reconstruction.append(run.penalized[-1])
    for _ in range(cfg.outer_iters - cfg.it_in):
        for i in range(cfg.depth):
            a, b = tri_dmf_operands(stack, i)
            sub = fit_subproblem(x, left=a, right=b)
            if probe is not None:
                probe("H", i, sub, stack)
            stack.H[i] = run.reduce(("H", i), sub, stack.H[i], run.hproj[i])
            right = stack.H[i] if b is None else stack.H[i] @ b
            z = frozen_z(stack.W[i], cfg.delta) if kappas[i] > 0 else None
            sub = fit_subproblem(x, right=right, kappa=kappas[i], delta=cfg.delta, z=z)
            if probe is not None:
                probe("W", i, sub, stack)
            stack.W[i] = run.reduce(("W", i), sub, stack.W[i], run.wproj[i])
        run.record(stack, spec)
    return run.report(stack, t0, global_start, [], kappas)


def single_nmf_solve(x, rank: int, cfg: SolverConfig) -> SolverReport:
    """Single-layer NMF: a one-layer consistent solve with no init sweeps."""
    from dataclasses import replace

    c = replace(cfg, method=Method.SINGLE, ranks=(rank,), it_in=0,
                w_constraints=cfg.w_constraints[:1], h_constraints=cfg.h_constraints[:1],
                lambda_tilde=(), kappa_tilde=cfg.kappa_tilde[:1])
    return deep_mf_solve(x, c)


def solve(x, cfg: SolverConfig) -> SolverReport:
    """Dispatch on ``cfg.method``."""
    if cfg.method is Method.MMF:
        return mmf_solve(x, cfg)
    if cfg.method is Method.TRIDMF:
        return tri_dmf_solve(x, cfg)
    if cfg.method is Method.SINGLE:
        return single_nmf_solve(x, cfg.ranks[0], cfg)
    return deep_mf_solve(x, cfg)
