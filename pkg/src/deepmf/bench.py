"""Paired-seed benchmark sweeps on the synthetic two-layer model.

Trial ``t`` at noise level ``eps`` uses the dataset generated with seed
``base_seed + t`` for every method, so methods are compared on identical
data instances. The solver seed equals the dataset seed.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import UsageError
from .metrics import mrsa_matched
from .solvers import Method, SolverConfig, solve
from .synth import SynthConfig, generate_dataset, kappa_tilde_for

VARIANTS = ("minvol", "sparse")
SPARSE_TARGET = 1.0 / 3.0
DEFAULT_METHODS = ("mmf", "lcdmf", "dcdmf", "tridmf")


def variant_config(variant: str, method, epsilon: float, seed: int, outer_iters: int = 500,
                   it_in: Optional[int] = None) -> SolverConfig:
    """Solver configuration of one benchmark cell.

    ``minvol``: column-stochastic ``W`` with volume penalties, nonnegative
    ``H``. ``sparse``: nonnegative factors everywhere, with grouped sparsity
    target 1/3 on both second-layer factors. ``single`` fits only the
    second-layer rank. ``it_in`` defaults to a tenth of ``outer_iters``.
    """
    method = Method(method)
    it_in = outer_iters // 10 if it_in is None else it_in
    if variant == "minvol":
        kw = dict(w_constraints="simplex", h_constraints="nonneg",
                  kappa_tilde=kappa_tilde_for(epsilon), delta=0.1)
    elif variant == "sparse":
        sp = f"sparse:{SPARSE_TARGET!r}"
        kw = dict(w_constraints=("nonneg", sp), h_constraints=("nonneg", sp))
    else:
        raise UsageError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if method is Method.SINGLE:
        kw = {k: (v[1:] if isinstance(v, tuple) else v) for k, v in kw.items()}
        return SolverConfig(method=method, ranks=(3,), seed=seed, outer_iters=outer_iters, it_in=0, **kw)
    return SolverConfig(method=method, ranks=(6, 3), seed=seed, outer_iters=outer_iters,
                        it_in=it_in, **kw)


@dataclass(frozen=True)
class Cell:
    variant: str
    method: str
    epsilon: float
    trial: int
    seed: int
    n: int
    outer_iters: int


def run_cell(cell: Cell) -> list:
    """Rows ``(method, epsilon, trial, seed, layer, mrsa)`` of one run."""
    ds = generate_dataset(SynthConfig(n=cell.n, epsilon=cell.epsilon, seed=cell.seed))
    cfg = variant_config(cell.variant, cell.method, cell.epsilon, cell.seed, cell.outer_iters)
    rep = solve(ds.X, cfg)
    if Method(cell.method) is Method.SINGLE:
        pairs = [(2, ds.W2, rep.stack.W[0])]
    else:
        pairs = [(1, ds.W1, rep.stack.W[0]), (2, ds.W2, rep.stack.W[1])]
    return [(cell.method, cell.epsilon, cell.trial, cell.seed, layer, mrsa_matched(t, e)[0])
            for layer, t, e in pairs]


def make_cells(variant, methods: Sequence[str], epsilons: Sequence[float], trials: int,
               base_seed: int = 0, n: int = 1000, outer_iters: int = 500) -> list:
    if trials < 1:
        raise UsageError("trials must be positive")
    for m in methods:
        Method(m)
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return [Cell(variant, m, float(e), t, base_seed + t, n, outer_iters)
            for e in epsilons for t in range(trials) for m in methods]


def run_bench(cells: Sequence[Cell], jobs: int = 1) -> list:
    """Run all cells; rows come back in cell order whatever ``jobs`` is."""
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]
    return [row for rows in results for row in rows]


def summarize(rows) -> list:
    """``(method, epsilon, layer, mean, std, count)`` per group, first-seen order.

    ``std`` is the sample standard deviation (0 for a single trial).
    """
    groups = {}
    for method, eps, _trial, _seed, layer, value in rows:
        groups.setdefault((method, eps, layer), []).append(value)
    out = []
    for (method, eps, layer), vals in groups.items():
        v = np.asarray(vals)
        std = float(v.std(ddof=1)) if v.size > 1 else 0.0
        out.append((method, eps, layer, float(v.mean()), std, int(v.size)))
    return out
