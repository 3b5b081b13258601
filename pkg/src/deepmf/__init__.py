"""Constrained deep matrix factorization with consistent global losses."""

from .errors import DeepMFError, DimensionError, DomainError, NumericalError, UsageError
from .fpgm import FpgmConfig, StepMode, fpgm_solve
from .metrics import MetricReport, evaluate, mrsa_matched, mrsa_pair, relative_errors
from .objectives import FactorStack, LossFamily, LossSpec, eval_L0, eval_L1, eval_L2
from .projections import ConstraintKind, ConstraintSpec
from .solvers import (
    InitMode,
    Method,
    SolverConfig,
    SolverReport,
    deep_mf_solve,
    degenerate_transform,
    mmf_solve,
    single_nmf_solve,
    solve,
    tri_dmf_solve,
)
from .synth import NOISE_LEVELS, SynthConfig, generate_dataset

__version__ = "0.1.0"
