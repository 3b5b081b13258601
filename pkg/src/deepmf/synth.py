"""Synthetic two-layer benchmark with known basis vectors at both layers."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .numerics import make_rng

NOISE_LEVELS = (1e-2, 2.51e-2, 6.31e-2, 9.49e-2, 1.267e-1, 1.585e-1, 2.384e-1, 3.182e-1, 3.981e-1, 1.0)

_W2 = np.array([
    [0.5, 0.0, 0.5],
    [0.0, 0.5, 0.5],
    [0.5, 0.5, 0.0],
])
_H2 = np.array([
    [0.2, 0.0, 0.8, 0.0, 0.8, 0.2],
    [0.8, 0.8, 0.2, 0.2, 0.0, 0.0],
    [0.0, 0.2, 0.0, 0.8, 0.2, 0.8],
])
# first-layer basis as tabulated; ground_truth_factors() returns W2 @ H2
W1_TABLE = np.array([
    [0.1, 0.1, 0.4, 0.4, 0.5, 0.5],
    [0.4, 0.5, 0.1, 0.5, 0.1, 0.4],
    [0.5, 0.4, 0.5, 0.1, 0.4, 0.1],
])


def ground_truth_factors():
    """``(W1, W2, H2)`` with ``W1 = W2 @ H2`` and column-stochastic factors."""
    w2 = _W2.copy()
    h2 = _H2.copy()
    return w2 @ h2, w2, h2


def sample_dirichlet_columns(r: int, n: int, alpha: float, rng) -> np.ndarray:
    """``r x n`` matrix whose columns are i.i.d. symmetric Dirichlet(alpha)."""
    if alpha <= 0:
        raise DomainError("Dirichlet parameter must be positive")
    h = rng.dirichlet(np.full(r, float(alpha)), size=n).T
    return h / h.sum(axis=0)


@dataclass(frozen=True)
class SynthConfig:
    n: int = 1000
    dirichlet_alpha: float = 0.05
    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.dirichlet_alpha <= 0 or self.epsilon < 0:
            raise DomainError(f"invalid synthetic configuration {self}")

    def to_dict(self):
        return asdict(self)


@dataclass
class SynthDataset:
    X: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    H2: np.ndarray
    H1: np.ndarray
    epsilon: float

    @property
    def clean(self) -> np.ndarray:
        return self.W1 @ self.H1


def generate_dataset(cfg: SynthConfig) -> SynthDataset:
    """``X = W1 H1 + N`` with ``||N||_F = epsilon ||W1 H1||_F`` (Gaussian direction).

    Noisy entries are not clipped, so ``X`` may have negative entries.
    """
    rng = make_rng(cfg.seed)
    w1, w2, h2 = ground_truth_factors()
    h1 = sample_dirichlet_columns(w1.shape[1], cfg.n, cfg.dirichlet_alpha, rng)
    x_clean = w1 @ h1
    y = rng.standard_normal(x_clean.shape)
    x = x_clean + cfg.epsilon * np.linalg.norm(x_clean) * y / np.linalg.norm(y)
    return SynthDataset(x, w1, w2, h2, h1, cfg.epsilon)


def kappa_tilde_for(epsilon: float) -> tuple:
    """Volume penalty guesses: milder below noise 0.1 than above."""
    return (1e-3, 1e-2) if epsilon < 0.1 else (1e-2, 1e-1)
