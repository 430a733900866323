"""Continuous-time Markov chain machinery for market regimes.

Regimes are indexed 1..l in every public interface; internal arrays are
0-based.  The chain is specified by its generator matrix Q (rates per
year); the transition matrix over a horizon t is the matrix exponential
exp(tQ).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, logm

from .rng import as_generator

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class GeneratorMatrix:
    """Generator Q of the regime chain.

    Off-diagonal entries are non-negative transition rates (1/year) and each
    row sums to zero; both are validated at construction (row sums are
    rebalanced onto the diagonal when within tolerance).
    """

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
            raise ValueError("generator must be a square matrix with l >= 1")
        if not np.all(np.isfinite(q)):
            raise ValueError("generator entries must be finite")
        off = q[~np.eye(q.shape[0], dtype=bool)]
        if off.size and np.any(off < 0.0):
            raise ValueError("off-diagonal generator entries must be >= 0")
        rows = q.sum(axis=1)
        if np.any(np.abs(rows) > 1e-9):
            raise ValueError(f"generator rows must sum to 0, got sums {rows}")
        # rebalance the diagonal so row sums are exactly 0 within 1e-12
        q = q.copy()
        np.fill_diagonal(q, np.diag(q) - rows)
        object.__setattr__(self, "q", q)
        assert np.all(np.abs(q.sum(axis=1)) <= _ROW_SUM_TOL)

    @property
    def l(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class RegimePath:
    """A sampled regime path on a uniform grid; entries are in 1..l."""

    alphas: np.ndarray
    dt: float
    seed: object = None

    def __post_init__(self):
        object.__setattr__(self, "alphas", np.asarray(self.alphas, dtype=np.int64))


def transition_matrix(gen: GeneratorMatrix, t: float) -> np.ndarray:
    """Transition probabilities P(t) = exp(tQ) over a horizon of t years."""
    if t < 0:
        raise ValueError(f"horizon must be >= 0, got {t}")
    p = expm(t * gen.q)
    # expm round-off can leave tiny negatives / row-sum drift
    p = np.clip(p, 0.0, 1.0)
    return p


def transition_matrix_2x2(gen: GeneratorMatrix, t: float) -> np.ndarray:
    """Closed eigendecomposition path for l = 2; cross-checks ``transition_matrix``.

    For Q = [[-a, a], [b, -b]] the eigenvalues are 0 and -(a+b), giving
    P(t) = stationary + exp(-(a+b)t) * deviation in closed form.
    """
    if gen.l != 2:
        raise ValueError("closed form requires exactly 2 regimes")
    if t < 0:
        raise ValueError(f"horizon must be >= 0, got {t}")
    a, b = gen.q[0, 1], gen.q[1, 0]
    s = a + b
    if s == 0.0:
        return np.eye(2)
    e = np.exp(-s * t)
    return np.array(
        [
            [(b + a * e) / s, (a - a * e) / s],
            [(b - b * e) / s, (a + b * e) / s],
        ]
    )


def stationary_distribution(gen: GeneratorMatrix) -> np.ndarray:
    """Left null vector of Q normalized to a probability distribution."""
    l = gen.l
    a = np.vstack([gen.q.T, np.ones(l)])
    b = np.zeros(l + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def sample_regime_path(gen: GeneratorMatrix, dt: float, n_steps: int,
                       alpha0: int, seed) -> RegimePath:
    """Sample a regime path of n_steps transitions starting from alpha0.

    Each step draws the next regime from the categorical distribution given
    by row alpha_k of exp(dt*Q).  Deterministic under a fixed seed.
    """
    if not 1 <= alpha0 <= gen.l:
        raise ValueError(f"alpha0 must be in 1..{gen.l}, got {alpha0}")
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    rng = as_generator(seed)
    cum = np.cumsum(transition_matrix(gen, dt), axis=1)
    cum[:, -1] = 1.0
    u = rng.random(n_steps)
    alphas = np.empty(n_steps + 1, dtype=np.int64)
    alphas[0] = alpha0
    state = alpha0 - 1
    for k in range(n_steps):
        state = int(np.searchsorted(cum[state], u[k], side="right"))
        if state >= gen.l:  # u landed exactly on 1.0
            state = gen.l - 1
        alphas[k + 1] = state + 1
    return RegimePath(alphas=alphas, dt=dt, seed=seed)


def estimate_generator(labels: np.ndarray, dt: float, l: int) -> GeneratorMatrix:
    """Maximum-likelihood plug-in generator from a 1-based label sequence.

    Counts one-step transitions of the embedded discrete chain, takes the
    matrix logarithm of the empirical transition matrix scaled by 1/dt, and
    projects onto a valid generator (negative off-diagonals zeroed, diagonal
    rebalanced).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or len(labels) < 2:
        raise ValueError("label sequence must be 1-D with at least 2 entries")
    if labels.min() < 1 or labels.max() > l:
        raise ValueError(f"labels must be in 1..{l}")
    counts = np.zeros((l, l))
    np.add.at(counts, (labels[:-1] - 1, labels[1:] - 1), 1.0)
    rows = counts.sum(axis=1)
    p_hat = np.where(rows[:, None] > 0, counts / np.maximum(rows, 1.0)[:, None],
                     np.eye(l))
    q = np.real(logm(p_hat)) / dt
    q = np.where(np.eye(l, dtype=bool), 0.0, np.clip(q, 0.0, None))
    np.fill_diagonal(q, -q.sum(axis=1))
    return GeneratorMatrix(q)
