"""Attention-weight normalizers built from even powers instead of exp.

The family replaces softmax's exp(x)/sum(exp) with x**p/sum(x**p) for a
positive even p, plus the guarded variants needed to make that safe:

- power_softmax:            x**p / sum(x**p)
- lipschitz_power_softmax:  x**p / (eps + sum(x**p))
- stable_power_softmax:     power applied to x/c with c = max|x| + eps'
- length_agnostic_...:      (x/L**(1/p))**p / (eps + mean(x**p))

`attend` wires any of them (or plain softmax) into scaled dot-product
attention with a multiplicative [0, 1] mask applied to the raw scores.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Matrix, ShapeError

VARIANTS = ("softmax", "power", "power_stable", "power_lipschitz", "length_agnostic")


@dataclass(frozen=True)
class AttentionConfig:
    """Normalizer choice plus the knobs the guarded variants need.

    d_k is the per-head key width used for the 1/sqrt(d_k) score scaling.
    mask entries must lie in [0, 1]; it multiplies Q K^T entrywise before
    scaling, so a 0 kills a score and a 1 leaves it untouched.
    """

    variant: str
    d_k: int
    p: int = 4
    epsilon: float = 1e-3
    epsilon_prime: float = 1e-6
    mask: Matrix | None = field(default=None)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.d_k < 1:
            raise ValueError("d_k must be a positive integer")
        _check_power(self.p)
        if self.epsilon < 0 or self.epsilon_prime < 0:
            raise ValueError("epsilon and epsilon_prime must be nonnegative")
        if self.mask is not None:
            m = self.mask.array
            if m.min() < 0.0 or m.max() > 1.0:
                raise ValueError("mask entries must lie in [0, 1]")


def _check_power(p: int) -> None:
    if not isinstance(p, (int, np.integer)) or p < 2 or p % 2 != 0:
        raise ValueError(f"p must be an even integer >= 2, got {p!r}")


def _as_row(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"expected a 1-D score row, got ndim={a.ndim}")
    return a


def softmax(x) -> np.ndarray:
    """Standard softmax with max subtraction for overflow safety."""
    a = _as_row(x)
    e = np.exp(a - a.max())
    return e / e.sum()


def power_softmax(x, p: int = 4) -> np.ndarray:
    """x**p / sum(x**p). Raises ZeroDivisionError on an all-zero row."""
    _check_power(p)
    a = _as_row(x)
    powered = a ** p
    denom = powered.sum()
    if denom == 0.0:
        raise ZeroDivisionError(
            "power_softmax denominator is zero; use an epsilon variant"
        )
    return powered / denom


def lipschitz_power_softmax(x, p: int = 4, epsilon: float = 1e-3) -> np.ndarray:
    """x**p / (epsilon + sum(x**p)); total on zero rows whenever epsilon > 0."""
    _check_power(p)
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    a = _as_row(x)
    powered = a ** p
    denom = epsilon + powered.sum()
    if denom == 0.0:
        raise ZeroDivisionError(
            "lipschitz_power_softmax denominator is zero (epsilon=0, zero row)"
        )
    return powered / denom


def stable_power_softmax(
    x, p: int = 4, epsilon_prime: float = 1e-6, epsilon: float = 1e-3
) -> np.ndarray:
    """Rescale by c = max|x| + epsilon_prime, then apply the epsilon variant.

    The rescale keeps every powered entry in [0, 1], which is what makes
    training with large scores behave; cancelling c from numerator and
    denominator recovers power_softmax exactly when both guards are zero.
    """
    _check_power(p)
    a = _as_row(x)
    c = np.abs(a).max() + epsilon_prime
    if c == 0.0:
        raise ZeroDivisionError(
            "stable_power_softmax scale is zero (zero row, epsilon_prime=0)"
        )
    return lipschitz_power_softmax(a / c, p, epsilon)


def length_agnostic_power_softmax(x, p: int = 4, epsilon: float = 1e-3) -> np.ndarray:
    """(x_j / L**(1/p))**p / (epsilon + mean(x**p)).

    The numerator folds the 1/L factor into the inputs before powering, so
    both numerator and denominator stay O(1) as the row length L grows and a
    single reciprocal approximation domain covers all lengths.
    """
    _check_power(p)
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    a = _as_row(x)
    L = a.size
    scaled = a / L ** (1.0 / p)
    numer = scaled ** p
    denom = epsilon + (a ** p).mean()
    if denom == 0.0:
        raise ZeroDivisionError(
            "length_agnostic_power_softmax denominator is zero (epsilon=0, zero row)"
        )
    return numer / denom


def normalize_row(x, cfg: AttentionConfig) -> np.ndarray:
    """Apply the configured normalizer to one score row."""
    if cfg.variant == "softmax":
        return softmax(x)
    if cfg.variant == "power":
        return power_softmax(x, cfg.p)
    if cfg.variant == "power_lipschitz":
        return lipschitz_power_softmax(x, cfg.p, cfg.epsilon)
    if cfg.variant == "power_stable":
        return stable_power_softmax(x, cfg.p, cfg.epsilon_prime, cfg.epsilon)
    return length_agnostic_power_softmax(x, cfg.p, cfg.epsilon)


def masked_scores(q: np.ndarray, k: np.ndarray, cfg: AttentionConfig) -> np.ndarray:
    """(Q K^T * mask) / sqrt(d_k) on raw arrays; mask defaults to all-ones."""
    s = q @ k.T
    if cfg.mask is not None:
        m = cfg.mask.array
        if m.shape != s.shape:
            raise ShapeError(
                f"mask shape {m.shape} does not match score shape {s.shape}"
            )
        s = s * m
    return s / np.sqrt(cfg.d_k)


def attention_weights(query: Matrix, key: Matrix, cfg: AttentionConfig) -> Matrix:
    """Normalized attention matrix for one head (no value mixing)."""
    if query.cols != key.cols:
        raise ShapeError("query and key widths differ")
    if query.cols != cfg.d_k:
        raise ShapeError(f"cfg.d_k={cfg.d_k} but projections have width {query.cols}")
    s = masked_scores(query.array, key.array, cfg)
    return Matrix(np.vstack([normalize_row(row, cfg) for row in s]))


def attend(query: Matrix, key: Matrix, value: Matrix, cfg: AttentionConfig) -> Matrix:
    """Scaled dot-product attention with the configured normalizer."""
    if key.rows != value.rows:
        raise ShapeError("key and value row counts differ")
    w = attention_weights(query, key, cfg)
    return Matrix(w.array @ value.array)


def mean_attention_distance(a: Matrix) -> float:
    """Average over rows i of sum_j A[i, j] * |i - j|.

    Expects a square matrix of attention weights (rows nonnegative, summing
    to at most one). An identity matrix scores 0; spread-out rows score high.
    """
    w = a.array
    if a.rows != a.cols:
        raise ShapeError(f"attention matrix must be square, got {a.rows}x{a.cols}")
    idx = np.arange(a.rows, dtype=np.float64)
    dist = np.abs(idx[:, None] - idx[None, :])
    return float((w * dist).sum(axis=1).mean())
