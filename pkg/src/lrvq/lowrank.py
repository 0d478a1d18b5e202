"""Low-rank factor pairs for convolutional weight matrices.

A layer's reshaped weight matrix W_r (N/m x m) is represented as the
product of a tall factor ``a`` (N/m x d_tilde) holding one low-dimensional
subvector per row, and a small linear transform ``b`` (d_tilde x m) mapping
those subvectors back to full width. Gradient-based learning of the pair
lives in the trainer; this module owns construction and error measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadDimError, ShapeMismatchError
from .linalg import normal_matrix, thin_svd

__all__ = [
    "LowRankPair",
    "init_lowrank",
    "materialize",
    "svd_factorize",
    "approximation_error",
    "mean_sq_error",
]


@dataclass(frozen=True)
class LowRankPair:
    """Factor pair (a, b) with a: (n_subvectors, d_tilde), b: (d_tilde, m)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.a.ndim != 2 or self.b.ndim != 2:
            raise ShapeMismatchError("factors must be 2-D matrices")
        if self.a.shape[1] != self.b.shape[0]:
            raise ShapeMismatchError(
                f"inner dims disagree: a is {self.a.shape}, b is {self.b.shape}"
            )
        if not 1 <= self.d_tilde <= self.m:
            raise BadDimError(f"d_tilde={self.d_tilde} outside [1, m={self.m}]")

    @property
    def d_tilde(self) -> int:
        return self.a.shape[1]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    @property
    def n_subvectors(self) -> int:
        return self.a.shape[0]


def init_lowrank(
    rng: np.random.Generator,
    n_subvectors: int,
    m: int,
    d_tilde: int,
    delta: float,
    variance_mode: str = "paper",
) -> LowRankPair:
    """Random factor pair: a ~ N(0, delta), b ~ N(0, 1/m).

    ``delta`` is the variance the layer's dense initializer would have used
    (He-style 2/fan_in by default at call sites). variance_mode "paper"
    scales b by 1/m, which leaves Var(a @ b) = delta * d_tilde / m;
    "fanin_dtilde" scales by the actual inner dimension 1/d_tilde so the
    product variance lands on delta itself.

    The tall factor is drawn column-by-column so candidates with increasing
    d_tilde share their leading columns under the same generator state.
    """
    if not 1 <= d_tilde <= m:
        raise BadDimError(f"d_tilde={d_tilde} outside [1, m={m}]")
    if variance_mode == "paper":
        b_var = 1.0 / m
    elif variance_mode == "fanin_dtilde":
        b_var = 1.0 / d_tilde
    else:
        raise ValueError(f"unknown variance_mode {variance_mode!r}")
    a = np.ascontiguousarray(normal_matrix(rng, d_tilde, n_subvectors, 0.0, delta).T)
    b = normal_matrix(rng, d_tilde, m, 0.0, b_var)
    return LowRankPair(a=a, b=b)


def materialize(pair: LowRankPair) -> np.ndarray:
    """Full-width weight matrix a @ b of shape (n_subvectors, m)."""
    return pair.a @ pair.b


def svd_factorize(w_r: np.ndarray, d_tilde: int) -> LowRankPair:
    """Best rank-d_tilde factorization of w_r in Frobenius norm.

    Serves as the deterministic lower bound on approximation error that the
    learned pairs are measured against.
    """
    w_r = np.asarray(w_r, dtype=np.float64)
    if not 1 <= d_tilde <= min(w_r.shape):
        raise BadDimError(
            f"d_tilde={d_tilde} outside [1, {min(w_r.shape)}] for shape {w_r.shape}"
        )
    u, s, vt = thin_svd(w_r)
    return LowRankPair(a=u[:, :d_tilde] * s[:d_tilde], b=vt[:d_tilde, :])


def mean_sq_error(x: np.ndarray, y: np.ndarray) -> float:
    """Squared Frobenius distance per row (one row = one subvector)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"shapes differ: {x.shape} vs {y.shape}")
    return float(np.sum((x - y) ** 2) / x.shape[0])


def approximation_error(w_r: np.ndarray, pair: LowRankPair) -> float:
    """Per-subvector squared error between w_r and the materialized pair."""
    return mean_sq_error(w_r, materialize(pair))
