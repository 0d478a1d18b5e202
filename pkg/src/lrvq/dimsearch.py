"""Pre-finetuning selection of the clustering dimensionality.

For each candidate inner dimension the quantized convolutional layers'
materialized weight matrices are scored by the log-determinant of their
subvector covariance; the candidate with the smallest summed score is the
one whose subvectors are cheapest to cluster. Scores stay in the log
domain because raw determinants across layers differ by hundreds of
orders of magnitude.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyListError, NotSymmetricError, TooFewRowsError
from .linalg import covariance, logdet_psd

__all__ = [
    "DEFAULT_RIDGE",
    "DimCandidate",
    "ec_lower_bound",
    "score_candidate",
    "select_d",
    "write_candidates_csv",
]

# Keeps rank-deficient covariances comparable: with d_tilde < m the
# materialized weights span only d_tilde directions, so |Sigma| is 0 and
# only the clamped log keeps an ordering.
DEFAULT_RIDGE = 1e-10


@dataclass(frozen=True)
class DimCandidate:
    d_tilde: int
    per_layer_logdet: tuple[float, ...]
    score: float


def ec_lower_bound(sigma: np.ndarray, k: int, m: int) -> float:
    """Asymptotic floor on per-subvector clustering error for N(0, sigma) data.

    Evaluates k^(-2/m) * m * |sigma|^(1/m) in the log domain; a singular
    covariance gives 0.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (m, m):
        raise NotSymmetricError(f"expected ({m}, {m}) covariance, got {sigma.shape}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    logdet = logdet_psd(sigma, ridge=0.0)
    if not np.isfinite(logdet):
        return 0.0
    return float(np.exp((-2.0 / m) * np.log(k) + np.log(m) + logdet / m))


def score_candidate(
    layers: list[np.ndarray], d_tilde: int, ridge: float = DEFAULT_RIDGE
) -> DimCandidate:
    """Sum of covariance log-determinants over the given weight matrices.

    ``layers`` holds one materialized (N/m, m) matrix per quantized conv
    layer; fully-connected layers never appear here since their clustering
    setup does not change with d_tilde.
    """
    per_layer = []
    for i, w_prime in enumerate(layers):
        w_prime = np.asarray(w_prime, dtype=np.float64)
        if w_prime.shape[0] < w_prime.shape[1] + 1:
            raise TooFewRowsError(
                f"layer {i}: need more than m={w_prime.shape[1]} rows, "
                f"got {w_prime.shape[0]}"
            )
        per_layer.append(logdet_psd(covariance(w_prime), ridge=ridge))
    return DimCandidate(
        d_tilde=d_tilde,
        per_layer_logdet=tuple(per_layer),
        score=float(sum(per_layer)),
    )


def select_d(candidates: list[DimCandidate]) -> int:
    """d_tilde of the lowest score; ties go to the smaller dimension."""
    if not candidates:
        raise EmptyListError("no candidates to select from")
    best = min(candidates, key=lambda c: (c.score, c.d_tilde))
    return best.d_tilde


def write_candidates_csv(candidates: list[DimCandidate], path) -> None:
    """Candidate table: one row per (d_tilde, layer) plus the layer's total."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d_tilde", "layer_index", "logdet", "total"])
        for cand in candidates:
            for layer_index, logdet in enumerate(cand.per_layer_logdet):
                writer.writerow(
                    [cand.d_tilde, layer_index, repr(logdet), repr(cand.score)]
                )
