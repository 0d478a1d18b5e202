"""Codebook learning and encode/decode over low-rank subvectors.

A codebook is a (k, d) float64 array of centroids; codes are an int64
vector of centroid indices, one per subvector row. All routines are
deterministic: ties go to the lowest centroid index and centroid updates
use order-independent reductions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    AlreadyMergedError,
    DimMismatchError,
    IndexOutOfRangeError,
    ShapeMismatchError,
    TooFewSubvectorsError,
)
from .lowrank import mean_sq_error

__all__ = [
    "QuantizedLayer",
    "assign",
    "kmeans_fit",
    "clamp_k",
    "decode",
    "reconstruct",
    "merge_codebook",
    "clustering_error",
]

_ASSIGN_CHUNK = 8192


@dataclass(frozen=True)
class QuantizedLayer:
    """Codebook + codes for one layer, with the linear transform until merged.

    Before merging, ``codebook`` is (k, d_tilde) and ``b`` maps decoded rows
    to width m. After merging, ``codebook`` is (k, m) and ``b`` is None.
    """

    codebook: np.ndarray
    codes: np.ndarray
    b: np.ndarray | None
    merged: bool = False

    def __post_init__(self):
        if not self.merged:
            if self.b is None:
                raise ShapeMismatchError("unmerged layer needs its linear transform")
            if self.codebook.shape[1] != self.b.shape[0]:
                raise DimMismatchError(
                    f"codebook dim {self.codebook.shape[1]} != b rows {self.b.shape[0]}"
                )

    @property
    def k(self) -> int:
        return self.codebook.shape[0]

    @property
    def m(self) -> int:
        return self.codebook.shape[1] if self.merged else self.b.shape[1]


def assign(a: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Nearest-centroid index per row; ties break to the lowest index."""
    a = np.asarray(a, dtype=np.float64)
    codebook = np.asarray(codebook, dtype=np.float64)
    if a.shape[1] != codebook.shape[1]:
        raise DimMismatchError(
            f"subvector dim {a.shape[1]} != centroid dim {codebook.shape[1]}"
        )
    cb_sq = np.sum(codebook**2, axis=1)
    codes = np.empty(a.shape[0], dtype=np.int64)
    for start in range(0, a.shape[0], _ASSIGN_CHUNK):
        block = a[start : start + _ASSIGN_CHUNK]
        d2 = cb_sq[None, :] - 2.0 * (block @ codebook.T)
        codes[start : start + _ASSIGN_CHUNK] = np.argmin(d2, axis=1)
    return codes


def _sse(a: np.ndarray, codebook: np.ndarray, codes: np.ndarray) -> float:
    return float(np.sum((a - codebook[codes]) ** 2))


def _kmeans_pp_init(rng, a: np.ndarray, k: int) -> np.ndarray:
    """Seeded k-means++: sample each next centroid proportional to D^2."""
    n = a.shape[0]
    centroids = np.empty((k, a.shape[1]), dtype=np.float64)
    idx = int(rng.integers(n))
    centroids[0] = a[idx]
    d2 = np.sum((a - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            target = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), target, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centroids[i] = a[idx]
        d2 = np.minimum(d2, np.sum((a - centroids[i]) ** 2, axis=1))
    return centroids


def _update_centroids(
    a: np.ndarray, codes: np.ndarray, centroids: np.ndarray
) -> np.ndarray:
    """Mean per cluster; clusters whose members are all identical snap to
    that exact value so perfectly clusterable data reaches error 0, not 1 ulp."""
    k, d = centroids.shape
    counts = np.bincount(codes, minlength=k).astype(np.float64)
    sums = np.zeros((k, d))
    np.add.at(sums, codes, a)
    occupied = counts > 0
    new = centroids.copy()
    new[occupied] = sums[occupied] / counts[occupied, None]

    lo = np.full((k, d), np.inf)
    hi = np.full((k, d), -np.inf)
    np.minimum.at(lo, codes, a)
    np.maximum.at(hi, codes, a)
    uniform = occupied & np.all(lo == hi, axis=1)
    new[uniform] = lo[uniform]
    return new


def _repair_empty(
    a: np.ndarray, codes: np.ndarray, centroids: np.ndarray
) -> np.ndarray:
    """Re-seed empty clusters with the points farthest from their centroid."""
    k = centroids.shape[0]
    counts = np.bincount(codes, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return centroids
    dist = np.sum((a - centroids[codes]) ** 2, axis=1)
    centroids = centroids.copy()
    for cluster in empty:
        donor = int(np.argmax(dist))
        if dist[donor] <= 0.0:
            break
        centroids[cluster] = a[donor]
        dist[donor] = -1.0
    return centroids


def kmeans_fit(
    rng: np.random.Generator,
    a: np.ndarray,
    k: int,
    iters: int = 100,
    objective_trace: list | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from a k-means++ seed; returns (codebook, codes).

    Stops early once assignments stabilize. The per-assignment objective is
    non-increasing; pass a list as ``objective_trace`` to record it.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ShapeMismatchError("need a non-empty 2-D subvector matrix")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    centroids = _kmeans_pp_init(rng, a, k)
    codes = assign(a, centroids)
    if objective_trace is not None:
        objective_trace.append(_sse(a, centroids, codes))
    for _ in range(iters):
        centroids = _update_centroids(a, codes, centroids)
        centroids = _repair_empty(a, codes, centroids)
        new_codes = assign(a, centroids)
        if objective_trace is not None:
            objective_trace.append(_sse(a, centroids, new_codes))
        if np.array_equal(new_codes, codes):
            codes = new_codes
            break
        codes = new_codes
    return centroids, codes


def clamp_k(k: int, n_subvectors: int) -> int:
    """Centroid budget clamped to a quarter of the subvector count."""
    if n_subvectors < 4:
        raise TooFewSubvectorsError(
            f"need at least 4 subvectors to clamp, got {n_subvectors}"
        )
    return min(k, n_subvectors // 4)


def decode(codebook: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Gather codebook rows by code; rows come out bit-identical."""
    codebook = np.asarray(codebook)
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() >= codebook.shape[0]):
        raise IndexOutOfRangeError(
            f"codes outside [0, {codebook.shape[0]}): "
            f"min {codes.min()}, max {codes.max()}"
        )
    return codebook[codes]


def reconstruct(layer: QuantizedLayer) -> np.ndarray:
    """Decoded subvectors mapped back to full width: decode(C, I) @ b."""
    if layer.merged:
        raise AlreadyMergedError("reconstruct needs the unmerged layer")
    return decode(layer.codebook, layer.codes) @ layer.b


def merge_codebook(layer: QuantizedLayer) -> QuantizedLayer:
    """Fold the linear transform into the codebook: C' = C @ b.

    Decoding with C' gives the same matrix as decoding with C and applying
    b, because gathering rows commutes with right-multiplication.
    """
    if layer.merged:
        raise AlreadyMergedError("layer is already merged")
    return replace(
        layer, codebook=layer.codebook @ layer.b, b=None, merged=True
    )


def clustering_error(w_prime: np.ndarray, layer: QuantizedLayer) -> float:
    """Per-subvector squared error between w_prime and the decoded layer."""
    if layer.merged:
        approx = decode(layer.codebook, layer.codes)
    else:
        approx = reconstruct(layer)
    return mean_sq_error(w_prime, approx)
