"""Dense matrix helpers shared by every stage of the toolkit.

Matrices are plain float64 numpy arrays in row-major order. Randomness
comes exclusively from counter-based Philox generators so that any draw
is reproducible from (seed, stream) alone, independent of platform or
scheduling.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    InvalidVarianceError,
    NonDivisibleError,
    NotSymmetricError,
    ShapeMismatchError,
    TooFewRowsError,
)

__all__ = [
    "make_rng",
    "reshape_to_subvectors",
    "subvectors_to_tensor",
    "normal_matrix",
    "covariance",
    "jacobi_eigh",
    "logdet_psd",
    "pca_intrinsic_dim",
    "thin_svd",
]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; (seed, stream) fully determines the output."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream)])
    return np.random.Generator(np.random.Philox(key=key))


def reshape_to_subvectors(w: np.ndarray, m: int) -> np.ndarray:
    """Reshape a 4-D filter tensor into an (N/m, m) matrix of subvectors.

    Traversal is row-major over (c_out, c_in, k_h, k_w); consecutive runs
    of m elements form rows, so ``subvectors_to_tensor`` inverts exactly.
    """
    w = np.asarray(w)
    if m < 1:
        raise NonDivisibleError(f"subvector size must be >= 1, got {m}")
    n = w.size
    if n % m != 0:
        raise NonDivisibleError(f"m={m} does not divide parameter count {n}")
    return np.ascontiguousarray(w).reshape(n // m, m)


def subvectors_to_tensor(mat: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Inverse of ``reshape_to_subvectors`` for the given tensor shape."""
    mat = np.asarray(mat)
    if mat.size != int(np.prod(shape)):
        raise ShapeMismatchError(f"cannot reshape {mat.size} values into {shape}")
    return np.ascontiguousarray(mat).reshape(shape)


def normal_matrix(
    rng: np.random.Generator,
    rows: int,
    cols: int,
    mean: float = 0.0,
    variance: float = 1.0,
) -> np.ndarray:
    """I.i.d. normal (rows, cols) matrix with the given mean and variance."""
    if variance <= 0:
        raise InvalidVarianceError(f"variance must be positive, got {variance}")
    return rng.normal(loc=mean, scale=np.sqrt(variance), size=(rows, cols))


def covariance(x: np.ndarray) -> np.ndarray:
    """Unbiased (n-1) covariance of the rows of x, symmetrized exactly."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooFewRowsError("covariance needs a 2-D matrix with >= 2 rows")
    centered = x - x.mean(axis=0)
    s = centered.T @ centered / (x.shape[0] - 1)
    return (s + s.T) / 2.0


def _check_symmetric(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise NotSymmetricError(f"expected a square matrix, got shape {s.shape}")
    scale = max(float(np.max(np.abs(s))), 1.0)
    if float(np.max(np.abs(s - s.T))) > 1e-9 * scale:
        raise NotSymmetricError("matrix is not symmetric within 1e-9 relative")
    return s


def jacobi_eigh(s: np.ndarray, max_sweeps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps the strict upper triangle in a fixed row-major order, which makes
    the result independent of threading and BLAS build. Intended for the
    small (m <= 18) covariance matrices this toolkit works with.

    Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue;
    column j of the eigenvector matrix pairs with eigenvalue j.
    """
    a = _check_symmetric(s).copy()
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= 1e-14 * max(1.0, float(np.max(np.abs(a.diagonal())))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # classic two-sided rotation annihilating a[p, q]
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                rot_p = a[:, p].copy()
                rot_q = a[:, q].copy()
                a[:, p] = c * rot_p - sn * rot_q
                a[:, q] = sn * rot_p + c * rot_q
                rot_p = a[p, :].copy()
                rot_q = a[q, :].copy()
                a[p, :] = c * rot_p - sn * rot_q
                a[q, :] = sn * rot_p + c * rot_q
                rot_p = v[:, p].copy()
                rot_q = v[:, q].copy()
                v[:, p] = c * rot_p - sn * rot_q
                v[:, q] = sn * rot_p + c * rot_q

    eigvals = a.diagonal().copy()
    order = np.argsort(-eigvals, kind="stable")
    return eigvals[order], v[:, order]


def logdet_psd(s: np.ndarray, ridge: float = 0.0) -> float:
    """Sum of ln(lambda_i + ridge) over eigenvalues clamped at zero.

    Returns -inf for a singular matrix with ridge 0; a positive ridge keeps
    the value finite for the rank-deficient covariances produced by low-rank
    weights.
    """
    eigvals, _ = jacobi_eigh(s)
    clamped = np.maximum(eigvals, 0.0) + ridge
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(clamped)))


def pca_intrinsic_dim(x: np.ndarray, variance_ratio: float) -> int:
    """Smallest r whose top-r principal components reach the variance ratio."""
    if not 0.0 < variance_ratio <= 1.0:
        raise ValueError(f"variance_ratio must be in (0, 1], got {variance_ratio}")
    eigvals, _ = jacobi_eigh(covariance(x))
    eigvals = np.maximum(eigvals, 0.0)
    total = float(eigvals.sum())
    if total == 0.0:
        return 0
    cumulative = np.cumsum(eigvals) / total
    idx = int(np.searchsorted(cumulative, variance_ratio - 1e-15))
    return min(idx, len(cumulative) - 1) + 1


def thin_svd(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD (u, s, vt) with singular values in descending order."""
    return np.linalg.svd(np.asarray(x, dtype=np.float64), full_matrices=False)
