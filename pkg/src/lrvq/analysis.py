"""Diagnostic studies: the error trade-off sweep, dimensionality-search
validation, and intrinsic-dimension reporting.

The error triplet (e_a, e_c, e_r) is measured on the dense reference
net's weights: per quantized conv layer, the best rank-d factorization of
the reference weight matrix gives the approximation path, k-means over
that factorization's subvectors gives the clustering path, and the
reconstruction error closes the triangle. Accuracies come from actually
training, quantizing and fine-tuning a low-rank net at each candidate
dimension.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .arch import ArchitectureSpec, LayerSpec
from .dimsearch import DimCandidate, score_candidate, select_d
from .errors import GridMismatchError
from .linalg import make_rng, pca_intrinsic_dim, reshape_to_subvectors
from .lowrank import materialize, mean_sq_error, svd_factorize
from .modelfmt import CompressionRegime, quantized_layout
from .trainer import (
    STREAM_INIT,
    STREAM_QUANTIZE,
    SyntheticDataset,
    ToyNet,
    TrainConfig,
    build_dense,
    build_lowrank,
    evaluate,
    quantize_net,
    train,
)
from .vq import QuantizedLayer, clustering_error, kmeans_fit, reconstruct

__all__ = [
    "TradeoffPoint",
    "SearchValidation",
    "reference_error_triplet",
    "sweep_dtilde",
    "intrinsic_dim_report",
    "validate_search",
    "write_tradeoff_csv",
    "write_intrinsic_csv",
    "write_search_csv",
]


@dataclass(frozen=True)
class TradeoffPoint:
    d_tilde: int
    e_a: float
    e_c: float
    e_r: float
    lrr_accuracy: float
    quantized_accuracy: float
    finetuned_accuracy: float


@dataclass(frozen=True)
class SearchValidation:
    predicted_best: int
    empirical_best: int
    within_one: bool
    rank_correlation: float | None
    rows: tuple[tuple[int, float, float], ...]  # (d_tilde, score, ft_acc)


def _toy_arch_of(net: ToyNet) -> ArchitectureSpec:
    specs = tuple(conv.spec for conv in net.convs)
    fc_spec = LayerSpec("fc", net.fc_w.shape[0], net.fc_w.shape[1], 1, 1, False)
    return ArchitectureSpec(name="toy", layers=(*specs, fc_spec))


def reference_error_triplet(
    dense_net: ToyNet,
    regime: CompressionRegime,
    d_cv: int,
    kmeans_iters: int = 100,
    seed: int = 0,
) -> tuple[float, float, float]:
    """(e_a, e_c, e_r) for rank-d + k-means compression of the reference weights.

    Per quantized conv layer: W_r is the dense net's subvector matrix, W'
    its best rank-d factorization, and W-hat the decode of a k-means
    codebook fitted to the factor rows; errors are summed across layers.
    """
    layout = quantized_layout(_toy_arch_of(dense_net), regime)
    e_a = e_c = e_r = 0.0
    for conv, lay in zip(dense_net.convs, layout):
        if not lay.quantized:
            continue
        d = d_cv if conv.spec.kind == "cv3x3" else regime.d_for(conv.spec.kind)
        w_r = reshape_to_subvectors(conv.w, lay.m)
        pair = svd_factorize(w_r, d)
        w_prime = materialize(pair)
        codebook, codes = kmeans_fit(
            make_rng(seed, STREAM_QUANTIZE), pair.a, lay.k_eff, iters=kmeans_iters
        )
        q = QuantizedLayer(codebook=codebook, codes=codes, b=pair.b)
        e_a += mean_sq_error(w_r, w_prime)
        e_c += clustering_error(w_prime, q)
        e_r += mean_sq_error(w_r, reconstruct(q))
    return e_a, e_c, e_r


def sweep_dtilde(
    data: SyntheticDataset,
    regime: CompressionRegime,
    d_range: list[int],
    train_cfg: TrainConfig,
    finetune_cfg: TrainConfig,
    seed: int = 0,
    kmeans_iters: int = 100,
    variance_mode: str = "paper",
    dense_net: ToyNet | None = None,
) -> tuple[list[TradeoffPoint], ToyNet, float]:
    """Train/quantize/fine-tune one low-rank net per candidate dimension.

    Returns (points, dense reference net, dense accuracy). The dense
    reference is trained here (same config and seed) unless one is passed
    in.
    """
    if dense_net is None:
        dense_net = build_dense(make_rng(seed, STREAM_INIT), data.n_classes)
        dense_net, _ = train(dense_net, data, train_cfg)
    dense_acc = evaluate(dense_net, data.x_test, data.y_test)

    points = []
    for d in d_range:
        e_a, e_c, e_r = reference_error_triplet(
            dense_net, regime, d, kmeans_iters=kmeans_iters, seed=seed
        )
        net = build_lowrank(
            make_rng(seed, STREAM_INIT), data.n_classes, d, regime.d_pw, variance_mode
        )
        net, history = train(net, data, train_cfg)
        lrr_acc = history[-1][3]
        qnet, _ = quantize_net(
            make_rng(seed, STREAM_QUANTIZE), net, regime, iters=kmeans_iters
        )
        q_acc = evaluate(qnet, data.x_test, data.y_test)
        qnet, ft_history = train(qnet, data, finetune_cfg)
        points.append(
            TradeoffPoint(
                d_tilde=d,
                e_a=e_a,
                e_c=e_c,
                e_r=e_r,
                lrr_accuracy=lrr_acc,
                quantized_accuracy=q_acc,
                finetuned_accuracy=ft_history[-1][3],
            )
        )
    return points, dense_net, dense_acc


def lrr_conv_matrices(net: ToyNet, regime: CompressionRegime) -> list[np.ndarray]:
    """Materialized subvector matrices of the conv layers a regime quantizes."""
    layout = quantized_layout(_toy_arch_of(net), regime)
    return [
        conv.subvector_matrix()
        for conv, lay in zip(net.convs, layout)
        if lay.quantized
    ]


def intrinsic_dim_report(
    dense_net: ToyNet,
    lrr_net: ToyNet,
    variance_ratio: float = 0.9999,
) -> list[tuple[int, int, int]]:
    """(layer, standard_dim, lrr_dim) rows, one per conv layer."""
    rows = []
    for i, (dense_conv, lrr_conv) in enumerate(zip(dense_net.convs, lrr_net.convs)):
        standard = pca_intrinsic_dim(
            reshape_to_subvectors(dense_conv.w, dense_conv.m), variance_ratio
        )
        learned = pca_intrinsic_dim(lrr_conv.subvector_matrix(), variance_ratio)
        rows.append((i, standard, learned))
    return rows


def _average_ranks(values: list[float]) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    sorted_vals = np.asarray(values)[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0
        i = j + 1
    return ranks


def spearman(x: list[float], y: list[float]) -> float | None:
    """Rank correlation with average ranks; None when either input is constant."""
    rx, ry = _average_ranks(x), _average_ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))


def validate_search(
    points: list[TradeoffPoint], candidates: list[DimCandidate]
) -> SearchValidation:
    """Compare the covariance-score ranking against fine-tuned accuracy.

    The grids must coincide. Lower score should track higher accuracy, so a
    perfect agreement shows up as rank correlation -1. The empirical best
    takes the smallest dimension among accuracy ties.
    """
    sweep_grid = [p.d_tilde for p in points]
    cand_grid = [c.d_tilde for c in candidates]
    if sorted(sweep_grid) != sorted(cand_grid):
        raise GridMismatchError(f"sweep grid {sweep_grid} != candidate grid {cand_grid}")
    acc_by_d = {p.d_tilde: p.finetuned_accuracy for p in points}
    score_by_d = {c.d_tilde: c.score for c in candidates}
    grid = sorted(sweep_grid)
    scores = [score_by_d[d] for d in grid]
    accs = [acc_by_d[d] for d in grid]
    predicted = select_d(list(candidates))
    best_acc = max(accs)
    empirical = min(d for d in grid if acc_by_d[d] == best_acc)
    return SearchValidation(
        predicted_best=predicted,
        empirical_best=empirical,
        within_one=abs(predicted - empirical) <= 1,
        rank_correlation=spearman(scores, accs),
        rows=tuple((d, score_by_d[d], acc_by_d[d]) for d in grid),
    )


def write_tradeoff_csv(points: list[TradeoffPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d_tilde", "e_a", "e_c", "e_r", "lrr_acc", "q_acc", "ft_acc"])
        for p in points:
            writer.writerow(
                [p.d_tilde, p.e_a, p.e_c, p.e_r,
                 p.lrr_accuracy, p.quantized_accuracy, p.finetuned_accuracy]
            )


def write_intrinsic_csv(rows: list[tuple[int, int, int]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "standard_dim", "lrr_dim"])
        writer.writerows(rows)


def write_search_csv(result: SearchValidation, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d_tilde", "score", "ft_acc", "predicted_best", "empirical_best"])
        for d, score, acc in result.rows:
            writer.writerow([d, score, acc, result.predicted_best, result.empirical_best])
