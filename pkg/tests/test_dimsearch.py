import csv

import numpy as np
import pytest

from lrvq.dimsearch import (
    DimCandidate,
    ec_lower_bound,
    score_candidate,
    select_d,
    write_candidates_csv,
)
from lrvq.errors import EmptyListError, NotSymmetricError, TooFewRowsError
from lrvq.linalg import covariance, jacobi_eigh, make_rng
from lrvq.vq import kmeans_fit


class TestLowerBound:
    def test_identity_closed_form(self):
        # k^(-2/m) * m with |I| = 1
        want = 9.0 * 256.0 ** (-2.0 / 9.0)
        assert ec_lower_bound(np.eye(9), 256, 9) == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(2.624, abs=2e-3)

    def test_k_one(self):
        sigma = np.diag([1.0, 2.0, 3.0, 4.0])
        det_root = float(np.prod([1, 2, 3, 4])) ** 0.25
        assert ec_lower_bound(sigma, 1, 4) == pytest.approx(4 * det_root, rel=1e-12)

    def test_linear_in_scale(self):
        base = ec_lower_bound(np.eye(6), 32, 6)
        for c in (0.5, 2.0, 7.0):
            got = ec_lower_bound(c * np.eye(6), 32, 6)
            assert got == pytest.approx(c * base, rel=1e-12)

    def test_singular_gives_zero(self):
        sigma = np.outer(np.arange(1.0, 5.0), np.arange(1.0, 5.0))
        assert ec_lower_bound(sigma, 16, 4) == 0.0

    def test_shape_check(self):
        with pytest.raises(NotSymmetricError):
            ec_lower_bound(np.eye(3), 16, 4)

    def test_empirical_kmeans_respects_bound(self):
        # spot check; the acceptance suite runs the full (m, k, seed) grid
        rng = make_rng(0)
        x = rng.normal(size=(10_000, 4))
        sigma = covariance(x)
        bound = ec_lower_bound(sigma, 16, 4)
        cb, codes = kmeans_fit(make_rng(1), x, 16)
        empirical = float(np.sum((x - cb[codes]) ** 2) / x.shape[0])
        assert empirical >= 0.95 * bound


class TestScoreCandidate:
    def test_identity_layer_scores_zero(self):
        rng = make_rng(3)
        x = rng.normal(size=(500, 4))
        # whiten so covariance is the identity
        eigs, vecs = jacobi_eigh(covariance(x))
        white = (x - x.mean(axis=0)) @ vecs / np.sqrt(eigs)
        cand = score_candidate([white], d_tilde=4, ridge=0.0)
        assert cand.score == pytest.approx(0.0, abs=1e-9)

    def test_two_identical_layers_double(self):
        w = make_rng(5).normal(size=(200, 9))
        one = score_candidate([w], 3)
        two = score_candidate([w, w], 3)
        assert two.score == pytest.approx(2 * one.score, rel=1e-12)

    def test_matches_per_layer_oracle(self):
        rng = make_rng(7)
        layers = [rng.normal(size=(100, 4)) @ rng.normal(size=(4, 9)) for _ in range(3)]
        cand = score_candidate(layers, d_tilde=4)
        for w, got in zip(layers, cand.per_layer_logdet):
            eigs, _ = jacobi_eigh(covariance(w))
            want = float(np.sum(np.log(np.maximum(eigs, 0.0) + 1e-10)))
            assert got == pytest.approx(want, rel=1e-9)
        assert cand.score == pytest.approx(sum(cand.per_layer_logdet), abs=1e-12)

    def test_row_permutation_invariant(self):
        rng = make_rng(11)
        w = rng.normal(size=(300, 9))
        perm = make_rng(13).permutation(300)
        a = score_candidate([w], 5)
        b = score_candidate([w[perm]], 5)
        assert a.score == pytest.approx(b.score, rel=1e-9)

    def test_ranking_invariant_to_ridge(self):
        rng = make_rng(17)
        families = {
            d: [rng.normal(size=(200, d)) @ rng.normal(size=(d, 9)) for _ in range(2)]
            for d in (3, 5, 7)
        }
        orderings = []
        for ridge in (1e-12, 1e-10, 1e-8):
            scores = {d: score_candidate(ws, d, ridge=ridge).score for d, ws in families.items()}
            orderings.append(sorted(scores, key=scores.get))
        assert orderings[0] == orderings[1] == orderings[2]

    def test_too_few_rows(self):
        with pytest.raises(TooFewRowsError):
            score_candidate([np.zeros((9, 9))], 3)


class TestSelectD:
    def test_argmin(self):
        cands = [DimCandidate(d, (), s) for d, s in [(3, 5.0), (4, 3.0), (5, 4.0)]]
        assert select_d(cands) == 4

    def test_tie_takes_smaller(self):
        cands = [DimCandidate(d, (), 1.0) for d in (5, 3, 4)]
        assert select_d(cands) == 3

    def test_empty(self):
        with pytest.raises(EmptyListError):
            select_d([])

    def test_lower_logdet_matches_grid_search_ranking(self):
        # synthetic family: lower-rank layers have smaller covariance
        # log-determinant and genuinely lower k-means error
        rng = make_rng(19)
        scores, errors = {}, {}
        for d in (2, 4, 6):
            w = rng.normal(size=(2000, d)) @ rng.normal(size=(d, 9)) / np.sqrt(d)
            scores[d] = score_candidate([w], d).score
            cb, codes = kmeans_fit(make_rng(23), w, 16)
            errors[d] = float(np.sum((w - cb[codes]) ** 2))
        assert sorted(scores, key=scores.get) == sorted(errors, key=errors.get)


class TestCsv:
    def test_schema(self, tmp_path):
        cands = [DimCandidate(3, (1.0, 2.0), 3.0), DimCandidate(4, (0.5, 0.5), 1.0)]
        path = tmp_path / "candidates.csv"
        write_candidates_csv(cands, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["d_tilde", "layer_index", "logdet", "total"]
        assert rows[1] == ["3", "0", "1.0", "3.0"]
        assert len(rows) == 5
