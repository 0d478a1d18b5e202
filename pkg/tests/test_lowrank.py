import numpy as np
import pytest

from lrvq.errors import BadDimError, ShapeMismatchError
from lrvq.linalg import jacobi_eigh, make_rng
from lrvq.lowrank import (
    LowRankPair,
    approximation_error,
    init_lowrank,
    materialize,
    mean_sq_error,
    svd_factorize,
)


def naive_matmul(a, b):
    """Triple-loop oracle, independent of numpy's matmul path."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestInit:
    def test_b_variance_paper_mode(self):
        pair = init_lowrank(make_rng(1), 4096, 9, 5, delta=2.0 / 9.0)
        assert pair.b.shape == (5, 9)
        # target Var(B) = 1/m with m=9
        big = init_lowrank(make_rng(1), 40000, 9, 9, delta=1.0)
        assert abs(big.b.var() - 1.0 / 9.0) / (1.0 / 9.0) < 0.5  # only 81 entries
        assert abs(big.a.var() - 1.0) < 0.1

    def test_b_variance_m4(self):
        pairs = [init_lowrank(make_rng(s), 100, 4, 4, delta=1.0) for s in range(200)]
        b_all = np.concatenate([p.b.ravel() for p in pairs])
        assert b_all.var() == pytest.approx(0.25, rel=0.1)

    def test_product_variance_modes(self):
        # paper mode: Var(a @ b) = delta * d_tilde / m; fanin mode lands on delta
        delta, m, d = 0.5, 9, 3
        paper = materialize(init_lowrank(make_rng(2), 4000, m, d, delta, "paper"))
        assert paper.var() == pytest.approx(delta * d / m, rel=0.15)
        fanin = materialize(init_lowrank(make_rng(2), 4000, m, d, delta, "fanin_dtilde"))
        assert fanin.var() == pytest.approx(delta, rel=0.15)

    def test_a_variance_matches_delta(self):
        pair = init_lowrank(make_rng(3), 5000, 9, 4, delta=0.125)
        assert pair.a.var() == pytest.approx(0.125, rel=0.1)

    def test_nested_columns_across_d(self):
        small = init_lowrank(make_rng(5), 64, 9, 3, delta=1.0)
        large = init_lowrank(make_rng(5), 64, 9, 7, delta=1.0)
        np.testing.assert_array_equal(small.a, large.a[:, :3])

    def test_bad_dims(self):
        with pytest.raises(BadDimError):
            init_lowrank(make_rng(0), 10, 9, 0, delta=1.0)
        with pytest.raises(BadDimError):
            init_lowrank(make_rng(0), 10, 9, 10, delta=1.0)


class TestMaterialize:
    def test_ones_pattern(self):
        a = np.array([[2.0, 0.0], [0.0, 3.0]])
        b = np.ones((2, 9))
        out = materialize(LowRankPair(a=a, b=b))
        np.testing.assert_array_equal(out[0], np.full(9, 2.0))
        np.testing.assert_array_equal(out[1], np.full(9, 3.0))

    def test_identity_transform(self):
        w_r = make_rng(7).normal(size=(16, 9))
        pair = LowRankPair(a=w_r, b=np.eye(9))
        np.testing.assert_array_equal(materialize(pair), w_r)

    def test_matches_naive_oracle(self):
        rng = make_rng(11)
        pair = LowRankPair(a=rng.normal(size=(30, 4)), b=rng.normal(size=(4, 9)))
        got = materialize(pair)
        want = naive_matmul(pair.a, pair.b)
        np.testing.assert_allclose(got, want, rtol=1e-12)


class TestSvdFactorize:
    def test_exact_rank_recovery(self):
        rng = make_rng(13)
        w = rng.normal(size=(50, 2)) @ rng.normal(size=(2, 9))
        pair = svd_factorize(w, 2)
        assert np.linalg.norm(w - materialize(pair)) < 1e-9

    def test_full_rank_zero_error(self):
        w = make_rng(17).normal(size=(20, 6))
        pair = svd_factorize(w, 6)
        assert approximation_error(w, pair) < 1e-12

    def test_error_equals_tail_singular_values(self):
        # oracle: eigenvalues of W^T W give squared singular values
        w = make_rng(19).normal(size=(100, 9))
        pair = svd_factorize(w, 3)
        eigs, _ = jacobi_eigh(w.T @ w)
        tail = float(np.sum(eigs[3:]))
        got = approximation_error(w, pair) * w.shape[0]
        assert got == pytest.approx(tail, rel=1e-9)

    def test_monotone_in_d(self):
        w = make_rng(23).normal(size=(64, 9))
        errors = [approximation_error(w, svd_factorize(w, d)) for d in range(1, 10)]
        assert all(e1 >= e2 - 1e-12 for e1, e2 in zip(errors, errors[1:]))

    def test_bad_dim(self):
        with pytest.raises(BadDimError):
            svd_factorize(np.zeros((5, 3)), 4)


class TestApproximationError:
    def test_zero_target(self):
        rng = make_rng(29)
        pair = LowRankPair(a=rng.normal(size=(10, 2)), b=rng.normal(size=(2, 4)))
        w = np.zeros((10, 4))
        expected = float(np.sum(materialize(pair) ** 2) / 10)
        assert approximation_error(w, pair) == pytest.approx(expected, rel=1e-12)

    def test_matches_elementwise_oracle(self):
        rng = make_rng(31)
        w = rng.normal(size=(12, 9))
        pair = LowRankPair(a=rng.normal(size=(12, 3)), b=rng.normal(size=(3, 9)))
        approx = naive_matmul(pair.a, pair.b)
        acc = 0.0
        for i in range(12):
            for j in range(9):
                acc += (w[i, j] - approx[i, j]) ** 2
        assert approximation_error(w, pair) == pytest.approx(acc / 12, rel=1e-12)

    def test_shape_mismatch(self):
        pair = LowRankPair(a=np.zeros((5, 2)), b=np.zeros((2, 4)))
        with pytest.raises(ShapeMismatchError):
            approximation_error(np.zeros((6, 4)), pair)

    def test_mean_sq_error_shape_check(self):
        with pytest.raises(ShapeMismatchError):
            mean_sq_error(np.zeros((2, 2)), np.zeros((2, 3)))
