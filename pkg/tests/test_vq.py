import numpy as np
import pytest

from lrvq.errors import (
    AlreadyMergedError,
    DimMismatchError,
    IndexOutOfRangeError,
    TooFewSubvectorsError,
)
from lrvq.linalg import make_rng
from lrvq.vq import (
    QuantizedLayer,
    assign,
    clamp_k,
    clustering_error,
    decode,
    kmeans_fit,
    merge_codebook,
    reconstruct,
)


def brute_force_assign(a, codebook):
    """Exhaustive nearest-centroid oracle with direct distances."""
    codes = np.empty(a.shape[0], dtype=np.int64)
    for p in range(a.shape[0]):
        best, best_d = 0, np.inf
        for q in range(codebook.shape[0]):
            d = float(np.sum((a[p] - codebook[q]) ** 2))
            if d < best_d:
                best, best_d = q, d
        codes[p] = best
    return codes


class TestAssign:
    def test_exact_match(self):
        pts = np.array([[0.0, 0.0], [2.0, 2.0]])
        np.testing.assert_array_equal(assign(pts, pts), [0, 1])

    def test_tie_breaks_low_index(self):
        a = np.array([[1.0, 1.0]])
        cb = np.array([[0.0, 0.0], [2.0, 2.0]])
        assert assign(a, cb)[0] == 0

    def test_matches_brute_force(self):
        rng = make_rng(1)
        a = rng.normal(size=(1000, 4))
        cb = rng.normal(size=(16, 4))
        np.testing.assert_array_equal(assign(a, cb), brute_force_assign(a, cb))

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatchError):
            assign(np.zeros((3, 2)), np.zeros((4, 3)))


class TestKmeans:
    def test_k_distinct_rows_perfect(self):
        rng = make_rng(2)
        distinct = rng.normal(size=(8, 3))
        a = distinct[rng.integers(0, 8, size=100)]
        cb, codes = kmeans_fit(make_rng(3), a, 8)
        assert np.sum((a - cb[codes]) ** 2) == 0.0
        # centroids are exactly the distinct rows, in some order
        matched = {tuple(row) for row in cb}
        assert {tuple(row) for row in distinct} <= matched

    def test_identical_rows_degenerate(self):
        a = np.tile([1.0, 2.0], (50, 1))
        cb, codes = kmeans_fit(make_rng(5), a, 4)
        assert np.sum((a - cb[codes]) ** 2) == 0.0

    def test_two_blobs(self):
        rng = make_rng(7)
        c0, c1 = np.zeros(3), np.full(3, 10.0)
        pts = np.vstack([c0 + 0.01 * rng.normal(size=(200, 3)),
                         c1 + 0.01 * rng.normal(size=(200, 3))])
        means = [pts[:200].mean(axis=0), pts[200:].mean(axis=0)]
        cb, _ = kmeans_fit(make_rng(11), pts, 2)
        order = np.argsort(cb[:, 0])
        np.testing.assert_allclose(cb[order][0], means[0], atol=0.01)
        np.testing.assert_allclose(cb[order][1], means[1], atol=0.01)

    def test_objective_non_increasing(self):
        rng = make_rng(13)
        for trial in range(20):
            a = rng.normal(size=(200, 5)) * rng.uniform(0.1, 3.0)
            trace = []
            kmeans_fit(make_rng(trial), a, 13, iters=30, objective_trace=trace)
            assert all(x >= y - 1e-9 for x, y in zip(trace, trace[1:]))

    def test_bit_reproducible(self):
        a = make_rng(17).normal(size=(300, 4))
        cb1, codes1 = kmeans_fit(make_rng(19), a, 16)
        cb2, codes2 = kmeans_fit(make_rng(19), a, 16)
        np.testing.assert_array_equal(cb1, cb2)
        np.testing.assert_array_equal(codes1, codes2)

    def test_k_larger_than_points(self):
        a = make_rng(23).normal(size=(3, 2))
        cb, codes = kmeans_fit(make_rng(29), a, 8)
        assert np.sum((a - cb[codes]) ** 2) == 0.0


class TestClampK:
    def test_no_clamp(self):
        assert clamp_k(256, 4096) == 256

    def test_clamped(self):
        assert clamp_k(256, 512) == 128

    def test_tiny(self):
        assert clamp_k(256, 8) == 2

    def test_too_few(self):
        with pytest.raises(TooFewSubvectorsError):
            clamp_k(4, 3)


class TestDecode:
    def test_gather(self):
        cb = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = decode(cb, np.array([0, 0, 1]))
        np.testing.assert_array_equal(out, [[1, 2], [1, 2], [3, 4]])

    def test_lossless_round_trip(self):
        cb = make_rng(31).normal(size=(10, 4))
        a = cb[[3, 1, 4, 1, 5]]
        np.testing.assert_array_equal(decode(cb, assign(a, cb)), a)

    def test_matches_gather_oracle(self):
        rng = make_rng(37)
        cb = rng.normal(size=(16, 3))
        codes = rng.integers(0, 16, size=200)
        got = decode(cb, codes)
        for p in range(200):
            np.testing.assert_array_equal(got[p], cb[codes[p]])

    def test_index_out_of_range(self):
        with pytest.raises(IndexOutOfRangeError):
            decode(np.zeros((2, 2)), np.array([0, 2]))


def random_layer(seed, n=50, k=8, d=3, m=9):
    rng = make_rng(seed)
    return QuantizedLayer(
        codebook=rng.normal(size=(k, d)),
        codes=rng.integers(0, k, size=n),
        b=rng.normal(size=(d, m)),
    )


class TestReconstructMerge:
    def test_identity_b(self):
        q = QuantizedLayer(
            codebook=make_rng(1).normal(size=(4, 3)),
            codes=np.array([0, 1, 2, 3, 0]),
            b=np.eye(3),
        )
        np.testing.assert_array_equal(reconstruct(q), decode(q.codebook, q.codes))

    def test_zero_codebook(self):
        q = QuantizedLayer(
            codebook=np.zeros((4, 3)), codes=np.zeros(10, dtype=int), b=np.ones((3, 9))
        )
        np.testing.assert_array_equal(reconstruct(q), np.zeros((10, 9)))

    def test_merge_identity_b(self):
        q = random_layer(41, d=4, m=4)
        q = QuantizedLayer(codebook=q.codebook, codes=q.codes, b=np.eye(4))
        merged = merge_codebook(q)
        np.testing.assert_array_equal(merged.codebook, q.codebook)

    def test_single_centroid(self):
        q = random_layer(43, k=1)
        q = QuantizedLayer(codebook=q.codebook, codes=np.zeros(20, dtype=int), b=q.b)
        merged = merge_codebook(q)
        rows = decode(merged.codebook, merged.codes)
        np.testing.assert_array_equal(rows, np.tile(merged.codebook[0], (20, 1)))

    def test_merge_matches_reconstruct_100_layers(self):
        for seed in range(100):
            q = random_layer(seed)
            via_b = reconstruct(q)
            merged = decode(merge_codebook(q).codebook, q.codes)
            scale = np.linalg.norm(via_b)
            assert np.max(np.abs(via_b - merged)) < 1e-12 * max(scale, 1.0)

    def test_double_merge_rejected(self):
        merged = merge_codebook(random_layer(47))
        with pytest.raises(AlreadyMergedError):
            merge_codebook(merged)
        with pytest.raises(AlreadyMergedError):
            reconstruct(merged)


class TestClusteringError:
    def test_perfect_codebook(self):
        rng = make_rng(53)
        a = rng.normal(size=(20, 3))
        b = rng.normal(size=(3, 9))
        q = QuantizedLayer(codebook=a.copy(), codes=np.arange(20), b=b)
        assert clustering_error(a @ b, q) == 0.0

    def test_single_centroid_closed_form(self):
        # with one centroid at the mean of a, the error is the total variance
        # of the rows of a @ b around the mean's image
        rng = make_rng(59)
        a = rng.normal(size=(40, 3))
        b = rng.normal(size=(3, 6))
        mean = a.mean(axis=0, keepdims=True)
        q = QuantizedLayer(codebook=mean, codes=np.zeros(40, dtype=int), b=b)
        w = a @ b
        expected = float(np.sum((w - mean @ b) ** 2) / 40)
        assert clustering_error(w, q) == pytest.approx(expected, rel=1e-12)

    def test_decreasing_in_k(self):
        rng = make_rng(61)
        a = rng.normal(size=(128, 4))
        b = rng.normal(size=(4, 9))
        w = a @ b
        errors = []
        for k in (1, 2, 4, 8, 16):
            cb, codes = kmeans_fit(make_rng(67), a, k)
            errors.append(clustering_error(w, QuantizedLayer(cb, codes, b)))
        assert all(e1 >= e2 - 1e-12 for e1, e2 in zip(errors, errors[1:]))


class TestAssignDecodeIdempotence:
    def test_reassigning_decoded_points_is_stable(self):
        rng = make_rng(71)
        a = rng.normal(size=(500, 4))
        cb, codes = kmeans_fit(make_rng(73), a, 12)
        np.testing.assert_array_equal(assign(decode(cb, codes), cb), codes)
