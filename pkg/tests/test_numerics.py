import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from slim.errors import RankError, ShapeError
from slim.numerics import (
    dequantize,
    matmul,
    quantize_i8,
    round_half_away,
    silu,
    softmax,
    truncated_svd,
)


def naive_matmul(a, b):
    """Triple-loop oracle, ascending-k summation."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def gram_svd(m, r):
    """Independent truncated SVD via eigendecomposition of the Gram matrix."""
    if m.shape[0] <= m.shape[1]:
        g = m @ m.T
        vals, vecs = np.linalg.eigh(g)
        order = np.argsort(vals)[::-1][:r]
        s = np.sqrt(np.clip(vals[order], 0, None))
        u = vecs[:, order]
        v = m.T @ u / np.where(s > 0, s, 1.0)
        return u, s, v
    u, s, v = gram_svd(m.T, r)
    return v, s, u


class TestMatmul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(matmul(np.eye(3), m), m)

    def test_two_by_two(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(a, np.eye(2)), a)

    def test_against_naive_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((7, 5))
        b = rng.standard_normal((5, 3))
        assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_identity_associativity_bitwise(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((4, 4))
        b = rng.standard_normal((4, 4))
        assert np.array_equal(matmul(matmul(a, np.eye(4)), b), matmul(a, b))


class TestSilu:
    def test_zero(self):
        assert silu(np.array([[0.0]]))[0, 0] == 0.0

    def test_large_positive(self):
        # 10 / (1 + e^-10)
        assert_allclose(silu(np.array([[10.0]]))[0, 0], 9.999546021312976, rtol=1e-12)

    def test_large_negative(self):
        # -10 / (1 + e^10)
        assert_allclose(silu(np.array([[-10.0]]))[0, 0], -4.5397868702434395e-04, rtol=1e-9)

    def test_no_overflow(self):
        out = silu(np.array([[-1000.0, 1000.0]]))
        assert np.all(np.isfinite(out))


class TestSoftmax:
    def test_uniform_row(self):
        out = softmax(np.full((1, 5), 2.3))
        assert_allclose(out, np.full((1, 5), 0.2), atol=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal((3, 6))
        assert np.max(np.abs(softmax(v) - softmax(v + 17.0))) <= 1e-12

    def test_closed_form(self):
        out = softmax(np.array([[0.0, np.log(2.0)]]))
        assert_allclose(out, [[1.0 / 3.0, 2.0 / 3.0]], atol=1e-15)

    def test_col_axis(self):
        rng = np.random.default_rng(6)
        v = rng.standard_normal((4, 3))
        assert_allclose(softmax(v, axis="col").sum(axis=0), np.ones(3), atol=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_rows_sum_to_one(self, row):
        out = softmax(np.array([row]))
        assert np.all(out > 0) and np.all(out <= 1)
        assert abs(out.sum() - 1.0) <= 1e-12


class TestTruncatedSvd:
    def test_rank_one_exact(self):
        u = np.array([[1.0], [2.0], [3.0]])
        v = np.array([[4.0, 5.0]])
        m = u @ v
        uu, s, vv = truncated_svd(m, 1)
        assert np.linalg.norm(uu @ np.diag(s) @ vv.T - m) < 1e-10

    def test_identity_full_rank(self):
        u, s, v = truncated_svd(np.eye(6), 6)
        assert_allclose(u @ np.diag(s) @ v.T, np.eye(6), atol=1e-12)

    def test_matches_gram_oracle(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((20, 30))
        u, s, v = truncated_svd(m, 5)
        err = np.linalg.norm(u @ np.diag(s) @ v.T - m)
        uo, so, vo = gram_svd(m, 5)
        err_oracle = np.linalg.norm(uo @ np.diag(so) @ vo.T - m)
        assert abs(err - err_oracle) < 1e-8
        assert np.all(np.diff(s) <= 1e-12) and np.all(s >= 0)

    def test_full_rank_reconstructs(self):
        rng = np.random.default_rng(8)
        m = rng.standard_normal((9, 12))
        u, s, v = truncated_svd(m, 9)
        assert np.linalg.norm(u @ np.diag(s) @ v.T - m) < 1e-8

    def test_rank_out_of_range(self):
        with pytest.raises(RankError):
            truncated_svd(np.eye(3), 4)
        with pytest.raises(RankError):
            truncated_svd(np.eye(3), 0)


class TestQuantize:
    def test_zero_matrix(self):
        q = quantize_i8(np.zeros((2, 3)))
        assert np.all(q.values == 0) and np.all(q.scales == 1.0)
        assert np.all(dequantize(q) == 0.0)

    def test_hand_row(self):
        q = quantize_i8(np.array([[-1.0, 0.5, 1.0]]))
        assert q.values.tolist() == [[-127, 64, 127]]
        assert_allclose(q.scales, [1.0 / 127.0])

    def test_round_half_away(self):
        assert round_half_away(np.array([0.5, -0.5, 1.5, -2.5])).tolist() == [1.0, -1.0, 2.0, -3.0]

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_roundtrip_bound(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.standard_normal((4, 7)) * rng.uniform(0.1, 100)
        q = quantize_i8(m)
        err = np.abs(dequantize(q) - m)
        assert np.all(err <= q.scales[:, None] / 2 + 1e-15)
