import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttreg.batch import batch_ols_prefixes
from ttreg.errors import DegenerateVector, DimensionMismatch, EmptyBuffer
from ttreg.memory import FeatureMap
from ttreg.nonparam import (
    KernelConfig,
    KVBuffer,
    NonparamConfig,
    kernel_regression_query,
    local_linear_query,
    normalized_weights,
    nw_query,
    qknorm,
    softmax_attention,
)

seeds = st.integers(0, 2**32 - 1)


def random_buffer(seed, t, d_k, d_v):
    rng = np.random.default_rng(seed)
    return KVBuffer.from_arrays(rng.standard_normal((t, d_k)), rng.standard_normal((t, d_v))), rng


class TestKVBuffer:
    def test_append_and_arrays(self):
        buf = KVBuffer(2, 1)
        assert len(buf) == 0
        assert buf.keys.shape == (0, 2)
        buf.append([1.0, 2.0], [3.0])
        buf.append([4.0, 5.0], [6.0])
        np.testing.assert_array_equal(buf.keys, [[1.0, 2.0], [4.0, 5.0]])
        np.testing.assert_array_equal(buf.values, [[3.0], [6.0]])

    def test_rejects_wrong_width_and_nonfinite(self):
        buf = KVBuffer(2, 1)
        with pytest.raises(DimensionMismatch):
            buf.append([1.0], [1.0])
        with pytest.raises(ValueError):
            buf.append([np.nan, 0.0], [1.0])


class TestQKNorm:
    def test_three_four_five(self):
        np.testing.assert_allclose(qknorm([3.0, 4.0]), [0.6, 0.8])

    def test_idempotent(self):
        u = np.array([0.0, 1.0, 0.0])
        np.testing.assert_array_equal(qknorm(u), u)

    @settings(max_examples=50, deadline=None)
    @given(seed=seeds)
    def test_unit_norm_same_direction(self, seed):
        x = np.random.default_rng(seed).standard_normal(7) * 10
        y = qknorm(x)
        assert abs(np.linalg.norm(y) - 1) <= 1e-12
        assert x @ y / np.linalg.norm(x) == pytest.approx(1.0, abs=1e-12)

    def test_zero_vector(self):
        with pytest.raises(DegenerateVector):
            qknorm(np.zeros(3))


class TestNadarayaWatson:
    kernel = KernelConfig("exp_smoothing", 1.5)

    def test_single_pair(self):
        buf = KVBuffer.from_arrays([[1.0, 2.0]], [[7.0, -1.0]])
        np.testing.assert_array_equal(nw_query(buf, [10.0, -3.0], self.kernel), [7.0, -1.0])

    def test_equidistant_keys_average(self):
        buf = KVBuffer.from_arrays([[1.0, 0.0], [-1.0, 0.0]], [[2.0], [6.0]])
        np.testing.assert_allclose(nw_query(buf, [0.0, 0.5], self.kernel), [4.0])

    @pytest.mark.parametrize("seed", range(3))
    def test_extended_precision_oracle(self, seed):
        buf, rng = random_buffer(seed, 12, 3, 2)
        q = rng.standard_normal(3)
        mpmath.mp.dps = 40
        w = [mpmath.exp(-sum((mpmath.mpf(a) - mpmath.mpf(b)) ** 2 for a, b in zip(k, q)) / mpmath.mpf(1.5)) for k in buf.keys]
        total = sum(w)
        expected = [float(sum(wi * mpmath.mpf(v[j]) for wi, v in zip(w, buf.values)) / total) for j in range(2)]
        np.testing.assert_allclose(nw_query(buf, q, self.kernel), expected, rtol=1e-13, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(seed=seeds, t=st.integers(1, 30))
    def test_convex_combination(self, seed, t):
        buf, rng = random_buffer(seed, t, 3, 2)
        y = nw_query(buf, rng.standard_normal(3) * 3, self.kernel)
        V = buf.values
        assert np.all(y >= V.min(axis=0) - 1e-12)
        assert np.all(y <= V.max(axis=0) + 1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=seeds, shift=st.floats(-500, 500))
    def test_weight_rescaling_invariance(self, seed, shift):
        log_w = np.random.default_rng(seed).standard_normal(9) * 5
        np.testing.assert_allclose(normalized_weights(log_w + shift), normalized_weights(log_w), rtol=1e-12, atol=1e-300)

    def test_large_norms_stay_finite(self):
        rng = np.random.default_rng(0)
        keys = rng.standard_normal((20, 4))
        keys *= 1e3 / np.linalg.norm(keys, axis=1, keepdims=True)
        q = keys[5] * 0.999
        buf = KVBuffer.from_arrays(keys, rng.standard_normal((20, 2)))
        for kernel in (self.kernel, KernelConfig("scaled_dot_exp")):
            assert np.all(np.isfinite(nw_query(buf, q, kernel)))
        assert np.all(np.isfinite(local_linear_query(buf, q, self.kernel)))

    def test_empty_buffer(self):
        with pytest.raises(EmptyBuffer):
            nw_query(KVBuffer(2, 1), [0.0, 0.0], self.kernel)


class TestSoftmax:
    def test_single_pair(self):
        buf = KVBuffer.from_arrays([[1.0, -1.0]], [[4.0]])
        np.testing.assert_array_equal(softmax_attention(buf, [3.0, 3.0]), [4.0])

    def test_direct_summation(self):
        buf, rng = random_buffer(1, 16, 8, 3)
        q = rng.standard_normal(8)
        s = np.exp(buf.keys @ q / np.sqrt(8))
        np.testing.assert_allclose(softmax_attention(buf, q), s @ buf.values / s.sum(), rtol=1e-12)

    @pytest.mark.parametrize("t", [1, 2, 17, 128])
    @pytest.mark.parametrize("d_k", [4, 64])
    def test_qknorm_identity(self, t, d_k):
        rng = np.random.default_rng(t * 1000 + d_k)
        keys = np.array([qknorm(k) for k in rng.standard_normal((t, d_k))])
        buf = KVBuffer.from_arrays(keys, rng.standard_normal((t, 3)))
        q = qknorm(rng.standard_normal(d_k))
        smooth = KernelConfig("exp_smoothing", 2 * np.sqrt(d_k))
        np.testing.assert_allclose(nw_query(buf, q, smooth), softmax_attention(buf, q), rtol=0, atol=1e-10)


class TestLocalLinear:
    kernel = KernelConfig("exp_smoothing", 4.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=seeds, t=st.integers(1, 20))
    def test_reproduces_constants(self, seed, t):
        buf, rng = random_buffer(seed, t, 3, 2)
        const = rng.standard_normal(2)
        buf = KVBuffer.from_arrays(buf.keys, np.tile(const, (t, 1)))
        np.testing.assert_allclose(local_linear_query(buf, rng.standard_normal(3), self.kernel), const, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_reproduces_affine_maps(self, seed):
        rng = np.random.default_rng(seed)
        d_k = 4
        K = rng.standard_normal((d_k + 4, d_k))
        A, b, q = rng.standard_normal((2, d_k)), rng.standard_normal(2), rng.standard_normal(d_k)
        buf = KVBuffer.from_arrays(K, K @ A.T + b)
        got = local_linear_query(buf, q, KernelConfig("exp_smoothing", 2.0 * d_k))
        np.testing.assert_allclose(got, A @ q + b, rtol=0, atol=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_weighted_least_squares_oracle(self, seed):
        buf, rng = random_buffer(seed, 40, 3, 2)
        q = rng.standard_normal(3) * 0.5
        X = np.hstack([np.ones((40, 1)), buf.keys - q])
        sw = np.sqrt(np.exp(-np.sum((buf.keys - q) ** 2, axis=1) / 4.0))
        coef = np.linalg.lstsq(sw[:, None] * X, sw[:, None] * buf.values, rcond=None)[0]
        np.testing.assert_allclose(local_linear_query(buf, q, self.kernel), coef[0], rtol=1e-6, atol=1e-7)

    def test_single_point_is_its_value(self):
        buf = KVBuffer.from_arrays([[1.0, 1.0]], [[2.5]])
        np.testing.assert_allclose(local_linear_query(buf, [0.0, 0.0], self.kernel), [2.5])

    def test_jitter_must_be_positive(self):
        buf = KVBuffer.from_arrays([[1.0, 1.0]], [[2.5]])
        with pytest.raises(ValueError):
            local_linear_query(buf, [0.0, 0.0], self.kernel, jitter=0.0)


class TestKernelRegression:
    def test_single_point_interpolation(self):
        buf = KVBuffer.from_arrays([[0.3, -0.2]], [[1.7]])
        y = kernel_regression_query(buf, [0.3, -0.2], KernelConfig("exp_smoothing", 1.0), ridge=1e-12)
        np.testing.assert_allclose(y, [1.7], atol=1e-10)

    def test_interpolates_training_pairs(self):
        buf, _ = random_buffer(2, 6, 3, 2)
        kernel = KernelConfig("exp_smoothing", 1.0)
        assert np.linalg.cond(kernel.gram(buf.keys, buf.keys)) < 1e6
        for k, v in zip(buf.keys, buf.values):
            np.testing.assert_allclose(kernel_regression_query(buf, k, kernel, ridge=1e-10), v, atol=1e-6)

    def test_poly2_gram_is_feature_inner_product(self):
        rng = np.random.default_rng(3)
        A, B = rng.standard_normal((4, 5)), rng.standard_normal((3, 5))
        phi = FeatureMap.POLY2
        expected = phi(A) @ phi(B).T
        np.testing.assert_allclose(KernelConfig("poly2").gram(A, B), expected, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_feature_space_ridge_duality(self, seed):
        buf, rng = random_buffer(seed, 30, 5, 2)
        q = rng.standard_normal(5)
        ridge = 1e-3
        dual = kernel_regression_query(buf, q, KernelConfig("poly2"), ridge)
        phi = FeatureMap.POLY2
        M = batch_ols_prefixes(phi(buf.keys), buf.values, ridge)[-1]
        np.testing.assert_allclose(dual, M @ phi(q), rtol=0, atol=1e-6)

    def test_poly2_has_no_log_form(self):
        with pytest.raises(ValueError):
            KernelConfig("poly2").log_weights(np.ones((2, 2)), np.ones(2))


class TestNonparamConfig:
    def test_dispatch(self):
        buf, rng = random_buffer(4, 10, 3, 1)
        q = rng.standard_normal(3)
        kernel = KernelConfig("exp_smoothing", 2.0)
        assert NonparamConfig("nadaraya_watson", kernel)(buf, q) == pytest.approx(nw_query(buf, q, kernel))
        assert NonparamConfig("local_linear", kernel, 1e-6)(buf, q) == pytest.approx(local_linear_query(buf, q, kernel, 1e-6))
        assert NonparamConfig("kernel_regression", kernel, 1e-3)(buf, q) == pytest.approx(
            kernel_regression_query(buf, q, kernel, 1e-3)
        )

    def test_bandwidth_positive(self):
        with pytest.raises(ValueError):
            KernelConfig("exp_smoothing", 0.0)
