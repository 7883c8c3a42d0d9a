import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binclamp.activations import (
    BatchNormState,
    abc,
    abc_backward,
    abc_forward,
    batchnorm,
    batchnorm_forward,
    code_bits,
    extract_binary_codes,
    scaled_tanh_backward,
    scaled_tanh_forward,
)
from binclamp.autograd import Tensor, backward, sum_all
from binclamp.exceptions import DataError, ParameterError

finite = st.floats(-1e6, 1e6, allow_nan=False)
rates = st.floats(0, 10, allow_nan=False)


class TestABC:
    @pytest.mark.parametrize("x,r,expected", [
        (0.5, 0.1, 1.05), (-0.5, 0.1, -0.05), (0.0, 0.3, 0.0), (2.0, 0.0, 1.0), (-2.0, 0.0, 0.0),
    ])
    def test_values(self, x, r, expected):
        assert abc_forward(np.float64(x), r) == pytest.approx(expected, abs=1e-15)

    @given(finite, rates)
    def test_piecewise_definition(self, x, r):
        y = float(abc_forward(np.float64(x), r))
        assert y == (1 + r * x if x > 0 else r * x)

    @given(st.lists(finite, min_size=1, max_size=50))
    def test_zero_rate_gives_exact_bits(self, xs):
        y = abc_forward(np.array(xs), 0.0)
        assert set(np.unique(y).tolist()) <= {0.0, 1.0}
        assert not np.any(np.signbit(y))
        np.testing.assert_array_equal(y, (np.array(xs) > 0).astype(float))

    @given(rates)
    def test_gradient_is_r_everywhere(self, r):
        x = Tensor(np.array([-2.0, 0.0, 1e-300, 3.0]), requires_grad=True)
        backward(sum_all(abc(x, r)))
        np.testing.assert_array_equal(x.grad, np.full(4, r))

    def test_unit_jump_at_origin(self):
        r = 0.25
        lo = abc_forward(np.float64(0.0), r)
        hi = abc_forward(np.nextafter(0.0, 1.0), r)
        assert hi - lo == pytest.approx(1.0)

    def test_backward_scales_upstream(self):
        g = np.array([1.0, -2.0, 4.0])
        np.testing.assert_array_equal(abc_backward(g, 0.5), [0.5, -1.0, 2.0])
        np.testing.assert_array_equal(abc_backward(g, 0.0), np.zeros(3))

    def test_dtype_preserved(self):
        assert abc_forward(np.zeros(3, np.float32), 0.5).dtype == np.float32

    @pytest.mark.parametrize("r", [-0.1, float("nan")])
    def test_rejects_bad_rate(self, r):
        with pytest.raises(ParameterError):
            abc_forward(np.zeros(2), r)


class TestScaledTanh:
    def test_saturation_example(self):
        assert float(scaled_tanh_forward(np.float64(0.0001), 10000.0)) == pytest.approx(0.7616, abs=5e-5)

    def test_large_alpha_never_reaches_binary(self):
        y = scaled_tanh_forward(np.array([1e-6, -1e-6]), 1000.0)
        assert np.all(np.abs(y) < 1)

    @given(st.floats(-5, 5), st.floats(0.01, 50))
    def test_backward_matches_closed_form(self, x, alpha):
        g = scaled_tanh_backward(np.float64(1.0), np.float64(x), alpha)
        # 1 - tanh^2 cancels near saturation, so the bound is absolute
        assert g == pytest.approx(alpha / math.cosh(alpha * x) ** 2, rel=1e-12, abs=1e-14 * alpha)

    def test_gradient_vanishes_when_saturated(self):
        assert scaled_tanh_backward(np.float64(1.0), np.float64(1.0), 100.0) < 1e-80

    @pytest.mark.parametrize("alpha", [0.0, -1.0])
    def test_rejects_bad_alpha(self, alpha):
        with pytest.raises(ParameterError):
            scaled_tanh_forward(np.zeros(2), alpha)


def two_pass_stats(x, axes):
    """Textbook mean/variance in float64, one channel at a time."""
    n = int(np.prod([x.shape[a] for a in axes]))
    c = x.shape[1]
    flat = np.moveaxis(x, 1, 0).reshape(c, -1).astype(np.float64)
    mean = np.array([sum(row) / n for row in flat])
    var = np.array([sum((v - m) ** 2 for v in row) / n for row, m in zip(flat, mean)])
    return mean, var, n


class TestBatchNorm:
    @pytest.mark.parametrize("shape,axes", [((16, 5), (0,)), ((4, 3, 5, 5), (0, 2, 3))])
    def test_train_forward_and_running_stats(self, rng, shape, axes):
        x = rng.normal(3.0, 2.0, size=shape)
        state = BatchNormState(shape[1], dtype=np.float64)
        state.gamma.data[:] = rng.uniform(0.5, 2, shape[1])
        state.beta.data[:] = rng.standard_normal(shape[1])
        out = batchnorm_forward(x, state)
        mean, var, n = two_pass_stats(x, axes)
        bshape = (1, -1) + (1,) * (len(shape) - 2)
        expected = (x - mean.reshape(bshape)) / np.sqrt(var.reshape(bshape) + 1e-5)
        expected = expected * state.gamma.data.reshape(bshape) + state.beta.data.reshape(bshape)
        np.testing.assert_allclose(out, expected, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(state.running_mean, 0.1 * mean, rtol=1e-12)
        np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * var * n / (n - 1), rtol=1e-12)

    def test_eval_uses_running_stats(self, rng):
        state = BatchNormState(3, dtype=np.float64)
        state.running_mean[:] = [1.0, 2.0, 3.0]
        state.running_var[:] = [4.0, 1.0, 0.25]
        state.training = False
        x = rng.standard_normal((2, 3))
        expected = (x - state.running_mean) / np.sqrt(state.running_var + 1e-5)
        np.testing.assert_allclose(batchnorm_forward(x, state), expected, rtol=1e-12)
        np.testing.assert_array_equal(state.running_mean, [1.0, 2.0, 3.0])

    def test_train_output_is_standardized(self, rng):
        out = batchnorm_forward(rng.normal(5, 3, size=(200, 4)), BatchNormState(4, dtype=np.float64))
        np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=0), 1, atol=1e-5)

    def test_gradients(self, rng):
        from binclamp.autograd import numerical_gradient

        x0 = rng.standard_normal((6, 3))
        probe = rng.standard_normal((6, 3))
        state = BatchNormState(3, dtype=np.float64)
        state.gamma.data[:] = [0.5, 1.5, -1.0]
        x = Tensor(x0.copy(), requires_grad=True)
        backward(sum_all(batchnorm(x, state) * Tensor(probe)))

        def f():
            return float(np.sum(batchnorm_forward(x0, state) * probe))

        for param, analytic in ((x0, x.grad), (state.gamma.data, state.gamma.grad), (state.beta.data, state.beta.grad)):
            np.testing.assert_allclose(analytic, numerical_gradient(f, param, 1e-6), atol=1e-7)

    def test_batch_of_one_rejected_in_train_mode(self):
        with pytest.raises(ParameterError):
            batchnorm_forward(np.zeros((1, 3)), BatchNormState(3))

    def test_wrong_channel_count(self):
        with pytest.raises(ParameterError):
            batchnorm_forward(np.zeros((4, 2)), BatchNormState(3))


class TestExtraction:
    def test_abc_zero_goes_to_bit_zero(self):
        np.testing.assert_array_equal(code_bits(np.array([[-1.0, 0.0, 2.0]]), "abc"), [[0, 0, 1]])

    @pytest.mark.parametrize("method", ["tanh", "scaled-tanh", "dsh-reg-only"])
    def test_sign_methods_send_zero_to_one(self, method):
        np.testing.assert_array_equal(code_bits(np.array([[-1.0, 0.0, 2.0]]), method), [[0, 1, 1]])

    def test_abc_codes_equal_forward_at_zero_rate(self, rng):
        a = rng.standard_normal((50, 12))
        a[0, :3] = 0.0
        codes = extract_binary_codes(a, "abc")
        np.testing.assert_array_equal(codes.bits(), abc_forward(a, 0.0))
        assert codes.k == 12 and codes.n == 50 and codes.padding_clean()

    def test_empty_input(self):
        with pytest.raises(DataError):
            extract_binary_codes(np.zeros((0, 8)), "abc")

    def test_unknown_method(self):
        with pytest.raises(ParameterError):
            code_bits(np.zeros((1, 2)), "relu")


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 70))
def test_extraction_padding_always_clean(n, k):
    a = np.random.default_rng(n * 100 + k).standard_normal((n, k))
    assert extract_binary_codes(a, "abc").padding_clean()
