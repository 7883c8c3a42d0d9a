"""Autodiff engine against naive loop implementations and finite differences."""

import numpy as np
import pytest

from binclamp import autograd as ag
from binclamp.autograd import Tensor, backward, gradient_check, numerical_gradient
from binclamp.exceptions import DimensionError, ParameterError, StateError
from binclamp.nn import build_network


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, oh, ow))
    for i in range(n):
        for o in range(f):
            for y in range(oh):
                for z in range(ow):
                    patch = xp[i, :, y * stride:y * stride + kh, z * stride:z * stride + kw]
                    out[i, o, y, z] = np.sum(patch * w[o]) + b[o]
    return out


def naive_pool(x, window, stride):
    n, c, h, w = x.shape
    oh, ow = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.zeros((n, c, oh, ow))
    for i in range(n):
        for ch in range(c):
            for y in range(oh):
                for z in range(ow):
                    out[i, ch, y, z] = x[i, ch, y * stride:y * stride + window, z * stride:z * stride + window].max()
    return out


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def grad_of(fn, *arrays):
    """Analytic gradients of sum(fn(...) * probe) for float64 inputs, plus the probe."""
    leaves = [leaf(a) for a in arrays]
    out = fn(*leaves)
    probe = np.random.default_rng(0).standard_normal(out.shape)
    backward(ag.sum_all(ag.mul(out, Tensor(probe))))
    return [t.grad for t in leaves], probe


def check_fd(fn, *arrays, eps=1e-6, tol=1e-6):
    grads, probe = grad_of(fn, *arrays)
    for pos, arr in enumerate(arrays):
        arr = np.array(arr, dtype=np.float64)
        others = [np.asarray(a, dtype=np.float64) for a in arrays]

        def f():
            others[pos] = arr
            return float(np.sum(fn(*[Tensor(a) for a in others]).data * probe))

        numeric = numerical_gradient(f, arr, eps)
        np.testing.assert_allclose(grads[pos], numeric, atol=tol, rtol=tol)


class TestForwardAgainstLoops:
    def test_linear(self, rng):
        x, w, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3)), rng.standard_normal(3)
        out = ag.linear(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64))
        np.testing.assert_allclose(out.data, naive_matmul(x, w) + b, rtol=1e-12)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 2), (2, 1)])
    def test_conv2d(self, rng, stride, pad):
        x = rng.standard_normal((2, 3, 7, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = ag.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64),
                        stride, pad)
        np.testing.assert_allclose(out.data, naive_conv(x, w, b, stride, pad), rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("window,stride", [(2, 2), (3, 2), (3, 1)])
    def test_maxpool(self, rng, window, stride):
        x = rng.standard_normal((2, 3, 9, 8))
        out = ag.maxpool2d(Tensor(x, dtype=np.float64), window, stride)
        np.testing.assert_array_equal(out.data, naive_pool(x, window, stride))

    def test_relu(self):
        out = ag.relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


class TestGradients:
    def test_linear(self, rng):
        check_fd(ag.linear, rng.standard_normal((4, 5)), rng.standard_normal((5, 3)), rng.standard_normal(3))

    def test_conv2d(self, rng):
        check_fd(lambda x, w, b: ag.conv2d(x, w, b, 2, 1),
                 rng.standard_normal((2, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))

    def test_maxpool(self, rng):
        # distinct values keep the argmax away from ties
        x = rng.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) / 10.0
        check_fd(lambda t: ag.maxpool2d(t, 3, 2), x)

    def test_maxpool_tie_routes_to_first(self):
        x = leaf(np.ones((1, 1, 2, 2)))
        backward(ag.sum_all(ag.maxpool2d(x, 2, 2)))
        np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])

    def test_relu_subgradient_at_zero(self):
        x = leaf([-1.0, 0.0, 3.0])
        backward(ag.sum_all(ag.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_reused_tensor_accumulates(self):
        x = leaf([2.0, -3.0])
        backward(ag.sum_all(ag.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [4.0, -6.0])

    def test_take_rows_and_reshape(self, rng):
        check_fd(lambda t: ag.reshape(ag.take_rows(t, 1, 3), (4, 3)), rng.standard_normal((4, 6)))


class TestGraphErrors:
    def test_backward_without_graph(self):
        with pytest.raises(StateError):
            backward(Tensor(np.float64(1.0), requires_grad=True))

    def test_backward_of_non_scalar(self):
        with pytest.raises(DimensionError):
            backward(ag.relu(leaf([1.0, 2.0])))

    def test_linear_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
            ag.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_conv_kernel_larger_than_input(self):
        with pytest.raises(DimensionError):
            ag.conv2d(Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 1, 5, 5))))

    def test_bad_pool_window(self):
        with pytest.raises(ParameterError):
            ag.maxpool2d(Tensor(np.zeros((1, 1, 4, 4))), 0)


def test_gradient_check_on_small_network(rng):
    layers = [{"type": "linear", "out": 6}, {"type": "relu"}, {"type": "linear", "out": 4},
              {"type": "batchnorm"}, {"type": "abc", "r": 0.5}]
    net = build_network(layers, (5,), rng)
    assert gradient_check(net, rng.standard_normal((8, 5))) <= 1e-6


def test_gradient_check_catches_a_wrong_gradient(rng, monkeypatch):
    net = build_network([{"type": "linear", "out": 3}], (4,), rng)
    real = ag.linear

    def broken(x, w, b=None):
        out = real(x, w, b)
        fn = out.node.backward_fn
        out.node.backward_fn = lambda g: tuple(None if v is None else 1.5 * v for v in fn(g))
        return out

    monkeypatch.setattr(ag, "linear", broken)
    assert gradient_check(net, rng.standard_normal((4, 4))) > 1e-2
