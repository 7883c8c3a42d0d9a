"""Binarizing activations: ABC, scaled tanh, and the batch norm that precedes them.

The ``*_forward``/``*_backward`` functions work on plain arrays and are what
the tests pin down; :func:`abc`, :func:`scaled_tanh` and :func:`batchnorm`
wrap them as graph ops on :class:`~binclamp.autograd.Tensor`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, _record
from .codes import PackedCodeMatrix, pack_bits
from .exceptions import DataError, ParameterError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _check_r(r: float) -> None:
    if not r >= 0:
        raise ParameterError(f"ABC needs r >= 0, got {r}")


def abc_forward(x: np.ndarray, r: float) -> np.ndarray:
    """1 + r*x where x > 0, r*x otherwise (x == 0 falls in the second branch).

    At r == 0 the output is exactly 0.0 or 1.0 (negative zeros are folded).
    """
    _check_r(r)
    x = np.asarray(x)
    rx = r * x
    return np.where(x > 0, 1 + rx, rx) + x.dtype.type(0)


def abc_backward(upstream: np.ndarray, r: float) -> np.ndarray:
    # the derivative is r everywhere, including x == 0
    _check_r(r)
    upstream = np.asarray(upstream)
    if r == 0:
        return np.zeros_like(upstream)
    return upstream * upstream.dtype.type(r)


def scaled_tanh_forward(x: np.ndarray, alpha: float) -> np.ndarray:
    if not alpha > 0:
        raise ParameterError(f"scaled tanh needs alpha > 0, got {alpha}")
    x = np.asarray(x)
    return np.tanh(x * x.dtype.type(alpha))


def scaled_tanh_backward(upstream: np.ndarray, x: np.ndarray, alpha: float) -> np.ndarray:
    """upstream * alpha * (1 - tanh(alpha*x)**2)."""
    if not alpha > 0:
        raise ParameterError(f"scaled tanh needs alpha > 0, got {alpha}")
    upstream = np.asarray(upstream)
    t = np.tanh(np.asarray(x) * alpha)
    return upstream * (alpha * (1 - t * t)).astype(upstream.dtype, copy=False)


def abc(x: Tensor, r: float) -> Tensor:
    return _record(abc_forward(x.data, r), "abc", (x,), lambda g: (abc_backward(g, r),))


def scaled_tanh(x: Tensor, alpha: float) -> Tensor:
    return _record(scaled_tanh_forward(x.data, alpha), "tanh", (x,),
                   lambda g: (scaled_tanh_backward(g, x.data, alpha),))


# ---------------------------------------------------------------- batch norm


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics.

    Running variance is tracked with the unbiased (n-1) estimator, the
    batch itself is normalized with the biased one.
    """

    num_features: int
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    training: bool = True
    dtype: type = np.float32
    gamma: Tensor = field(init=False)
    beta: Tensor = field(init=False)
    running_mean: np.ndarray = field(init=False)
    running_var: np.ndarray = field(init=False)

    def __post_init__(self):
        self.gamma = Tensor(np.ones(self.num_features, dtype=self.dtype), requires_grad=True, name="gamma")
        self.beta = Tensor(np.zeros(self.num_features, dtype=self.dtype), requires_grad=True, name="beta")
        self.running_mean = np.zeros(self.num_features, dtype=self.dtype)
        self.running_var = np.ones(self.num_features, dtype=self.dtype)


def _channel_axes(x: np.ndarray) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if x.ndim == 2:
        return (0,), (1, -1)
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    raise ParameterError(f"batch norm expects (B, C) or (B, C, H, W) input, got shape {x.shape}")


def batchnorm(x: Tensor, state: BatchNormState) -> Tensor:
    axes, bshape = _channel_axes(x.data)
    if x.shape[1] != state.num_features:
        raise ParameterError(f"batch norm over {state.num_features} channels got input {x.shape}")
    gamma = state.gamma.data.reshape(bshape)
    beta = state.beta.data.reshape(bshape)
    n = int(np.prod([x.shape[a] for a in axes]))

    if state.training:
        if x.shape[0] < 2:
            raise ParameterError("batch norm in train mode needs a batch of at least 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = state.momentum
        state.running_mean[...] = (1 - m) * state.running_mean + m * mean
        state.running_var[...] = (1 - m) * state.running_var + m * var * (n / (n - 1))
    else:
        mean, var = state.running_mean, state.running_var

    inv_b = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype).reshape(bshape)
    mean_b = mean.reshape(bshape)
    xhat = (x.data - mean_b) * inv_b
    out = (xhat * gamma + beta).astype(x.dtype, copy=False)
    training = state.training

    def grad_fn(g):
        gg = np.sum(g * xhat, axis=axes)
        gb = np.sum(g, axis=axes)
        gxhat = g * gamma
        if training:
            s1 = np.sum(gxhat, axis=axes, keepdims=True)
            s2 = np.sum(gxhat * xhat, axis=axes, keepdims=True)
            gx = (inv_b / n) * (n * gxhat - s1 - xhat * s2)
        else:
            gx = gxhat * inv_b
        return gx, gg, gb

    return _record(out, "batchnorm", (x, state.gamma, state.beta), grad_fn)


def batchnorm_forward(x: np.ndarray, state: BatchNormState) -> np.ndarray:
    return batchnorm(Tensor(x), state).data


# ---------------------------------------------------------------- extraction


def code_bits(activations: np.ndarray, method: str) -> np.ndarray:
    """0/1 code bits from pre-activation values (the input of the binarizing layer).

    ``abc`` uses ABC at r = 0, so 0 maps to bit 0; ``tanh`` (and the identity
    head of the regularizer-only baseline) uses sgn with sgn(0) = +1.
    """
    a = np.asarray(activations)
    if method == "abc":
        return (a > 0).astype(np.uint8)
    if method in ("tanh", "scaled-tanh", "dsh-reg-only", "sign"):
        return (a >= 0).astype(np.uint8)
    raise ParameterError(f"unknown extraction method {method!r}")


def extract_binary_codes(activations, method: str, labels=None) -> PackedCodeMatrix:
    a = np.asarray(activations.data if isinstance(activations, Tensor) else activations)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise DataError(f"cannot extract codes from empty activations of shape {a.shape}")
    bits = code_bits(a, method)
    return PackedCodeMatrix(pack_bits(bits), bits.shape[1], labels)
