"""Define-by-run reverse-mode autodiff over dense numpy arrays.

Only the primitives needed by the hashing networks are provided: affine
maps, 2-D convolution with zero padding, max pooling, ReLU, reshaping and a
couple of reductions.  Every op records a :class:`Node` on its output; the
graph is rebuilt on every forward pass and walked in reverse topological
order by :func:`backward`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import DimensionError, ParameterError, StateError

DEFAULT_DTYPE = np.float32

_node_ids = itertools.count()


@dataclass
class Node:
    """One recorded op: its inputs and a closure mapping dL/dout to dL/dinputs."""

    op: str
    inputs: tuple["Tensor", ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    id: int = field(default_factory=lambda: next(_node_ids))


class Tensor:
    """A dense array plus an optional gradient buffer and graph node."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # arithmetic used by tests and losses
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def sum(self) -> "Tensor":
        return sum_all(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _record(out_data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(out_data)
    if any(t.requires_grad or t.node is not None for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), backward_fn)
    return out


def topological_order(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root``, every input before the op that consumes it."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in reversed(t.node.inputs):
                if id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf with requires_grad.

    Gradients add onto existing buffers; call ``zero_grad`` between steps.
    """
    if loss.node is None:
        raise StateError("backward() called on a tensor with no recorded forward graph")
    if loss.data.size != 1:
        raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
    order = topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        in_grads = t.node.backward_fn(g)
        for parent, pg in zip(t.node.inputs, in_grads):
            if pg is None or not (parent.requires_grad or parent.node is not None):
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return _record(a.data + b.data, "add", (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if b.data.ndim == 0:
        s = b.data
        return _record(a.data * s, "scale", (a, b), lambda g: (g * s, np.sum(g * a.data)))
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _record(a.data * b.data, "mul", (a, b), lambda g: (g * b.data, g * a.data))


def sum_all(x: Tensor) -> Tensor:
    return _record(np.asarray(x.data.sum(), dtype=x.dtype), "sum", (x,),
                   lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _record(np.asarray(x.data.mean(), dtype=x.dtype), "mean", (x,),
                   lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    in_shape = x.shape
    return _record(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(in_shape),))


def take_rows(x: Tensor, start: int, stop: int) -> Tensor:
    def grad_fn(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        gx[start:stop] = g
        return (gx,)

    return _record(x.data[start:stop], "take_rows", (x,), grad_fn)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is 0."""
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0).astype(x.dtype), "relu", (x,),
                   lambda g: (g * mask,))


# ---------------------------------------------------------------- layers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ W + b for x of shape (B, n), W (n, m), b (m,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def grad_fn(g):
        gx = g @ weight.data.T
        gw = x.data.T @ g
        return (gx, gw) if bias is None else (gx, gw, g.sum(axis=0))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, "linear", inputs, grad_fn)


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    # (B, C, kh, kw, oh, ow) strided view over the padded input
    b, c = xp.shape[:2]
    sb, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(b, c, kh, kw, oh, ow),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride), writeable=False)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of x (B, C, H, W) with kernel (F, C, kh, kw), zero padding."""
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    if stride < 1 or pad < 0:
        raise ParameterError(f"conv2d: need stride >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    b, c, h, w = x.shape
    f, _, kh, kw = kernel.shape
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError(f"conv2d: kernel {kernel.shape} larger than padded input {x.shape} (pad={pad})")
    oh, ow = _conv_out(h, kh, stride, pad), _conv_out(w, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(np.ascontiguousarray(xp), kh, kw, stride, oh, ow)
    out = np.einsum("bcijhw,fcij->bfhw", cols, kernel.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def grad_fn(g):
        gk = np.einsum("bcijhw,bfhw->fcij", cols, g, optimize=True)
        gcols = np.einsum("bfhw,fcij->bcijhw", g, kernel.data, optimize=True)
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, :, i, j]
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return (gx, gk) if bias is None else (gx, gk, g.sum(axis=(0, 2, 3)))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _record(out.astype(x.dtype, copy=False), "conv2d", inputs, grad_fn)


def maxpool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Per-window maximum; the gradient goes to the first (row-major) argmax."""
    stride = window if stride is None else stride
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d: expected (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    if window < 1 or window > h or window > w or stride < 1:
        raise ParameterError(f"maxpool2d: window={window}, stride={stride} invalid for input {x.shape}")
    oh, ow = _conv_out(h, window, stride, 0), _conv_out(w, window, stride, 0)
    cols = _im2col(np.ascontiguousarray(x.data), window, window, stride, oh, ow)
    flat = cols.transpose(0, 1, 4, 5, 2, 3).reshape(b, c, oh, ow, window * window)
    arg = flat.argmax(axis=-1)  # numpy returns the first occurrence on ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        di, dj = np.divmod(arg, window)
        bi, ci, hi, wi = np.indices(arg.shape)
        np.add.at(gx, (bi, ci, hi * stride + di, wi * stride + dj), g)
        return (gx,)

    return _record(out, "maxpool2d", (x,), grad_fn)


# ---------------------------------------------------------------- checking


def numerical_gradient(f: Callable[[], float], param: np.ndarray, eps: float) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``param`` (perturbed in place)."""
    grad = np.zeros_like(param, dtype=np.float64)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = param[idx]
        param[idx] = orig + eps
        fp = f()
        param[idx] = orig - eps
        fm = f()
        param[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def gradient_check(network, x, eps: float = 1e-6, loss_fn=None, seed: int = 0) -> float:
    """Max relative discrepancy between backprop and central differences.

    The network is copied to float64 first.  The scalar probed is
    ``loss_fn(output)`` or, by default, a fixed random projection of the
    output.  Parameters upstream of an ABC layer with r == 0 are skipped:
    their analytic gradient is identically 0.

    discrepancy = |analytic - numeric| / max(1, |analytic|)
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    net = network.astype(np.float64)
    net.train()
    xin = Tensor(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64))
    if loss_fn is None:
        probe_shape = net.forward(xin).shape
        probe = np.random.default_rng(seed).standard_normal(probe_shape)

        def loss_fn(out):
            return sum_all(mul(out, Tensor(probe)))

    net.zero_grad()
    loss = loss_fn(net.forward(xin))
    backward(loss)
    skipped = {id(p) for p in net.frozen_parameters()}

    def f():
        return float(loss_fn(net.forward(xin)).data)

    worst = 0.0
    for p in net.parameters():
        if id(p) in skipped:
            continue
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        numeric = numerical_gradient(f, p.data, eps)
        rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst
