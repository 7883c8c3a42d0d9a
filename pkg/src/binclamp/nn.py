"""Layer objects and the sequential container used by the trainer."""

from __future__ import annotations

import copy
import math

import numpy as np

from . import autograd as ag
from .activations import BatchNormState, abc, batchnorm, scaled_tanh
from .autograd import Tensor
from .exceptions import ConfigError, ParameterError


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    training = True

    def parameters(self) -> list[Tensor]:
        return []

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def train(self, mode: bool = True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def _cast(self, dtype) -> None:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng=None, bias: bool = True, dtype=np.float32):
        rng = np.random.default_rng(rng)
        self.weight = Tensor(xavier_uniform(rng, (in_features, out_features), in_features, out_features, dtype),
                             requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True, name="bias") if bias else None

    def parameters(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def forward(self, x):
        return ag.linear(x, self.weight, self.bias)

    def __repr__(self):
        return f"Linear({self.weight.shape[0]}, {self.weight.shape[1]})"


class Conv2d(Module):
    def __init__(self, in_channels: int, filters: int, kernel: int, stride: int = 1, pad: int = 0,
                 rng=None, dtype=np.float32):
        rng = np.random.default_rng(rng)
        shape = (filters, in_channels, kernel, kernel)
        self.weight = Tensor(xavier_uniform(rng, shape, in_channels * kernel * kernel, filters * kernel * kernel, dtype),
                             requires_grad=True, name="kernel")
        self.bias = Tensor(np.zeros(filters, dtype=dtype), requires_grad=True, name="bias")
        self.stride, self.pad = stride, pad

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        return ag.conv2d(x, self.weight, self.bias, self.stride, self.pad)

    def __repr__(self):
        f, c, k, _ = self.weight.shape
        return f"Conv2d({c}, {f}, kernel={k}, stride={self.stride}, pad={self.pad})"


class MaxPool2d(Module):
    def __init__(self, window: int, stride: int | None = None):
        self.window, self.stride = window, stride or window

    def forward(self, x):
        return ag.maxpool2d(x, self.window, self.stride)

    def __repr__(self):
        return f"MaxPool2d({self.window}, stride={self.stride})"


class ReLU(Module):
    def forward(self, x):
        return ag.relu(x)


class Flatten(Module):
    def forward(self, x):
        return ag.flatten(x)


class BatchNorm(Module):
    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.state = BatchNormState(num_features, momentum=momentum, eps=eps, dtype=dtype)

    def parameters(self):
        return [self.state.gamma, self.state.beta]

    def train(self, mode: bool = True):
        self.training = self.state.training = mode
        return self

    def forward(self, x):
        return batchnorm(x, self.state)

    def _cast(self, dtype):
        super()._cast(dtype)
        self.state.running_mean = self.state.running_mean.astype(dtype)
        self.state.running_var = self.state.running_var.astype(dtype)

    def __repr__(self):
        return f"BatchNorm({self.state.num_features})"


class ABC(Module):
    """Approximately binary clamping with a schedule-controlled (never learned) r."""

    def __init__(self, r: float = 1.0):
        if r < 0:
            raise ParameterError(f"ABC needs r >= 0, got {r}")
        self.r = r

    def forward(self, x):
        return abc(x, self.r)

    def __repr__(self):
        return f"ABC(r={self.r})"


class ScaledTanh(Module):
    def __init__(self, alpha: float = 1.0):
        if alpha <= 0:
            raise ParameterError(f"scaled tanh needs alpha > 0, got {alpha}")
        self.alpha = alpha

    def forward(self, x):
        return scaled_tanh(x, self.alpha)

    def __repr__(self):
        return f"ScaledTanh(alpha={self.alpha})"


class Identity(Module):
    def forward(self, x):
        return x


class Sequential(Module):
    def __init__(self, *layers: Module, code_layer: int | None = None):
        self.layers = list(layers)
        # index of the binarizing layer; codes are read from its input
        self.code_layer = code_layer

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def forward_until(self, x, stop: int):
        """Output of ``layers[:stop]``."""
        for layer in self.layers[:stop]:
            x = layer(x)
        return x

    def train(self, mode: bool = True):
        self.training = mode
        for layer in self.layers:
            layer.train(mode)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Sequential":
        net = copy.deepcopy(self)
        for layer in net.layers:
            layer._cast(dtype)
        return net

    def frozen_parameters(self) -> list[Tensor]:
        """Parameters upstream of an ABC layer with r == 0 (their gradient is exactly 0)."""
        last = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ABC) and layer.r == 0:
                last = i
        if last is None:
            return []
        return [p for layer in self.layers[:last] for p in layer.parameters()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for j, p in enumerate(layer.parameters()):
                out[f"{i}.{j}"] = p.data
            if isinstance(layer, BatchNorm):
                out[f"{i}.running_mean"] = layer.state.running_mean
                out[f"{i}.running_var"] = layer.state.running_var
        return out

    def load_state_arrays(self, arrays) -> None:
        for i, layer in enumerate(self.layers):
            for j, p in enumerate(layer.parameters()):
                p.data = np.array(arrays[f"{i}.{j}"])
            if isinstance(layer, BatchNorm):
                layer.state.running_mean = np.array(arrays[f"{i}.running_mean"])
                layer.state.running_var = np.array(arrays[f"{i}.running_var"])

    def __repr__(self):
        inner = ",\n  ".join(repr(layer) for layer in self.layers)
        return f"Sequential(\n  {inner}\n)"


def build_network(layers: list[dict], input_shape: tuple[int, ...], rng: np.random.Generator) -> Sequential:
    """Instantiate a layer list such as ``[{"type": "linear", "out": 64}, {"type": "relu"}]``.

    ``input_shape`` excludes the batch axis.  Shapes are inferred layer by layer.
    """
    shape = tuple(input_shape)
    built: list[Module] = []
    for pos, spec in enumerate(layers):
        kind = spec.get("type")
        where = f"architecture[{pos}]"
        if kind == "linear":
            if len(shape) != 1:
                raise ConfigError(f"{where}: linear layer needs flat input, got {shape}; add a flatten layer", [where])
            built.append(Linear(shape[0], int(spec["out"]), rng=rng, bias=spec.get("bias", True)))
            shape = (int(spec["out"]),)
        elif kind == "conv2d":
            if len(shape) != 3:
                raise ConfigError(f"{where}: conv2d needs (C, H, W) input, got {shape}", [where])
            k, s, p = int(spec["kernel"]), int(spec.get("stride", 1)), int(spec.get("pad", 0))
            built.append(Conv2d(shape[0], int(spec["filters"]), k, s, p, rng=rng))
            shape = (int(spec["filters"]), (shape[1] + 2 * p - k) // s + 1, (shape[2] + 2 * p - k) // s + 1)
        elif kind == "maxpool":
            w = int(spec["window"])
            s = int(spec.get("stride", w))
            built.append(MaxPool2d(w, s))
            shape = (shape[0], (shape[1] - w) // s + 1, (shape[2] - w) // s + 1)
        elif kind == "relu":
            built.append(ReLU())
        elif kind == "flatten":
            built.append(Flatten())
            shape = (int(np.prod(shape)),)
        elif kind == "batchnorm":
            built.append(BatchNorm(shape[0]))
        elif kind == "abc":
            built.append(ABC(float(spec.get("r", 1.0))))
        elif kind == "tanh":
            built.append(ScaledTanh(float(spec.get("alpha", 1.0))))
        elif kind == "identity":
            built.append(Identity())
        else:
            raise ConfigError(f"{where}: unknown layer type {kind!r}", [where])
        if any(d < 1 for d in shape):
            raise ConfigError(f"{where}: layer produces empty shape {shape}", [where])
    return Sequential(*built)
