from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .exceptions import DimensionError, ParameterError


def sgd_step(params, grads, velocity, lr: float, momentum: float = 0.9, weight_decay: float = 0.0) -> None:
    """In-place SGD with momentum and coupled (L2) weight decay.

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v
    """
    if lr < 0:
        raise ParameterError(f"learning rate must be >= 0, got {lr}")
    for p, g, v in zip(params, grads, velocity, strict=True):
        if p.shape != v.shape or (g is not None and g.shape != p.shape):
            raise DimensionError(f"parameter {p.shape}, gradient {None if g is None else g.shape}, "
                                 f"velocity {v.shape} disagree")
        v *= momentum
        if g is not None:
            v += g
        if weight_decay:
            v += weight_decay * p
        p -= lr * v


@dataclass
class SGD:
    params: list[Tensor]
    momentum: float = 0.9
    weight_decay: float = 0.004
    velocity: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight decay must be >= 0, got {self.weight_decay}")
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        sgd_step([p.data for p in self.params], [p.grad for p in self.params], self.velocity,
                 lr, self.momentum, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
