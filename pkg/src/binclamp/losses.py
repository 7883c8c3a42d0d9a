"""Pairwise contrastive hashing loss and softmax cross-entropy.

Both are fused graph ops: the forward computes the mean loss over the batch,
the backward returns exact (sub)gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, _record
from .exceptions import DataError, DimensionError, ParameterError


@dataclass
class PairBatch:
    """Left/right network outputs for B pairs; ``similar[i]`` is True for a pull pair."""

    left: Tensor
    right: Tensor
    similar: np.ndarray

    def __post_init__(self):
        self.similar = np.asarray(self.similar, dtype=bool).ravel()
        if self.left.shape != self.right.shape or self.left.ndim != 2:
            raise DimensionError(f"pair halves differ: {self.left.shape} vs {self.right.shape}")
        if self.similar.shape[0] != self.left.shape[0]:
            raise DimensionError(f"{self.similar.shape[0]} flags for {self.left.shape[0]} pairs")


def pairwise_loss(batch: PairBatch, m: float, reg_weight: float = 0.01) -> Tensor:
    """Mean over pairs of

        s/2 * |b1 - b2|^2 + (1 - s)/2 * max(0, m - |b1 - b2|^2)
        + reg_weight * (| |b1| - 1 |_1 + | |b2| - 1 |_1)

    with s = 1 for similar pairs.  Subgradients are 0 at the hinge boundary
    and at the |b| = 1 and b = 0 kinks.
    """
    if not m > 0:
        raise ParameterError(f"margin m must be positive, got {m}")
    if reg_weight < 0:
        raise ParameterError(f"reg_weight must be >= 0, got {reg_weight}")
    b1, b2 = batch.left.data, batch.right.data
    s = batch.similar.astype(b1.dtype)[:, None]
    n = b1.shape[0]
    diff = b1 - b2
    d2 = np.sum(diff * diff, axis=1, keepdims=True)
    hinge = np.maximum(0, m - d2)
    dev1, dev2 = np.abs(b1) - 1, np.abs(b2) - 1
    per_pair = (0.5 * s * d2 + 0.5 * (1 - s) * hinge
                + reg_weight * (np.abs(dev1).sum(axis=1, keepdims=True) + np.abs(dev2).sum(axis=1, keepdims=True)))
    loss = np.asarray(per_pair.mean(), dtype=b1.dtype)

    def grad_fn(g):
        active = (hinge > 0).astype(b1.dtype)
        coef = s - (1 - s) * active  # d/d(diff) of the two distance terms, per unit diff
        gdiff = coef * diff
        g1 = gdiff + reg_weight * np.sign(dev1) * np.sign(b1)
        g2 = -gdiff + reg_weight * np.sign(dev2) * np.sign(b2)
        scale = g / n
        return g1 * scale, g2 * scale

    return _record(loss, "pairwise_loss", (batch.left, batch.right), grad_fn)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of -log softmax(logits)[label], stabilized by subtracting the row max."""
    z = logits.data
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise DimensionError(f"logits {z.shape} and labels {labels.shape} do not line up")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise DataError(f"labels must lie in [0, {z.shape[1]}), got range [{labels.min()}, {labels.max()}]")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    rows = np.arange(z.shape[0])
    loss = np.asarray(-log_p[rows, labels].mean(), dtype=z.dtype)

    def grad_fn(g):
        p = np.exp(log_p)
        p[rows, labels] -= 1
        return (p * (g / z.shape[0]),)

    return _record(loss, "softmax_xent", (logits,), grad_fn)
