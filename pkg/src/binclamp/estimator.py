"""scikit-learn style front end.

:class:`BinaryHashEncoder` learns a hashing network from (X, y) and
transforms inputs into 0/1 code bits; :class:`HammingRetriever` indexes codes
and answers exact Hamming k-NN queries.  Chained in a
:class:`~sklearn.pipeline.Pipeline`, ``score`` is test-set mAP::

    pipe = make_pipeline(BinaryHashEncoder(n_bits=12), HammingRetriever())
    pipe.fit(X_train, y_train).score(X_test, y_test)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .codes import PackedCodeMatrix, RetrievalIndex, pack_bits
from .config import ExperimentConfig
from .data import Dataset
from .evaluation import evaluate
from .trainer import train


def _label_sets(y) -> list[tuple[int, ...]]:
    y = np.asarray(y)
    if y.ndim == 1:
        return [(int(v),) for v in y]
    # multi-label indicator matrix
    return [tuple(int(j) for j in np.flatnonzero(row)) for row in y]


class BinaryHashEncoder(TransformerMixin, BaseEstimator):
    """Learn k-bit binary codes with a BN + ABC (or scaled tanh) head.

    Parameters
    ----------
    method : {"abc", "scaled-tanh", "dsh-reg-only"}, default="abc"
        Binarizing head.
    n_bits : int, default=12
        Code length.
    hidden : tuple of int, default=(64,)
        Widths of the ReLU hidden layers in front of the code layer.
    epochs : int, default=50
    batch_size : int, default=64
        Pairs per iteration.
    learning_rate : float or None, default=None
        Overrides the schedule's initial learning rate.
    momentum : float, default=0.9
    weight_decay : float, default=0.004
    margin : float or None, default=None
        Contrastive margin; None means 2 * n_bits.
    reg_weight : float, default=0.01
        Weight of the |b| -> 1 regularizer.
    schedule : str or None, default=None
        Schedule policy name; None picks the retrieval policy for ``method``.
    schedule_params : dict or None, default=None
        Overrides of individual schedule fields.
    iterations_per_epoch : int or None, default=None
    random_state : int, default=0

    Attributes
    ----------
    model_ : HashingModel
    metrics_ : MetricsLog
    n_features_in_ : int
    """

    def __init__(self, method="abc", n_bits=12, hidden=(64,), epochs=50, batch_size=64, learning_rate=None,
                 momentum=0.9, weight_decay=0.004, margin=None, reg_weight=0.01, schedule=None,
                 schedule_params=None, iterations_per_epoch=None, random_state=0):
        self.method = method
        self.n_bits = n_bits
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.margin = margin
        self.reg_weight = reg_weight
        self.schedule = schedule
        self.schedule_params = schedule_params
        self.iterations_per_epoch = iterations_per_epoch
        self.random_state = random_state

    def _config(self) -> ExperimentConfig:
        arch = []
        for width in self.hidden:
            arch += [{"type": "linear", "out": int(width)}, {"type": "relu"}]
        arch += [{"type": "linear", "out": "bits"}, {"type": "batchnorm"}]
        schedule = {"kind": self.schedule, **(self.schedule_params or {})}
        if self.learning_rate is not None:
            schedule["lr_initial"] = float(self.learning_rate)
        return ExperimentConfig({
            "method": self.method,
            "bits": int(self.n_bits),
            "architecture": arch,
            "schedule": schedule,
            "loss": {"margin": self.margin, "reg_weight": float(self.reg_weight)},
            "optimizer": {"momentum": float(self.momentum), "weight_decay": float(self.weight_decay)},
            "batch_size": int(self.batch_size),
            "epochs": int(self.epochs),
            "iterations_per_epoch": self.iterations_per_epoch,
            "eval_every": max(1, int(self.epochs)),
            "seed": int(self.random_state),
        })

    def fit(self, X, y):
        """Train on features ``X`` (n_samples, n_features) and labels ``y``.

        ``y`` is either a class label per sample or a multi-label indicator
        matrix; pairs sharing a label are similar.
        """
        X, y = validate_data(self, X, y, dtype=np.float32, multi_output=True)
        # without a held-out set the logged mAP is train-vs-train
        result = train(self._config(), Dataset(X, _label_sets(y)))
        self.model_ = result.model
        self.metrics_ = result.log
        return self

    def _check(self, X):
        check_is_fitted(self, "model_")
        return validate_data(self, X, dtype=np.float32, reset=False)

    def decision_function(self, X):
        """Real-valued inputs of the binarizing layer."""
        return self.model_.preactivations(self._check(X))

    def transform(self, X):
        """0/1 code bits, shape (n_samples, n_bits)."""
        X = self._check(X)
        return self.model_.encode(X).bits()

    def encode(self, X, y=None) -> PackedCodeMatrix:
        X = self._check(X)
        return self.model_.encode(X, None if y is None else _label_sets(y))


class HammingRetriever(BaseEstimator):
    """Exact Hamming nearest neighbours over 0/1 code bits.

    Parameters
    ----------
    n_neighbors : int, default=10
    mode : {"single", "multi"} or None, default=None
        Relevance rule for :meth:`score`; None infers it from ``y``.
    """

    def __init__(self, n_neighbors=10, mode=None):
        self.n_neighbors = n_neighbors
        self.mode = mode

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.uint8)
        if np.any(X > 1):
            raise ValueError("HammingRetriever expects 0/1 code bits")
        self.n_features_in_ = X.shape[1]
        labels = None if y is None else _label_sets(y)
        self.codes_ = PackedCodeMatrix(pack_bits(X), X.shape[1], labels)
        self.index_ = RetrievalIndex(self.codes_)
        self.mode_ = self.mode or ("multi" if y is not None and np.asarray(y).ndim == 2 else "single")
        return self

    def _queries(self, X):
        check_is_fitted(self, "index_")
        X = check_array(X, dtype=np.uint8)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} bits, retriever was fitted with {self.n_features_in_}")
        return pack_bits(X)

    def kneighbors(self, X, n_neighbors=None, return_distance=True):
        ids, dists = self.index_.search(self._queries(X), n_neighbors or self.n_neighbors)
        return (dists, ids) if return_distance else ids

    def score(self, X, y):
        """Mean average precision of queries ``X`` with labels ``y`` against the fitted set."""
        queries = PackedCodeMatrix(self._queries(X), self.n_features_in_, _label_sets(y))
        return evaluate(self.codes_, queries, self.mode_)["map"]
