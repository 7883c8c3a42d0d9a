"""Training loop: network + loss + schedules + SGD, with per-epoch metrics.

A run is fully determined by (config, seed).  The metrics CSV has the fixed
header ``epoch,iteration,r,alpha,lr,loss,map``; each row describes one
epoch, keyed by its 0-based index and the global index of its last
iteration, with the schedule values in effect at that iteration.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import code_bits
from .autograd import Tensor, backward, take_rows
from .codes import PackedCodeMatrix, pack_bits
from .config import ExperimentConfig
from .data import Dataset, SyntheticSpec, generate_synthetic, load_dataset_file, load_cifar10, sample_pairs
from .evaluation import evaluate
from .exceptions import ConfigError, DataError, DivergenceError, FormatError
from .losses import PairBatch, pairwise_loss, softmax_cross_entropy
from .nn import ABC, Identity, Linear, ScaledTanh, Sequential, build_network
from .optim import SGD
from .schedules import state_at

logger = logging.getLogger(__name__)

CSV_HEADER = ("epoch", "iteration", "r", "alpha", "lr", "loss", "map")


@dataclass
class MetricsRecord:
    epoch: int
    iteration: int
    r: float
    alpha: float
    lr: float
    loss: float
    map: float | None = None


@dataclass
class MetricsLog:
    records: list[MetricsRecord] = field(default_factory=list)

    def append(self, rec: MetricsRecord) -> None:
        if self.records and (rec.epoch, rec.iteration) <= (self.records[-1].epoch, self.records[-1].iteration):
            raise ValueError("metrics records must have strictly increasing (epoch, iteration)")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(CSV_HEADER) + "\n")
        for r in self.records:
            cells = [str(r.epoch), str(r.iteration), repr(r.r), repr(r.alpha), repr(r.lr), repr(r.loss),
                     "" if r.map is None else repr(r.map)]
            out.write(",".join(cells) + "\n")
        return out.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, source: str = "<csv>") -> "MetricsLog":
        lines = text.splitlines()
        if not lines or tuple(lines[0].strip().split(",")) != CSV_HEADER:
            raise FormatError(f"{source}:1: expected header {','.join(CSV_HEADER)}")
        log = cls()
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            cells = line.split(",")
            if len(cells) != len(CSV_HEADER):
                raise FormatError(f"{source}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(cells)}")
            try:
                rec = MetricsRecord(int(cells[0]), int(cells[1]), float(cells[2]), float(cells[3]),
                                    float(cells[4]), float(cells[5]), float(cells[6]) if cells[6] else None)
                log.append(rec)
            except ValueError as exc:
                raise FormatError(f"{source}:{lineno}: {exc}") from None
        return log


class HashingModel:
    """A trained network plus what is needed to turn inputs into codes."""

    def __init__(self, config: ExperimentConfig, network: Sequential, input_shape, input_mean=None):
        self.config = config
        self.network = network
        self.input_shape = tuple(int(d) for d in input_shape)
        self.input_mean = None if input_mean is None else np.asarray(input_mean, dtype=np.float32)
        self.code_layer = network.code_layer

    @property
    def method(self) -> str:
        return self.config.method

    @property
    def bits(self) -> int:
        return self.config.bits

    def prepare(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float32)
        if x.shape[1:] != self.input_shape:
            raise DataError(f"model expects inputs of shape {self.input_shape}, got {x.shape[1:]}")
        return x - self.input_mean if self.input_mean is not None else x

    def preactivations(self, features, batch: int = 1024) -> np.ndarray:
        """Inputs of the binarizing layer (post batch norm), eval mode."""
        self.network.eval()
        x = self.prepare(features)
        outs = [self.network.forward_until(Tensor(x[s:s + batch]), self.code_layer).data
                for s in range(0, len(x), batch)]
        return np.concatenate(outs) if outs else np.zeros((0, self.bits), dtype=np.float32)

    def encode(self, features, labels=None) -> PackedCodeMatrix:
        """True binary codes: ABC at r = 0, sign with sgn(0) = +1 otherwise."""
        a = self.preactivations(features)
        if a.shape[0] == 0:
            raise DataError("cannot encode an empty input set")
        return PackedCodeMatrix(pack_bits(code_bits(a, self.method)), self.bits, labels)

    def encode_dataset(self, dataset: Dataset) -> PackedCodeMatrix:
        return self.encode(dataset.features, dataset.labels)

    def save(self, path) -> None:
        arrays = {f"param/{k}": v for k, v in self.network.state_arrays().items()}
        meta = {"config": self.config.data, "raw_config": self.config._raw, "input_shape": list(self.input_shape)}
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        if self.input_mean is not None:
            arrays["input_mean"] = self.input_mean
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "HashingModel":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
            mean = z["input_mean"] if "input_mean" in z.files else None
        config = ExperimentConfig(meta["raw_config"])
        network = build_model(config, tuple(meta["input_shape"]), np.random.default_rng(0),
                              n_classes=_head_width(params, config))
        network.load_state_arrays(params)
        return cls(config, network, meta["input_shape"], mean)


def _head_width(params, config) -> int | None:
    if config.loss["kind"] != "softmax":
        return None
    last = max(int(k.split(".")[0]) for k in params)
    return int(params[f"{last}.1"].shape[0])


def build_model(config: ExperimentConfig, input_shape, rng, n_classes: int | None = None) -> Sequential:
    arch = [dict(s, out=config.bits) if s.get("type") == "linear" and s.get("out", "bits") == "bits" else s
            for s in config.architecture]
    net = build_network(arch, input_shape, rng)
    out_dim = _output_width(net)
    if out_dim != config.bits:
        raise ConfigError(f"architecture emits {out_dim} units, bits is {config.bits}", ["architecture"])
    binarizer = {"abc": ABC, "scaled-tanh": ScaledTanh, "dsh-reg-only": Identity}[config.method]()
    net.code_layer = len(net.layers)
    net.layers.append(binarizer)
    if config.loss["kind"] == "softmax":
        if n_classes is None:
            raise ConfigError("softmax loss needs the number of classes", ["loss.kind"])
        net.layers.append(Linear(config.bits, n_classes, rng=rng))
    return net


def _output_width(net: Sequential) -> int:
    for layer in reversed(net.layers):
        if isinstance(layer, Linear):
            return layer.weight.shape[1]
    raise ConfigError("architecture has no linear layer", ["architecture"])


def load_data(config: ExperimentConfig) -> tuple[Dataset, Dataset | None]:
    ds = config.dataset
    if ds["source"] == "synthetic":
        spec = SyntheticSpec(classes=ds["classes"], per_class=ds["per_class"], dim=ds["dim"],
                             sigma=float(ds["sigma"]), seed=ds["seed"], multilabel=ds["multilabel"])
        return generate_synthetic(spec)
    loader = load_cifar10 if ds["source"] == "cifar10" else _load_files
    train = loader(ds["train"])
    test = loader(ds["test"]) if ds["test"] else None
    return train, test


def _load_files(paths) -> Dataset:
    parts = [load_dataset_file(p) for p in paths]
    return Dataset(np.concatenate([p.features for p in parts]), [lab for p in parts for lab in p.labels])


@dataclass
class TrainResult:
    model: HashingModel
    log: MetricsLog


def evaluate_model(model: HashingModel, train: Dataset, test: Dataset | None, config: ExperimentConfig) -> dict:
    """Test queries against the training set as database (or train vs itself)."""
    ev = config.evaluation
    db = model.encode_dataset(train)
    mode = ev["mode"] or ("multi" if train.multilabel else "single")
    if test is None:
        return evaluate(db, db, mode, ev["topn"], exclude_self=True, precision_k=ev["precision_k"])
    return evaluate(db, model.encode_dataset(test), mode, ev["topn"], precision_k=ev["precision_k"])


def train(config: ExperimentConfig, train_set: Dataset, test_set: Dataset | None = None) -> TrainResult:
    if len(train_set) == 0:
        raise DataError("training set is empty")
    rng = np.random.default_rng(config.seed)
    init_rng, batch_rng = rng.spawn(2)
    policy = config.policy()
    softmax = config.loss["kind"] == "softmax"
    input_shape = train_set.features.shape[1:]
    n_classes = None
    if softmax:
        y_all = train_set.primary_labels()
        n_classes = int(y_all.max()) + 1

    network = build_model(config, input_shape, init_rng, n_classes)
    mean = train_set.features.mean(axis=0).astype(np.float32) if config.dataset["mean_subtract"] else None
    if mean is not None and mean.ndim == 3:
        mean = np.broadcast_to(mean.mean(axis=(1, 2), keepdims=True), mean.shape).copy()
    model = HashingModel(config, network, input_shape, mean)
    x_all = model.prepare(train_set.features)

    binarizer = network[model.code_layer]
    opt = SGD(network.parameters(), config.optimizer["momentum"], config.optimizer["weight_decay"])
    b = config.batch_size
    ipe = config.iterations_per_epoch or policy.iterations_per_epoch or math.ceil(len(train_set) / b)
    margin, reg = float(config.loss["margin"]), config.reg_weight
    log = MetricsLog()

    for epoch in range(config.epochs):
        network.train()
        total = 0.0
        for it in range(ipe):
            i = epoch * ipe + it
            st = state_at(policy, epoch, i)
            if isinstance(binarizer, ABC):
                binarizer.r = st.r
            elif isinstance(binarizer, ScaledTanh):
                binarizer.alpha = st.alpha

            if softmax:
                idx = batch_rng.integers(len(train_set), size=b)
                loss = softmax_cross_entropy(network(Tensor(x_all[idx])), y_all[idx])
            else:
                left, right, similar = sample_pairs(train_set, b, batch_rng)
                out = network(Tensor(x_all[np.concatenate([left, right])]))
                pairs = PairBatch(take_rows(out, 0, b), take_rows(out, b, 2 * b), similar)
                loss = pairwise_loss(pairs, margin, reg)

            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"loss became non-finite at iteration {i} (epoch {epoch}, r={st.r}, alpha={st.alpha}, lr={st.lr})", i)
            opt.zero_grad()
            backward(loss)
            opt.step(st.lr)
            total += value

        rec = MetricsRecord(epoch, i, st.r, st.alpha, st.lr, total / ipe)
        last = epoch == config.epochs - 1
        if (epoch + 1) % config.eval_every == 0 or last:
            rec.map = evaluate_model(model, train_set, test_set, config)["map"]
        log.append(rec)
        logger.info("epoch %d  loss %.5f  r %.4g  alpha %.4g  lr %.3g  map %s",
                    epoch, rec.loss, rec.r, rec.alpha, rec.lr, rec.map)
        if not all(np.all(np.isfinite(p.data)) for p in network.parameters()):
            raise DivergenceError(f"parameters became non-finite in epoch {epoch} (r={st.r}, alpha={st.alpha})", i)

    network.eval()
    return TrainResult(model, log)
