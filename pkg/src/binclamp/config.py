"""Experiment configuration: a YAML document with paper defaults for every key.

Schema (all keys optional; defaults shown)::

    method: abc                 # abc | scaled-tanh | dsh-reg-only
    bits: 12
    architecture: mlp           # preset name (mlp, dsh-cifar) or a layer list;
                                # the binarizing layer is appended from `method`
    schedule:
      kind: null                # null -> abc-retrieval-cifar / tanh-retrieval by method
      <field>: <value>          # any SchedulePolicy field overrides the policy
    loss:
      kind: pairwise            # pairwise | softmax
      margin: null              # null -> 2 * bits
      reg_weight: 0.01
      regularizer: true
    optimizer:
      momentum: 0.9
      weight_decay: 0.004
    batch_size: 200             # pairs per iteration (pairwise) or examples (softmax)
    epochs: 50
    iterations_per_epoch: null  # null -> policy value, else ceil(n_train / batch_size)
    eval_every: 4
    seed: 0
    dataset:
      source: synthetic         # synthetic | cifar10 | file
      classes: 4
      per_class: 125
      dim: 32
      sigma: 0.3
      multilabel: false
      seed: null                # null -> top-level seed
      train: []                 # cifar10 / file sources: paths
      test: []
      mean_subtract: null       # null -> true for cifar10, false otherwise
    evaluation:
      mode: null                # null -> multi for multi-label data, else single
      topn: null                # null -> full ranking
      precision_k: 500
    output_dir: runs/default
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .exceptions import ConfigError
from .schedules import POLICIES, SchedulePolicy, get_policy

METHODS = ("abc", "scaled-tanh", "dsh-reg-only")

ARCHITECTURES = {
    "mlp": [
        {"type": "linear", "out": 64},
        {"type": "relu"},
        {"type": "linear", "out": "bits"},
        {"type": "batchnorm"},
    ],
    # three conv-pool stages and two fully connected layers
    "dsh-cifar": [
        {"type": "conv2d", "filters": 32, "kernel": 5, "pad": 2},
        {"type": "maxpool", "window": 3, "stride": 2},
        {"type": "relu"},
        {"type": "conv2d", "filters": 32, "kernel": 5, "pad": 2},
        {"type": "relu"},
        {"type": "maxpool", "window": 3, "stride": 2},
        {"type": "conv2d", "filters": 64, "kernel": 5, "pad": 2},
        {"type": "relu"},
        {"type": "maxpool", "window": 3, "stride": 2},
        {"type": "flatten"},
        {"type": "linear", "out": 500},
        {"type": "relu"},
        {"type": "linear", "out": "bits"},
        {"type": "batchnorm"},
    ],
}

DEFAULTS = {
    "method": "abc",
    "bits": 12,
    "architecture": "mlp",
    "schedule": {"kind": None},
    "loss": {"kind": "pairwise", "margin": None, "reg_weight": 0.01, "regularizer": True},
    "optimizer": {"momentum": 0.9, "weight_decay": 0.004},
    "batch_size": 200,
    "epochs": 50,
    "iterations_per_epoch": None,
    "eval_every": 4,
    "seed": 0,
    "dataset": {
        "source": "synthetic", "classes": 4, "per_class": 125, "dim": 32, "sigma": 0.3,
        "multilabel": False, "seed": None, "train": [], "test": [], "mean_subtract": None,
    },
    "evaluation": {"mode": None, "topn": None, "precision_k": 500},
    "output_dir": "runs/default",
}


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    unknown = []
    for key, value in override.items():
        if key not in base:
            unknown.append(prefix + key)
        elif isinstance(base[key], dict) and key != "schedule":
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix + key} must be a mapping", [prefix + key])
            try:
                out[key] = _merge(base[key], value, prefix + key + ".")
            except ConfigError as exc:
                unknown.extend(exc.fields)
        elif key == "schedule":
            if not isinstance(value, dict):
                raise ConfigError("schedule must be a mapping", ["schedule"])
            out[key] = {**base[key], **value}
        else:
            out[key] = value
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}", unknown)
    return out


class ExperimentConfig:
    """Validated, fully defaulted experiment description.

    ``cfg.data`` holds the effective nested dict; attribute access reads
    top-level keys.
    """

    def __init__(self, data: dict | None = None, **overrides):
        merged = _merge(DEFAULTS, data or {})
        merged = _merge(merged, overrides) if overrides else merged
        self._raw = copy.deepcopy(merged)
        self.data = merged
        self._resolve()
        self.validate()

    def __getattr__(self, key):
        try:
            return self.__dict__["data"][key]
        except KeyError:
            raise AttributeError(key) from None

    def _resolve(self) -> None:
        d = self.data
        if d["schedule"].get("kind") is None:
            d["schedule"]["kind"] = "tanh-retrieval" if d["method"] == "scaled-tanh" else "abc-retrieval-cifar"
        if d["loss"]["margin"] is None and isinstance(d["bits"], int):
            d["loss"]["margin"] = 2 * d["bits"]
        if d["dataset"]["seed"] is None:
            d["dataset"]["seed"] = d["seed"]
        if d["dataset"]["mean_subtract"] is None:
            d["dataset"]["mean_subtract"] = d["dataset"]["source"] == "cifar10"
        if isinstance(d["architecture"], str) and d["architecture"] in ARCHITECTURES:
            d["architecture"] = copy.deepcopy(ARCHITECTURES[d["architecture"]])

    def validate(self) -> None:
        d = self.data
        bad: dict[str, str] = {}
        if d["method"] not in METHODS:
            bad["method"] = f"must be one of {', '.join(METHODS)}"
        if not isinstance(d["bits"], int) or d["bits"] < 1:
            bad["bits"] = "must be a positive integer"
        arch = d["architecture"]
        if not isinstance(arch, list) or not arch or not all(isinstance(s, dict) for s in arch):
            bad["architecture"] = f"must be a non-empty layer list or one of {', '.join(ARCHITECTURES)}"
        else:
            types = [s.get("type") for s in arch]
            if any(t in ("abc", "tanh") for t in types):
                bad["architecture"] = "binarizing layer is added from `method`; do not list it"
            elif d["method"] == "abc" and types[-1] != "batchnorm":
                bad["architecture"] = "method abc needs a batchnorm layer immediately before the ABC layer"
            linears = [s for s in arch if s.get("type") == "linear"]
            if linears and linears[-1].get("out", "bits") not in ("bits", d["bits"]):
                bad["architecture"] = f"last linear layer must output `bits` ({d['bits']}) units"
            if not linears:
                bad["architecture"] = "needs a linear code layer"
        try:
            self.policy()
        except (ConfigError, TypeError) as exc:
            bad["schedule"] = str(exc)
        loss = d["loss"]
        if loss["kind"] not in ("pairwise", "softmax"):
            bad["loss.kind"] = "must be pairwise or softmax"
        if not isinstance(loss["margin"], (int, float)) or loss["margin"] <= 0:
            bad["loss.margin"] = "must be positive"
        if not isinstance(loss["reg_weight"], (int, float)) or loss["reg_weight"] < 0:
            bad["loss.reg_weight"] = "must be >= 0"
        opt = d["optimizer"]
        if not isinstance(opt["momentum"], (int, float)) or not 0 <= opt["momentum"] < 1:
            bad["optimizer.momentum"] = "must be in [0, 1)"
        if not isinstance(opt["weight_decay"], (int, float)) or opt["weight_decay"] < 0:
            bad["optimizer.weight_decay"] = "must be >= 0"
        b = d["batch_size"]
        if not isinstance(b, int) or b < 2 or (loss["kind"] == "pairwise" and b % 2):
            bad["batch_size"] = "must be an integer >= 2 (even for pairwise loss)"
        if not isinstance(d["epochs"], int) or d["epochs"] < 0:
            bad["epochs"] = "must be a non-negative integer"
        ipe = d["iterations_per_epoch"]
        if ipe is not None and (not isinstance(ipe, int) or ipe < 1):
            bad["iterations_per_epoch"] = "must be a positive integer or null"
        if not isinstance(d["eval_every"], int) or d["eval_every"] < 1:
            bad["eval_every"] = "must be a positive integer"
        if not isinstance(d["seed"], int):
            bad["seed"] = "must be an integer"
        ds = d["dataset"]
        if ds["source"] not in ("synthetic", "cifar10", "file"):
            bad["dataset.source"] = "must be synthetic, cifar10 or file"
        elif ds["source"] != "synthetic" and not ds["train"]:
            bad["dataset.train"] = "needs at least one path"
        elif ds["source"] == "synthetic" and (ds["sigma"] <= 0 or ds["classes"] < 2):
            bad["dataset"] = "synthetic data needs sigma > 0 and at least 2 classes"
        ev = d["evaluation"]
        if ev["mode"] not in (None, "single", "multi"):
            bad["evaluation.mode"] = "must be single, multi or null"
        if ev["topn"] is not None and (not isinstance(ev["topn"], int) or ev["topn"] < 1):
            bad["evaluation.topn"] = "must be a positive integer or null"
        if bad:
            lines = "; ".join(f"{k}: {v}" for k, v in bad.items())
            raise ConfigError(f"invalid configuration: {lines}", list(bad))

    def policy(self) -> SchedulePolicy:
        sched = dict(self.data["schedule"])
        kind = sched.pop("kind")
        if kind not in POLICIES:
            raise ConfigError(f"unknown schedule kind {kind!r}", ["schedule.kind"])
        return get_policy(kind, **sched)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    def save(self, path) -> None:
        Path(path).write_text(self.to_yaml())

    @classmethod
    def from_yaml(cls, text: str, **overrides) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping at top level")
        return cls(data, **overrides)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text(), **overrides)

    def replace(self, **overrides) -> "ExperimentConfig":
        """New config with ``overrides`` applied before defaults are resolved."""
        return ExperimentConfig(self._raw, **overrides)

    @property
    def reg_weight(self) -> float:
        loss = self.data["loss"]
        return float(loss["reg_weight"]) if loss["regularizer"] else 0.0

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.data == other.data

    def __repr__(self):
        return f"ExperimentConfig(method={self.method!r}, bits={self.bits}, schedule={self.schedule['kind']!r})"
