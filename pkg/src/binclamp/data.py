"""Datasets: CIFAR-10 binary batches, seeded synthetic clusters, pair sampling.

CIFAR-10 binary record (3073 bytes)::

    1 label byte (0-9) | 1024 R | 1024 G | 1024 B   (each plane row-major 32x32)

Feature container ``BNF1`` (little-endian), the dataset counterpart of the
BNC1 code file::

    b"BNF1" | uint32 N | uint32 ndim | ndim * uint32 dims |
    N * prod(dims) float32 | label block (as in BNC1)
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .codes import read_label_block, write_label_block
from .exceptions import DataError, FormatError, ParameterError

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
FEATURE_MAGIC = b"BNF1"


@dataclass
class LabeledExample:
    features: np.ndarray
    labels: tuple[int, ...]


@dataclass
class Dataset:
    """Stacked features (N, ...) and one label set per example."""

    features: np.ndarray
    labels: list[tuple[int, ...]]
    _groups: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.labels = [tuple(int(v) for v in ((lab,) if np.isscalar(lab) else lab)) for lab in self.labels]
        if len(self.labels) != len(self.features):
            raise DataError(f"{len(self.labels)} label sets for {len(self.features)} examples")

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, i) -> LabeledExample:
        return LabeledExample(self.features[i], self.labels[i])

    def __iter__(self) -> Iterator[LabeledExample]:
        return (self[i] for i in range(len(self)))

    @property
    def multilabel(self) -> bool:
        return any(len(lab) != 1 for lab in self.labels)

    def primary_labels(self) -> np.ndarray:
        if self.multilabel:
            raise DataError("dataset is multi-label; no single label per example")
        return np.array([lab[0] for lab in self.labels], dtype=np.int64)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], [self.labels[i] for i in idx])


# ---------------------------------------------------------------- CIFAR-10


def parse_cifar10_binary(data: bytes) -> Dataset:
    """Decode concatenated CIFAR-10 records; pixels are scaled to [0, 1]."""
    data = bytes(data)
    if len(data) % CIFAR_RECORD:
        whole = len(data) // CIFAR_RECORD * CIFAR_RECORD
        raise FormatError(
            f"CIFAR-10 data length {len(data)} is not a multiple of {CIFAR_RECORD}; "
            f"trailing partial record", whole)
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0]
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"record {i} has label byte {labels[i]} (expected 0-9)", i * CIFAR_RECORD)
    pixels = raw[:, 1:].reshape(-1, *CIFAR_SHAPE).astype(np.float32) / np.float32(255)
    return Dataset(pixels, [(int(v),) for v in labels])


def serialize_cifar10_binary(dataset: Dataset) -> bytes:
    feats = np.asarray(dataset.features)
    if feats.shape[1:] != CIFAR_SHAPE:
        raise DataError(f"CIFAR-10 records need features of shape {CIFAR_SHAPE}, got {feats.shape[1:]}")
    labels = dataset.primary_labels()
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise DataError("CIFAR-10 labels must be 0-9")
    out = np.empty((len(dataset), CIFAR_RECORD), dtype=np.uint8)
    out[:, 0] = labels
    out[:, 1:] = np.rint(feats.reshape(len(dataset), -1) * 255).clip(0, 255)
    return out.tobytes()


def load_cifar10(paths: Sequence[str | Path]) -> Dataset:
    parts = [parse_cifar10_binary(Path(p).read_bytes()) for p in paths]
    return Dataset(np.concatenate([p.features for p in parts]), [lab for p in parts for lab in p.labels])


# ---------------------------------------------------------------- feature container


def write_features(dataset: Dataset) -> bytes:
    feats = np.ascontiguousarray(dataset.features, dtype="<f4")
    buf = io.BytesIO()
    buf.write(FEATURE_MAGIC)
    buf.write(np.array([len(dataset), feats.ndim - 1, *feats.shape[1:]], dtype="<u4").tobytes())
    buf.write(feats.tobytes())
    write_label_block(buf, dataset.labels)
    return buf.getvalue()


def read_features(data: bytes) -> Dataset:
    if data[:4] != FEATURE_MAGIC:
        raise FormatError("not a BNF1 feature file (bad magic)", 0)
    n, ndim = (int(v) for v in np.frombuffer(data, dtype="<u4", count=2, offset=4))
    dims = tuple(int(v) for v in np.frombuffer(data, dtype="<u4", count=ndim, offset=12))
    start = 12 + 4 * ndim
    count = n * int(np.prod(dims, dtype=np.int64))
    end = start + 4 * count
    if len(data) < end:
        raise FormatError("truncated feature block", len(data))
    feats = np.frombuffer(data, dtype="<f4", count=count, offset=start).reshape(n, *dims).astype(np.float32)
    labels, pos = read_label_block(data, end, n)
    if pos != len(data):
        raise FormatError("trailing bytes after label block", pos)
    return Dataset(feats, labels)


def load_dataset_file(path: str | Path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:4] == FEATURE_MAGIC:
        return read_features(data)
    return parse_cifar10_binary(data)


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 4
    per_class: int = 125
    dim: int = 32
    sigma: float = 0.3
    seed: int = 0
    multilabel: bool = False
    radius: float = 1.0
    test_fraction: float = 0.2


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Gaussian clusters around class means on a sphere; seeded 80/20 split.

    In the multi-label variant every example carries 1-3 distinct labels and
    sits around the normalized sum of their means.
    """
    if spec.classes < 1 or spec.per_class < 1 or spec.dim < 1:
        raise ParameterError(f"degenerate synthetic spec: {spec}")
    if spec.sigma < 0:
        raise ParameterError(f"sigma must be non-negative, got {spec.sigma}")
    if not 0 < spec.test_fraction < 1:
        raise ParameterError(f"test_fraction must be in (0, 1), got {spec.test_fraction}")
    rng = np.random.default_rng(spec.seed)
    means = rng.standard_normal((spec.classes, spec.dim))
    means *= spec.radius / np.linalg.norm(means, axis=1, keepdims=True)
    n = spec.classes * spec.per_class

    if spec.multilabel:
        labels = []
        centers = np.empty((n, spec.dim))
        for i in range(n):
            primary = i // spec.per_class
            extra_count = int(rng.integers(0, min(3, spec.classes)))
            others = [c for c in range(spec.classes) if c != primary]
            extra = rng.choice(others, size=extra_count, replace=False) if extra_count else []
            labs = tuple(sorted({primary, *map(int, extra)}))
            labels.append(labs)
            c = means[list(labs)].sum(axis=0)
            centers[i] = c * spec.radius / max(np.linalg.norm(c), 1e-12)
    else:
        labels = [(i // spec.per_class,) for i in range(n)]
        centers = np.repeat(means, spec.per_class, axis=0)

    feats = (centers + spec.sigma * rng.standard_normal((n, spec.dim))).astype(np.float32)
    order = rng.permutation(n)
    n_test = int(round(n * spec.test_fraction))
    train_idx, test_idx = np.sort(order[n_test:]), np.sort(order[:n_test])
    full = Dataset(feats, labels)
    return full.subset(train_idx), full.subset(test_idx)


# ---------------------------------------------------------------- pair sampling


def _class_groups(dataset: Dataset):
    if dataset._groups is None:
        y = dataset.primary_labels()
        order = np.argsort(y, kind="stable")
        classes, start, size = np.unique(y[order], return_index=True, return_counts=True)
        pos = np.empty(len(y), dtype=np.int64)
        pos[order] = np.arange(len(y))
        cls_of = np.searchsorted(classes, y)
        dataset._groups = (order, start, size, pos, cls_of)
    return dataset._groups


def sample_pairs(dataset: Dataset, batch_size: int, rng: np.random.Generator):
    """``batch_size // 2`` similar and ``batch_size // 2`` dissimilar index pairs.

    Anchors are uniform over examples; partners are uniform over the
    examples similar (resp. dissimilar) to the anchor, never the anchor
    itself.  Returns (left_idx, right_idx, similar) with the similar pairs
    first.
    """
    if batch_size < 2 or batch_size % 2:
        raise ParameterError(f"pair batch size must be even and >= 2, got {batch_size}")
    half = batch_size // 2
    if dataset.multilabel:
        return _sample_pairs_multilabel(dataset, half, rng)

    order, start, size, pos, cls_of = _class_groups(dataset)
    n = len(dataset)
    if len(size) < 2:
        raise DataError("pair sampling needs at least two classes for dissimilar pairs")
    if size.max() < 2:
        raise DataError("pair sampling needs a class with at least two examples for similar pairs")

    # similar: anchors drawn from classes that have a partner
    eligible = np.flatnonzero(size[cls_of] >= 2)
    a_sim = eligible[rng.integers(len(eligible), size=half)]
    c = cls_of[a_sim]
    u = rng.integers(size[c] - 1)
    off = pos[a_sim] - start[c]
    p_sim = order[start[c] + u + (u >= off)]

    a_dis = rng.integers(n, size=half)
    c = cls_of[a_dis]
    u = rng.integers(n - size[c])
    p_dis = order[np.where(u < start[c], u, u + size[c])]

    left = np.concatenate([a_sim, a_dis])
    right = np.concatenate([p_sim, p_dis])
    similar = np.concatenate([np.ones(half, bool), np.zeros(half, bool)])
    return left, right, similar


def _sample_pairs_multilabel(dataset: Dataset, half: int, rng: np.random.Generator, max_rounds: int = 1000):
    sets = [frozenset(lab) for lab in dataset.labels]
    n = len(dataset)
    sim_l, sim_r, dis_l, dis_r = [], [], [], []
    for _ in range(max_rounds):
        a = rng.integers(n, size=4 * half)
        b = rng.integers(n - 1, size=4 * half)
        b = b + (b >= a)
        for i, j in zip(a.tolist(), b.tolist()):
            if sets[i] & sets[j]:
                if len(sim_l) < half:
                    sim_l.append(i), sim_r.append(j)
            elif len(dis_l) < half:
                dis_l.append(i), dis_r.append(j)
        if len(sim_l) == half and len(dis_l) == half:
            left = np.array(sim_l + dis_l)
            right = np.array(sim_r + dis_r)
            return left, right, np.arange(2 * half) < half
    raise DataError("could not draw enough similar and dissimilar multi-label pairs")
