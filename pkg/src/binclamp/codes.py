"""Bit-packed binary codes, the BNC1 file format, and exact Hamming search.

Bit ``j`` of a code lives in byte ``j // 8`` at bit position ``j % 8``
(LSB first).  Padding bits above ``k`` in the last byte are always zero, so
popcounts over whole bytes (or 64-bit words) are exact.

BNC1 layout (all integers little-endian)::

    b"BNC1" | uint32 N | uint32 k | N * ceil(k/8) packed bytes |
    per row: varint label count, then count * uint16 label ids
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import DataError, DimensionError, FormatError, ParameterError

MAGIC = b"BNC1"


def n_bytes(k: int) -> int:
    return (k + 7) // 8


def pack_bits(bits) -> np.ndarray:
    """(N, k) array of 0/1 -> (N, ceil(k/8)) uint8, LSB-first within each byte."""
    bits = np.asarray(bits)
    if bits.ndim == 1:
        bits = bits[None, :]
    return np.packbits(bits.astype(bool), axis=1, bitorder="little")


def unpack_bits(packed: np.ndarray, k: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint8)
    if packed.ndim == 1:
        packed = packed[None, :]
    return np.unpackbits(packed, axis=1, count=k, bitorder="little")


def _padding_mask(k: int) -> int:
    """Bits of the last byte that must be zero."""
    used = k % 8
    return 0 if used == 0 else (0xFF << used) & 0xFF


def _normalize_labels(labels, n: int) -> list[tuple[int, ...]]:
    if labels is None:
        return [() for _ in range(n)]
    out = []
    for lab in labels:
        if isinstance(lab, (int, np.integer)):
            out.append((int(lab),))
        else:
            out.append(tuple(int(v) for v in lab))
    return out


@dataclass(eq=False)
class PackedCodeMatrix:
    """N codes of k bits each, with a label set per code."""

    packed: np.ndarray
    k: int
    labels: list[tuple[int, ...]] | None = None

    def __post_init__(self):
        self.packed = np.ascontiguousarray(self.packed, dtype=np.uint8)
        if self.packed.ndim != 2:
            raise DimensionError(f"packed codes must be 2-D, got shape {self.packed.shape}")
        if self.k < 1:
            raise DataError("code length k must be at least 1")
        if self.packed.shape[1] != n_bytes(self.k):
            raise DimensionError(
                f"packed rows have {self.packed.shape[1]} bytes, k={self.k} needs {n_bytes(self.k)}")
        self.labels = _normalize_labels(self.labels, self.n)
        if len(self.labels) != self.n:
            raise DataError(f"{len(self.labels)} label sets for {self.n} codes")

    @property
    def n(self) -> int:
        return self.packed.shape[0]

    def __len__(self) -> int:
        return self.n

    @classmethod
    def from_bits(cls, bits, labels=None) -> "PackedCodeMatrix":
        bits = np.asarray(bits)
        if bits.ndim == 1:
            bits = bits[None, :]
        return cls(pack_bits(bits), bits.shape[1], labels)

    def bits(self) -> np.ndarray:
        return unpack_bits(self.packed, self.k)

    def padding_clean(self) -> bool:
        mask = _padding_mask(self.k)
        return mask == 0 or self.n == 0 or not np.any(self.packed[:, -1] & mask)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PackedCodeMatrix):
            return NotImplemented
        return (self.k == other.k and np.array_equal(self.packed, other.packed)
                and self.labels == other.labels)

    # -------------------------------------------------------------- BNC1 I/O

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(np.array([self.n, self.k], dtype="<u4").tobytes())
        buf.write(self.packed.tobytes())
        write_label_block(buf, self.labels)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "PackedCodeMatrix":
        if len(data) < 12 or data[:4] != MAGIC:
            raise FormatError("not a BNC1 code file (bad magic)", 0)
        n, k = (int(v) for v in np.frombuffer(data, dtype="<u4", count=2, offset=4))
        row = n_bytes(k)
        end = 12 + n * row
        if k == 0 or len(data) < end:
            raise FormatError(f"truncated code block: N={n}, k={k}", len(data))
        packed = np.frombuffer(data, dtype=np.uint8, count=n * row, offset=12).reshape(n, row)
        labels, pos = read_label_block(data, end, n)
        if pos != len(data):
            raise FormatError("trailing bytes after label block", pos)
        codes = cls(packed.copy(), k, labels)
        if not codes.padding_clean():
            raise DataError("code file has non-zero padding bits")
        return codes

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PackedCodeMatrix":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _write_varint(buf, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.write(bytes([byte | 0x80]))
        else:
            buf.write(bytes([byte]))
            return


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    shift = value = 0
    start = pos
    while True:
        if pos >= len(data):
            raise FormatError("truncated varint in label block", start)
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7
        if shift > 35:
            raise FormatError("varint too long in label block", start)


def write_label_block(buf, labels: Sequence[Sequence[int]]) -> None:
    for lab in labels:
        _write_varint(buf, len(lab))
        if any(not 0 <= v < 1 << 16 for v in lab):
            raise DataError(f"label ids must fit in 16 bits, got {lab}")
        buf.write(np.asarray(lab, dtype="<u2").tobytes())


def read_label_block(data: bytes, pos: int, n: int) -> tuple[list[tuple[int, ...]], int]:
    labels = []
    for _ in range(n):
        count, pos = _read_varint(data, pos)
        end = pos + 2 * count
        if end > len(data):
            raise FormatError("truncated label ids", pos)
        labels.append(tuple(int(v) for v in np.frombuffer(data, dtype="<u2", count=count, offset=pos)))
        pos = end
    return labels, pos


# ------------------------------------------------------------------ distances


def hamming_distance(a, b, k: int | None = None) -> int:
    """Differing bits between two packed codes (uint8 rows) of the same length."""
    a = np.asarray(a, dtype=np.uint8).ravel()
    b = np.asarray(b, dtype=np.uint8).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"codes have {a.size} and {b.size} bytes")
    if k is not None and a.size != n_bytes(k):
        raise DimensionError(f"{a.size}-byte code cannot hold k={k} bits")
    return int(np.bitwise_count(a ^ b).sum())


def _to_words(packed: np.ndarray) -> np.ndarray:
    """Zero-pad rows to a multiple of 8 bytes and view them as uint64 words."""
    n, row = packed.shape
    width = -(-row // 8) * 8
    buf = np.zeros((n, width), dtype=np.uint8)
    buf[:, :row] = packed
    return buf.view("<u8")


class RetrievalIndex:
    """Immutable exact Hamming index over a :class:`PackedCodeMatrix`.

    Results are sorted by ascending distance, ties by ascending database id.
    """

    def __init__(self, codes: PackedCodeMatrix):
        if codes.n < 1:
            raise DataError("cannot index an empty code matrix")
        if not codes.padding_clean():
            raise DataError("code matrix has non-zero padding bits")
        self.codes = codes
        self.k = codes.k
        self._words = _to_words(codes.packed)
        self._words.setflags(write=False)

    def __len__(self) -> int:
        return self.codes.n

    def _query_words(self, query) -> np.ndarray:
        q = np.asarray(query.packed if isinstance(query, PackedCodeMatrix) else query, dtype=np.uint8)
        if q.ndim == 1:
            q = q[None, :]
        if q.shape[1] != self.codes.packed.shape[1]:
            raise DimensionError(
                f"query has {q.shape[1]} bytes per code, index expects {self.codes.packed.shape[1]} (k={self.k})")
        return _to_words(q)

    def distances(self, queries) -> np.ndarray:
        """(Q, N) int32 Hamming distances."""
        qw = self._query_words(queries)
        out = np.empty((qw.shape[0], len(self)), dtype=np.int32)
        block = max(1, (1 << 22) // max(1, len(self) * self._words.shape[1]))
        for s in range(0, qw.shape[0], block):
            x = qw[s:s + block, None, :] ^ self._words[None, :, :]
            out[s:s + block] = np.bitwise_count(x).sum(axis=2, dtype=np.int32)
        return out

    def search(self, queries, topk: int) -> tuple[np.ndarray, np.ndarray]:
        """Batched top-k: (ids, distances), each (Q, min(topk, N))."""
        if topk < 1:
            raise ParameterError(f"topk must be >= 1, got {topk}")
        d = self.distances(queries)
        n = len(self)
        kk = min(topk, n)
        # distance-major, id-minor composite key makes the order total
        key = d.astype(np.int64) * n + np.arange(n, dtype=np.int64)
        if kk < n:
            part = np.argpartition(key, kk - 1, axis=1)[:, :kk]
            order = np.take_along_axis(part, np.argsort(np.take_along_axis(key, part, 1), axis=1), 1)
        else:
            order = np.argsort(key, axis=1)
        return order, np.take_along_axis(d, order, axis=1)


def build_index(codes: PackedCodeMatrix) -> RetrievalIndex:
    return RetrievalIndex(codes)


def search_topk(index: RetrievalIndex, query, topk: int) -> list[tuple[int, int]]:
    ids, dists = index.search(query, topk)
    if ids.shape[0] != 1:
        raise DimensionError(f"search_topk takes a single query, got {ids.shape[0]}")
    return [(int(i), int(d)) for i, d in zip(ids[0], dists[0])]


def rank_all(index: RetrievalIndex, query) -> list[tuple[int, int]]:
    return search_topk(index, query, len(index))

