"""Mean average precision over exact Hamming rankings.

Rankings use the index's fixed tie rule (ascending database id), so every
number here is deterministic.  Queries with no relevant database item score
AP = 0 and still count in the mean; toolkits that drop such queries report
higher values on the same codes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codes import PackedCodeMatrix, RetrievalIndex
from .exceptions import DataError, DimensionError, ParameterError


@dataclass
class RelevanceJudge:
    """``single``: relevant iff the (first) labels are equal.
    ``multi``: relevant iff the label sets intersect."""

    mode: str
    query_labels: Sequence[tuple[int, ...]]
    db_labels: Sequence[tuple[int, ...]]

    def __post_init__(self):
        if self.mode not in ("single", "multi"):
            raise ParameterError(f"relevance mode must be 'single' or 'multi', got {self.mode!r}")

    def matrix(self) -> np.ndarray:
        """(Q, N) boolean relevance."""
        universe = sorted({v for labs in (*self.query_labels, *self.db_labels) for v in labs})
        col = {v: i for i, v in enumerate(universe)}

        def onehot(label_sets, first_only):
            out = np.zeros((len(label_sets), max(1, len(universe))), dtype=np.float32)
            for i, labs in enumerate(label_sets):
                for v in labs[:1] if first_only else labs:
                    out[i, col[v]] = 1
            return out

        single = self.mode == "single"
        return onehot(self.query_labels, single) @ onehot(self.db_labels, single).T > 0


def is_relevant(judge: RelevanceJudge, query_id: int, db_id: int) -> bool:
    q, d = judge.query_labels[query_id], judge.db_labels[db_id]
    if judge.mode == "single":
        return bool(q) and bool(d) and q[0] == d[0]
    return bool(set(q) & set(d))


def average_precision(ranking: Sequence[int], judge: RelevanceJudge, query_id: int,
                      topn: int | None = None) -> float:
    """AP = (1/R) * sum over relevant hits at rank j of precision@j; 0 when R = 0.

    With ``topn`` only the first ``topn`` ranks are scored and R counts the
    relevant items found there.
    """
    ranking = np.asarray(ranking)
    n = len(judge.db_labels)
    if ranking.shape != (n,) or not np.array_equal(np.sort(ranking), np.arange(n)):
        raise DataError("ranking must be a permutation of all database ids")
    rel = np.array([is_relevant(judge, query_id, int(i)) for i in ranking], dtype=bool)
    return _ap_from_relevance(rel[None, :], topn)[0]


def _ap_from_relevance(rel: np.ndarray, topn: int | None = None) -> np.ndarray:
    if topn is not None:
        rel = rel[:, :topn]
    hits = np.cumsum(rel, axis=1, dtype=np.float64)
    ranks = np.arange(1, rel.shape[1] + 1, dtype=np.float64)
    total = hits[:, -1] if rel.shape[1] else np.zeros(rel.shape[0])
    summed = np.sum(np.where(rel, hits / ranks, 0.0), axis=1)
    return np.divide(summed, total, out=np.zeros_like(summed), where=total > 0)


def retrieval_relevance(db: PackedCodeMatrix, queries: PackedCodeMatrix, mode: str = "single",
                        exclude_self: bool = False, batch: int = 256):
    """Yield (Q_block, N') boolean relevance in ranked order, block by block.

    ``exclude_self`` (db and queries are the same set) drops query i from
    its own ranking.
    """
    if db.k != queries.k:
        raise DimensionError(f"database codes have k={db.k}, queries k={queries.k}")
    if exclude_self and db.n != queries.n:
        raise DimensionError("exclude_self needs the query set to be the database")
    index = RetrievalIndex(db)
    for s in range(0, queries.n, batch):
        e = min(s + batch, queries.n)
        judge = RelevanceJudge(mode, queries.labels[s:e], db.labels)
        relmat = judge.matrix()
        order, _ = index.search(queries.packed[s:e], db.n)
        rel = np.take_along_axis(relmat, order, axis=1)
        if exclude_self:
            keep = order != np.arange(s, e)[:, None]
            rel = rel[keep].reshape(e - s, db.n - 1)
        yield rel


def mean_average_precision(db: PackedCodeMatrix, queries: PackedCodeMatrix, mode: str = "single",
                           topn: int | None = None, exclude_self: bool = False) -> float:
    aps = [_ap_from_relevance(rel, topn) for rel in retrieval_relevance(db, queries, mode, exclude_self)]
    return float(np.mean(np.concatenate(aps))) if aps else 0.0


def precision_at_k(db: PackedCodeMatrix, queries: PackedCodeMatrix, k: int = 500, mode: str = "single",
                   exclude_self: bool = False) -> float:
    """Mean fraction of relevant items among the first min(k, N) results."""
    return evaluate(db, queries, mode, exclude_self=exclude_self, precision_k=k)[f"precision_at_{k}"]


def evaluate(db: PackedCodeMatrix, queries: PackedCodeMatrix, mode: str = "single",
             topn: int | None = None, exclude_self: bool = False, precision_k: int = 500) -> dict:
    """mAP and precision@k in one pass over the rankings."""
    aps, precs = [], []
    for rel in retrieval_relevance(db, queries, mode, exclude_self):
        aps.append(_ap_from_relevance(rel, topn))
        top = rel[:, :precision_k]
        precs.append(top.sum(axis=1, dtype=np.float64) / max(1, top.shape[1]))
    return {
        "map": float(np.mean(np.concatenate(aps))),
        f"precision_at_{precision_k}": float(np.mean(np.concatenate(precs))),
    }
