import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from binclamp.codes import PackedCodeMatrix, build_index, rank_all
from binclamp.evaluation import (
    RelevanceJudge,
    average_precision,
    evaluate,
    is_relevant,
    mean_average_precision,
    precision_at_k,
)
from binclamp.exceptions import DataError, DimensionError, ParameterError


def hand_ap(relevance):
    """AP by enumerating ranks one at a time."""
    hits, acc = 0, 0.0
    for j, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            acc += hits / j
    return acc / hits if hits else 0.0


def judge_for(flags):
    # query label 0; db item i relevant iff flags[i]
    return RelevanceJudge("single", [(0,)], [(0,) if f else (1,) for f in flags])


class TestRelevance:
    def test_shared_label_rule(self):
        j = RelevanceJudge("multi", [(1, 3)], [(3, 7), (2,), ()])
        assert is_relevant(j, 0, 0)
        assert not is_relevant(j, 0, 1)
        assert not is_relevant(j, 0, 2)

    def test_single_label(self):
        j = RelevanceJudge("single", [(1,)], [(1,), (2,)])
        assert [is_relevant(j, 0, i) for i in range(2)] == [True, False]

    def test_multi_mode_flips_relevance(self):
        # first labels differ, sets intersect
        q, d = [(1, 3)], [(3, 7)]
        assert not is_relevant(RelevanceJudge("single", q, d), 0, 0)
        assert is_relevant(RelevanceJudge("multi", q, d), 0, 0)

    @given(st.lists(st.frozensets(st.integers(0, 5), max_size=3), min_size=1, max_size=6))
    def test_matrix_matches_pairwise_rule_and_is_symmetric(self, sets):
        labels = [tuple(sorted(s)) for s in sets]
        j = RelevanceJudge("multi", labels, labels)
        m = j.matrix()
        assert np.array_equal(m, m.T)
        for a, b in itertools.product(range(len(labels)), repeat=2):
            assert m[a, b] == is_relevant(j, a, b)

    def test_bad_mode(self):
        with pytest.raises(ParameterError):
            RelevanceJudge("graded", [], [])


class TestAveragePrecision:
    def test_worked_case(self):
        assert average_precision([0, 1, 2], judge_for([1, 0, 1]), 0) == pytest.approx(5 / 6, abs=1e-12)

    def test_all_relevant(self):
        assert average_precision([2, 0, 1], judge_for([1, 1, 1]), 0) == 1.0

    def test_none_relevant(self):
        assert average_precision([0, 1], judge_for([0, 0]), 0) == 0.0

    def test_topn(self):
        # only ranks 1-2 scored: one hit at rank 2
        assert average_precision([1, 0, 2], judge_for([1, 0, 1]), 0, topn=2) == 0.5

    @given(st.lists(st.booleans(), min_size=1, max_size=30), st.randoms())
    def test_matches_hand_enumeration(self, flags, rnd):
        order = list(range(len(flags)))
        rnd.shuffle(order)
        got = average_precision(order, judge_for(flags), 0)
        assert got == pytest.approx(hand_ap([flags[i] for i in order]), abs=1e-12)
        assert 0.0 <= got <= 1.0

    @given(st.lists(st.booleans(), min_size=2, max_size=20), st.data())
    def test_moving_a_hit_earlier_never_hurts(self, flags, data):
        hits = [i for i, f in enumerate(flags) if f]
        if not hits or hits[0] == 0:
            return
        i = data.draw(st.sampled_from(hits))
        if i == 0 or flags[i - 1]:
            return
        swapped = list(flags)
        swapped[i - 1], swapped[i] = swapped[i], swapped[i - 1]
        assert hand_ap(swapped) >= hand_ap(flags)
        j = judge_for(flags)
        order = list(range(len(flags)))
        better = list(order)
        better[i - 1], better[i] = better[i], better[i - 1]
        assert average_precision(better, j, 0) >= average_precision(order, j, 0)

    def test_not_a_permutation(self):
        with pytest.raises(DataError):
            average_precision([0, 0, 1], judge_for([1, 0, 1]), 0)


class TestMeanAveragePrecision:
    def test_fixture(self, fixtures_dir):
        db = PackedCodeMatrix.load(fixtures_dir / "micro5_db.bnc")
        q = PackedCodeMatrix.load(fixtures_dir / "micro5_query.bnc")
        assert db.n == 5 and q.n == 1
        assert mean_average_precision(db, q) == pytest.approx(0.8333333333333334, abs=1e-9)

    def test_fixture_by_hand(self, fixtures_dir):
        db = PackedCodeMatrix.load(fixtures_dir / "micro5_db.bnc")
        q = PackedCodeMatrix.load(fixtures_dir / "micro5_query.bnc")
        ranking = [i for i, _ in rank_all(build_index(db), q.packed)]
        assert ranking == [0, 1, 2, 3, 4]
        rel = [db.labels[i][0] == q.labels[0][0] for i in ranking]
        assert rel == [True, False, True, False, False]
        assert hand_ap(rel) == (1 + 2 / 3) / 2

    def test_perfectly_separated_codes(self):
        bits = np.repeat(np.array([[0] * 8, [1] * 8, [1, 0] * 4]), 5, axis=0)
        codes = PackedCodeMatrix.from_bits(bits, np.repeat([0, 1, 2], 5))
        assert mean_average_precision(codes, codes) == 1.0
        assert mean_average_precision(codes, codes, exclude_self=True) == 1.0

    def test_matches_per_query_average_precision(self, rng):
        db = PackedCodeMatrix.from_bits(rng.integers(0, 2, (40, 10)), rng.integers(0, 3, 40))
        q = PackedCodeMatrix.from_bits(rng.integers(0, 2, (7, 10)), rng.integers(0, 4, 7))
        judge = RelevanceJudge("single", q.labels, db.labels)
        index = build_index(db)
        aps = [average_precision([i for i, _ in rank_all(index, q.packed[j])], judge, j) for j in range(q.n)]
        assert mean_average_precision(db, q) == pytest.approx(np.mean(aps), abs=1e-12)

    def test_queries_without_relevant_items_count_as_zero(self):
        db = PackedCodeMatrix.from_bits(np.eye(4, dtype=np.uint8), [0, 0, 1, 1])
        q = PackedCodeMatrix.from_bits(np.eye(4, dtype=np.uint8)[:2], [0, 9])
        assert mean_average_precision(db, q) == pytest.approx(0.5)

    def test_exclude_self(self):
        bits = np.array([[0, 0], [0, 0], [1, 1]])
        codes = PackedCodeMatrix.from_bits(bits, [0, 1, 1])
        # without exclusion every query ranks itself first
        assert mean_average_precision(codes, codes) > mean_average_precision(codes, codes, exclude_self=True)
        assert mean_average_precision(codes, codes, exclude_self=True) == pytest.approx((0 + 0.5 + 0.5) / 3)

    @pytest.mark.parametrize("seed", range(3))
    def test_random_codes_balanced_classes(self, seed):
        rng = np.random.default_rng(seed)
        db = PackedCodeMatrix.from_bits(rng.integers(0, 2, (2000, 16)), rng.integers(0, 2, 2000))
        q = PackedCodeMatrix.from_bits(rng.integers(0, 2, (200, 16)), rng.integers(0, 2, 200))
        assert mean_average_precision(db, q) == pytest.approx(0.5, abs=0.02)

    def test_precision_at_k(self):
        db = PackedCodeMatrix.from_bits(np.array([[0, 0], [0, 1], [1, 1]]), [0, 1, 0])
        q = PackedCodeMatrix.from_bits(np.array([[0, 0]]), [0])
        assert precision_at_k(db, q, k=2) == 0.5
        assert evaluate(db, q, precision_k=2)["precision_at_2"] == 0.5

    def test_k_mismatch(self):
        a = PackedCodeMatrix.from_bits(np.zeros((2, 8)), [0, 1])
        b = PackedCodeMatrix.from_bits(np.zeros((2, 12)), [0, 1])
        with pytest.raises(DimensionError):
            mean_average_precision(a, b)

    def test_deterministic(self, rng):
        db = PackedCodeMatrix.from_bits(rng.integers(0, 2, (300, 6)), rng.integers(0, 5, 300))
        assert mean_average_precision(db, db) == mean_average_precision(db, db)
