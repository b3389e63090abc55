import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sesrec.evaluator import (
    METRIC_NAMES,
    aggregate,
    hit_at_k,
    metrics_for_rank,
    mrr,
    ndcg_at_k,
    rank,
    rank_of_target,
)


def brute_rank(scores):
    """Sort candidates by score descending, target last among ties, and find it."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i == 0))
    return order.index(0) + 1


class TestRank:
    def test_strict_top(self):
        assert rank_of_target([5.0, 1.0, 2.0]) == 1

    def test_all_equal_pessimistic(self):
        assert rank_of_target(np.zeros(100)) == 100

    def test_duplicate_candidates(self):
        with pytest.raises(ValueError):
            rank(np.zeros(3), user=1, target=4, negatives=[5, 4])

    def test_record(self):
        r = rank([0.1, 0.9, 0.5], user=7, target=3, negatives=[8, 9])
        assert r.rank == 3 and r.user == 7

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=2, max_size=100))
    def test_brute_force_with_ties(self, scores):
        assert rank_of_target(scores) == brute_rank(scores)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=30), st.floats(0, 3))
    def test_monotone(self, scores, bump):
        r0 = rank_of_target(scores)
        better = [scores[0] + bump] + scores[1:]
        r1 = rank_of_target(better)
        assert r1 <= r0
        for name in METRIC_NAMES:
            assert metrics_for_rank(r1)[name] >= metrics_for_rank(r0)[name]


class TestMetrics:
    def test_rank_one(self):
        assert hit_at_k(1, 1) == 1 and ndcg_at_k(1, 5) == 1.0 and mrr(1) == 1.0

    def test_rank_three(self):
        assert ndcg_at_k(3, 5) == 0.5 and mrr(3) == pytest.approx(1 / 3)

    def test_rank_eleven(self):
        assert hit_at_k(11, 10) == 0 and ndcg_at_k(11, 10) == 0.0

    def test_formulae(self):
        for r in range(1, 101):
            m = metrics_for_rank(r)
            assert m["NDCG@10"] == (1 / math.log2(r + 1) if r <= 10 else 0.0)
            assert m["HIT@5"] == float(r <= 5)


class TestAggregate:
    def test_mean_mrr(self):
        res = aggregate([(1, 1), (2, 3)])
        assert res.metrics["MRR"] == pytest.approx(2 / 3)

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_bounds(self):
        rng = np.random.default_rng(0)
        res = aggregate((u, int(r)) for u, r in enumerate(rng.integers(1, 101, size=50)))
        assert all(0.0 <= v <= 1.0 for v in res.metrics.values())

    def test_outputs(self, tmp_path):
        res = aggregate([(1, 1), (2, 3)])
        res.write_json(tmp_path / "m.json")
        res.write_csv(tmp_path / "u.csv")
        assert json.loads((tmp_path / "m.json").read_text())["MRR"] == pytest.approx(2 / 3)
        lines = (tmp_path / "u.csv").read_text().splitlines()
        assert lines[0] == "user,rank," + ",".join(METRIC_NAMES)
        assert len(lines) == 3
