import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gas2s.evaluate import MISS, EvalQuery, compute_metrics, eval_query, rank_gold
from gas2s.kg import HEAD, TAIL, MentionTable
from gas2s.pipeline import Query

M = MentionTable.build(["x", "y", "gold", "z"], ["r"])
X, Y, GOLD, Z = range(4)


def brute_force(ranks, ks=(1, 3, 10)):
    n = len(ranks)
    mrr = sum(0.0 if r is None else 1.0 / r for r in ranks) / n
    hits = {k: sum(1 for r in ranks if r is not None and r <= k) / n for k in ks}
    return mrr, hits


def test_gold_first():
    assert rank_gold([("gold", -0.1), ("x", -1.0)], EvalQuery(0, 0, TAIL, GOLD), M) == 1


def test_filtered_candidate_removed():
    q = EvalQuery(0, 0, TAIL, GOLD, frozenset({Y}))
    assert rank_gold([("x", -1.0), ("y", -1.5), ("gold", -2.0)], q, M) == 2


def test_gold_never_generated():
    assert rank_gold([("x", -1.0), ("not an entity", -1.2)], EvalQuery(0, 0, TAIL, GOLD), M) is MISS


def test_unmatched_and_duplicate_dropped():
    cands = [("nonsense", -0.5), ("x", -1.0), ("x", -1.1), (" gold ", -2.0)]
    assert rank_gold(cands, EvalQuery(0, 0, TAIL, GOLD), M) == 2


def test_gold_in_filter_rejected():
    with pytest.raises(ValueError):
        EvalQuery(0, 0, TAIL, GOLD, frozenset({GOLD}))


def test_metrics_examples():
    r = compute_metrics([1, 1, 1])
    assert r.mrr == 1 and all(v == 1 for v in r.hits.values())
    r = compute_metrics([1, 2, 4])
    assert r.mrr == pytest.approx((1 + 0.5 + 0.25) / 3)
    assert r.hits == pytest.approx({1: 1 / 3, 3: 2 / 3, 10: 1.0})
    r = compute_metrics([MISS, MISS])
    assert r.mrr == 0 and all(v == 0 for v in r.hits.values())
    with pytest.raises(ValueError):
        compute_metrics([])


ranks = st.lists(st.one_of(st.none(), st.integers(1, 60)), min_size=1, max_size=40)


@settings(max_examples=200, deadline=None)
@given(ranks)
def test_metrics_match_definitions(rs):
    rep = compute_metrics(rs)
    mrr, hits = brute_force(rs)
    assert rep.mrr == pytest.approx(mrr)
    assert rep.hits == pytest.approx(hits)
    assert rep.hits[1] <= rep.hits[3] <= rep.hits[10]
    assert rep.hits[1] <= rep.mrr + 1e-12
    assert 0 <= rep.mrr <= 1


@settings(max_examples=100, deadline=None)
@given(st.permutations(["x", "y", "gold", "z"]), st.integers(0, 3))
def test_filter_never_worsens(order, pos):
    cands = [(s, -float(i)) for i, s in enumerate(order)]
    plain = rank_gold(cands, EvalQuery(0, 0, TAIL, GOLD), M)
    extra = list(cands)
    extra.insert(pos, ("y", -0.5))
    filtered = rank_gold(extra, EvalQuery(0, 0, TAIL, GOLD, frozenset({Y})), M)
    assert filtered <= plain


@settings(max_examples=50, deadline=None)
@given(st.lists(st.one_of(st.none(), st.integers(1, 20)), min_size=1, max_size=10), st.data())
def test_direction_decomposition(tail_ranks, data):
    head_ranks = data.draw(st.lists(st.one_of(st.none(), st.integers(1, 20)),
                                    min_size=len(tail_ranks), max_size=len(tail_ranks)))
    whole = compute_metrics(tail_ranks + head_ranks)
    assert whole.mrr == pytest.approx((compute_metrics(tail_ranks).mrr + compute_metrics(head_ranks).mrr) / 2)


def test_eval_query_filter_excludes_gold(toy):
    # (A, knows, ?) has answers B (train) and D (valid)
    q = eval_query(toy, Query(0, 0, TAIL, 1))
    assert q.gold == 1 and q.filter == {3}
    q = eval_query(toy, Query(1, 0, HEAD, 0))
    assert q.filter == frozenset()
