import mpmath
import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from temporec.corpus import ItemCatalog
from temporec.metrics import (
    RecencyWeights,
    build_recency_weights,
    evaluate,
    precision_at_k,
    recall_at_k,
    recency_at_k,
    recency_value,
    top_k,
)
from temporec.protocols import EvalSplit

from oracles import naive_metrics, random_instance

# 0.3 ** (8/3) to 30 digits, evaluated independently
with mpmath.workdps(30):
    F_ZERO = float(mpmath.power(mpmath.mpf("0.3"), mpmath.mpf(8) / 3))


def catalog(first_seen):
    first_seen = np.asarray(first_seen, dtype=np.int64)
    ids = np.array([f"i{k}" for k in range(len(first_seen))], dtype=object)
    return ItemCatalog(ids, first_seen, {s: k for k, s in enumerate(ids)})


def test_recency_reference_points():
    assert F_ZERO == pytest.approx(0.0403326427, abs=1e-10)
    assert abs(recency_value(0, 0, 10) - F_ZERO) <= 1e-12
    assert abs(recency_value(5, 0, 10) - 0.3) <= 1e-12
    assert recency_value(8, 0, 10) == 1.0
    assert recency_value(10, 0, 10) == 1.0


def test_recency_degenerate_and_range():
    assert recency_value(7, 7, 7) == 1.0
    with pytest.raises(ValueError):
        recency_value(11, 0, 10)


def test_recency_continuous_at_threshold():
    gaps = [abs(recency_value(0.8 - eps, 0.0, 1.0) - 1.0) for eps in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert gaps == sorted(gaps, reverse=True)
    assert gaps[-1] < 1e-7


def test_weights_three_items():
    w = build_recency_weights(catalog([100, 150, 200])).weights
    np.testing.assert_allclose(w, [F_ZERO, 0.3, 1.0], rtol=0, atol=1e-12)


def test_weights_single_item():
    assert build_recency_weights(catalog([42])).weights.tolist() == [1.0]


@given(st.lists(st.integers(0, 10**9), min_size=1, max_size=50))
def test_weights_monotone_in_first_seen(times):
    w = build_recency_weights(catalog(times)).weights
    order = np.argsort(times, kind="stable")
    assert np.all(np.diff(w[order]) >= 0)
    assert np.all((w > 0) & (w <= 1))


def test_recall_examples():
    ranked = list(range(20))
    assert recall_at_k(ranked, [0, 3, 7, 11, 19], 20) == 1.0
    assert recall_at_k(ranked, [0, 3, 7, 40, 41], 20) == 0.6
    assert recall_at_k(ranked, [40, 41], 20) == 0.0
    with pytest.raises(ValueError):
        recall_at_k(ranked, [], 20)


def test_precision_examples():
    ranked = list(range(20))
    assert precision_at_k(ranked, [1, 2, 3, 50], 20) == 0.15
    assert precision_at_k([4, 1], [4], 1) == 1.0


def test_recency_at_k_examples():
    w = np.array([1.0, 0.3, 0.5, 1.0])
    assert recency_at_k([2, 3], [0], 2, w) == 0.0
    assert recency_at_k([0, 1, 2], [0, 1], 3, w) == pytest.approx(1.3)
    assert recency_at_k([0, 3], [0, 3], 2, w) == 2.0


def test_top_k_ties_and_masking():
    scores = np.zeros((1, 6))
    assert top_k(scores, 3)[0].tolist() == [0, 1, 2]
    excl = sp.csr_matrix(np.array([[1, 0, 1, 0, 0, 0]]))
    assert top_k(scores, 3, exclude=excl)[0].tolist() == [1, 3, 4]


@pytest.mark.parametrize("seed", range(5))
def test_evaluate_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    scores, split, w = random_instance(rng, 50, 60, integer_scores=seed % 2 == 0)
    reports = evaluate(lambda x: scores, split, [1, 5, 20], w)
    for r in reports:
        ref = naive_metrics(scores, split.inputs, split.targets, r.k, w.weights)
        assert r.recall == ref["recall"]
        assert r.precision == ref["precision"]
        assert r.recency == ref["recency"]
        assert r.recency_normalized == ref["recency_normalized"]


def test_perfect_scorer_gets_full_recall():
    rng = np.random.default_rng(1)
    _, split, w = random_instance(rng, 30, 40)
    tgt = split.target_matrix(40).toarray()
    reports = evaluate(lambda x: tgt.copy(), split, [40], w, batch_size=1000)
    assert reports[0].recall == 1.0


def test_equal_scores_rank_by_index():
    split = EvalSplit("development", "traditional", np.arange(2), [np.array([0]), np.array([], int)],
                      [np.array([1, 2]), np.array([5])], np.zeros(0, np.int64))
    r = evaluate(lambda x: np.zeros((x.shape[0], 6)), split, [2], RecencyWeights.uniform(6))[0]
    # user 0 ranks (1, 2): both hit; user 1 ranks (0, 1): miss
    assert r.recall == 0.5 and r.precision == 0.5


def test_batching_does_not_change_results():
    rng = np.random.default_rng(2)
    scores, split, w = random_instance(rng, 37, 25)

    def scorer_for(batch):
        rows = iter(range(0, 37, batch))

        def scorer(x):
            start = next(rows)
            return scores[start:start + x.shape[0]]
        return scorer

    a = evaluate(scorer_for(5), split, [3, 10], w, batch_size=5)
    b = evaluate(scorer_for(1000), split, [3, 10], w, batch_size=1000)
    assert [x.to_json() for x in a] == [y.to_json() for y in b]


def test_bad_scorer_shape():
    rng = np.random.default_rng(3)
    _, split, w = random_instance(rng, 5, 10)
    with pytest.raises(ValueError):
        evaluate(lambda x: np.zeros((x.shape[0], 9)), split, [5], w)
    with pytest.raises(ValueError):
        evaluate(lambda x: np.full((x.shape[0], 10), np.nan), split, [5], w)


@given(st.integers(0, 2**31), st.integers(1, 20))
def test_metric_ranges_and_tail_invariance(seed, k):
    rng = np.random.default_rng(seed)
    scores, split, w = random_instance(rng, 8, 30)
    reports = evaluate(lambda x: scores, split, [k], w, keep_per_user=True)[0]
    assert 0 <= reports.recall <= 1 and 0 <= reports.precision <= 1 and 0 <= reports.recency <= k
    for p, t in zip(reports.per_user["precision"], split.targets):
        assert p <= min(k, len(t)) / k + 1e-15
    # shuffle the scores of items ranked below K, keeping them below the K-th
    ranked = top_k(scores, 30, exclude=split.input_matrix(30))
    shuffled = scores.copy()
    for u in range(len(scores)):
        tail = ranked[u, k:]
        if len(tail):
            floor = scores[u, ranked[u, :k]].min() - 1.0
            shuffled[u, tail] = floor - rng.permutation(len(tail))
    again = evaluate(lambda x: shuffled, split, [k], w)[0]
    assert again.as_tuple() == reports.as_tuple()


def test_inputs_never_in_top_k():
    rng = np.random.default_rng(4)
    scores, split, _ = random_instance(rng, 20, 30)
    ranked = top_k(scores, 10, exclude=split.input_matrix(30))
    for row, inp in zip(ranked, split.inputs):
        n_free = 30 - len(inp)
        assert not set(row[: min(10, n_free)].tolist()) & set(inp.tolist())
