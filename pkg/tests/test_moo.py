import numpy as np
import pytest
from hypothesis import given, strategies as st

from temporec.moo import (
    ParetoSet,
    combine,
    frank_wolfe_min_norm,
    front_verdict,
    min_norm_2,
    normalize_gradient,
    pareto_dominates,
    qcop_min_norm,
)

from oracles import brute_front


def test_normalize_gradient():
    g = np.array([2.0, 4.0])
    assert normalize_gradient(g, 1.0).tolist() == [2.0, 4.0]
    assert normalize_gradient(g, 2.0).tolist() == [1.0, 2.0]
    assert np.linalg.norm(normalize_gradient(g, 4.0)) == pytest.approx(np.linalg.norm(g) / 4)
    with pytest.raises(ValueError):
        normalize_gradient(g, 0.0)


def test_orthogonal_unit_pair():
    a = qcop_min_norm([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    assert a.tolist() == [0.5, 0.5]
    assert combine([np.array([1.0, 0.0]), np.array([0.0, 1.0])], a).tolist() == [0.5, 0.5]


def test_closed_form_stationary_point():
    # minimize 4a^2 + (1 - a)^2 -> a = 0.2
    assert qcop_min_norm([np.array([2.0, 0.0]), np.array([0.0, 1.0])])[0] == pytest.approx(0.2, abs=1e-15)


def test_identical_gradients():
    g = np.array([0.3, -1.2, 2.0])
    a = qcop_min_norm([g, g.copy()])
    assert a.tolist() == [0.5, 0.5]
    np.testing.assert_allclose(combine([g, g], a), g, rtol=1e-15)


def test_opposing_gradients_cancel():
    g = np.array([1.0, 2.0, -3.0])
    v = combine([g, -g], qcop_min_norm([g, -g]))
    assert np.allclose(v, 0.0, atol=1e-15)


def test_single_gradient():
    assert qcop_min_norm([np.ones(3)]).tolist() == [1.0]


@given(st.integers(0, 2**31), st.integers(2, 4), st.integers(2, 12))
def test_min_norm_properties(seed, n, dim):
    rng = np.random.default_rng(seed)
    grads = [rng.normal(size=dim) * rng.uniform(0.1, 10) for _ in range(n)]
    alpha = qcop_min_norm(grads)
    assert np.all(alpha >= 0) and alpha.sum() == pytest.approx(1.0, abs=1e-12)
    v = combine(grads, alpha)
    vv = float(v @ v)
    for g in grads:
        assert np.linalg.norm(v) <= np.linalg.norm(g) + 1e-12
        assert float(v @ g) >= vv - 1e-9


@given(st.integers(0, 2**31))
def test_analytic_pair_locally_optimal(seed):
    rng = np.random.default_rng(seed)
    g1, g2 = rng.normal(size=5), rng.normal(size=5)
    a = min_norm_2(g1, g2)
    base = np.linalg.norm(a * g1 + (1 - a) * g2)
    for d in (-1e-3, 1e-3):
        b = a + d
        if 0 <= b <= 1:
            assert np.linalg.norm(b * g1 + (1 - b) * g2) >= base - 1e-15


@given(st.integers(0, 2**31))
def test_pair_analytic_equals_iterative(seed):
    rng = np.random.default_rng(seed)
    g = [rng.normal(size=6), rng.normal(size=6)]
    a = qcop_min_norm(g)
    b = qcop_min_norm(g, force_iterative=True)
    assert abs(a[0] - b[0]) <= 1e-6


def test_frank_wolfe_on_known_triangle():
    # vertices (1,0), (0,1), (-1,-1) surround the origin
    pts = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    alpha = frank_wolfe_min_norm(pts @ pts.T)
    np.testing.assert_allclose(alpha @ pts, 0.0, atol=1e-12)
    np.testing.assert_allclose(alpha, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_solver_rejects_ragged():
    with pytest.raises(ValueError):
        qcop_min_norm([np.ones(2), np.ones(3)])
    with pytest.raises(ValueError):
        qcop_min_norm([])


def test_dominance_examples():
    assert pareto_dominates((0.13, 0.47), (0.11, 0.23))
    assert not pareto_dominates((1, 0), (0, 1)) and not pareto_dominates((0, 1), (1, 0))
    assert not pareto_dominates((0.5, 0.5), (0.5, 0.5))


def test_single_point_set():
    s = ParetoSet()
    assert s.update((0.2, 0.3), 1)
    assert len(s) == 1


def test_dominated_insert_is_noop():
    s = ParetoSet()
    s.update((0.5, 0.5), 1)
    assert not s.update((0.4, 0.5), 2)
    assert s.points() == [(0.5, 0.5)]


def test_dominating_insert_evicts():
    s = ParetoSet()
    for e, m in enumerate([(0.1, 0.9), (0.5, 0.5), (0.4, 0.45), (0.9, 0.1)]):
        s.update(m, e)
    s.update((0.6, 0.6), 9)
    assert sorted(s.points()) == [(0.1, 0.9), (0.6, 0.6), (0.9, 0.1)]


def test_best_prefers_earliest_tie():
    s = ParetoSet()
    s.update((0.5, 0.1), 3)
    s.update((0.5, 0.1), 7)
    s.update((0.2, 0.9), 8)
    assert s.best(0).epoch == 3 and s.best(1).epoch == 8
    with pytest.raises(ValueError):
        ParetoSet().best()


@given(st.integers(0, 2**31), st.sampled_from([2, 3]), st.integers(1, 40))
def test_incremental_matches_brute_force(seed, dims, length):
    rng = np.random.default_rng(seed)
    # coarse grid values make ties and duplicates common
    history = [tuple(rng.integers(0, 5, dims) / 4) for _ in range(length)]
    s = ParetoSet()
    for e, m in enumerate(history):
        s.update(m, e)
    assert sorted(e.epoch for e in s) == brute_front(history)


def test_front_verdicts():
    assert front_verdict([(0.13, 0.47)], [(0.11, 0.23)]) == "A dominates B"
    assert front_verdict([(0.11, 0.23)], [(0.13, 0.47)]) == "B dominates A"
    same = [(0.2, 0.4), (0.3, 0.1)]
    assert front_verdict(same, list(same)) == "neither"
    assert front_verdict([(1, 0)], [(0, 1)]) == "neither"
    with pytest.raises(ValueError):
        front_verdict([], [(0, 1)])


def test_lopsided_pair_keeps_small_weight_accurate():
    rng = np.random.default_rng(334)
    g = [rng.normal(size=30), 1000 * rng.normal(size=30)]
    alpha = qcop_min_norm(g)
    v = combine(g, alpha)
    assert alpha[1] < 1e-2
    assert min(float(v @ gj) for gj in g) >= float(v @ v) - 1e-9
