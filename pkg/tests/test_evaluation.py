import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import map_oracle, ndcg_oracle, recall_oracle
from rme.errors import EmptyRelevant, InsufficientFolds, NoTestUsers
from rme.evaluation import (
    UserGroupSpec,
    evaluate,
    map_at,
    ndcg_at,
    rank_items,
    ranking_ndcg,
    recall_at,
    significance,
)
from rme.ingest import InteractionMatrix
from rme.model import ModelState

A, B, C, D = "ABCD"


def _state(alpha, beta) -> ModelState:
    alpha, beta = np.asarray(alpha, float), np.asarray(beta, float)
    m, n, k = len(alpha), len(beta), alpha.shape[1]
    return ModelState(alpha, beta, np.zeros((n, k)), np.zeros((n, k)), np.zeros((m, k)),
                      *(np.zeros(n),) * 4, *(np.zeros(m),) * 2)


def _liked(pairs, m, n) -> InteractionMatrix:
    users = [u for u, _ in pairs]
    items = [p for _, p in pairs]
    return InteractionMatrix.from_arrays(users, items, n_users=m, n_items=n)


# single rankings -------------------------------------------------------------


def test_recall_fixtures():
    assert recall_at([A, B], {A}, 2) == 1.0
    assert recall_at([B, A, D], {A, C}, 2) == 0.5
    assert recall_at([B, D], {A}, 2) == 0.0


def test_ndcg_fixtures():
    assert ndcg_at([A, B], {A}, 2) == 1.0
    assert ndcg_at([B, A], {A}, 2) == pytest.approx(0.6309, abs=5e-5)
    assert ndcg_at([A, B, C], {A, C}, 3) == pytest.approx(0.9197, abs=5e-5)


def test_map_fixtures():
    assert map_at([B, A, C], {A, C}, 3) == pytest.approx(0.5833, abs=5e-5)
    assert map_at([A, B, C], {A}, 3) == 1.0
    assert map_at([B, C, D], {A}, 3) == 0.0


def test_empty_relevant_raises():
    for fn in (recall_at, ndcg_at, map_at):
        with pytest.raises(EmptyRelevant):
            fn([A], set(), 1)


rankings = st.integers(1, 12).flatmap(
    lambda n: st.tuples(st.permutations(list(range(n))),
                        st.sets(st.integers(0, n - 1), min_size=1),
                        st.integers(1, n + 2))
)


@settings(max_examples=300)
@given(rankings)
def test_metrics_match_definitions(case):
    ranked, relevant, n = case
    assert recall_at(ranked, relevant, n) == recall_oracle(ranked, relevant, n)
    assert ndcg_at(ranked, relevant, n) == ndcg_oracle(ranked, relevant, n)
    assert map_at(ranked, relevant, n) == map_oracle(ranked, relevant, n)


@given(rankings, st.randoms())
def test_metrics_ignore_order_below_cutoff(case, rnd):
    ranked, relevant, n = case
    tail = ranked[n:]
    rnd.shuffle(tail)
    shuffled = ranked[:n] + tail
    for fn in (recall_at, ndcg_at, map_at):
        assert fn(shuffled, relevant, n) == fn(ranked, relevant, n)


@given(rankings)
def test_ndcg_and_map_are_one_only_for_ideal_order(case):
    ranked, relevant, n = case
    ideal = all(x in relevant for x in ranked[:min(n, len(relevant))])
    for fn in (ndcg_at, map_at):
        value = fn(ranked, relevant, n)
        assert 0.0 <= value <= 1.0 + 1e-12
        assert (abs(value - 1.0) < 1e-12) == ideal


def test_rank_items_ties_and_exclusion():
    assert rank_items(np.array([1.0, 3.0, 3.0, 0.0]), exclude=[1]).tolist() == [2, 0, 3]


# evaluate ---------------------------------------------------------------------


def test_perfect_oracle_scores_give_ones():
    m, n = 4, 6
    test_pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (3, 5)]
    truth = np.zeros((m, n))
    for u, p in test_pairs:
        truth[u, p] = 1.0
    state = _state(truth, np.eye(n))
    train = _liked([(u, 0) for u in range(m)], m, n)
    report = evaluate(state, train, _liked(test_pairs, m, n), ns=[1, 2, 5])
    assert all(v == 1.0 for v in report.overall.values())


def test_three_user_toy_matches_hand_values():
    # item scores are shared by all users: item 0 > 1 > 2 > 3 > 4
    beta = np.array([[5.0], [4.0], [3.0], [2.0], [1.0]])
    alpha = np.ones((3, 1))
    train = _liked([(0, 0), (1, 4), (2, 1)], 3, 5)
    test = _liked([(0, 2), (1, 1), (1, 3), (2, 4)], 3, 5)
    report = evaluate(_state(alpha, beta), train, test, ns=[2, 3], groups=None)
    # rankings after exclusion: u0 [1,2,3,4], u1 [0,1,2,3], u2 [0,2,3,4]
    rec3 = [recall_at([1, 2, 3, 4], {2}, 3), recall_at([0, 1, 2, 3], {1, 3}, 3), recall_at([0, 2, 3, 4], {4}, 3)]
    ndcg2 = [ndcg_at([1, 2], {2}, 2), ndcg_at([0, 1], {1, 3}, 2), 0.0]
    map3 = [map_at([1, 2, 3], {2}, 3), map_at([0, 1, 2], {1, 3}, 3), 0.0]
    assert report.value("recall", 3) == pytest.approx(np.mean(rec3), abs=1e-15)
    assert report.value("ndcg", 2) == pytest.approx(np.mean(ndcg2), abs=1e-15)
    assert report.value("map", 3) == pytest.approx(np.mean(map3), abs=1e-15)
    assert report.value("ndcg", 2) == pytest.approx((1 / math.log2(3) + 1 / math.log2(3) / (1 + 1 / math.log2(3))) / 3)


def test_valid_items_are_excluded_too():
    beta = np.array([[3.0], [2.0], [1.0]])
    state = _state(np.ones((1, 1)), beta)
    train, valid, test = _liked([(0, 0)], 1, 3), _liked([(0, 1)], 1, 3), _liked([(0, 2)], 1, 3)
    assert evaluate(state, train, test, ns=[1]).value("recall", 1) == 0.0
    assert evaluate(state, train, test, ns=[1], valid=valid).value("recall", 1) == 1.0


def test_users_without_test_items_are_skipped():
    state = _state(np.ones((3, 1)), np.array([[2.0], [1.0]]))
    report = evaluate(state, _liked([(0, 0), (1, 0), (2, 0)], 3, 2), _liked([(1, 1)], 3, 2), ns=[1])
    assert report.users.tolist() == [1] and report.value("recall", 1) == 1.0
    with pytest.raises(NoTestUsers):
        evaluate(state, _liked([(0, 0)], 3, 2), _liked([], 3, 2), ns=[1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_batched_evaluation_matches_per_user_loop(seed):
    rng = np.random.default_rng(seed)
    m, n = 12, 9
    mask = rng.random((m, n))
    train = _liked(list(zip(*np.nonzero(mask < 0.3))), m, n)
    test = _liked(list(zip(*np.nonzero(mask > 0.75))), m, n)
    if not len(test):
        return
    state = _state(rng.normal(size=(m, 2)), rng.normal(size=(n, 2)))
    report = evaluate(state, train, test, ns=[1, 3, 10], groups=None)
    liked_train = train.liked_lists()
    liked_test = test.liked_lists()
    for idx, u in enumerate(report.users):
        ranked = rank_items(state.beta @ state.alpha[u], exclude=liked_train[u]).tolist()
        assert not set(ranked) & set(liked_train[u].tolist())
        for cut in (1, 3, 10):
            rel = set(liked_test[u].tolist())
            assert report.per_user["recall", cut][idx] == pytest.approx(recall_at(ranked, rel, cut), abs=1e-12)
            assert report.per_user["ndcg", cut][idx] == pytest.approx(ndcg_at(ranked, rel, cut), abs=1e-12)
            assert report.per_user["map", cut][idx] == pytest.approx(map_at(ranked, rel, cut), abs=1e-12)


def test_ranking_ndcg_agrees_with_evaluate():
    rng = np.random.default_rng(4)
    m, n = 20, 30
    mask = rng.random((m, n))
    train = _liked(list(zip(*np.nonzero(mask < 0.2))), m, n)
    valid = _liked(list(zip(*np.nonzero(mask > 0.85))), m, n)
    state = _state(rng.normal(size=(m, 3)), rng.normal(size=(n, 3)))
    expected = evaluate(state, train, valid, ns=[100], groups=None).value("ndcg", 100)
    got = ranking_ndcg(state.alpha, state.beta, train.liked_matrix(), valid.liked_matrix(), 100)
    assert got == pytest.approx(expected, abs=1e-12)


# groups ---------------------------------------------------------------------------


def test_group_sizes_for_ten_users():
    groups = UserGroupSpec().assign(np.arange(10), np.array([5, 1, 1, 9, 3, 2, 8, 7, 4, 6]))
    assert [len(groups[g]) for g in ("cold", "warm", "active")] == [2, 6, 2]
    assert groups["cold"].tolist() == [1, 2]  # tie on activity 1 broken by user index
    assert groups["active"].tolist() == [3, 6]


@given(st.lists(st.integers(0, 20), min_size=1, max_size=60))
def test_groups_partition_users(activity):
    users = np.arange(len(activity))
    groups = UserGroupSpec().assign(users, np.array(activity))
    merged = np.sort(np.concatenate(list(groups.values())))
    assert merged.tolist() == users.tolist()


def test_report_csv_and_summary():
    state = _state(np.ones((10, 1)), np.arange(12, 0, -1.0)[:, None])
    train = _liked([(u, u) for u in range(10)], 10, 12)
    test = _liked([(u, 11 - (u % 3)) for u in range(10)], 10, 12)
    report = evaluate(state, train, test, ns=[5, 10], fold=2)
    lines = report.to_csv().splitlines()
    assert lines[0] == "fold,group,metric,N,value"
    assert len(lines) == 1 + 4 * 3 * 2
    assert lines[1].startswith("2,all,recall,5,")
    assert sum(report.group_counts().values()) == report.n_users
    assert "fold 2: 10 users (cold=2, warm=6, active=2)" in report.summary()


# significance -----------------------------------------------------------------------


def test_identical_folds_not_significant():
    sig = significance([0.3, 0.4, 0.5], [0.3, 0.4, 0.5])
    assert (sig.t, sig.p, sig.significant) == (0.0, 1.0, False)


def test_zero_variance_separation_is_significant():
    sig = significance([0.5, 0.5, 0.5], [0.1, 0.1, 0.1])
    assert sig.significant and sig.p == 0.0 and sig.t > 0


def test_needs_two_folds():
    with pytest.raises(InsufficientFolds):
        significance([0.1], [0.2, 0.3])


def _pooled_t_oracle(a, b):
    """Pooled t statistic and two-sided p from the regularized incomplete beta function."""
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1)
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1)
    sp2 = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
    t = (ma - mb) / math.sqrt(sp2 * (1 / na + 1 / nb))
    df = na + nb - 2
    p = mpmath.betainc(df / 2, 0.5, 0, df / (df + t * t), regularized=True)
    return t, float(p)


@pytest.mark.parametrize("seed", range(10))
def test_significance_matches_reference(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.30, 0.02, size=5).tolist()
    b = rng.normal(0.31, 0.02, size=5).tolist()
    t, p = _pooled_t_oracle(a, b)
    sig = significance(a, b)
    assert sig.t == pytest.approx(t, rel=1e-10)
    assert abs(sig.p - p) <= 1e-6
    assert sig.significant == (p < 0.05)
