import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctxrec._kernels import cd_sweep
from ctxrec.baselines import (collapse_context, fit_slim_weights, linear_scores, pearson_similarity,
                              slim_objective)
from ctxrec.core import ContextSchema, RatingTable
from ctxrec.engine import HyperParams, fit

from _oracles import numeric_gradient, relative_error
from conftest import random_table


def _table(rows, schema=None):
    """Rows of (user, item, rating) with an empty context."""
    schema = schema or ContextSchema()
    users = sorted({r[0] for r in rows}, key=lambda x: [r[0] for r in rows].index(x))
    items = sorted({r[1] for r in rows}, key=lambda x: [r[1] for r in rows].index(x))
    return RatingTable.build(schema, users, items, [users.index(r[0]) for r in rows],
                             [items.index(r[1]) for r in rows], [r[2] for r in rows], np.zeros((len(rows), 0)))


# -- collapse -----------------------------------------------------------------

def test_collapse_table2(example_table):
    m = collapse_context(example_table)
    assert list(zip(m.users.tolist(), m.items.tolist(), m.ratings.tolist())) == [(0, 0, 3.5), (1, 1, 3.0)]


def test_collapse_unique_pairs_is_identity():
    t = _table([("a", "x", 4), ("b", "y", 2), ("a", "y", 1)])
    m = collapse_context(t)
    assert m.ratings.tolist() == [4, 2, 1]


def test_collapse_empty(example_table):
    assert len(collapse_context(example_table.subset([]))) == 0


# -- averages -----------------------------------------------------------------

def test_useravg(example_table):
    assert fit("useravg", example_table).predict(0, 1, example_table.situation(0)) == 3.5


def test_itemavg(example_table):
    assert fit("itemavg", example_table).predict(1, 1, example_table.situation(0)) == 3.0


def test_useritemavg_raw_score(example_table):
    m = fit("useritemavg", example_table)
    assert m.score([0], [0], [example_table.situation(0).active])[0] == 3.75


def test_itemcontextavg_single_match(example_table):
    m = fit("itemcontextavg", example_table)
    sit = example_table.schema.situation({"Time": "Weekend", "Location": "Home"})
    assert m.predict(0, 0, sit) == 4.0


def test_usercontextavg(example_table):
    m = fit("usercontextavg", example_table)
    sit = example_table.schema.situation({"Time": "Weekday", "Location": "Work"})
    assert m.predict(1, 1, sit) == 2.0
    # unseen (user, situation) falls back to the user mean
    assert m.predict(1, 1, example_table.schema.all_na()) == 3.0


def test_contextavg_unseen_situation_falls_back_to_mean(example_table):
    m = fit("contextavg", example_table)
    assert m.predict(0, 0, example_table.schema.all_na()) == 3.25
    assert m.predict(0, 0, example_table.situation(0)) == 3.0


def test_averages_cold_user_and_item(example_table):
    for alg in ["useravg", "itemavg", "useritemavg", "usercontextavg", "itemcontextavg"]:
        m = fit(alg, example_table)
        assert m.predict(7, 9, example_table.situation(0)) == 3.25


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), perm=st.integers(0, 1000))
def test_averages_are_permutation_invariant(seed, perm):
    t = random_table(seed, 4, 4, 30)
    p = np.random.default_rng(perm).permutation(len(t))
    for alg in ["useritemavg", "contextavg", "usercontextavg"]:
        a, b = fit(alg, t), fit(alg, t.subset(p))
        np.testing.assert_allclose(a.score(t.users, t.items, t.contexts), b.score(t.users, t.items, t.contexts),
                                   rtol=0, atol=1e-12)


# -- knn ----------------------------------------------------------------------

def brute_pearson(R, M, a, b, shrinkage):
    co = [j for j in range(R.shape[1]) if M[a, j] and M[b, j]]
    if len(co) < 2 or a == b:
        return 0.0
    x = [R[a, j] for j in co]
    y = [R[b, j] for j in co]
    mx, my = sum(x) / len(x), sum(y) / len(y)
    num = sum((p - mx) * (q - my) for p, q in zip(x, y))
    den = (sum((p - mx) ** 2 for p in x) * sum((q - my) ** 2 for q in y)) ** 0.5
    if den < 1e-9:
        return 0.0
    return num / den * len(co) / (len(co) + shrinkage)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), shrink=st.sampled_from([0.0, 1.0, 10.0]))
def test_pearson_matches_brute_force(seed, shrink):
    rng = np.random.default_rng(seed)
    R = rng.integers(1, 6, (6, 7)).astype(float)
    M = rng.random((6, 7)) < 0.6
    S = pearson_similarity(R, M, shrink)
    for a, b in itertools.product(range(6), repeat=2):
        assert abs(S[a, b] - brute_pearson(R, M, a, b, shrink)) < 1e-12
    np.testing.assert_allclose(S, S.T, atol=1e-12)
    assert np.all(np.abs(S) <= 1.0)


def test_identical_users_have_similarity_one():
    R = np.array([[5.0, 1.0, 3.0], [5.0, 1.0, 3.0]])
    assert pearson_similarity(R, R > 0)[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_no_co_rated_items_similarity_zero():
    R = np.array([[5.0, 1.0, 0.0, 0.0], [0.0, 0.0, 3.0, 4.0]])
    assert pearson_similarity(R, R > 0)[0, 1] == 0.0


def test_userknn_hand_instance():
    t = _table([("u1", "a", 5), ("u1", "b", 1),
                ("u2", "a", 4), ("u2", "b", 2), ("u2", "c", 5),
                ("u3", "a", 1), ("u3", "b", 5), ("u3", "c", 1)])
    m = fit("userknn", t, HyperParams(knn_shrinkage=0.0))
    # u2 agrees with u1 (sim 1), u3 disagrees (sim -1, excluded)
    mean_u1, mean_u2 = 3.0, 11.0 / 3.0
    expected = mean_u1 + 1.0 * (5 - mean_u2) / 1.0
    assert abs(m.score([0], [2], np.zeros((1, 0)))[0] - expected) < 1e-12


def test_itemknn_without_neighbours_falls_back():
    t = _table([("u1", "a", 5), ("u2", "b", 1)])
    m = fit("itemknn", t)
    ref = fit("useritemavg", t)
    ctx = np.zeros((1, 0))
    assert m.score([0], [1], ctx)[0] == ref.score([0], [1], ctx)[0]


# -- matrix factorization -------------------------------------------------------

def test_biasedmf_zero_iterations_predicts_mean(example_table):
    m = fit("biasedmf", example_table, HyperParams(num_iterations=0, init_std=0.0))
    assert all(m.predict(u, i, example_table.situation(0)) == 3.25 for u in range(2) for i in range(2))


def test_biasedmf_zero_iterations_close_to_mean_with_random_factors(example_table):
    m = fit("biasedmf", example_table, HyperParams(num_iterations=0))
    pred = m.predict_batch([0, 1], [0, 1], [example_table.situation(0).active])
    np.testing.assert_allclose(pred, 3.25, atol=1e-2)


def test_biasedmf_single_rating_converges():
    t = RatingTable(ContextSchema(), ("u",), ("i",), [0], [0], [4.0], np.zeros((1, 0)), (1.0, 5.0))
    m = fit("biasedmf", t, HyperParams(num_iterations=200, learn_rate=0.05, init_std=0.1))
    assert abs(m.predict(0, 0, ()) - 4.0) < 0.1


def test_pmf_single_rating_converges():
    t = RatingTable(ContextSchema(), ("u",), ("i",), [0], [0], [4.0], np.zeros((1, 0)), (1.0, 5.0))
    m = fit("pmf", t, HyperParams(num_iterations=300, learn_rate=0.05, init_std=0.5, reg_user=0.01, reg_item=0.01))
    assert abs(m.predict(0, 0, ()) - 4.0) < 0.1


@pytest.mark.parametrize("alg", ["pmf", "biasedmf"])
def test_mf_gradient_check(alg):
    t = random_table(11, 5, 5, 30)
    m = fit(alg, t, HyperParams(num_iterations=0, init_std=0.3, num_factors=3))
    data = m._prepare(t)
    params = {k: v.copy() for k, v in m.params.items()}
    params["bu"] = np.random.default_rng(0).normal(0, 0.3, params["bu"].shape)
    params["bi"] = np.random.default_rng(1).normal(0, 0.3, params["bi"].shape)
    analytic = m._gradient(params, data)
    numeric = numeric_gradient(lambda p: m._objective(p, data), params)
    keys = ("P", "Q", "bu", "bi") if alg == "biasedmf" else ("P", "Q")
    for key in keys:
        assert relative_error(analytic[key], numeric[key]) <= 1e-4, key


# -- SLIM -----------------------------------------------------------------------

def test_linear_scores_plug_in():
    X = np.array([[4.0, 2.0, 0.0]])
    W = np.zeros((3, 3))
    W[0, 2], W[1, 2] = 0.5, 0.25
    assert linear_scores(X, W, np.array([2]))[0] == 2.5
    assert linear_scores(X, np.zeros((3, 3)), np.array([2]))[0] == 0.0


def test_slim_zero_iterations_scores_zero(example_table):
    m = fit("slim", example_table, HyperParams(num_iterations=0))
    assert np.all(m.W == 0)
    assert np.all(m.score([0, 1], [0, 1], [example_table.situation(0).active]) == 0)


def _cooccurrence_matrix():
    # items 0 and 1 always consumed together; 2 and 3 random
    rng = np.random.default_rng(5)
    R = np.zeros((30, 4))
    both = rng.random(30) < 0.5
    R[both, 0] = R[both, 1] = 1.0
    R[:, 2] = rng.random(30) < 0.4
    R[:, 3] = rng.random(30) < 0.4
    return R


def test_slim_cooccurrence_gets_largest_weight():
    R = _cooccurrence_matrix()
    W, _ = fit_slim_weights(R, 0.01, 0.01, 50)
    assert np.argmax(W[:, 1]) == 0
    assert np.argmax(W[:, 0]) == 1


def test_slim_matches_brute_force_grid():
    R = _cooccurrence_matrix()
    l1, l2 = 0.1, 0.5
    W, _ = fit_slim_weights(R, l1, l2, 500, tol=1e-14)
    grid = np.linspace(0, 1.2, 61)
    col = 1
    others = [0, 2, 3]
    best, best_w = np.inf, None
    for w in itertools.product(grid, repeat=3):
        v = np.zeros(4)
        v[others] = w
        res = R[:, col] - R @ v
        obj = 0.5 * res @ res + l1 * v.sum() + 0.5 * l2 * v @ v
        if obj < best:
            best, best_w = obj, v
    v = W[:, col]
    res = R[:, col] - R @ v
    ours = 0.5 * res @ res + l1 * v.sum() + 0.5 * l2 * v @ v
    assert ours <= best + 1e-9
    assert np.argmax(v) == np.argmax(best_w) == 0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), l1=st.sampled_from([0.0, 0.01, 0.5]), l2=st.sampled_from([0.0, 0.01, 1.0]))
def test_slim_sweeps_monotone_and_constrained(seed, l1, l2):
    rng = np.random.default_rng(seed)
    R = (rng.random((12, 6)) < 0.4) * rng.integers(1, 6, (12, 6))
    W, hist = fit_slim_weights(R.astype(float), l1, l2, 15)
    assert np.all(np.diff(hist) <= 1e-9)
    assert np.all(np.diag(W) == 0) and np.all(W >= 0)
    assert hist[-1] == pytest.approx(slim_objective(R.astype(float), W, l1, l2))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_cd_coordinate_update_is_exact(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(8, 4))
    G, b = A.T @ A, A.T @ rng.normal(size=8)
    l1, l2 = 0.1, 0.2
    w = np.abs(rng.normal(size=4))
    w[2] = 0.0
    f = lambda v: 0.5 * v @ G @ v - b @ v + l1 * np.abs(v).sum() + 0.5 * l2 * v @ v
    before = f(w)
    # coordinate 0 alone: compare with a fine grid along that axis
    probe = w.copy()
    cd_sweep(G, b, probe, l1, l2, 2)
    grid = np.linspace(0, 5, 5001)
    w0 = w.copy()
    vals = []
    for x in grid:
        w0[0] = x
        vals.append(f(w0))
    trial = w.copy()
    trial[0] = grid[int(np.argmin(vals))]
    single = w.copy()
    s = G[0, 1:] @ w[1:]
    single[0] = max(0.0, (b[0] - s - l1) / (G[0, 0] + l2))
    assert f(single) <= f(trial) + 1e-9
    assert f(probe) <= before + 1e-12
    assert probe[2] == 0.0 and np.all(probe >= 0)


def test_slim_score_uses_profile(example_table):
    m = fit("slim", example_table, HyperParams(num_iterations=5))
    assert m.R.shape == (2, 2)
    np.testing.assert_array_equal(np.diag(m.W), 0)
