import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp

from dshdp.data import Dataset
from dshdp.emissions import Multinomial
from dshdp.evaluation import (HMMParams, forward_loglik, hamming_distance, hmm_loglik,
                              hungarian_min_cost, predictive_nll, relabel)


def brute_min(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def test_hungarian_small_examples():
    r = hungarian_min_cost(np.array([[1, 2], [2, 1]]))
    assert r.mapping == {0: 0, 1: 1} and r.cost == 2
    r = hungarian_min_cost(np.array([[7]]))
    assert r.mapping == {0: 0} and r.cost == 7
    with pytest.raises(ValueError):
        hungarian_min_cost(np.zeros((0, 0)))
    with pytest.raises(ValueError):
        hungarian_min_cost(np.array([[1.0, np.nan]]))


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_hungarian_rectangular_matches_brute_force(seed, r, c):
    cost = np.random.default_rng(seed).integers(-20, 20, size=(r, c)).astype(float)
    res = hungarian_min_cost(cost)
    assert len(res.mapping) == min(r, c)
    assert len(set(res.mapping.values())) == len(res.mapping)
    assert res.cost == sum(cost[i, j] for i, j in res.mapping.items())
    pad = np.zeros((max(r, c),) * 2)
    pad[:r, :c] = cost
    assert res.cost == brute_min(pad)


def test_hungarian_beats_random_permutations():
    rng = np.random.default_rng(0)
    for _ in range(5):
        cost = rng.normal(size=(7, 7))
        best = hungarian_min_cost(cost).cost
        for _ in range(1000):
            p = rng.permutation(7)
            assert best <= cost[np.arange(7), p].sum() + 1e-12


def test_hamming_examples():
    assert hamming_distance([1, 2, 3], [1, 2, 3]) == 0
    assert hamming_distance([2, 2, 0, 1], [0, 0, 1, 2]) == 0
    assert hamming_distance([5, 5, 1, 1], [0, 0, 0, 1]) == 0.25
    assert hamming_distance([5, 5, 5, 5], [0, 0, 0, 1]) == 0.25
    # surplus estimated labels count as mismatches
    assert hamming_distance([0, 1, 2, 3], [0, 0, 0, 0]) == 0.75
    with pytest.raises(ValueError):
        hamming_distance([0, 1], [0])


def brute_hamming(est, tru):
    el, tl = sorted(set(est)), sorted(set(tru))
    best = 0
    width = max(len(el), len(tl))
    tl_pad = tl + [None] * (width - len(tl))
    for perm in itertools.permutations(tl_pad, len(el)):
        m = dict(zip(el, perm))
        best = max(best, sum(m[e] == t for e, t in zip(est, tru)))
    return 1 - best / len(est)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=15),
       st.permutations(range(4)))
def test_hamming_brute_force_and_relabel_invariance(pairs, perm):
    est = [p[0] for p in pairs]
    tru = [p[1] for p in pairs]
    h = hamming_distance(est, tru)
    assert h == pytest.approx(brute_hamming(est, tru), abs=1e-12)
    assert hamming_distance([perm[e] + 10 for e in est], tru) == h
    lab = relabel(est, tru)
    assert np.mean(lab != np.asarray(tru)) == pytest.approx(h)


def brute_forward(pi, initial, loglik):
    T, K = loglik.shape
    terms = []
    for path in itertools.product(range(K), repeat=T):
        lp = np.log(initial[path[0]]) + loglik[0, path[0]]
        for t in range(1, T):
            lp += np.log(pi[path[t - 1], path[t]]) + loglik[t, path[t]]
        terms.append(lp)
    return logsumexp(terms)


def test_forward_examples():
    ll = np.log(np.full((3, 2), 0.5))
    assert forward_loglik(np.full((2, 2), 0.5), [0.5, 0.5], ll) == pytest.approx(3 * np.log(0.5), abs=1e-14)
    single = np.array([[-1.0], [-2.5], [-0.3]])
    assert forward_loglik(np.eye(1), [1.0], single) == pytest.approx(-3.8, abs=1e-14)
    assert forward_loglik(np.eye(2), [1.0, 0.0], np.array([[0.0, 0.0], [-np.inf, 0.0]])) == -np.inf
    assert forward_loglik(np.eye(2), [0.5, 0.5], np.zeros((0, 2))) == 0.0
    with pytest.raises(ValueError):
        forward_loglik(np.eye(3), [0.5, 0.5], np.zeros((2, 2)))


def test_forward_against_enumeration_3_states_7_steps():
    rng = np.random.default_rng(0)
    pi = rng.dirichlet(np.ones(3), size=3)
    initial = rng.dirichlet(np.ones(3))
    ll = rng.normal(0, 2, size=(7, 3))
    got = forward_loglik(pi, initial, ll)
    want = brute_forward(pi, initial, ll)
    assert abs(got - want) <= 1e-10 * abs(want)


@given(st.integers(0, 2**32 - 1), st.permutations(range(4)))
def test_forward_permutation_invariance(seed, perm):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(4), size=4)
    initial = rng.dirichlet(np.ones(4))
    ll = rng.normal(0, 3, size=(12, 4))
    p = np.asarray(perm)
    a = forward_loglik(pi, initial, ll)
    b = forward_loglik(pi[np.ix_(p, p)], initial[p], ll[:, p])
    assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


def _params():
    pi = np.array([[0.7, 0.3], [0.2, 0.8]])
    return HMMParams(pi, np.array([0.6, 0.4]), {"p": np.array([[0.9, 0.1], [0.25, 0.75]])})


def test_predictive_nll_hand_recursion():
    fam = Multinomial(2)
    y = np.array([0, 1, 1])
    data = Dataset([y])
    p = _params()
    E = p.theta["p"]
    a = p.initial * E[:, 0]
    a = (a @ p.pi) * E[:, 1]
    a = (a @ p.pi) * E[:, 1]
    want = -np.log(a.sum())
    assert predictive_nll([p], fam, data)[0] == pytest.approx(want, abs=1e-12)
    two = Dataset([y, y])
    assert predictive_nll([p], fam, two)[0] == pytest.approx(2 * want, abs=1e-12)
    assert -hmm_loglik(p, fam, data) == predictive_nll([p], fam, data)[0]
    with pytest.raises(ValueError):
        predictive_nll([], fam, data)


def test_params_round_trip():
    p = _params()
    p.kappa = np.array([0.1, 0.2])
    q = HMMParams.from_dict(p.to_dict())
    np.testing.assert_array_equal(q.pi, p.pi)
    np.testing.assert_array_equal(q.kappa, p.kappa)
    assert q.pibar is None and q.K == 2
