import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from dshdp.core import GlobalWeights, HyperParams, RhoGrid, StickyGrid
from dshdp.data import Dataset
from dshdp.direct import DirectChainState, DirectSampler, transition_predictive
from dshdp.emissions import GaussianKnownVar, Multinomial, PoissonVector


# ----------------------------------------------------------------- oracle

def oracle_log_joint(z, w, starts, bext, kappa, alpha, y, conc):
    """Collapsed log p(y, z, w | beta, kappa, alpha) written out from scratch.

    Every transition row is integrated against Dir(alpha * beta) and every
    emission row against Dir(conc); index len(bext) - 1 is the lumped new state.
    """
    S = len(bext)
    total = 0.0
    n = np.zeros((S, S))
    counts = np.zeros((S, len(conc)))
    for t in range(len(z)):
        counts[z[t], y[t]] += 1
        if starts[t]:
            total += math.log(bext[z[t]])
            continue
        j = z[t - 1]
        if w[t]:
            total += math.log(kappa[j])
        else:
            total += math.log1p(-kappa[j])
            n[j, z[t]] += 1
    for j in range(S):
        if n[j].sum() > 0:
            total += math.lgamma(alpha) - math.lgamma(alpha + n[j].sum())
            for k in range(S):
                if n[j, k] > 0:
                    total += math.lgamma(alpha * bext[k] + n[j, k]) - math.lgamma(alpha * bext[k])
        a0 = sum(conc)
        total += math.lgamma(a0) - math.lgamma(a0 + counts[j].sum())
        total += sum(math.lgamma(conc[s] + counts[j, s]) - math.lgamma(conc[s]) for s in range(len(conc)))
    return total


def oracle_block(z, w, starts, ends, t, bext, kappa, alpha, y, conc, kappa_mean=0.5):
    """States unoccupied once step t is removed have no kappa evidence; their
    kappa enters linearly, so it is integrated by its prior mean."""
    S = len(bext)
    kappa = np.array(kappa, dtype=float)
    kappa[np.bincount(np.delete(z, t), minlength=S) == 0] = kappa_mean
    logp = np.full((S, 2, 2), -np.inf)
    for k, wt, wt1 in itertools.product(range(S), (0, 1), (0, 1)):
        if starts[t] and wt:
            continue
        if ends[t] and wt1:
            continue
        if wt and k != z[t - 1]:
            continue
        if wt1 and z[t + 1] != k:
            continue
        zz, ww = z.copy(), w.copy()
        zz[t] = k
        if not starts[t]:
            ww[t] = wt
        if not ends[t]:
            ww[t + 1] = wt1
        logp[k, wt, wt1] = oracle_log_joint(zz, ww, starts, bext, kappa, alpha, y, conc)
    p = np.exp(logp - logp.max())
    return p / p.sum()


def frozen_sampler(y, z, w, beta, remainder, kappa, alpha, blocks=None, n_symbols=3, seed=0):
    lengths = blocks or [len(y)]
    edges = np.concatenate(([0], np.cumsum(lengths)))
    data = Dataset([np.asarray(y)[a:b] for a, b in zip(edges[:-1], edges[1:])])
    fam = Multinomial(n_symbols)
    K = len(beta)
    hyper = HyperParams(alpha, 1.0, 1.0, 1.0)
    z = np.asarray(z, dtype=np.int64)
    w = np.asarray(w, dtype=np.int8)
    from dshdp.core import transition_counts
    state = DirectChainState(z, w, GlobalWeights(beta, remainder), np.asarray(kappa, float), hyper,
                             transition_counts(z, w, data.starts, K), fam.accumulate(data, z, K), fam)
    s = DirectSampler(data, fam, hyper, np.random.default_rng(seed), state=state,
                      rho_grid=RhoGrid(5, 5), sticky_grid=StickyGrid(5, 5))
    s.check_invariants()
    return s


# ----------------------------------------------------- transition predictive

def test_transition_predictive_examples():
    n = np.array([[2, 2], [0, 0]])
    assert transition_predictive(0, 0, n, 1.0, np.array([0.5, 0.3, 0.2])) == pytest.approx(0.5)
    # fresh state: no counts at all, alpha = 1
    zero = np.zeros((2, 2), int)
    assert transition_predictive(1, 2, zero, 1.0, np.array([0.5, 0.3, 0.2])) == pytest.approx(0.2)


def test_transition_predictive_self_then_out_monte_carlo():
    alpha = 1.5
    beta = np.array([0.4, 0.35, 0.25])
    n = np.array([[3, 1], [2, 0]])
    rng = np.random.default_rng(0)
    row = alpha * beta + np.append(n[0], 0)
    pi = rng.dirichlet(row, size=1_000_000)
    for l in (0, 1, 2):
        mc = np.mean(pi[:, 0] * pi[:, l]) / np.mean(pi[:, 0])
        exact = transition_predictive(0, None, n, alpha, beta, after_self=True, l=l)
        assert abs(mc - exact) < 0.005


def test_transition_predictive_negative_counts():
    from dshdp.core import ConsistencyError
    with pytest.raises(ConsistencyError):
        transition_predictive(0, 0, np.array([[-1]]), 1.0, np.array([0.5, 0.5]))


# -------------------------------------------------------- block conditional

def test_case_weight_double_stick():
    # kappa_j = 0.5 and both steps stick: prior case weight 0.25
    s = frozen_sampler([0, 0, 0], [0, 0, 0], [0, 1, 1], [0.6], 0.4, [0.5, 0.5], 2.0)
    start, end, j, l = s._remove(1)
    raw = s._block_weights(1, start, end, j, l)
    assert j == l == 0
    # emission factor is max-shifted; divide it back out
    pred = np.exp(s.family.predictive_loglik(s.state.stats, 0))
    assert raw[0, 1, 1] / (pred[0] / pred.max()) == pytest.approx(0.25)


FROZEN = dict(y=[0, 2, 2], z=[0, 1, 1], w=[0, 0, 1], beta=[0.5, 0.3], remainder=0.2,
              kappa=[0.3, 0.6, 0.5], alpha=2.0)


@pytest.mark.parametrize("t", [0, 1, 2])
def test_block_conditional_matches_enumeration(t):
    s = frozen_sampler(**FROZEN)
    got = s.block_conditional(t)
    st_ = s.state
    want = oracle_block(st_.z, st_.w, s.data.starts, s.data.ends, t, st_.beta.extended(),
                        st_.kappa, 2.0, s.data.y, [1.0, 1.0, 1.0])
    assert 0.5 * np.abs(got - want).sum() < 1e-12


@given(st.integers(0, 2**32 - 1), st.integers(2, 7), st.integers(1, 3), st.booleans())
def test_block_conditional_random_states(seed, T, K, two_blocks):
    rng = np.random.default_rng(seed)
    if T < 2:
        two_blocks = False
    blocks = [T // 2, T - T // 2] if two_blocks and T >= 2 else [T]
    z = rng.integers(K, size=T)
    z[:K] = np.arange(min(K, T))
    _, z = np.unique(z, return_inverse=True)
    K = z.max() + 1
    starts = np.zeros(T, bool)
    starts[np.concatenate(([0], np.cumsum(blocks)[:-1]))] = True
    w = np.zeros(T, dtype=np.int8)
    for t in range(1, T):
        if not starts[t] and z[t] == z[t - 1]:
            w[t] = rng.integers(2)
    y = rng.integers(3, size=T)
    beta = rng.dirichlet(np.ones(K + 1))
    kappa = rng.uniform(0.05, 0.95, size=K + 1)
    alpha = rng.uniform(0.3, 5.0)
    s = frozen_sampler(y, z, w, beta[:K], beta[K], kappa, alpha, blocks=blocks)
    for t in range(T):
        got = s.block_conditional(t)
        want = oracle_block(s.state.z, s.state.w, s.data.starts, s.data.ends, t, beta, kappa,
                            alpha, s.data.y, [1.0, 1.0, 1.0])
        assert 0.5 * np.abs(got - want).sum() < 1e-12


@pytest.mark.parametrize("t", [0, 1, 2])
def test_unoccupied_kappas_are_integrated_over_their_prior(t):
    # average the unnormalized oracle over every kappa without evidence,
    # each ~ Beta(1, 1), by tensor Gauss-Legendre quadrature
    s = frozen_sampler(**FROZEN)
    st_ = s.state
    S = st_.K + 1
    free = np.flatnonzero(np.bincount(np.delete(st_.z, t), minlength=S) == 0)
    x, wq = np.polynomial.legendre.leggauss(12)
    x, wq = 0.5 * (x + 1), 0.5 * wq
    total = np.zeros((S, 2, 2))
    for nodes in itertools.product(range(x.size), repeat=free.size):
        kappa = st_.kappa.copy()
        kappa[free] = x[list(nodes)]
        weight = np.prod(wq[list(nodes)])
        for k, wt, wt1 in itertools.product(range(S), (0, 1), (0, 1)):
            if (s.data.starts[t] and wt) or (s.data.ends[t] and wt1):
                continue
            if (wt and k != st_.z[t - 1]) or (wt1 and st_.z[t + 1] != k):
                continue
            zz, ww = st_.z.copy(), st_.w.copy()
            zz[t] = k
            if not s.data.starts[t]:
                ww[t] = wt
            if not s.data.ends[t]:
                ww[t + 1] = wt1
            total[k, wt, wt1] += weight * math.exp(oracle_log_joint(
                zz, ww, s.data.starts, st_.beta.extended(), kappa, 2.0, s.data.y, [1.0, 1.0, 1.0]))
    np.testing.assert_allclose(s.block_conditional(t), total / total.sum(), atol=1e-12)


def test_created_state_kappa_conditionals():
    s = _sampler(np.zeros(4, int), blocks=[2, 2])
    s.state.hyper = HyperParams(2.0, 1.0, 2.0, 3.0, "ds")
    draws = np.array([s._created_kappa() for _ in range(40_000)])
    # one observed switch inside a block, none at a block end
    np.testing.assert_allclose(draws.mean(axis=0), [2 / 6, 2 / 5, 2 / 6, 2 / 5], atol=0.005)


def test_block_conditional_boundaries():
    s = frozen_sampler(**FROZEN)
    first = s.block_conditional(0)
    assert np.all(first[:, 1, :] == 0)
    last = s.block_conditional(2)
    assert np.all(last[:, :, 1] == 0)


def test_block_samples_follow_conditional():
    s = frozen_sampler(**FROZEN)
    probs = s.block_conditional(1)
    draws = s.block_sample_zwt(1, size=200_000)
    idx = np.ravel_multi_index(draws.T, probs.shape)
    hits = np.bincount(idx, minlength=probs.size)
    p = probs.ravel()
    keep = p > 0
    assert hits[~keep].sum() == 0
    assert stats.chisquare(hits[keep], p[keep] * hits.sum()).pvalue > 0.001


def test_update_block_applies_draws_with_conditional_frequencies():
    base = frozen_sampler(**FROZEN)
    probs = base.block_conditional(1)
    hits = np.zeros(probs.shape)
    s = frozen_sampler(**FROZEN, seed=3)
    snap = (s.state.z.copy(), s.state.w.copy(), s.state.n.copy(), {k: v.copy() for k, v in s.state.stats.items()},
            s.state.beta, s.state.kappa.copy())
    for _ in range(20_000):
        s.update_block(1)
        hits[s.state.z[1], s.state.w[1], s.state.w[2]] += 1
        st_ = s.state
        st_.z, st_.w, st_.n = snap[0].copy(), snap[1].copy(), snap[2].copy()
        st_.stats = {k: v.copy() for k, v in snap[3].items()}
        st_.beta, st_.kappa = snap[4], snap[5].copy()
    p = probs.ravel()
    keep = p > 0
    assert hits.ravel()[~keep].sum() == 0
    assert stats.chisquare(hits.ravel()[keep], p[keep] * hits.sum()).pvalue > 0.001


# ------------------------------------------------------------------ sweeps

def _sampler(y, variant="ds", blocks=None, family=None, seed=0, **kw):
    y = np.asarray(y)
    lengths = blocks or [len(y)]
    edges = np.concatenate(([0], np.cumsum(lengths)))
    data = Dataset([y[a:b] for a, b in zip(edges[:-1], edges[1:])])
    fam = family or Multinomial(int(y.max()) + 1)
    rho1 = 0.0 if variant == "hdp" else 1.0
    alpha = 2.0
    hyper = HyperParams(alpha, 1.5, rho1, alpha if variant == "sticky" else 2.0, variant)
    return DirectSampler(data, fam, hyper, np.random.default_rng(seed), rho_grid=RhoGrid(10, 10),
                         sticky_grid=StickyGrid(10, 10), **kw)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["ds", "hdp", "sticky"]), st.integers(1, 25),
       st.booleans())
def test_sweep_restores_invariants(seed, variant, T, split):
    rng = np.random.default_rng(seed)
    y = rng.integers(3, size=T)
    blocks = [T // 2, T - T // 2] if split and T >= 2 else None
    s = _sampler(y, variant, blocks, family=Multinomial(3), seed=seed)
    s.check_invariants()
    for _ in range(3):
        s.sweep()
        s.check_invariants()
        assert s.state.kappa.size == s.state.K + 1


def test_single_step_sequence():
    s = _sampler([1], family=Multinomial(2))
    for _ in range(5):
        s.sweep()
        s.check_invariants()
    assert s.state.K == 1 and s.state.n.sum() == 0


def test_hdp_variant_never_sticks():
    y = np.repeat([0, 1, 2, 0], 25)
    s = _sampler(y, "hdp")
    for _ in range(200):
        s.sweep()
        assert not s.state.w.any()
        assert np.all(s.state.kappa == 0)


def test_sticky_variant_keeps_tie():
    s = _sampler(np.repeat([0, 1], 20), "sticky")
    for _ in range(20):
        s.sweep()
        assert s.state.hyper.rho2 == s.state.hyper.alpha


def test_compaction_preserves_joint():
    s = frozen_sampler([0, 1, 1, 2, 0], [0, 1, 1, 2, 0], [0, 0, 1, 0, 0], [0.3, 0.2, 0.4], 0.1,
                       [0.2, 0.5, 0.7, 0.3], 1.7)
    assert s.state.K == 3
    # empty state 2 by moving its only step into state 1
    from dshdp.core import transition_counts
    s.state.z[3] = 1
    s.state.n = transition_counts(s.state.z, s.state.w, s.data.starts, 3)
    s.state.stats = s.family.accumulate(s.data, s.state.z, 3)
    before = s.joint_loglik()
    s.compact()
    assert s.state.K == 2
    s.check_invariants()
    assert abs(s.joint_loglik() - before) < 1e-9
    assert s.state.beta.remainder == pytest.approx(0.5)
    np.testing.assert_allclose(s.state.kappa, [0.2, 0.5, 0.3])


def test_joint_matches_oracle():
    s = frozen_sampler(**FROZEN)
    st_ = s.state
    want = oracle_log_joint(st_.z, st_.w, s.data.starts, st_.beta.extended(), st_.kappa, 2.0,
                            s.data.y, [1, 1, 1])
    assert s.joint_loglik() == pytest.approx(want, abs=1e-10)


@pytest.mark.parametrize("family", [Multinomial(4), GaussianKnownVar(1.5, 3.0, 0.25),
                                    PoissonVector(2, rate=[1.0, 0.5])], ids=lambda f: f.name)
def test_compiled_and_numpy_paths_agree(family):
    rng = np.random.default_rng(5)
    if family.name == "multinomial":
        y = rng.integers(4, size=120)
    elif family.name == "gaussian":
        y = np.repeat(rng.normal(0, 3, 6), 20) + rng.normal(0, 0.5, 120)
    else:
        y = rng.poisson([2.0, 5.0], size=(120, 2))
    a = _sampler(y, family=family, blocks=[50, 70], seed=9, use_kernel=True)
    b = _sampler(y, family=family, blocks=[50, 70], seed=9, use_kernel=False)
    for _ in range(15):
        a.sweep()
        b.sweep()
        np.testing.assert_array_equal(a.state.z, b.state.z)
        np.testing.assert_array_equal(a.state.w, b.state.w)
        assert a.state.hyper.alpha == pytest.approx(b.state.hyper.alpha, rel=1e-12)
        a.check_invariants()


def test_fresh_slots_follow_current_hyperparameters():
    s = _sampler(np.repeat([0, 1], 10))
    s.state.hyper = HyperParams(2.0, 1.0, 50.0, 1e-3, "ds")
    s.update_block(3)
    assert s.state.kappa[-1] > 0.99
    assert np.all(s._created_kappa() > 0.9)


def test_initial_labels_are_used():
    y = np.repeat([0, 1, 2], 10)
    s = _sampler(y, init_labels=np.repeat([5, 7, 9], 10))
    np.testing.assert_array_equal(s.state.z, np.repeat([0, 1, 2], 10))
    assert s.state.K == 3
    s.check_invariants()


def test_posterior_params_are_stochastic():
    s = _sampler(np.repeat([0, 1, 2], 10))
    for _ in range(5):
        s.sweep()
    p = s.posterior_params(np.random.default_rng(1))
    assert p.pi.shape == (s.state.K + 1,) * 2
    np.testing.assert_allclose(p.pi.sum(axis=1), 1.0, atol=1e-12)
    assert abs(p.initial.sum() - 1) < 1e-12
    np.testing.assert_allclose(p.theta["p"].sum(axis=1), 1.0, atol=1e-12)


def test_recovers_well_separated_states():
    y = np.repeat([0, 1, 2, 0, 1, 2], 30)
    s = _sampler(y, seed=2)
    for _ in range(200):
        s.sweep()
    from dshdp.evaluation import hamming_distance
    assert hamming_distance(s.state.z, y) < 0.05
