"""Collapsed direct-assignment Gibbs sampler.

Transition rows and emission parameters are integrated out; each sweep
resamples the block (z_t, w_t, w_{t+1}) for every t in turn, then the
self-persistence values, the global weights and the hyperparameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .core import (ConsistencyError, GlobalWeights, HyperParams, HyperPriors, RhoGrid,
                   StickyGrid, beta_draw, categorical, categorical_many, dirichlet,
                   extend_global_weights, persistence_counts, resample_hyperparameters,
                   sample_global_weights, sample_kappa, sample_table_counts, transition_counts)
from .emissions import EmissionFamily, stats_concat, stats_equal, stats_take
from .evaluation import HMMParams
from .kernels import packer_for


def transition_predictive(j, k, counts, alpha, beta, after_self=False, l=None):
    """Collapsed predictive probability of a switching move j -> k.

    ``counts`` must exclude the transitions adjacent to the resampled step.
    With ``after_self`` the step j -> j has just been used by the same
    restaurant, so the predictive for j -> l gains one customer (and
    delta(j, l) at dish l); in that case ``k`` is ignored and ``l`` used.
    """
    counts = np.asarray(counts)
    weights = beta.extended() if isinstance(beta, GlobalWeights) else np.asarray(beta, float)
    nrow = counts[j].sum() if j < counts.shape[0] else 0
    if np.any(counts < 0):
        raise ConsistencyError("negative adjusted transition counts")
    def n_(a, b):
        return counts[a, b] if a < counts.shape[0] and b < counts.shape[1] else 0
    if after_self:
        return (alpha * weights[l] + n_(j, l) + (j == l)) / (alpha + nrow + 1)
    return (alpha * weights[k] + n_(j, k)) / (alpha + nrow)


@dataclass
class DirectChainState:
    z: np.ndarray
    w: np.ndarray
    beta: GlobalWeights
    kappa: np.ndarray
    hyper: HyperParams
    n: np.ndarray
    stats: dict
    family: EmissionFamily
    iteration: int = 0

    @property
    def K(self):
        return self.beta.K


@dataclass
class DirectSampler:
    """Owns one chain: data, state, priors and its RNG stream."""

    data: object
    family: EmissionFamily
    hyper: HyperParams
    rng: np.random.Generator
    priors: HyperPriors = field(default_factory=HyperPriors)
    rho_grid: RhoGrid | None = None
    sticky_grid: StickyGrid | None = None
    init_labels: np.ndarray | None = None
    sample_hypers: bool = True
    use_kernel: bool = True
    state: DirectChainState | None = None

    def __post_init__(self):
        if self.rho_grid is None:
            self.rho_grid = RhoGrid(eta_max=self.priors.eta_max)
        if self.sticky_grid is None:
            self.sticky_grid = StickyGrid(shape=self.priors.alpha_shape, rate=self.priors.alpha_rate)
        if self.state is None:
            self.state = self._initialize()

    # ------------------------------------------------------------------ setup

    def _initialize(self):
        data, fam = self.data, self.family
        T = data.T
        if self.init_labels is not None:
            labels = np.asarray(self.init_labels)
            if labels.shape != (T,):
                raise ValueError(f"initial labels have length {labels.size}, expected {T}")
            _, z = np.unique(labels, return_inverse=True)
            K = int(z.max()) + 1
            w = np.zeros(T, dtype=np.int8)
            rng = self.rng
            v = rng.beta(1.0, self.hyper.gamma, size=K)
            left = np.concatenate(([1.0], np.cumprod(1.0 - v)))
            beta = GlobalWeights(v * left[:-1], left[-1])
            kappa = self._prior_kappa_array(K + 1)
            return DirectChainState(z.astype(np.int64), w, beta, kappa, self.hyper,
                                    transition_counts(z, w, data.starts, K),
                                    fam.accumulate(data, z, K), fam)
        state = DirectChainState(np.zeros(T, dtype=np.int64), np.zeros(T, dtype=np.int8),
                                 GlobalWeights(np.zeros(0), 1.0),
                                 self._prior_kappa_array(1), self.hyper,
                                 np.zeros((0, 0), dtype=np.int64), fam.empty_stats(0), fam)
        self.state = state
        for t in range(T):
            self._sequential_step(t)
        return state

    def _prior_kappa_array(self, size):
        h = self.state.hyper if self.state is not None else self.hyper
        if h.rho1 == 0:
            return np.zeros(size)
        return np.atleast_1d(beta_draw(np.full(size, h.rho1), np.full(size, h.rho2), self.rng))

    def _offered_kappa(self):
        """Prior mean of kappa, the exact weight for a brand-new state.

        A new state's kappa only enters its block through the factor
        1 - kappa of the step that leaves it, which is linear, so the
        prior mean integrates it out.
        """
        h = self.state.hyper
        return h.rho1 / (h.rho1 + h.rho2)

    def _created_kappa(self):
        """kappa for each step should it open a new state: its conditional
        given one switch out of the state, or no evidence at a block end."""
        h = self.state.hyper
        if h.rho1 == 0:
            return np.zeros(self.data.T)
        b = h.rho2 + (~self.data.ends).astype(float)
        return np.atleast_1d(beta_draw(np.full(self.data.T, h.rho1), b, self.rng))

    def _sequential_step(self, t):
        """Seat step t given only the past (used to build a starting state)."""
        s = self.state
        start = self.data.starts[t]
        j = -1 if start else s.z[t - 1]
        s.kappa[s.K] = self._offered_kappa()
        probs = self._block_weights(t, start, True, j, -1)
        idx = categorical(probs.ravel(), self.rng.random())
        k, wt, _ = np.unravel_index(idx, probs.shape)
        if k == s.K:
            s.kappa[k] = self._prior_kappa_array(1)[0]
        self._apply(t, int(k), int(wt), 0, start, True, j, -1)

    # ------------------------------------------------------------- block move

    def _block_weights(self, t, start, end, j, l):
        """Unnormalized (K+1, 2, 2) weights over (z_t, w_t, w_{t+1}).

        Counts and statistics must already exclude step t. The emission
        factor is max-shifted, so weights are only defined up to a constant.
        """
        s = self.state
        K = s.K
        a = s.hyper.alpha
        bext = np.append(s.beta.weights, s.beta.remainder)
        kap = s.kappa
        n = s.n
        nrow = n.sum(axis=1)
        if self.data.valid[t]:
            y, ctx = self.data.y[t], self.data.context(t)
            pred = np.empty(K + 1)
            pred[:K] = s.family.predictive_loglik(s.stats, y, ctx)
            pred[K] = s.family.prior_predictive_loglik(y, ctx)
            pred = np.exp(pred - pred.max())
        else:
            pred = np.ones(K + 1)
        out = np.zeros((K + 1, 2, 2))
        if start:
            left = bext
        else:
            nj = np.append(n[j], 0)
            left = (1.0 - kap[j]) * (a * bext + nj) / (a + nrow[j])
        if end:
            out[:, 0, 0] = left
            if not start:
                out[j, 1, 0] = kap[j]
        else:
            nl = np.append(n[:, l], 0)
            nr = np.append(nrow, 0)
            switch_out = (1.0 - kap) * (a * bext[l] + nl) / (a + nr)
            out[:, 0, 0] = left * switch_out
            out[l, 0, 1] = left[l] * kap[l]
            if not start:
                out[j, 1, 0] = kap[j] * switch_out[j]
                if j == l:
                    out[j, 1, 1] = kap[j] * kap[j]
                # both moves drawn from row j: the second sees the first
                out[j, 0, 0] = left[j] * (1.0 - kap[j]) * (
                    a * bext[l] + n[j, l] + (j == l)) / (a + nrow[j] + 1.0)
        out *= pred[:, None, None]
        return out

    def _remove(self, t):
        s = self.state
        start, end = self.data.starts[t], self.data.ends[t]
        k0 = s.z[t]
        j = -1 if start else s.z[t - 1]
        l = -1 if end else s.z[t + 1]
        if not start and s.w[t] == 0:
            s.n[j, k0] -= 1
        if not end and s.w[t + 1] == 0:
            s.n[k0, l] -= 1
        if self.data.valid[t]:
            s.family.remove(s.stats, k0, self.data.y[t], self.data.context(t))
        return start, end, j, l

    def _apply(self, t, k, wt, wt1, start, end, j, l):
        s = self.state
        if k == s.K:
            self._new_state()
        s.z[t] = k
        if not start:
            s.w[t] = wt
            if wt == 0:
                s.n[j, k] += 1
        if not end:
            s.w[t + 1] = wt1
            if wt1 == 0:
                s.n[k, l] += 1
        if self.data.valid[t]:
            s.family.add(s.stats, k, self.data.y[t], self.data.context(t))

    def _extend_weights(self):
        # the chosen slot already holds the new state's kappa
        s = self.state
        s.beta = extend_global_weights(s.beta, s.hyper.gamma, self.rng)
        s.kappa = np.append(s.kappa, self._offered_kappa())

    def _new_state(self):
        s = self.state
        self._extend_weights()
        s.n = np.pad(s.n, ((0, 1), (0, 1)))
        s.stats = stats_concat(s.stats, s.family.empty_stats(1))

    def _empty_slots(self, occ):
        """Unoccupied states (and the new-state slot) offer the prior mean of kappa."""
        s = self.state
        s.kappa[:occ.size][occ == 0] = self._offered_kappa()

    def update_block(self, t, u=None, kappa_new=None, occ=None):
        """Resample (z_t, w_t, w_{t+1}) from their conditional.

        Unoccupied states, the brand-new one included, are offered with
        kappa integrated out; if one is chosen its kappa becomes
        ``kappa_new`` (a draw from the matching conditional when None).
        ``occ`` holds occupancy counts (length K + 1) and is kept current.
        """
        s = self.state
        if occ is None:
            occ = np.bincount(s.z, minlength=s.K + 1)
        k0 = s.z[t]
        start, end, j, l = self._remove(t)
        occ[k0] -= 1
        self._empty_slots(occ)
        probs = self._block_weights(t, start, end, j, l)
        idx = categorical(probs.ravel(), self.rng.random() if u is None else u)
        k, wt, wt1 = (int(v) for v in np.unravel_index(idx, probs.shape))
        if occ[k] == 0:
            if kappa_new is None:
                h = s.hyper
                kappa_new = 0.0 if h.rho1 == 0 else beta_draw(h.rho1, h.rho2 + (not end), self.rng)
            s.kappa[k] = kappa_new
        self._apply(t, k, wt, wt1, start, end, j, l)
        occ[k] += 1
        return occ if occ.size == s.K + 1 else np.append(occ, 0)

    def _kernel_pass(self, packer, u, kfresh):
        s = self.state
        data = self.data
        fam = s.family
        K = s.K
        cap = K + 16
        n = np.zeros((cap, cap), dtype=np.int64)
        n[:K, :K] = s.n
        nrow = n.sum(axis=1)
        S1, S2, S3 = packer.pack(fam, s.stats, cap)
        P1, P2 = packer.params(fam)
        Y = packer.y(data)
        w = s.w.astype(np.int64)
        occ = np.zeros(cap, dtype=np.int64)
        occ[:K] = np.bincount(s.z, minlength=K)
        out = np.zeros(2, dtype=np.int64)
        t0, pend = 0, (-1, 0, 0)
        while True:
            t = packer.run(t0, pend[0], pend[1], pend[2], s.z, w, n, nrow, data.starts,
                           data.ends, data.valid, s.beta.extended(), s.kappa, self._offered_kappa(),
                           kfresh, occ, s.hyper.alpha,
                           K, u, Y, S1, S2, S3, P1, P2, out)
            if t >= data.T:
                break
            if out[0] < 0:
                raise FloatingPointError(f"block weights at t={t} sum to zero or are not finite")
            s.kappa[K] = kfresh[t]
            self._extend_weights()
            K += 1
            if K + 1 >= cap:
                cap *= 2
                n = np.pad(n, ((0, cap - n.shape[0]), (0, cap - n.shape[0])))
                nrow = np.pad(nrow, (0, cap - nrow.size))
                occ = np.pad(occ, (0, cap - occ.size))
                S1 = np.pad(S1, ((0, cap - S1.shape[0]), (0, 0)))
                S2 = np.pad(S2, (0, cap - S2.size))
                S3 = np.pad(S3, (0, cap - S3.size))
            t0, pend = t, (K - 1, int(out[0]), int(out[1]))
        s.w = w.astype(np.int8)
        s.n = n[:K, :K].copy()
        s.stats = packer.unpack(fam, S1, S2, S3, K)

    def block_conditional(self, t):
        """Normalized conditional over (z_t, w_t, w_{t+1}) as a (K+1, 2, 2) array.

        Index K is a fresh state; when t starts a block only w_t = 0 carries
        mass, and when t ends a block only w_{t+1} = 0 does. State is untouched.
        """
        s = self.state
        saved = (s.n.copy(), {k: v.copy() for k, v in s.stats.items()}, s.kappa)
        s.kappa = s.kappa.copy()
        occ = np.bincount(s.z, minlength=s.K + 1)
        occ[s.z[t]] -= 1
        try:
            start, end, j, l = self._remove(t)
            self._empty_slots(occ)
            probs = self._block_weights(t, start, end, j, l)
        finally:
            s.n, s.stats, s.kappa = saved
        return probs / probs.sum()

    def block_sample_zwt(self, t, size=None):
        """Draw (z_t, w_t, w_{t+1}) from the block conditional without applying it.

        With ``size`` returns an array of ``size`` independent draws (rows).
        """
        probs = self.block_conditional(t)
        if size is None:
            idx = categorical(probs.ravel(), self.rng.random())
            return tuple(int(v) for v in np.unravel_index(idx, probs.shape))
        idx = categorical_many(probs.ravel(), self.rng.random(size))
        return np.stack(np.unravel_index(idx, probs.shape), axis=1)

    # ----------------------------------------------------------------- sweep

    def compact(self):
        """Drop empty states, relabel densely and fold their weight into the remainder."""
        s = self.state
        K = s.K
        occupied = np.bincount(s.z, minlength=K) > 0
        if occupied.all():
            return
        keep = np.flatnonzero(occupied)
        if s.n[~occupied].any() or s.n[:, ~occupied].any():
            raise ConsistencyError("empty state still has transitions")
        relabel = np.full(K, -1, dtype=np.int64)
        relabel[keep] = np.arange(keep.size)
        s.z = relabel[s.z]
        s.beta = GlobalWeights(s.beta.weights[keep],
                               s.beta.remainder + s.beta.weights[~occupied].sum())
        s.kappa = np.append(s.kappa[:K][keep], s.kappa[K:])
        s.n = s.n[np.ix_(keep, keep)]
        s.stats = stats_take(s.stats, keep)

    def sweep(self):
        s = self.state
        data = self.data
        u = self.rng.random(data.T)
        kfresh = self._created_kappa()
        packer = packer_for(s.family) if self.use_kernel else None
        if packer is None:
            occ = None
            for t in range(data.T):
                occ = self.update_block(t, u[t], kfresh[t], occ)
        else:
            self._kernel_pass(packer, u, kfresh)
        self.compact()
        K = s.K
        rng = self.rng
        sticks, switches = persistence_counts(s.z, s.w, data.starts, K)
        s.kappa = sample_kappa(sticks, switches, s.hyper.rho1, s.hyper.rho2, rng)
        m = sample_table_counts(s.n, s.hyper.alpha, s.beta, rng)
        init = np.bincount(s.z[data.starts], minlength=K)
        if self.sample_hypers:
            s.hyper = resample_hyperparameters(
                s.hyper, n=s.n, m=m, kappa=s.kappa[:K], priors=self.priors, rng=rng,
                rho_grid=self.rho_grid, sticky_grid=self.sticky_grid,
                top_customers=m.sum() + init.sum(), top_tables=K)
        s.beta = sample_global_weights(m, s.hyper.gamma, rng, extra_counts=init)
        if type(s.family).resample_hyper is not EmissionFamily.resample_hyper:
            s.family = s.family.resample_hyper(s.family.sample_params(s.stats, rng), rng)
        s.iteration += 1
        return s

    # ------------------------------------------------------------ diagnostics

    @property
    def n_states(self):
        return self.state.K

    def joint_loglik(self):
        """log p(y, z, w | beta, kappa, alpha) with transitions and emissions collapsed."""
        s = self.state
        data = self.data
        K = s.K
        a = s.hyper.alpha
        b = s.beta.weights
        with np.errstate(divide="ignore"):
            total = np.log(b[s.z[data.starts]]).sum()
        sticks, switches = persistence_counts(s.z, s.w, data.starts, K)
        kap = s.kappa[:K]
        total += (special.xlogy(sticks, kap) + special.xlog1py(switches, -kap)).sum()
        nrow = s.n.sum(axis=1)
        busy = nrow > 0
        ab = a * b
        total += (special.gammaln(a) - special.gammaln(a + nrow[busy])).sum()
        nz = s.n > 0
        total += (special.gammaln(ab[None, :] + s.n) - special.gammaln(ab)[None, :])[nz].sum()
        total += s.family.log_marginal(s.stats).sum()
        return float(total)

    def check_invariants(self, atol=1e-9):
        s = self.state
        data = self.data
        K = s.K
        if np.unique(s.z).size != K or s.z.min() < 0 or s.z.max() >= K:
            raise ConsistencyError("K does not match the number of distinct labels")
        if np.any(s.w[data.starts] != 0):
            raise ConsistencyError("w must be 0 at block starts")
        inner = np.flatnonzero(~data.starts)
        if np.any((s.w[inner] == 1) & (s.z[inner] != s.z[inner - 1])):
            raise ConsistencyError("w_t = 1 requires z_t = z_{t-1}")
        if not np.array_equal(s.n, transition_counts(s.z, s.w, data.starts, K)):
            raise ConsistencyError("stored transition counts are stale")
        if not stats_equal(s.stats, s.family.accumulate(data, s.z, K), atol=atol):
            raise ConsistencyError("stored sufficient statistics are stale")
        if s.kappa.size != K + 1:
            raise ConsistencyError("kappa must have K + 1 entries")
        if abs(s.beta.total - 1.0) > 1e-12:
            raise ConsistencyError("global weights do not sum to one")

    def posterior_params(self, rng) -> HMMParams:
        """One draw of explicit HMM parameters given the collapsed state.

        All uninstantiated states are lumped into one extra state carrying
        the remainder weight, the prospective self-persistence value and a
        prior emission draw.
        """
        s = self.state
        K = s.K
        a = s.hyper.alpha
        bext = s.beta.extended()
        counts = np.zeros((K + 1, K + 1))
        counts[:K, :K] = s.n
        pibar = dirichlet(a * bext[None, :] + counts, rng)
        kap = s.kappa[:K + 1]
        pi = (1.0 - kap)[:, None] * pibar
        pi[np.arange(K + 1), np.arange(K + 1)] += kap
        stats = stats_concat(s.stats, s.family.empty_stats(1))
        theta = s.family.sample_params(stats, rng)
        return HMMParams(pi=pi, initial=bext, theta=theta, kappa=kap, pibar=pibar)
