"""Blocked Gibbs sampler on the finite weak-limit truncation.

With L states, beta ~ Dir(gamma/L, ..., gamma/L) and each switching row
pibar_j ~ Dir(alpha * beta). The state sequence is drawn jointly by
backward filtering / forward sampling on the effective transition matrix
kappa_j delta_j + (1 - kappa_j) pibar_j, after which w_t is recovered.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (ConsistencyError, HyperParams, HyperPriors, RhoGrid, StickyGrid,
                   dirichlet, persistence_counts, resample_hyperparameters, sample_kappa,
                   sample_table_counts, transition_counts)
from .emissions import EmissionFamily
from .evaluation import HMMParams


def effective_transitions(kappa, pibar):
    kappa = np.asarray(kappa, dtype=float)
    pi = (1.0 - kappa)[:, None] * np.asarray(pibar, dtype=float)
    pi[np.diag_indices_from(pi)] += kappa
    return pi


def backward_messages(pi, loglik, ends=None):
    """Normalized backward messages and their log scales.

    Returns (msg, logc, shift, lik): ``msg[t]`` sums to one and the true
    message m_{t+1,t} equals msg[t] * exp(logc[t]); ``lik`` holds the
    emission likelihoods scaled by exp(-shift[t]). At block ends the message
    is identically 1.
    """
    pi = np.asarray(pi, dtype=float)
    loglik = np.asarray(loglik, dtype=float)
    T, L = loglik.shape
    if ends is None:
        ends = np.zeros(T, dtype=bool)
        ends[-1] = True
    shift = loglik.max(axis=1)
    if not np.all(np.isfinite(shift)):
        raise FloatingPointError("a step has zero likelihood under every state")
    lik = np.exp(loglik - shift[:, None])
    msg = np.empty((T, L))
    logc = np.empty(T)
    for t in range(T - 1, -1, -1):
        if ends[t]:
            msg[t] = 1.0 / L
            logc[t] = np.log(L)
            continue
        v = pi @ (lik[t + 1] * msg[t + 1])
        c = v.sum()
        if not c > 0:
            raise FloatingPointError(f"backward message vanished at t={t}")
        msg[t] = v / c
        logc[t] = np.log(c) + shift[t + 1] + logc[t + 1]
    return msg, logc, shift, lik


def marginal_loglik(initial, msg, logc, shift, lik, starts):
    """log p(y) summed over blocks, from the retained message scales."""
    idx = np.flatnonzero(starts)
    total = 0.0
    for t in idx:
        total += np.log(np.dot(initial, lik[t] * msg[t])) + shift[t] + logc[t]
    return float(total)


def forward_sample_zw(initial, kappa, pibar, msg, lik, starts, rng):
    """Draw (z, w) jointly from their conditional given all parameters."""
    kappa = np.asarray(kappa, dtype=float)
    pi = effective_transitions(kappa, pibar)
    T, L = lik.shape
    u = rng.random((T, 2))
    post = lik * msg
    z = np.empty(T, dtype=np.int64)
    w = np.zeros(T, dtype=np.int8)
    for t in range(T):
        if starts[t]:
            p = initial * post[t]
        else:
            j = z[t - 1]
            p = pi[j] * post[t]
        c = np.cumsum(p)
        total = c[-1]
        if not total > 0:
            raise FloatingPointError(f"forward sampling weights vanished at t={t}")
        k = int(np.searchsorted(c, u[t, 0] * total, side="right"))
        if k >= L:
            k = int(np.flatnonzero(p > 0)[-1])
        z[t] = k
        if not starts[t] and k == z[t - 1]:
            stay = kappa[k]
            den = stay + (1.0 - stay) * pibar[k, k]
            w[t] = 1 if u[t, 1] * den < stay else 0
    return z, w


def sample_pibar_beta(n, m, alpha, gamma, L, rng, extra_counts=None):
    """beta ~ Dir(gamma/L + m_.k [+ extra]) then pibar_j ~ Dir(alpha beta + n_j)."""
    n = np.asarray(n, dtype=float)
    m = np.asarray(m, dtype=float)
    if n.shape != (L, L) or m.shape != (L, L):
        raise ValueError(f"count matrices must be {L}x{L}")
    col = m.sum(axis=0)
    if extra_counts is not None:
        col = col + np.asarray(extra_counts, dtype=float)
    beta = dirichlet(gamma / L + col, rng)
    pibar = dirichlet(alpha * beta[None, :] + n, rng)
    return beta, pibar


def top_level_tables(beta_counts, gamma, L, rng):
    """Tables in the top restaurant when dish k has beta_counts[k] customers."""
    counts = np.asarray(beta_counts, dtype=np.int64)[None, :]
    return sample_table_counts(counts, gamma, np.full(L, 1.0 / L), rng)[0]


@dataclass
class WeakLimitChainState:
    L: int
    z: np.ndarray
    w: np.ndarray
    beta: np.ndarray
    pibar: np.ndarray
    kappa: np.ndarray
    theta: dict
    hyper: HyperParams
    n: np.ndarray
    family: EmissionFamily
    iteration: int = 0

    @property
    def pi(self):
        return effective_transitions(self.kappa, self.pibar)


@dataclass
class WeakLimitSampler:
    data: object
    family: EmissionFamily
    hyper: HyperParams
    rng: np.random.Generator
    L: int = 20
    priors: HyperPriors = field(default_factory=HyperPriors)
    rho_grid: RhoGrid | None = None
    sticky_grid: StickyGrid | None = None
    init_labels: np.ndarray | None = None
    sample_hypers: bool = True
    state: WeakLimitChainState | None = None

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("truncation level must be at least 1")
        if self.rho_grid is None:
            self.rho_grid = RhoGrid(eta_max=self.priors.eta_max)
        if self.sticky_grid is None:
            self.sticky_grid = StickyGrid(shape=self.priors.alpha_shape, rate=self.priors.alpha_rate)
        if self.state is None:
            self.state = self._initialize()

    def _initialize(self):
        data, L, rng, h = self.data, self.L, self.rng, self.hyper
        if self.init_labels is not None:
            labels = np.asarray(self.init_labels)
            if labels.shape != (data.T,):
                raise ValueError(f"initial labels have length {labels.size}, expected {data.T}")
            _, z = np.unique(labels, return_inverse=True)
            if z.max() >= L:
                raise ValueError(f"initial labels use {z.max() + 1} states, more than L={L}")
        else:
            z = rng.integers(L, size=data.T)
        z = z.astype(np.int64)
        w = np.zeros(data.T, dtype=np.int8)
        n = transition_counts(z, w, data.starts, L)
        m = sample_table_counts(n, h.alpha, np.full(L, 1.0 / L), rng)
        init = np.bincount(z[data.starts], minlength=L)
        beta, pibar = sample_pibar_beta(n, m, h.alpha, h.gamma, L, rng, init)
        sticks, switches = persistence_counts(z, w, data.starts, L)
        kappa = sample_kappa(sticks, switches, h.rho1, h.rho2, rng, new_slot=False)
        theta = self.family.sample_params(self.family.accumulate(data, z, L), rng)
        return WeakLimitChainState(L, z, w, beta, pibar, kappa, theta, h, n, self.family)

    def loglik_table(self):
        s = self.state
        return s.family.loglik_table(s.theta, self.data)

    def sweep(self):
        s, data, rng, L = self.state, self.data, self.rng, self.L
        msg, _, _, lik = backward_messages(s.pi, self.loglik_table(), data.ends)
        s.z, s.w = forward_sample_zw(s.beta, s.kappa, s.pibar, msg, lik, data.starts, rng)
        s.n = transition_counts(s.z, s.w, data.starts, L)
        sticks, switches = persistence_counts(s.z, s.w, data.starts, L)
        s.kappa = sample_kappa(sticks, switches, s.hyper.rho1, s.hyper.rho2, rng, new_slot=False)
        m = sample_table_counts(s.n, s.hyper.alpha, s.beta, rng)
        init = np.bincount(s.z[data.starts], minlength=L)
        dish_counts = m.sum(axis=0) + init
        if self.sample_hypers:
            top = top_level_tables(dish_counts, s.hyper.gamma, L, rng)
            s.hyper = resample_hyperparameters(
                s.hyper, n=s.n, m=m, kappa=s.kappa, priors=self.priors, rng=rng,
                rho_grid=self.rho_grid, sticky_grid=self.sticky_grid,
                top_customers=dish_counts.sum(), top_tables=top.sum())
        s.beta, s.pibar = sample_pibar_beta(s.n, m, s.hyper.alpha, s.hyper.gamma, L, rng, init)
        s.theta = s.family.sample_params(s.family.accumulate(data, s.z, L), rng)
        if type(s.family).resample_hyper is not EmissionFamily.resample_hyper:
            s.family = s.family.resample_hyper(s.theta, rng)
        s.iteration += 1
        return s

    @property
    def n_states(self):
        return int(np.unique(self.state.z).size)

    def joint_loglik(self):
        """log p(y, z, w | beta, pibar, kappa, theta)."""
        s, data = self.state, self.data
        table = self.loglik_table()
        T = data.T
        with np.errstate(divide="ignore"):
            total = np.log(s.beta[s.z[data.starts]]).sum()
            inner = np.flatnonzero(~data.starts)
            prev, cur = s.z[inner - 1], s.z[inner]
            stick = s.w[inner] == 1
            total += np.log(s.kappa[prev[stick]]).sum()
            total += (np.log1p(-s.kappa[prev[~stick]])
                      + np.log(s.pibar[prev[~stick], cur[~stick]])).sum()
        total += table[np.arange(T), s.z].sum()
        return float(total)

    def marginal_loglik(self):
        """log p(y | beta, pibar, kappa, theta) with z, w summed out."""
        s, data = self.state, self.data
        msg, logc, shift, lik = backward_messages(s.pi, self.loglik_table(), data.ends)
        return marginal_loglik(s.beta, msg, logc, shift, lik, data.starts)

    def check_invariants(self, atol=1e-12):
        s, data = self.state, self.data
        if abs(s.beta.sum() - 1.0) > atol or np.any(np.abs(s.pibar.sum(axis=1) - 1.0) > atol):
            raise ConsistencyError("beta or pibar rows are not normalized")
        if np.any(np.abs(s.pi.sum(axis=1) - 1.0) > atol):
            raise ConsistencyError("effective transition rows are not normalized")
        inner = np.flatnonzero(~data.starts)
        if np.any(s.w[data.starts] != 0) or np.any((s.w[inner] == 1) & (s.z[inner] != s.z[inner - 1])):
            raise ConsistencyError("w_t = 1 requires z_t = z_{t-1}")
        if not np.array_equal(s.n, transition_counts(s.z, s.w, data.starts, self.L)):
            raise ConsistencyError("stored transition counts are stale")

    def posterior_params(self, rng=None) -> HMMParams:
        s = self.state
        return HMMParams(pi=s.pi, initial=s.beta.copy(),
                         theta={k: v.copy() for k, v in s.theta.items()},
                         kappa=s.kappa.copy(), pibar=s.pibar.copy())
