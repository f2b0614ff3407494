"""Synthetic HMM datasets with known ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .emissions import EmissionFamily, GaussianKnownVar, Multinomial


@dataclass
class GroundTruth:
    pi: np.ndarray
    initial: np.ndarray
    family: EmissionFamily
    params: dict
    z: np.ndarray
    y: np.ndarray
    seed: int | None = None
    kappa: np.ndarray | None = None
    pibar: np.ndarray | None = None


def _rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), rng


def _check_stochastic(p, name, atol=1e-9):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > atol):
        raise ValueError(f"{name} is not a valid probability table")
    return p


def channel_matrix(states, p_correct):
    """Symbol equals the state with probability p_correct, else uniform over the rest."""
    if states == 1:
        return np.ones((1, 1))
    E = np.full((states, states), (1.0 - p_correct) / (states - 1))
    np.fill_diagonal(E, p_correct)
    return E


def _emission(kind, states, p_correct, rng, mean_loc=3.5, mean_sd=6.0, noise_sd=0.5):
    if kind == "multinomial":
        return Multinomial(states), {"p": channel_matrix(states, p_correct)}
    if kind == "gaussian":
        means = rng.normal(mean_loc, mean_sd, size=states)
        return GaussianKnownVar(mean_loc, mean_sd ** 2, noise_sd ** 2), {"mean": means}
    raise ValueError(f"unknown emission kind {kind!r}")


def gen_hmm(pi, initial, family: EmissionFamily, params, T, rng=None) -> GroundTruth:
    """Forward-simulate a fixed-parameter HMM for T steps."""
    rng, seed = _rng(rng)
    pi = _check_stochastic(pi, "transition matrix")
    initial = _check_stochastic(initial, "initial distribution")
    if pi.ndim != 2 or pi.shape[0] != pi.shape[1] or initial.shape != (pi.shape[0],):
        raise ValueError("transition matrix and initial distribution disagree in size")
    T = int(T)
    if T < 0:
        raise ValueError("T must be nonnegative")
    z = np.empty(T, dtype=np.int64)
    cum = np.cumsum(pi, axis=1)
    u = rng.random(T)
    for t in range(T):
        c = np.cumsum(initial) if t == 0 else cum[z[t - 1]]
        z[t] = min(int(np.searchsorted(c, u[t] * c[-1], side="right")), c.size - 1)
    y = family.simulate(params, z, rng) if T else np.zeros(0)
    return GroundTruth(pi, initial, family, params, z, np.asarray(y), seed)


def gen_same_transition(states=8, T=1000, emission="multinomial", rng=None,
                        kappa_range=(0.3, 0.95), p_correct=0.9) -> GroundTruth:
    """Heterogeneous self-persistence with one switching row shared by all states."""
    if states < 2:
        raise ValueError("need at least 2 states")
    rng, seed = _rng(rng)
    kappa = rng.uniform(*kappa_range, size=states)
    pibar = np.full((states, states), 1.0 / states)
    pi = kappa[:, None] * np.eye(states) + (1.0 - kappa)[:, None] * pibar
    family, params = _emission(emission, states, p_correct, rng)
    gt = gen_hmm(pi, np.full(states, 1.0 / states), family, params, T, rng)
    gt.seed, gt.kappa, gt.pibar = seed, kappa, pibar
    return gt


def gen_same_selfpersistence(states=8, T=1000, emission="multinomial", rng=None,
                             kappa=0.8, row_concentration=0.5, p_correct=0.8) -> GroundTruth:
    """One self-persistence value shared by all states, heterogeneous switching rows."""
    if states < 2:
        raise ValueError("need at least 2 states")
    rng, seed = _rng(rng)
    kap = np.full(states, float(kappa))
    pibar = rng.dirichlet(np.full(states, row_concentration), size=states)
    pi = kap[:, None] * np.eye(states) + (1.0 - kap)[:, None] * pibar
    family, params = _emission(emission, states, p_correct, rng)
    gt = gen_hmm(pi, np.full(states, 1.0 / states), family, params, T, rng)
    gt.seed, gt.kappa, gt.pibar = seed, kap, pibar
    return gt
