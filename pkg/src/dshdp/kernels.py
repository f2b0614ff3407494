"""Compiled inner loop of the direct-assignment sweep.

The block update for every t is the hot path of the collapsed sampler. For
the multinomial, Gaussian and Poisson families it runs here under numba on
packed copies of the counts and statistics; the autoregressive family keeps
the pure numpy path. Both paths consume the same uniforms, so they produce
the same chain up to floating-point rounding.

Statistics are packed as (S1, S2, S3): a (cap, D) block, the per-state
count, and a per-state scalar. Rows at and beyond K are zero, so row K
doubles as the fresh-state prior.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .emissions import GaussianKnownVar, Multinomial, PoissonVector


@njit(cache=True)
def _pred_multinomial(S1, S2, S3, P1, P2, k, y):
    s = int(y[0])
    return math.log(P1[s] + S1[k, s]) - math.log(P2 + S2[k])


@njit(cache=True)
def _add_multinomial(S1, S2, S3, k, y, sign):
    S1[k, int(y[0])] += sign
    S2[k] += sign


@njit(cache=True)
def _pred_gaussian(S1, S2, S3, P1, P2, k, y):
    m0, v0, s2 = P1[0], P1[1], P1[2]
    var = 1.0 / (1.0 / v0 + S2[k] / s2)
    mean = var * (m0 / v0 + S1[k, 0] / s2)
    tot = var + s2
    d = y[0] - mean
    return -0.5 * (math.log(2.0 * math.pi) + math.log(tot) + d * d / tot)


@njit(cache=True)
def _add_gaussian(S1, S2, S3, k, y, sign):
    S2[k] += sign
    S1[k, 0] += sign * y[0]
    S1[k, 1] += sign * y[0] * y[0]


@njit(cache=True)
def _pred_poisson(S1, S2, S3, P1, P2, k, y):
    out = 0.0
    for c in range(y.shape[0]):
        a = P2 + S1[k, c]
        b = P1[c] + S2[k]
        out += (math.lgamma(a + y[c]) - math.lgamma(a) - math.lgamma(y[c] + 1.0)
                + a * math.log(b / (b + 1.0)) - y[c] * math.log1p(b))
    return out


@njit(cache=True)
def _add_poisson(S1, S2, S3, k, y, sign):
    S2[k] += sign
    lf = 0.0
    for c in range(y.shape[0]):
        S1[k, c] += sign * y[c]
        lf += math.lgamma(y[c] + 1.0)
    S3[k] += sign * lf


def _make_pass(pred, add):
    @njit
    def run(t0, pend_k, pend_wt, pend_wt1, z, w, n, nrow, starts, ends, valid,
            bext, kappa, kmean, kfresh, occ, alpha, K, u, Y, S1, S2, S3, P1, P2, out):
        T = z.shape[0]
        predv = np.empty(K + 1)
        left = np.empty(K + 1)
        probs = np.empty(4 * (K + 1))
        t = t0
        if pend_k >= 0:
            _apply(t, pend_k, pend_wt, pend_wt1, z, w, n, nrow, starts, ends)
            occ[pend_k] += 1
            if valid[t]:
                add(S1, S2, S3, pend_k, Y[t], 1.0)
            t += 1
        while t < T:
            start = starts[t]
            end = ends[t]
            k0 = z[t]
            j = -1
            l = -1
            if not start:
                j = z[t - 1]
                if w[t] == 0:
                    n[j, k0] -= 1
                    nrow[j] -= 1
            if not end:
                l = z[t + 1]
                if w[t + 1] == 0:
                    n[k0, l] -= 1
                    nrow[k0] -= 1
            if valid[t]:
                add(S1, S2, S3, k0, Y[t], -1.0)
            occ[k0] -= 1
            # unoccupied states carry no kappa evidence: offer the prior mean
            if occ[k0] == 0:
                kappa[k0] = kmean
            kappa[K] = kmean
            if valid[t]:
                mx = -np.inf
                for k in range(K + 1):
                    predv[k] = pred(S1, S2, S3, P1, P2, k, Y[t])
                    if predv[k] > mx:
                        mx = predv[k]
                for k in range(K + 1):
                    predv[k] = math.exp(predv[k] - mx)
            else:
                predv[:] = 1.0
            for k in range(K + 1):
                if start:
                    left[k] = bext[k]
                else:
                    left[k] = (1.0 - kappa[j]) * (alpha * bext[k] + n[j, k]) / (alpha + nrow[j])
            probs[:] = 0.0
            if end:
                for k in range(K + 1):
                    probs[4 * k] = left[k] * predv[k]
                if not start:
                    probs[4 * j + 2] = kappa[j] * predv[j]
            else:
                for k in range(K + 1):
                    sw = (1.0 - kappa[k]) * (alpha * bext[l] + n[k, l]) / (alpha + nrow[k])
                    probs[4 * k] = left[k] * sw * predv[k]
                    if k == j:
                        probs[4 * j + 2] = kappa[j] * sw * predv[j]
                probs[4 * l + 1] = left[l] * kappa[l] * predv[l]
                if not start:
                    if j == l:
                        probs[4 * j + 3] = kappa[j] * kappa[j] * predv[j]
                    same = 1.0 if j == l else 0.0
                    probs[4 * j] = (left[j] * (1.0 - kappa[j])
                                    * (alpha * bext[l] + n[j, l] + same)
                                    / (alpha + nrow[j] + 1.0) * predv[j])
            total = 0.0
            for i in range(probs.shape[0]):
                total += probs[i]
            if not (total > 0.0 and total < np.inf):
                out[0] = -1
                return t
            thr = u[t] * total
            acc = 0.0
            idx = -1
            last = 0
            for i in range(probs.shape[0]):
                if probs[i] > 0.0:
                    last = i
                acc += probs[i]
                if acc > thr:
                    idx = i
                    break
            if idx < 0:
                idx = last
            k = idx // 4
            wt = (idx // 2) % 2
            wt1 = idx % 2
            if k == K:
                out[0] = wt
                out[1] = wt1
                return t
            if occ[k] == 0:
                kappa[k] = kfresh[t]
            occ[k] += 1
            _apply(t, k, wt, wt1, z, w, n, nrow, starts, ends)
            if valid[t]:
                add(S1, S2, S3, k, Y[t], 1.0)
            t += 1
        return T
    return run


@njit(cache=True)
def _apply(t, k, wt, wt1, z, w, n, nrow, starts, ends):
    z[t] = k
    if not starts[t]:
        j = z[t - 1]
        w[t] = wt
        if wt == 0:
            n[j, k] += 1
            nrow[j] += 1
    if not ends[t]:
        l = z[t + 1]
        w[t + 1] = wt1
        if wt1 == 0:
            n[k, l] += 1
            nrow[k] += 1


class _Packer:
    def __init__(self, run):
        self.run = run

    def params(self, family):
        raise NotImplementedError


class _MultinomialPacker(_Packer):
    def params(self, fam):
        return fam.concentration.astype(float), float(fam._total)

    def y(self, data):
        return np.asarray(data.y, dtype=float).reshape(data.T, -1)

    def pack(self, fam, stats, cap):
        K = stats["n"].size
        S1 = np.zeros((cap, fam.n_symbols))
        S1[:K] = stats["counts"]
        S2 = np.zeros(cap)
        S2[:K] = stats["n"]
        return S1, S2, np.zeros(cap)

    def unpack(self, fam, S1, S2, S3, K):
        return {"counts": np.rint(S1[:K]).astype(np.int64), "n": np.rint(S2[:K]).astype(np.int64)}


class _GaussianPacker(_Packer):
    def params(self, fam):
        return np.array([fam.prior_mean, fam.prior_var, fam.noise_var]), 0.0

    def y(self, data):
        return np.asarray(data.y, dtype=float).reshape(data.T, 1)

    def pack(self, fam, stats, cap):
        K = stats["n"].size
        S1 = np.zeros((cap, 2))
        S1[:K, 0] = stats["sum"]
        S1[:K, 1] = stats["sumsq"]
        S2 = np.zeros(cap)
        S2[:K] = stats["n"]
        return S1, S2, np.zeros(cap)

    def unpack(self, fam, S1, S2, S3, K):
        return {"n": S2[:K].copy(), "sum": S1[:K, 0].copy(), "sumsq": S1[:K, 1].copy()}


class _PoissonPacker(_Packer):
    def params(self, fam):
        return fam.rate.astype(float), float(fam.shape)

    def y(self, data):
        return np.asarray(data.y, dtype=float).reshape(data.T, -1)

    def pack(self, fam, stats, cap):
        K = stats["n"].size
        S1 = np.zeros((cap, fam.n_dims))
        S1[:K] = stats["sums"]
        S2 = np.zeros(cap)
        S2[:K] = stats["n"]
        S3 = np.zeros(cap)
        S3[:K] = stats["logfact"]
        return S1, S2, S3

    def unpack(self, fam, S1, S2, S3, K):
        return {"n": S2[:K].copy(), "sums": S1[:K].copy(), "logfact": S3[:K].copy()}


_PACKERS = {}


def packer_for(family):
    """Packer for ``family`` or None when only the numpy path is available."""
    for cls, make in ((Multinomial, lambda: _MultinomialPacker(_make_pass(_pred_multinomial, _add_multinomial))),
                      (GaussianKnownVar, lambda: _GaussianPacker(_make_pass(_pred_gaussian, _add_gaussian))),
                      (PoissonVector, lambda: _PoissonPacker(_make_pass(_pred_poisson, _add_poisson)))):
        if type(family) is cls:
            if cls not in _PACKERS:
                _PACKERS[cls] = make()
            return _PACKERS[cls]
    return None
