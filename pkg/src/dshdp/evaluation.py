"""Label matching, forward-algorithm likelihoods and held-out predictive NLL."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AssignmentResult:
    mapping: dict  # row index -> column index, real rows/columns only
    cost: float


def hungarian_min_cost(cost) -> AssignmentResult:
    """Minimum-cost one-to-one assignment (shortest augmenting path, O(n^3)).

    Rectangular matrices are padded with zero-cost dummy rows or columns;
    pairs involving a dummy are left out of ``mapping``.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost matrix must be a non-empty 2-d array")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    r, c = cost.shape
    n = max(r, c)
    a = np.zeros((n + 1, n + 1))
    a[1:r + 1, 1:c + 1] = cost
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[col] = row matched to col
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    mapping = {}
    total = 0.0
    for j in range(1, n + 1):
        i = p[j]
        if i <= r and j <= c:
            mapping[int(i - 1)] = int(j - 1)
            total += cost[i - 1, j - 1]
    return AssignmentResult(mapping, float(total))


def hamming_distance(estimated, truth) -> float:
    """Mismatch fraction after the overlap-maximizing relabeling of ``estimated``.

    Estimated labels left without a partner count as mismatches everywhere.
    """
    est = np.asarray(estimated)
    tru = np.asarray(truth)
    if est.shape != tru.shape:
        raise ValueError(f"length mismatch: {est.size} vs {tru.size}")
    if est.size == 0:
        return 0.0
    e_labels, e_idx = np.unique(est, return_inverse=True)
    t_labels, t_idx = np.unique(tru, return_inverse=True)
    overlap = np.zeros((e_labels.size, t_labels.size))
    np.add.at(overlap, (e_idx, t_idx), 1)
    res = hungarian_min_cost(-overlap)
    matched = sum(overlap[i, j] for i, j in res.mapping.items())
    return float(1.0 - matched / est.size)


def relabel(estimated, truth):
    """``estimated`` rewritten with matched truth labels (-1 for unmatched)."""
    est = np.asarray(estimated)
    tru = np.asarray(truth)
    e_labels, e_idx = np.unique(est, return_inverse=True)
    t_labels, t_idx = np.unique(tru, return_inverse=True)
    overlap = np.zeros((e_labels.size, t_labels.size))
    np.add.at(overlap, (e_idx, t_idx), 1)
    res = hungarian_min_cost(-overlap)
    lut = np.full(e_labels.size, -1, dtype=np.int64)
    for i, j in res.mapping.items():
        lut[i] = t_labels[j]
    return lut[e_idx]


def forward_loglik(pi, initial, loglik) -> float:
    """log p(y_1:T) for a fixed HMM given a (T, K) emission log-likelihood table.

    Uses per-step scaling. Returns -inf if some step has zero probability.
    """
    pi = np.asarray(pi, dtype=float)
    initial = np.asarray(initial, dtype=float)
    loglik = np.asarray(loglik, dtype=float)
    T = loglik.shape[0]
    if T == 0:
        return 0.0
    if pi.shape != (loglik.shape[1],) * 2 or initial.shape != (loglik.shape[1],):
        raise ValueError("dimension mismatch between transitions, initial and emissions")
    shift = loglik.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(shift)):
        return -np.inf
    lik = np.exp(loglik - shift)
    total = float(shift.sum())
    alpha = initial * lik[0]
    for t in range(T):
        if t:
            alpha = (alpha @ pi) * lik[t]
        c = alpha.sum()
        if not c > 0:
            return -np.inf
        alpha /= c
        total += np.log(c)
    return total


@dataclass
class HMMParams:
    """Explicit HMM parameters from one posterior draw."""
    pi: np.ndarray
    initial: np.ndarray
    theta: dict
    kappa: np.ndarray | None = None
    pibar: np.ndarray | None = None

    @property
    def K(self):
        return self.pi.shape[0]

    def to_dict(self):
        out = {"pi": self.pi.tolist(), "initial": self.initial.tolist(),
               "theta": {k: np.asarray(v).tolist() for k, v in self.theta.items()}}
        if self.kappa is not None:
            out["kappa"] = self.kappa.tolist()
        if self.pibar is not None:
            out["pibar"] = self.pibar.tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        arr = lambda key: None if d.get(key) is None else np.asarray(d[key], dtype=float)
        return cls(np.asarray(d["pi"], float), np.asarray(d["initial"], float),
                   {k: np.asarray(v, float) for k, v in d["theta"].items()},
                   arr("kappa"), arr("pibar"))


def hmm_loglik(params: HMMParams, family, data) -> float:
    """Sum of per-block forward log-likelihoods; each block restarts from ``initial``."""
    table = family.loglik_table(params.theta, data)
    edges = np.concatenate(([0], np.cumsum(data.lengths)))
    return float(sum(forward_loglik(params.pi, params.initial, table[a:b])
                     for a, b in zip(edges[:-1], edges[1:])))


def predictive_nll(snapshots, family, data):
    """Negative held-out log-likelihood for each posterior snapshot."""
    snapshots = list(snapshots)
    if not snapshots:
        raise ValueError("no posterior snapshots")
    return [-hmm_loglik(p, family, data) for p in snapshots]
