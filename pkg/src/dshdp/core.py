"""Prior machinery shared by the direct-assignment and weak-limit samplers.

Covers stick-breaking of the global transition weights, Chinese-restaurant
table counts, self-persistence draws and all hyperparameter updates. Gamma
priors are parameterized by (shape, rate).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

KAPPA_CLAMP = 1e-12


class ParameterError(ValueError):
    """A parameter lies outside its legal domain."""


class ConsistencyError(RuntimeError):
    """Sampler bookkeeping disagrees with itself."""


class Variant(str, enum.Enum):
    DS = "ds"
    STICKY = "sticky"
    HDP = "hdp"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ParameterError(f"unknown model variant {value!r}") from None


@dataclass
class HyperParams:
    alpha: float
    gamma: float
    rho1: float
    rho2: float
    variant: Variant = Variant.DS

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        self.validate()

    def validate(self):
        if not (self.alpha > 0 and self.gamma > 0 and self.rho2 > 0 and self.rho1 >= 0):
            raise ParameterError(
                f"illegal hyperparameters alpha={self.alpha} gamma={self.gamma} "
                f"rho1={self.rho1} rho2={self.rho2}")
        if self.variant is Variant.HDP and self.rho1 != 0:
            raise ParameterError("the hdp variant requires rho1 = 0")
        if self.variant is Variant.STICKY and self.rho2 != self.alpha:
            raise ParameterError("the sticky variant requires rho2 = alpha")

    def to_dict(self):
        return {"alpha": float(self.alpha), "gamma": float(self.gamma),
                "rho1": float(self.rho1), "rho2": float(self.rho2),
                "variant": self.variant.value}

    @classmethod
    def from_dict(cls, d):
        return cls(d["alpha"], d["gamma"], d["rho1"], d["rho2"], d["variant"])


@dataclass(frozen=True)
class HyperPriors:
    """Gamma(shape, rate) priors on alpha and gamma, uniform support for eta.

    For the sticky variant the alpha prior is placed on alpha + kappa.
    """
    alpha_shape: float = 1.0
    alpha_rate: float = 0.01
    gamma_shape: float = 2.0
    gamma_rate: float = 1.0
    eta_max: float = 2.0

    def __post_init__(self):
        if min(self.alpha_shape, self.alpha_rate, self.gamma_shape,
               self.gamma_rate, self.eta_max) <= 0:
            raise ParameterError("hyperprior parameters must be positive")


@dataclass
class GlobalWeights:
    """Weights of the K instantiated states plus the mass of all others."""
    weights: np.ndarray
    remainder: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.remainder = float(self.remainder)
        if np.any(self.weights < 0) or self.remainder < 0:
            raise ParameterError("global weights must be nonnegative")

    @property
    def K(self):
        return self.weights.size

    @property
    def total(self):
        return float(self.weights.sum()) + self.remainder

    def extended(self):
        """Weights with the remainder appended as a final entry."""
        return np.append(self.weights, self.remainder)


# ---------------------------------------------------------------------------
# robust draws

def log_gamma_draw(shape, rng, size=None):
    """Log of Gamma(shape, 1) variates, stable for very small shapes."""
    shape = np.asarray(shape, dtype=float)
    if size is None:
        size = shape.shape
    shape = np.broadcast_to(shape, size)
    out = np.full(size, -np.inf)
    pos = shape > 0
    small = pos & (shape < 1)
    big = pos & ~small
    if big.any():
        out[big] = np.log(rng.gamma(shape[big]))
    if small.any():
        s = shape[small]
        # Gamma(a) = Gamma(a + 1) * U^(1/a); for denormal a the log is -inf
        with np.errstate(divide="ignore", over="ignore"):
            out[small] = np.log(rng.gamma(s + 1.0)) + np.log(rng.random(s.shape)) / s
    return out


def dirichlet(params, rng):
    """Dirichlet draw(s) along the last axis; zero parameters give zero weight."""
    params = np.asarray(params, dtype=float)
    if np.any(params < 0) or not np.all(np.isfinite(params)):
        raise ParameterError("Dirichlet parameters must be finite and nonnegative")
    logg = log_gamma_draw(params, rng)
    top = logg.max(axis=-1, keepdims=True)
    if np.any(np.isneginf(top)):
        raise ParameterError("Dirichlet draw with all-zero parameters")
    g = np.exp(logg - top)
    return g / g.sum(axis=-1, keepdims=True)


def beta_draw(a, b, rng):
    """Beta(a, b) draw(s) computed in log space; a = 0 gives 0 and b = 0 gives 1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    if np.any((a == 0) & (b == 0)):
        raise ParameterError("Beta(0, 0) is improper")
    la = log_gamma_draw(a, rng)
    lb = log_gamma_draw(b, rng)
    with np.errstate(invalid="ignore"):
        out = special.expit(la - lb)
    out = np.where(a == 0, 0.0, np.where(b == 0, 1.0, out))
    return out if out.ndim else float(out)


def categorical(weights, u):
    """Index drawn from unnormalized nonnegative weights using uniform u."""
    c = np.cumsum(weights)
    total = c[-1]
    if not total > 0 or not np.isfinite(total):
        raise FloatingPointError("categorical weights sum to zero or are not finite")
    idx = int(np.searchsorted(c, u * total, side="right"))
    if idx >= c.size:  # u * total rounded up to total: take the last positive weight
        idx = int(np.flatnonzero(np.asarray(weights) > 0)[-1])
    return idx


def categorical_many(weights, u):
    """Vectorized :func:`categorical` for an array of uniforms."""
    c = np.cumsum(weights)
    total = c[-1]
    if not total > 0 or not np.isfinite(total):
        raise FloatingPointError("categorical weights sum to zero or are not finite")
    idx = np.searchsorted(c, np.asarray(u) * total, side="right")
    return np.minimum(idx, int(np.flatnonzero(np.asarray(weights) > 0)[-1]))


# ---------------------------------------------------------------------------
# stick breaking and global weights

def gem_prefix(gamma: float, k: int, rng) -> GlobalWeights:
    """First k stick-breaking weights of GEM(gamma) and the leftover mass."""
    if not gamma > 0:
        raise ParameterError("gamma must be positive")
    if k < 0:
        raise ParameterError("k must be nonnegative")
    v = rng.beta(1.0, gamma, size=k)
    left = np.concatenate(([1.0], np.cumprod(1.0 - v)))
    return GlobalWeights(v * left[:-1], left[-1])


def extend_global_weights(beta: GlobalWeights, gamma: float, rng, b: float | None = None) -> GlobalWeights:
    """Break one more stick off the remainder to instantiate a new state."""
    if beta.remainder <= 0:
        raise ParameterError("cannot extend global weights with zero remainder")
    if b is None:
        b = beta_draw(1.0, gamma, rng)
    new = b * beta.remainder
    return GlobalWeights(np.append(beta.weights, new), beta.remainder - new)


def sample_table_counts(n, alpha: float, beta, rng) -> np.ndarray:
    """Number of tables m_jk given n_jk customers and dish weights alpha * beta_k.

    The s-th customer (0-based) opens a new table with probability
    alpha*beta_k / (s + alpha*beta_k).
    """
    n = np.asarray(n, dtype=np.int64)
    weights = beta.weights if isinstance(beta, GlobalWeights) else np.asarray(beta, float)
    if n.ndim != 2 or n.shape[1] != weights.size:
        raise ParameterError(f"count matrix shape {n.shape} does not match {weights.size} weights")
    if np.any(n < 0):
        raise ConsistencyError("negative transition counts")
    m = np.zeros_like(n)
    rows, cols = np.nonzero(n)
    if rows.size == 0:
        return m
    counts = n[rows, cols]
    offsets = np.cumsum(counts) - counts
    s = np.arange(counts.sum()) - np.repeat(offsets, counts)
    conc = np.repeat(alpha * weights[cols], counts)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(s == 0, 1.0, conc / (s + conc))
    opened = rng.random(s.size) < p
    m[rows, cols] = np.add.reduceat(opened.astype(np.int64), offsets)
    return m


def sample_global_weights(m, gamma: float, rng, extra_counts=None) -> GlobalWeights:
    """Dirichlet(m_.1, ..., m_.K, gamma) update of the global weights.

    ``extra_counts`` holds additional direct draws from beta (the first state
    of every sequence block) which enter the Dirichlet parameters as counts.
    """
    m = np.asarray(m)
    col = m.sum(axis=0).astype(float) if m.size else np.zeros(m.shape[1] if m.ndim == 2 else 0)
    if extra_counts is not None:
        col = col + np.asarray(extra_counts, dtype=float)
    if np.any(col <= 0):
        raise ConsistencyError("an active state has no tables; compact states first")
    draw = dirichlet(np.append(col, gamma), rng)
    return GlobalWeights(draw[:-1], draw[-1])


# ---------------------------------------------------------------------------
# self-persistence

def sample_kappa(stick_counts, switch_counts, rho1: float, rho2: float, rng,
                 new_slot: bool = True) -> np.ndarray:
    """Conjugate Beta update of the per-state self-persistence probabilities.

    With ``new_slot`` an extra prior draw for a prospective new state is
    appended. rho1 = 0 with no sticking steps yields exactly zero.
    """
    sticks = np.asarray(stick_counts, dtype=float)
    switches = np.asarray(switch_counts, dtype=float)
    if sticks.shape != switches.shape:
        raise ParameterError("stick and switch counts differ in length")
    if np.any(sticks < 0) or np.any(switches < 0):
        raise ParameterError("negative persistence counts")
    a = rho1 + sticks
    b = rho2 + switches
    if new_slot:
        a = np.append(a, rho1)
        b = np.append(b, rho2)
    if np.any((a == 0) & (b == 0)):
        raise ParameterError("improper self-persistence posterior (rho1 = rho2 = 0, no data)")
    return np.atleast_1d(beta_draw(a, b, rng))


def persistence_counts(z, w, starts, K):
    """Per-state counts of sticking (w=1) and switching (w=0) steps."""
    inner = ~np.asarray(starts, bool)
    inner[0] = False
    prev = np.asarray(z)[np.flatnonzero(inner) - 1]
    ww = np.asarray(w)[inner]
    sticks = np.bincount(prev[ww == 1], minlength=K)
    switches = np.bincount(prev[ww == 0], minlength=K)
    return sticks, switches


def transition_counts(z, w, starts, K):
    """n_jk: number of switching (w=0) transitions j -> k inside blocks."""
    inner = ~np.asarray(starts, bool)
    inner[0] = False
    idx = np.flatnonzero(inner & (np.asarray(w) == 0))
    z = np.asarray(z)
    n = np.zeros((K, K), dtype=np.int64)
    np.add.at(n, (z[idx - 1], z[idx]), 1)
    return n


# ---------------------------------------------------------------------------
# concentration parameters

def sample_concentration(value: float, customers, tables, shape: float, rate: float,
                         rng, n_iter: int = 20) -> float:
    """Auxiliary-variable Gibbs update of a DP concentration parameter.

    Targets p(c) * prod_j c^{m_j} Gamma(c) / Gamma(c + n_j) over restaurants
    with n_j customers and m_j tables (Escobar & West; Teh et al.).
    """
    customers = np.asarray(customers, dtype=float)
    tables = np.asarray(tables, dtype=float)
    keep = customers > 0
    customers, tables = customers[keep], tables[keep]
    if customers.size == 0:
        return float(rng.gamma(shape, 1.0 / rate))
    total_tables = tables.sum()
    for _ in range(n_iter):
        wv = rng.beta(value + 1.0, customers)
        s = rng.random(customers.size) < customers / (customers + value)
        value = rng.gamma(shape + total_tables - s.sum(), 1.0 / (rate - np.log(wv).sum()))
    return float(value)


def sample_concentrations(n, m, alpha: float, gamma: float, priors: HyperPriors, rng,
                          top_customers=None, top_tables=None, n_iter: int = 20):
    """Resample (alpha, gamma) from switching-transition counts and table counts.

    The top-level restaurant has ``top_customers`` customers (default: total
    tables) seated at ``top_tables`` tables (default: number of dishes in use).
    """
    n = np.asarray(n)
    m = np.asarray(m)
    if n.shape != m.shape:
        raise ParameterError("table counts and transition counts differ in shape")
    new_alpha = sample_concentration(alpha, n.sum(axis=1), m.sum(axis=1),
                                     priors.alpha_shape, priors.alpha_rate, rng, n_iter)
    if top_customers is None:
        top_customers = m.sum()
    if top_tables is None:
        top_tables = int(np.count_nonzero(m.sum(axis=0)))
    new_gamma = sample_concentration(gamma, [top_customers], [top_tables],
                                     priors.gamma_shape, priors.gamma_rate, rng, n_iter)
    return new_alpha, new_gamma


def concentration_log_posterior(c, customers, tables, shape, rate):
    """Unnormalized log density targeted by :func:`sample_concentration`."""
    c = np.asarray(c, dtype=float)
    out = stats.gamma.logpdf(c, shape, scale=1.0 / rate)
    for n_j, m_j in zip(np.atleast_1d(customers), np.atleast_1d(tables)):
        if n_j > 0:
            out = out + m_j * np.log(c) + special.gammaln(c) - special.gammaln(c + n_j)
    return out


# ---------------------------------------------------------------------------
# grids for the self-persistence prior

def _beta_loglik_table(kappa, rho1, rho2):
    kappa = np.clip(np.asarray(kappa, dtype=float), KAPPA_CLAMP, 1.0 - KAPPA_CLAMP)
    s1 = np.log(kappa).sum()
    s2 = np.log1p(-kappa).sum()
    return (rho1 - 1.0) * s1 + (rho2 - 1.0) * s2 - kappa.size * special.betaln(rho1, rho2)


def _check_kappa(kappa):
    kappa = np.asarray(kappa, dtype=float)
    if np.any(~np.isfinite(kappa)) or np.any(kappa < 0) or np.any(kappa > 1):
        raise ParameterError("self-persistence values must lie in [0, 1]")
    return kappa


def _normalize_log(table):
    table = table - table.max()
    return table - np.log(np.exp(table).sum())


@dataclass
class RhoGrid:
    """Uniform grid over (phi, eta) with phi = rho1/(rho1+rho2), eta = (rho1+rho2)^(-1/3).

    Cells are represented by their midpoints, so eta = 0 never occurs.
    """
    phi_cells: int = 100
    eta_cells: int = 100
    eta_max: float = 2.0
    phi: np.ndarray = field(init=False, repr=False)
    eta: np.ndarray = field(init=False, repr=False)
    rho1: np.ndarray = field(init=False, repr=False)
    rho2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.phi_cells < 2 or self.eta_cells < 2:
            raise ParameterError("grids need at least 2 x 2 cells")
        self.phi = (np.arange(self.phi_cells) + 0.5) / self.phi_cells
        self.eta = (np.arange(self.eta_cells) + 0.5) * self.eta_max / self.eta_cells
        P, E = np.meshgrid(self.phi, self.eta, indexing="ij")
        total = E ** -3.0
        self.rho1 = P * total
        self.rho2 = (1.0 - P) * total

    def log_posterior(self, kappa) -> np.ndarray:
        """Normalized log posterior over cells under a uniform cell prior."""
        kappa = _check_kappa(kappa)
        if kappa.size == 0:
            return np.full(self.rho1.shape, -np.log(self.rho1.size))
        return _normalize_log(_beta_loglik_table(kappa, self.rho1, self.rho2))

    def cell(self, index):
        i, j = np.unravel_index(index, self.rho1.shape)
        return float(self.rho1[i, j]), float(self.rho2[i, j])


def sample_rho_on_grid(kappa, grid: RhoGrid, rng):
    """Draw (rho1, rho2) from the gridded posterior given self-persistence values."""
    logp = grid.log_posterior(kappa)
    idx = categorical(np.exp(logp).ravel(), rng.random())
    return grid.cell(idx)


@dataclass
class StickyGrid:
    """Grid over (c, phi) for the sticky baseline, c = alpha + kappa and phi = kappa / c.

    c cells sit at the midpoint quantiles of its Gamma prior so that a uniform
    weight over cells reproduces that prior.
    """
    c_cells: int = 100
    phi_cells: int = 100
    shape: float = 1.0
    rate: float = 0.01
    c: np.ndarray = field(init=False, repr=False)
    phi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.c_cells < 2 or self.phi_cells < 2:
            raise ParameterError("grids need at least 2 x 2 cells")
        q = (np.arange(self.c_cells) + 0.5) / self.c_cells
        self.c = stats.gamma.ppf(q, self.shape, scale=1.0 / self.rate)
        self.phi = (np.arange(self.phi_cells) + 0.5) / self.phi_cells

    def log_posterior(self, kappa, customers, tables) -> np.ndarray:
        kappa = _check_kappa(kappa)
        C, P = np.meshgrid(self.c, self.phi, indexing="ij")
        rho1 = C * P
        alpha = C * (1.0 - P)
        table = np.zeros_like(C)
        if kappa.size:
            table += _beta_loglik_table(kappa, rho1, alpha)
        customers = np.asarray(customers, dtype=float)
        tables = np.asarray(tables, dtype=float)
        keep = customers > 0
        for n_j, m_j in zip(customers[keep], tables[keep]):
            table += m_j * np.log(alpha) + special.gammaln(alpha) - special.gammaln(alpha + n_j)
        return _normalize_log(table)

    def sample(self, kappa, customers, tables, rng):
        """Returns (alpha, rho1) drawn from the gridded posterior."""
        logp = self.log_posterior(kappa, customers, tables)
        idx = categorical(np.exp(logp).ravel(), rng.random())
        i, j = np.unravel_index(idx, logp.shape)
        c, phi = self.c[i], self.phi[j]
        return float(c * (1.0 - phi)), float(c * phi)


def resample_hyperparameters(hyper: HyperParams, *, n, m, kappa, priors: HyperPriors,
                             rng, rho_grid: RhoGrid | None = None,
                             sticky_grid: StickyGrid | None = None,
                             top_customers=None, top_tables=None) -> HyperParams:
    """One update of (alpha, gamma, rho1, rho2) for the given model variant.

    ``kappa`` should hold every instantiated self-persistence value.
    """
    variant = Variant.parse(hyper.variant)
    n = np.asarray(n)
    m = np.asarray(m)
    if variant is Variant.DS:
        alpha, gamma = sample_concentrations(n, m, hyper.alpha, hyper.gamma, priors, rng,
                                             top_customers, top_tables)
        rho1, rho2 = sample_rho_on_grid(kappa, rho_grid or RhoGrid(eta_max=priors.eta_max), rng)
        return HyperParams(alpha, gamma, rho1, rho2, variant)
    if variant is Variant.HDP:
        alpha, gamma = sample_concentrations(n, m, hyper.alpha, hyper.gamma, priors, rng,
                                             top_customers, top_tables)
        return HyperParams(alpha, gamma, 0.0, hyper.rho2, variant)
    if variant is Variant.STICKY:
        grid = sticky_grid or StickyGrid(shape=priors.alpha_shape, rate=priors.alpha_rate)
        alpha, rho1 = grid.sample(kappa, n.sum(axis=1), m.sum(axis=1), rng)
        if top_customers is None:
            top_customers = m.sum()
        if top_tables is None:
            top_tables = int(np.count_nonzero(m.sum(axis=0)))
        gamma = sample_concentration(hyper.gamma, [top_customers], [top_tables],
                                     priors.gamma_shape, priors.gamma_rate, rng)
        return HyperParams(alpha, gamma, rho1, alpha, variant)
    raise ParameterError(f"unknown variant {variant!r}")


def initial_hyperparameters(variant, priors: HyperPriors, rng,
                            rho_grid: RhoGrid | None = None,
                            sticky_grid: StickyGrid | None = None) -> HyperParams:
    """Draw starting hyperparameters from their (gridded) priors."""
    variant = Variant.parse(variant)
    gamma = float(rng.gamma(priors.gamma_shape, 1.0 / priors.gamma_rate))
    if variant is Variant.STICKY:
        grid = sticky_grid or StickyGrid(shape=priors.alpha_shape, rate=priors.alpha_rate)
        c = grid.c[rng.integers(grid.c.size)]
        phi = grid.phi[rng.integers(grid.phi.size)]
        alpha = float(c * (1.0 - phi))
        return HyperParams(alpha, gamma, float(c * phi), alpha, variant)
    alpha = float(rng.gamma(priors.alpha_shape, 1.0 / priors.alpha_rate))
    if variant is Variant.HDP:
        return HyperParams(alpha, gamma, 0.0, 1.0, variant)
    grid = rho_grid or RhoGrid(eta_max=priors.eta_max)
    rho1, rho2 = grid.cell(rng.integers(grid.rho1.size))
    return HyperParams(alpha, gamma, rho1, rho2, variant)
