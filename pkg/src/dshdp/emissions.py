"""Conjugate emission families.

Sufficient statistics and parameters are dicts of arrays whose leading axis
indexes states, so one container serves a single state (leading size 1) or a
whole bank of them. Statistics are updated in place by ``add``/``remove``.

Autoregressive families take the previous observation as ``ctx``; a ``None``
context means the observation has no emission term (first step of a block).
"""
from __future__ import annotations

import numpy as np
from scipy import special, stats

from .core import ParameterError, dirichlet

LOG_2PI = np.log(2.0 * np.pi)


class NumericalDegeneracyError(ArithmeticError):
    pass


def stats_take(stats, idx):
    return {k: v[idx].copy() for k, v in stats.items()}


def stats_concat(a, b):
    return {k: np.concatenate([a[k], b[k]], axis=0) for k in a}


def stats_equal(a, b, atol=0.0):
    if a.keys() != b.keys():
        return False
    return all(a[k].shape == b[k].shape and np.allclose(a[k], b[k], rtol=0, atol=atol)
               for k in a)


class EmissionFamily:
    """Contract shared by the concrete families."""

    name = "abstract"
    autoregressive = False

    def empty_stats(self, k=1):
        raise NotImplementedError

    def add(self, stats, k, y, ctx=None):
        raise NotImplementedError

    def remove(self, stats, k, y, ctx=None):
        raise NotImplementedError

    def predictive_loglik(self, stats, y, ctx=None):
        """Log posterior-predictive density of ``y`` for every state in ``stats``."""
        raise NotImplementedError

    def prior_predictive_loglik(self, y, ctx=None):
        return float(self.predictive_loglik(self.empty_stats(1), y, ctx)[0])

    def log_marginal(self, stats):
        """Log marginal likelihood of each state's assigned data."""
        raise NotImplementedError

    def sample_params(self, stats, rng):
        raise NotImplementedError

    def data_loglik(self, params, y, ctx=None):
        raise NotImplementedError

    def loglik_table(self, params, data):
        """(T, K) log-likelihoods; rows without an emission term are zero."""
        raise NotImplementedError

    def accumulate(self, data, z, K):
        """Fresh statistics for labels ``z`` over ``data``."""
        stats = self.empty_stats(K)
        for t in range(data.T):
            if data.valid[t]:
                self.add(stats, z[t], data.y[t], data.context(t))
        return stats

    def simulate(self, params, z, rng, starts=None):
        raise NotImplementedError

    def resample_hyper(self, params, rng):
        """Updated family after resampling hyperpriors given parameters (default: none)."""
        return self

    def check_observation(self, y):
        pass

    def to_dict(self):
        raise NotImplementedError


# ---------------------------------------------------------------------------

class Multinomial(EmissionFamily):
    """Categorical observations over ``n_symbols`` with a Dirichlet prior."""

    name = "multinomial"

    def __init__(self, n_symbols, concentration=1.0):
        self.n_symbols = int(n_symbols)
        a = np.broadcast_to(np.asarray(concentration, dtype=float), (self.n_symbols,)).copy()
        if self.n_symbols < 1 or np.any(a <= 0):
            raise ParameterError("Dirichlet pseudo-counts must be positive")
        self.concentration = a
        self._total = a.sum()

    def check_observation(self, y):
        if not (0 <= int(y) < self.n_symbols) or int(y) != y:
            raise ParameterError(f"symbol {y} outside 0..{self.n_symbols - 1}")

    def empty_stats(self, k=1):
        return {"counts": np.zeros((k, self.n_symbols), dtype=np.int64),
                "n": np.zeros(k, dtype=np.int64)}

    def add(self, stats, k, y, ctx=None):
        stats["counts"][k, y] += 1
        stats["n"][k] += 1

    def remove(self, stats, k, y, ctx=None):
        stats["counts"][k, y] -= 1
        stats["n"][k] -= 1

    def predictive_loglik(self, stats, y, ctx=None):
        return (np.log(self.concentration[y] + stats["counts"][:, y])
                - np.log(self._total + stats["n"]))

    def prior_predictive_loglik(self, y, ctx=None):
        return float(np.log(self.concentration[y] / self._total))

    def log_marginal(self, stats):
        a = self.concentration
        return (special.gammaln(self._total) - special.gammaln(self._total + stats["n"])
                + (special.gammaln(a + stats["counts"]) - special.gammaln(a)).sum(axis=1))

    def sample_params(self, stats, rng):
        return {"p": dirichlet(self.concentration + stats["counts"], rng)}

    def data_loglik(self, params, y, ctx=None):
        with np.errstate(divide="ignore"):
            return np.log(params["p"][:, y])

    def loglik_table(self, params, data):
        with np.errstate(divide="ignore"):
            return np.log(params["p"]).T[data.y]

    def accumulate(self, data, z, K):
        stats = self.empty_stats(K)
        np.add.at(stats["counts"], (np.asarray(z), data.y), 1)
        stats["n"][:] = stats["counts"].sum(axis=1)
        return stats

    def simulate(self, params, z, rng, starts=None):
        cum = np.cumsum(params["p"][np.asarray(z)], axis=1)
        u = rng.random(len(z))[:, None]
        return np.minimum((u >= cum).sum(axis=1), self.n_symbols - 1).astype(np.int64)

    def to_dict(self):
        return {"family": self.name, "n_symbols": self.n_symbols,
                "concentration": self.concentration.tolist()}


class GaussianKnownVar(EmissionFamily):
    """Scalar Gaussian with fixed noise variance and a normal prior on the mean."""

    name = "gaussian"

    def __init__(self, prior_mean=0.0, prior_var=1.0, noise_var=0.25):
        if prior_var <= 0 or noise_var <= 0:
            raise ParameterError("variances must be positive")
        self.prior_mean = float(prior_mean)
        self.prior_var = float(prior_var)
        self.noise_var = float(noise_var)

    @classmethod
    def from_data(cls, y, noise_var=0.25):
        """Prior mean and variance set to the empirical moments of ``y``."""
        y = np.asarray(y, dtype=float).ravel()
        return cls(y.mean(), y.var(), noise_var)

    def empty_stats(self, k=1):
        return {"n": np.zeros(k), "sum": np.zeros(k), "sumsq": np.zeros(k)}

    def add(self, stats, k, y, ctx=None):
        y = float(np.asarray(y).reshape(()))
        stats["n"][k] += 1
        stats["sum"][k] += y
        stats["sumsq"][k] += y * y

    def remove(self, stats, k, y, ctx=None):
        y = float(np.asarray(y).reshape(()))
        stats["n"][k] -= 1
        stats["sum"][k] -= y
        stats["sumsq"][k] -= y * y

    def posterior(self, stats):
        var = 1.0 / (1.0 / self.prior_var + stats["n"] / self.noise_var)
        mean = var * (self.prior_mean / self.prior_var + stats["sum"] / self.noise_var)
        return mean, var

    def predictive_loglik(self, stats, y, ctx=None):
        y = float(np.asarray(y).reshape(()))
        mean, var = self.posterior(stats)
        s2 = var + self.noise_var
        return -0.5 * (LOG_2PI + np.log(s2) + (y - mean) ** 2 / s2)

    def prior_predictive_loglik(self, y, ctx=None):
        y = float(np.asarray(y).reshape(()))
        s2 = self.prior_var + self.noise_var
        return -0.5 * (LOG_2PI + np.log(s2) + (y - self.prior_mean) ** 2 / s2)

    def log_marginal(self, stats):
        mean, var = self.posterior(stats)
        n, s2, v0 = stats["n"], self.noise_var, self.prior_var
        return (-0.5 * n * (LOG_2PI + np.log(s2)) - stats["sumsq"] / (2 * s2)
                - self.prior_mean ** 2 / (2 * v0) + mean ** 2 / (2 * var)
                + 0.5 * np.log(var / v0))

    def sample_params(self, stats, rng):
        mean, var = self.posterior(stats)
        return {"mean": mean + np.sqrt(var) * rng.standard_normal(mean.shape)}

    def data_loglik(self, params, y, ctx=None):
        y = float(np.asarray(y).reshape(()))
        return -0.5 * (LOG_2PI + np.log(self.noise_var)
                       + (y - params["mean"]) ** 2 / self.noise_var)

    def loglik_table(self, params, data):
        y = np.asarray(data.y, dtype=float).reshape(-1, 1)
        return -0.5 * (LOG_2PI + np.log(self.noise_var)
                       + (y - params["mean"][None, :]) ** 2 / self.noise_var)

    def accumulate(self, data, z, K):
        y = np.asarray(data.y, dtype=float).ravel()
        z = np.asarray(z)
        return {"n": np.bincount(z, minlength=K).astype(float),
                "sum": np.bincount(z, weights=y, minlength=K),
                "sumsq": np.bincount(z, weights=y * y, minlength=K)}

    def simulate(self, params, z, rng, starts=None):
        z = np.asarray(z)
        return params["mean"][z] + np.sqrt(self.noise_var) * rng.standard_normal(z.size)

    def to_dict(self):
        return {"family": self.name, "prior_mean": self.prior_mean,
                "prior_var": self.prior_var, "noise_var": self.noise_var}


class PoissonVector(EmissionFamily):
    """Independent Poisson counts per coordinate with Gamma(shape, rate_c) priors.

    The per-coordinate rate parameters carry a Gamma(hyper_shape, hyper_rate)
    hyperprior and are refreshed by :meth:`resample_hyper`.
    """

    name = "poisson"

    def __init__(self, n_dims, shape=1.0, rate=1.0, hyper_shape=1.0, hyper_rate=1.0):
        self.n_dims = int(n_dims)
        self.shape = float(shape)
        self.rate = np.broadcast_to(np.asarray(rate, dtype=float), (self.n_dims,)).copy()
        self.hyper_shape = float(hyper_shape)
        self.hyper_rate = float(hyper_rate)
        if self.shape <= 0 or np.any(self.rate <= 0) or min(self.hyper_shape, self.hyper_rate) <= 0:
            raise ParameterError("gamma parameters must be positive")

    def check_observation(self, y):
        y = np.asarray(y)
        if y.shape != (self.n_dims,):
            raise ParameterError(f"expected {self.n_dims} counts, got shape {y.shape}")
        if np.any(y < 0):
            raise ParameterError("counts must be nonnegative")

    def empty_stats(self, k=1):
        return {"n": np.zeros(k), "sums": np.zeros((k, self.n_dims)), "logfact": np.zeros(k)}

    def add(self, stats, k, y, ctx=None):
        y = np.asarray(y, dtype=float)
        stats["n"][k] += 1
        stats["sums"][k] += y
        stats["logfact"][k] += special.gammaln(y + 1.0).sum()

    def remove(self, stats, k, y, ctx=None):
        y = np.asarray(y, dtype=float)
        stats["n"][k] -= 1
        stats["sums"][k] -= y
        stats["logfact"][k] -= special.gammaln(y + 1.0).sum()

    def predictive_loglik(self, stats, y, ctx=None):
        y = np.asarray(y, dtype=float)
        a = self.shape + stats["sums"]
        b = self.rate[None, :] + stats["n"][:, None]
        terms = (special.gammaln(a + y) - special.gammaln(a) - special.gammaln(y + 1.0)
                 + a * np.log(b / (b + 1.0)) - y * np.log1p(b))
        return terms.sum(axis=1)

    def log_marginal(self, stats):
        a0, b0 = self.shape, self.rate[None, :]
        a = a0 + stats["sums"]
        b = b0 + stats["n"][:, None]
        terms = a0 * np.log(b0) - special.gammaln(a0) + special.gammaln(a) - a * np.log(b)
        return terms.sum(axis=1) - stats["logfact"]

    def sample_params(self, stats, rng):
        a = self.shape + stats["sums"]
        b = self.rate[None, :] + stats["n"][:, None]
        return {"rate": rng.gamma(a) / b}

    def data_loglik(self, params, y, ctx=None):
        y = np.asarray(y, dtype=float)
        lam = params["rate"]
        return (y * np.log(lam) - lam - special.gammaln(y + 1.0)).sum(axis=1)

    def loglik_table(self, params, data):
        Y = np.asarray(data.y, dtype=float)
        lam = params["rate"]
        return Y @ np.log(lam).T - lam.sum(axis=1)[None, :] - special.gammaln(Y + 1.0).sum(axis=1)[:, None]

    def accumulate(self, data, z, K):
        Y = np.asarray(data.y, dtype=float)
        z = np.asarray(z)
        sums = np.zeros((K, self.n_dims))
        np.add.at(sums, z, Y)
        return {"n": np.bincount(z, minlength=K).astype(float), "sums": sums,
                "logfact": np.bincount(z, weights=special.gammaln(Y + 1.0).sum(axis=1), minlength=K)}

    def simulate(self, params, z, rng, starts=None):
        return rng.poisson(params["rate"][np.asarray(z)]).astype(np.int64)

    def resample_hyper(self, params, rng):
        lam = params["rate"]
        shape = self.hyper_shape + lam.shape[0] * self.shape
        rate = self.hyper_rate + lam.sum(axis=0)
        new = rng.gamma(shape, 1.0 / rate)
        return PoissonVector(self.n_dims, self.shape, new, self.hyper_shape, self.hyper_rate)

    def to_dict(self):
        return {"family": self.name, "n_dims": self.n_dims, "shape": self.shape,
                "rate": self.rate.tolist(), "hyper_shape": self.hyper_shape,
                "hyper_rate": self.hyper_rate}


def _logdet(mats):
    sign, ld = np.linalg.slogdet(mats)
    if np.any(sign <= 0):
        raise NumericalDegeneracyError("matrix is not positive definite")
    return ld


class ARGaussian(EmissionFamily):
    """Vector autoregression y_t ~ N(A y_{t-1}, Sigma) with a MNIW prior.

    A | Sigma ~ MN(M, Sigma, V) and Sigma ~ IW(S0, n0).
    """

    name = "ar"
    autoregressive = True

    def __init__(self, dim, M=None, V=None, n0=None, S0=None):
        d = self.dim = int(dim)
        self.M = np.zeros((d, d)) if M is None else np.asarray(M, dtype=float).reshape(d, d)
        self.V = np.eye(d) if V is None else np.asarray(V, dtype=float).reshape(d, d)
        self.n0 = float(d + 2 if n0 is None else n0)
        self.S0 = np.eye(d) if S0 is None else np.asarray(S0, dtype=float).reshape(d, d)
        if self.n0 <= d + 1:
            raise ParameterError("inverse-Wishart degrees of freedom must exceed dim + 1")
        for mat in (self.V, self.S0):
            if not np.allclose(mat, mat.T) or np.any(np.linalg.eigvalsh(mat) <= 0):
                raise ParameterError("V and S0 must be symmetric positive definite")
        self.Vinv = np.linalg.inv(self.V)
        self._MVinv = self.M @ self.Vinv
        self._MVinvMT = self._MVinv @ self.M.T
        self._logdet_S0 = _logdet(self.S0)
        self._logdet_Vinv = _logdet(self.Vinv)

    @classmethod
    def from_data(cls, Y, scale=0.75):
        """Default prior: M = 0, V = I, n0 = d + 2, S0 = scale * empirical covariance."""
        Y = np.asarray(Y, dtype=float)
        d = Y.shape[1]
        centered = Y - Y.mean(axis=0)
        cov = centered.T @ centered / Y.shape[0]
        return cls(d, S0=scale * cov)

    def check_observation(self, y):
        if np.asarray(y).shape != (self.dim,):
            raise ParameterError(f"expected {self.dim}-dimensional observation")

    def empty_stats(self, k=1):
        d = self.dim
        return {"n": np.zeros(k), "yy": np.zeros((k, d, d)),
                "yx": np.zeros((k, d, d)), "xx": np.zeros((k, d, d))}

    def add(self, stats, k, y, ctx=None):
        if ctx is None:
            return
        y = np.asarray(y, dtype=float)
        x = np.asarray(ctx, dtype=float)
        stats["n"][k] += 1
        stats["yy"][k] += np.outer(y, y)
        stats["yx"][k] += np.outer(y, x)
        stats["xx"][k] += np.outer(x, x)

    def remove(self, stats, k, y, ctx=None):
        if ctx is None:
            return
        y = np.asarray(y, dtype=float)
        x = np.asarray(ctx, dtype=float)
        stats["n"][k] -= 1
        stats["yy"][k] -= np.outer(y, y)
        stats["yx"][k] -= np.outer(y, x)
        stats["xx"][k] -= np.outer(x, x)

    def posterior(self, stats):
        """Posterior (M_n, V_n, n_n, S_n) for every state, batched."""
        Sxx = stats["xx"] + self.Vinv
        Syx = stats["yx"] + self._MVinv
        Syy = stats["yy"] + self._MVinvMT
        try:
            Vn = np.linalg.inv(Sxx)
        except np.linalg.LinAlgError as exc:
            raise NumericalDegeneracyError(str(exc)) from exc
        Mn = Syx @ Vn
        Sn = self.S0 + Syy - Mn @ np.swapaxes(Syx, -1, -2)
        Sn = 0.5 * (Sn + np.swapaxes(Sn, -1, -2))
        return Mn, Vn, self.n0 + stats["n"], Sn

    def predictive_loglik(self, stats, y, ctx=None):
        K = stats["n"].shape[0]
        if ctx is None:
            return np.zeros(K)
        d = self.dim
        y = np.asarray(y, dtype=float)
        x = np.asarray(ctx, dtype=float)
        Mn, Vn, nn, Sn = self.posterior(stats)
        nu = nn - d + 1.0
        c = 1.0 + np.einsum("i,kij,j->k", x, Vn, x)
        scale = Sn * (c / nu)[:, None, None]
        resid = y[None, :] - Mn @ x
        try:
            L = np.linalg.cholesky(scale)
        except np.linalg.LinAlgError as exc:
            raise NumericalDegeneracyError("predictive scale is not positive definite") from exc
        sol = np.linalg.solve(L, resid[:, :, None])[:, :, 0]
        maha = (sol ** 2).sum(axis=1)
        logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        return (special.gammaln((nu + d) / 2.0) - special.gammaln(nu / 2.0)
                - 0.5 * d * np.log(nu * np.pi) - 0.5 * logdet
                - 0.5 * (nu + d) * np.log1p(maha / nu))

    def log_marginal(self, stats):
        d = self.dim
        Mn, Vn, nn, Sn = self.posterior(stats)
        n = stats["n"]
        return (-0.5 * n * d * np.log(np.pi)
                + _multigammaln(nn / 2.0, d) - _multigammaln(self.n0 / 2.0, d)
                + 0.5 * self.n0 * self._logdet_S0 - 0.5 * nn * _logdet(Sn)
                + 0.5 * d * (self._logdet_Vinv + _logdet(Vn)))

    def sample_params(self, stats, rng):
        Mn, Vn, nn, Sn = self.posterior(stats)
        K, d = Mn.shape[0], self.dim
        A = np.empty((K, d, d))
        Sigma = np.empty((K, d, d))
        for k in range(K):
            try:
                Sig = stats_invwishart(Sn[k], nn[k], rng)
                LS = np.linalg.cholesky(Sig)
                LV = np.linalg.cholesky(Vn[k])
            except np.linalg.LinAlgError as exc:
                raise NumericalDegeneracyError("MNIW posterior is not positive definite") from exc
            Sigma[k] = Sig
            A[k] = Mn[k] + LS @ rng.standard_normal((d, d)) @ LV.T
        return {"A": A, "Sigma": Sigma}

    def data_loglik(self, params, y, ctx=None):
        K = params["A"].shape[0]
        if ctx is None:
            return np.zeros(K)
        y = np.asarray(y, dtype=float)
        x = np.asarray(ctx, dtype=float)
        mean = params["A"] @ x
        return _gauss_logpdf(y[None, :] - mean, params["Sigma"])

    def loglik_table(self, params, data):
        K = params["A"].shape[0]
        out = np.zeros((data.T, K))
        idx = np.flatnonzero(data.valid)
        Y = data.y[idx]
        X = data.ctx[idx]
        for k in range(K):
            resid = Y - X @ params["A"][k].T
            out[idx, k] = _gauss_logpdf(resid, params["Sigma"][k])
        return out

    def accumulate(self, data, z, K):
        stats = self.empty_stats(K)
        idx = np.flatnonzero(data.valid)
        Y, X, zz = data.y[idx], data.ctx[idx], np.asarray(z)[idx]
        stats["n"][:] = np.bincount(zz, minlength=K)
        np.add.at(stats["yy"], zz, Y[:, :, None] * Y[:, None, :])
        np.add.at(stats["yx"], zz, Y[:, :, None] * X[:, None, :])
        np.add.at(stats["xx"], zz, X[:, :, None] * X[:, None, :])
        return stats

    def simulate(self, params, z, rng, starts=None):
        z = np.asarray(z)
        T, d = z.size, self.dim
        if starts is None:
            starts = np.zeros(T, bool)
            if T:
                starts[0] = True
        Y = np.zeros((T, d))
        chol = np.linalg.cholesky(params["Sigma"])
        for t in range(T):
            noise = chol[z[t]] @ rng.standard_normal(d)
            Y[t] = noise if starts[t] else params["A"][z[t]] @ Y[t - 1] + noise
        return Y

    def to_dict(self):
        return {"family": self.name, "dim": self.dim, "M": self.M.tolist(),
                "V": self.V.tolist(), "n0": self.n0, "S0": self.S0.tolist()}


def _gauss_logpdf(resid, Sigma):
    resid = np.atleast_2d(resid)
    L = np.linalg.cholesky(Sigma)
    d = resid.shape[-1]
    if L.ndim == 2:
        sol = np.linalg.solve(L, resid.T).T
        logdet = 2.0 * np.log(np.diag(L)).sum()
    else:
        sol = np.linalg.solve(L, resid[:, :, None])[:, :, 0]
        logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    return -0.5 * (d * LOG_2PI + logdet + (sol ** 2).sum(axis=-1))


def stats_invwishart(scale, df, rng):
    return np.atleast_2d(stats.invwishart.rvs(df=df, scale=scale, random_state=rng))


def _multigammaln(a, d):
    a = np.asarray(a, dtype=float)
    i = np.arange(d)
    return 0.25 * d * (d - 1) * np.log(np.pi) + special.gammaln(a[..., None] - 0.5 * i).sum(axis=-1)


FAMILIES = {cls.name: cls for cls in (Multinomial, GaussianKnownVar, PoissonVector, ARGaussian)}


def family_from_dict(d):
    d = dict(d)
    name = d.pop("family")
    if name not in FAMILIES:
        raise ParameterError(f"unknown emission family {name!r}")
    return FAMILIES[name](**d)
