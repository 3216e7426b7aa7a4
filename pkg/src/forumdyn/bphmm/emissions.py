"""Gaussian emission families with conjugate priors.

Diagonal covariance uses an independent normal-inverse-gamma prior per
dimension; full covariance uses a normal-inverse-Wishart prior with an SPD
projection after sampling. Both expose the same small surface used by the
sampler: draw state parameters from the prior or a data posterior, score the
parameters under the prior, and build the (weeks x states) log-likelihood
matrix.
"""

from __future__ import annotations

from math import lgamma, log, pi

import numpy as np
from scipy import stats

__all__ = [
    "DiagonalGaussianFamily",
    "FullGaussianFamily",
    "make_family",
    "gaussian_loglik_matrix",
]

_LOG_2PI = log(2.0 * pi)


def gaussian_loglik_matrix(X, means, scales, covariance: str) -> np.ndarray:
    """(W, K) log-density of each row of X under each of K Gaussian states.

    ``scales`` holds per-state variance vectors (diagonal) or covariance
    matrices (full).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    means = np.asarray(means, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if covariance == "diagonal":
        D = X.shape[1]
        diff = X[:, None, :] - means[None, :, :]  # (W, K, D)
        quad = (diff**2 / scales[None, :, :]).sum(axis=2)
        logdet = np.log(scales).sum(axis=1)  # (K,)
        return -0.5 * (D * _LOG_2PI + logdet[None, :] + quad)
    if covariance == "full":
        out = np.empty((X.shape[0], means.shape[0]))
        for k in range(means.shape[0]):
            out[:, k] = stats.multivariate_normal.logpdf(
                X, mean=means[k], cov=scales[k], allow_singular=True
            )
        return out
    raise ValueError(f"unknown covariance structure: {covariance!r}")


class DiagonalGaussianFamily:
    """Per-dimension normal-inverse-gamma: var_d ~ InvGamma(a0, b0_d),
    mean_d | var_d ~ Normal(mean0_d, var_d / kappa0)."""

    def __init__(self, mean0, kappa0, a0, b0, var_floor=1e-6):
        self.mean0 = np.asarray(mean0, dtype=np.float64)
        self.kappa0 = float(kappa0)
        self.a0 = float(a0)
        self.b0 = np.broadcast_to(
            np.asarray(b0, dtype=np.float64), self.mean0.shape
        ).copy()
        self.var_floor = float(var_floor)
        if self.kappa0 <= 0 or self.a0 <= 0 or np.any(self.b0 <= 0):
            raise ValueError("prior hyperparameters must be positive")

    @property
    def dim(self) -> int:
        return self.mean0.shape[0]

    def sample_state(self, rng: np.random.Generator, X: np.ndarray | None):
        """Posterior draw of (mean, variance vector); prior draw when X is
        None or empty."""
        if X is None or len(X) == 0:
            kn, mn, an, bn = self.kappa0, self.mean0, self.a0, self.b0
        else:
            X = np.asarray(X, dtype=np.float64)
            n = X.shape[0]
            xbar = X.mean(axis=0)
            ss = ((X - xbar) ** 2).sum(axis=0)
            kn = self.kappa0 + n
            mn = (self.kappa0 * self.mean0 + n * xbar) / kn
            an = self.a0 + 0.5 * n
            bn = self.b0 + 0.5 * ss + 0.5 * self.kappa0 * n * (xbar - self.mean0) ** 2 / kn
        var = bn / rng.gamma(an, 1.0, size=self.dim)
        var = np.maximum(var, self.var_floor)
        mean = mn + rng.standard_normal(self.dim) * np.sqrt(var / kn)
        return mean, var

    def log_state_prior(self, mean: np.ndarray, var: np.ndarray) -> float:
        a0, b0, k0, m0 = self.a0, self.b0, self.kappa0, self.mean0
        lp = a0 * np.log(b0) - lgamma(a0) - (a0 + 1.0) * np.log(var) - b0 / var
        lp += -0.5 * (_LOG_2PI + np.log(var / k0)) - 0.5 * k0 * (mean - m0) ** 2 / var
        return float(lp.sum())

    def log_marginal(self, X: np.ndarray | None) -> float:
        """Log marginal likelihood of the rows of X with (mean, var)
        integrated out, per dimension."""
        if X is None or len(X) == 0:
            return 0.0
        X = np.asarray(X, dtype=np.float64)
        n = X.shape[0]
        xbar = X.mean(axis=0)
        ss = ((X - xbar) ** 2).sum(axis=0)
        kn = self.kappa0 + n
        an = self.a0 + 0.5 * n
        bn = self.b0 + 0.5 * ss + 0.5 * self.kappa0 * n * (xbar - self.mean0) ** 2 / kn
        lp = (
            -0.5 * n * _LOG_2PI
            + 0.5 * (log(self.kappa0) - log(kn))
            + lgamma(an)
            - lgamma(self.a0)
            + self.a0 * np.log(self.b0)
            - an * np.log(bn)
        )
        return float(np.sum(lp))

    def loglik_matrix(self, X: np.ndarray, means: np.ndarray, scales: np.ndarray):
        return gaussian_loglik_matrix(X, means, scales, "diagonal")


class FullGaussianFamily:
    """Normal-inverse-Wishart: Sigma ~ IW(df0, scale0), mean | Sigma ~
    Normal(mean0, Sigma / kappa0). Samples are projected back onto the SPD
    cone (symmetrize, floor eigenvalues)."""

    def __init__(self, mean0, kappa0, df0, scale0, var_floor=1e-6):
        self.mean0 = np.asarray(mean0, dtype=np.float64)
        self.kappa0 = float(kappa0)
        self.df0 = float(df0)
        self.scale0 = np.asarray(scale0, dtype=np.float64)
        self.var_floor = float(var_floor)
        d = self.dim
        if self.kappa0 <= 0:
            raise ValueError("kappa0 must be positive")
        if self.df0 <= d - 1:
            raise ValueError(f"df0 must exceed dim - 1 = {d - 1}")

    @property
    def dim(self) -> int:
        return self.mean0.shape[0]

    def _project_spd(self, S: np.ndarray) -> np.ndarray:
        S = 0.5 * (S + S.T)
        vals, vecs = np.linalg.eigh(S)
        vals = np.maximum(vals, self.var_floor)
        return (vecs * vals) @ vecs.T

    def sample_state(self, rng: np.random.Generator, X: np.ndarray | None):
        if X is None or len(X) == 0:
            kn, mn, dfn, Sn = self.kappa0, self.mean0, self.df0, self.scale0
        else:
            X = np.asarray(X, dtype=np.float64)
            n = X.shape[0]
            xbar = X.mean(axis=0)
            dev = X - xbar
            scatter = dev.T @ dev
            kn = self.kappa0 + n
            mn = (self.kappa0 * self.mean0 + n * xbar) / kn
            dfn = self.df0 + n
            d0 = (xbar - self.mean0)[:, None]
            Sn = self.scale0 + scatter + (self.kappa0 * n / kn) * (d0 @ d0.T)
        Sn = self._project_spd(Sn)
        cov = stats.invwishart.rvs(df=dfn, scale=Sn, random_state=rng)
        cov = self._project_spd(np.atleast_2d(cov))
        chol = np.linalg.cholesky(cov / kn)
        mean = mn + chol @ rng.standard_normal(self.dim)
        return mean, cov

    def log_state_prior(self, mean: np.ndarray, cov: np.ndarray) -> float:
        lp = stats.invwishart.logpdf(cov, df=self.df0, scale=self.scale0)
        lp += stats.multivariate_normal.logpdf(
            mean, mean=self.mean0, cov=cov / self.kappa0, allow_singular=True
        )
        return float(lp)

    def log_marginal(self, X: np.ndarray | None) -> float:
        """Log marginal likelihood of X with (mean, cov) integrated out."""
        if X is None or len(X) == 0:
            return 0.0
        from scipy.special import multigammaln

        X = np.asarray(X, dtype=np.float64)
        n, d = X.shape
        xbar = X.mean(axis=0)
        dev = X - xbar
        scatter = dev.T @ dev
        kn = self.kappa0 + n
        dfn = self.df0 + n
        d0 = (xbar - self.mean0)[:, None]
        Sn = self.scale0 + scatter + (self.kappa0 * n / kn) * (d0 @ d0.T)
        _, logdet0 = np.linalg.slogdet(self.scale0)
        _, logdetn = np.linalg.slogdet(Sn)
        return float(
            -0.5 * n * d * log(pi)
            + 0.5 * d * (log(self.kappa0) - log(kn))
            + multigammaln(0.5 * dfn, d)
            - multigammaln(0.5 * self.df0, d)
            + 0.5 * self.df0 * logdet0
            - 0.5 * dfn * logdetn
        )

    def loglik_matrix(self, X: np.ndarray, means: np.ndarray, scales: np.ndarray):
        return gaussian_loglik_matrix(X, means, scales, "full")


def make_family(covariance: str, mean0, kappa0, a0, b0, df0, var_floor):
    """Build the emission family named by the config."""
    mean0 = np.asarray(mean0, dtype=np.float64)
    if covariance == "diagonal":
        return DiagonalGaussianFamily(mean0, kappa0, a0, b0, var_floor)
    if covariance == "full":
        d = mean0.shape[0]
        df = float(df0) if df0 is not None else d + 2.0
        scale0 = np.diag(np.broadcast_to(np.asarray(b0, dtype=np.float64), (d,)))
        # match the prior expected covariance E[IW] = scale / (df - d - 1)
        denom = max(df - d - 1.0, 1.0)
        return FullGaussianFamily(mean0, kappa0, df, scale0 * denom, var_floor)
    raise ValueError(f"unknown covariance structure: {covariance!r}")
