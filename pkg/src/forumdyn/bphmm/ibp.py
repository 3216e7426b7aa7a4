"""Indian buffet process draws and the matching log-prior on binary
feature matrices.

Customers arrive in order; the first takes Poisson(alpha) dishes, the n-th
takes each existing dish k with probability m_k / n (its popularity so far)
plus Poisson(alpha / n) new dishes.
"""

from __future__ import annotations

from collections import Counter
from math import lgamma, log

import numpy as np

__all__ = ["sample_ibp", "sample_finite_feature_matrix", "ibp_log_prior"]


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_ibp(n_series: int, alpha: float, seed=0) -> np.ndarray:
    """One draw from the IBP: binary matrix of shape (n_series, total dishes)."""
    if n_series < 1:
        raise ValueError("n_series must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    rng = _as_rng(seed)
    columns: list[np.ndarray] = []
    popularity: list[int] = []
    for n in range(1, n_series + 1):
        for k, m_k in enumerate(popularity):
            if rng.random() < m_k / n:
                columns[k][n - 1] = 1
                popularity[k] += 1
        new = rng.poisson(alpha / n)
        for _ in range(new):
            col = np.zeros(n_series, dtype=np.int8)
            col[n - 1] = 1
            columns.append(col)
            popularity.append(1)
    if not columns:
        return np.zeros((n_series, 0), dtype=np.int8)
    return np.column_stack(columns)


def sample_finite_feature_matrix(
    n_series: int, n_features: int, alpha: float, seed=0
) -> np.ndarray:
    """Finite beta-Bernoulli draw: theta_k ~ Beta(alpha/K, 1) shared down
    each column, entries Bernoulli(theta_k)."""
    if n_series < 1 or n_features < 1:
        raise ValueError("n_series and n_features must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    rng = _as_rng(seed)
    thetas = rng.beta(alpha / n_features, 1.0, size=n_features)
    return (rng.random((n_series, n_features)) < thetas).astype(np.int8)


def ibp_log_prior(F: np.ndarray, alpha: float) -> float:
    """Log-probability of the feature matrix's left-ordered equivalence class.

    Requires no all-zero columns. Returns -inf for alpha = 0 with a nonempty
    matrix (and 0.0 for the empty matrix).
    """
    F = np.asarray(F)
    N, K = F.shape
    m = F.sum(axis=0)
    if K and m.min() == 0:
        raise ValueError("feature matrix has an all-zero column")
    harmonic = sum(1.0 / n for n in range(1, N + 1))
    if K == 0:
        return -alpha * harmonic
    if alpha <= 0:
        return -np.inf
    # multiplicity of identical column patterns
    patterns = Counter(F[:, k].tobytes() for k in range(K))
    lp = K * log(alpha) - alpha * harmonic
    lp -= sum(lgamma(c + 1) for c in patterns.values())
    for m_k in m:
        lp += lgamma(N - m_k + 1) + lgamma(m_k) - lgamma(N + 1)
    return float(lp)
