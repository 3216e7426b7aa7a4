"""HMM message passing: scaled forward filtering, backward sampling,
Viterbi decoding, and Markov-chain sequence likelihoods.

Emissions enter as log-densities; transition and initial distributions as
linear probabilities. The forward recursion rescales per step (messages stay
normalized) and accumulates the log-normalizers, which sum to the sequence
log-likelihood.
"""

from __future__ import annotations

import numpy as np

__all__ = ["forward_messages", "forward_loglik", "ffbs", "viterbi", "seq_loglik"]


def _check_inputs(pi: np.ndarray, T: np.ndarray, log_e: np.ndarray):
    S = pi.shape[0]
    if T.shape != (S, S):
        raise ValueError(f"transition matrix shape {T.shape} != ({S}, {S})")
    if log_e.ndim != 2 or log_e.shape[1] != S:
        raise ValueError(f"emission matrix shape {log_e.shape} incompatible with {S} states")
    if log_e.shape[0] < 1:
        raise ValueError("need at least one observation")


def forward_messages(pi, T, log_e):
    """Normalized forward messages and the total log-likelihood.

    Returns (alphas, loglik) where alphas[t] is p(state_t | obs_{1..t}).
    A sequence with probability zero yields loglik = -inf and uniform
    messages from the vanishing step onward.
    """
    pi = np.asarray(pi, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    log_e = np.atleast_2d(np.asarray(log_e, dtype=np.float64))
    _check_inputs(pi, T, log_e)
    W, S = log_e.shape
    alphas = np.empty((W, S))
    logliks = np.empty(W)
    shift = log_e[0].max()
    w = pi * np.exp(log_e[0] - shift)
    s = w.sum()
    if s <= 0.0 or not np.isfinite(s):
        return np.full((W, S), 1.0 / S), -np.inf
    alphas[0] = w / s
    logliks[0] = np.log(s) + shift
    for t in range(1, W):
        pred = alphas[t - 1] @ T
        shift = log_e[t].max()
        w = pred * np.exp(log_e[t] - shift)
        s = w.sum()
        if s <= 0.0 or not np.isfinite(s):
            return np.full((W, S), 1.0 / S), -np.inf
        alphas[t] = w / s
        logliks[t] = np.log(s) + shift
    return alphas, float(logliks.sum())


def forward_loglik(pi, T, log_e) -> float:
    """Log-likelihood of the observations with states marginalized out."""
    return forward_messages(pi, T, log_e)[1]


def _categorical(rng: np.random.Generator, p: np.ndarray) -> int:
    return int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))


def ffbs(rng: np.random.Generator, pi, T, log_e) -> np.ndarray:
    """Draw one state path from the posterior by forward filtering and
    backward sampling."""
    T = np.asarray(T, dtype=np.float64)
    alphas, loglik = forward_messages(pi, T, log_e)
    if not np.isfinite(loglik):
        raise ValueError("observation sequence has zero probability under the model")
    W, S = alphas.shape
    path = np.empty(W, dtype=np.int64)
    path[W - 1] = _categorical(rng, alphas[W - 1])
    for t in range(W - 2, -1, -1):
        p = alphas[t] * T[:, path[t + 1]]
        path[t] = _categorical(rng, p)
    return path


def viterbi(pi, T, log_e) -> np.ndarray:
    """Most probable state path; ties resolve toward the lower state index."""
    pi = np.asarray(pi, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    log_e = np.atleast_2d(np.asarray(log_e, dtype=np.float64))
    _check_inputs(pi, T, log_e)
    W, S = log_e.shape
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
        log_T = np.log(T)
    delta = log_pi + log_e[0]
    back = np.empty((W, S), dtype=np.int64)
    for t in range(1, W):
        scores = delta[:, None] + log_T  # scores[i, j]: from i to j
        back[t] = np.argmax(scores, axis=0)  # argmax takes the lowest index on ties
        delta = scores[back[t], np.arange(S)] + log_e[t]
    path = np.empty(W, dtype=np.int64)
    path[W - 1] = int(np.argmax(delta))
    for t in range(W - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def seq_loglik(seq, trans, init) -> float:
    """Mean per-step log-likelihood of a state sequence under a Markov chain:
    (log init[s_1] + sum_t log trans[s_t, s_{t+1}]) / len(seq)."""
    seq = np.asarray(seq, dtype=np.int64)
    trans = np.asarray(trans, dtype=np.float64)
    init = np.asarray(init, dtype=np.float64)
    if seq.ndim != 1 or seq.size < 1:
        raise ValueError("sequence must be a nonempty 1-D array of state ids")
    S = trans.shape[0]
    if trans.shape != (S, S) or init.shape != (S,):
        raise ValueError("transition matrix and initial distribution shapes disagree")
    if not np.allclose(trans.sum(axis=1), 1.0, atol=1e-8):
        raise ValueError("transition matrix rows must sum to 1")
    if seq.min() < 0 or seq.max() >= S:
        raise ValueError("sequence contains a state id outside the transition matrix")
    with np.errstate(divide="ignore"):
        total = np.log(init[seq[0]])
        if seq.size > 1:
            total += np.log(trans[seq[:-1], seq[1:]]).sum()
    return float(total / seq.size)
