"""Topic modeling by collapsed Gibbs sampling.

The sampler keeps the usual count matrices (document-topic, topic-word) and
resamples one token assignment at a time; point estimates come from the
final sweep's counts with additive smoothing. All randomness flows through a
single seeded generator, so identical inputs and seed give identical models.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .corpus import ProcessedCorpus

__all__ = [
    "LdaHyperparams",
    "TopicModel",
    "train_lda",
    "infer_doc",
    "top_words",
    "perplexity",
]


@dataclass(frozen=True)
class LdaHyperparams:
    n_topics: int
    alpha: float | None = None  # None -> 50 / n_topics
    beta: float = 0.01
    iterations: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.n_topics < 1:
            raise ValueError("n_topics must be >= 1")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    @property
    def effective_alpha(self) -> float:
        return 50.0 / self.n_topics if self.alpha is None else self.alpha


@njit(cache=True)
def _gibbs_sweep(doc_of, words, z, n_dk, n_kv, n_k, alpha, beta, uniforms, probs):
    K, V = n_kv.shape
    vbeta = V * beta
    for i in range(words.shape[0]):
        d = doc_of[i]
        v = words[i]
        k = z[i]
        n_dk[d, k] -= 1
        n_kv[k, v] -= 1
        n_k[k] -= 1
        total = 0.0
        for kk in range(K):
            total += (n_dk[d, kk] + alpha) * (n_kv[kk, v] + beta) / (n_k[kk] + vbeta)
            probs[kk] = total
        u = uniforms[i] * total
        knew = 0
        while probs[knew] < u and knew < K - 1:
            knew += 1
        z[i] = knew
        n_dk[d, knew] += 1
        n_kv[knew, v] += 1
        n_k[knew] += 1


@njit(cache=True)
def _fold_in_sweeps(words, z, nk, phi, alpha, uniforms, probs, iters):
    K = phi.shape[0]
    idx = 0
    for _ in range(iters):
        for i in range(words.shape[0]):
            v = words[i]
            nk[z[i]] -= 1
            total = 0.0
            for kk in range(K):
                total += (nk[kk] + alpha) * phi[kk, v]
                probs[kk] = total
            u = uniforms[idx] * total
            idx += 1
            knew = 0
            while probs[knew] < u and knew < K - 1:
                knew += 1
            z[i] = knew
            nk[knew] += 1


class TopicModel:
    """Fitted topic model: topic-word matrix phi (K x V), document-topic
    matrix theta (D x K), and the final token-topic assignments."""

    def __init__(
        self,
        phi: np.ndarray,
        theta: np.ndarray,
        hyperparams: LdaHyperparams,
        vocab_tokens: list[str],
        assignments: np.ndarray | None = None,
        doc_offsets: np.ndarray | None = None,
        perplexity_trace: list[float] | None = None,
    ):
        self.phi = phi
        self.theta = theta
        self.hyperparams = hyperparams
        self.vocab_tokens = list(vocab_tokens)
        self.assignments = assignments
        self.doc_offsets = doc_offsets
        self.perplexity_trace = perplexity_trace or []

    @property
    def n_topics(self) -> int:
        return self.phi.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.phi.shape[1]

    def to_dict(self) -> dict:
        hp = self.hyperparams
        return {
            "phi": self.phi.tolist(),
            "theta": self.theta.tolist(),
            "vocabulary": self.vocab_tokens,
            "hyperparams": {
                "n_topics": hp.n_topics,
                "alpha": hp.alpha,
                "beta": hp.beta,
                "iterations": hp.iterations,
                "seed": hp.seed,
            },
            "seed": hp.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TopicModel":
        hp = LdaHyperparams(**data["hyperparams"])
        return cls(
            phi=np.asarray(data["phi"], dtype=np.float64),
            theta=np.asarray(data["theta"], dtype=np.float64),
            hyperparams=hp,
            vocab_tokens=list(data["vocabulary"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "TopicModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _flatten(corpus: ProcessedCorpus) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = [len(doc.token_ids) for doc in corpus.documents]
    total = int(sum(lengths))
    doc_of = np.empty(total, dtype=np.int32)
    words = np.empty(total, dtype=np.int32)
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    pos = 0
    for d, doc in enumerate(corpus.documents):
        n = len(doc.token_ids)
        doc_of[pos : pos + n] = d
        words[pos : pos + n] = doc.token_ids
        pos += n
        offsets[d + 1] = pos
    return doc_of, words, offsets


def _estimates(n_dk, n_kv, n_k, doc_lengths, alpha, beta):
    phi = (n_kv + beta) / (n_k + n_kv.shape[1] * beta)[:, None]
    theta = (n_dk + alpha) / (doc_lengths + n_dk.shape[1] * alpha)[:, None]
    return phi, theta


def train_lda(
    corpus: ProcessedCorpus,
    hp: LdaHyperparams,
    check_counts: bool = False,
    eval_every: int = 1,
) -> TopicModel:
    """Fit a topic model on the corpus by collapsed Gibbs sampling.

    ``eval_every`` controls how often the perplexity trace is recorded (in
    sweeps). With ``check_counts`` the count matrices are validated against
    the documents after every sweep.
    """
    if corpus.n_documents == 0:
        raise ValueError("cannot train on an empty corpus")
    K = hp.n_topics
    V = corpus.vocab_size
    if V < K:
        warnings.warn(
            f"vocabulary size {V} is smaller than topic count {K}", stacklevel=2
        )
    alpha = hp.effective_alpha
    beta = hp.beta

    doc_of, words, offsets = _flatten(corpus)
    D = corpus.n_documents
    doc_lengths = np.diff(offsets).astype(np.float64)

    rng = np.random.default_rng(hp.seed)
    z = rng.integers(0, K, size=words.shape[0]).astype(np.int32)

    n_dk = np.zeros((D, K), dtype=np.float64)
    n_kv = np.zeros((K, V), dtype=np.float64)
    n_k = np.zeros(K, dtype=np.float64)
    np.add.at(n_dk, (doc_of, z), 1.0)
    np.add.at(n_kv, (z, words), 1.0)
    np.add.at(n_k, z, 1.0)

    probs = np.empty(K, dtype=np.float64)
    trace: list[float] = []
    for sweep in range(hp.iterations):
        uniforms = rng.random(words.shape[0])
        _gibbs_sweep(doc_of, words, z, n_dk, n_kv, n_k, alpha, beta, uniforms, probs)
        if check_counts:
            _validate_counts(doc_of, words, z, n_dk, n_kv, n_k)
        if eval_every and sweep % eval_every == 0:
            phi, theta = _estimates(n_dk, n_kv, n_k, doc_lengths, alpha, beta)
            trace.append(_perplexity_arrays(phi, theta, doc_of, words))

    phi, theta = _estimates(n_dk, n_kv, n_k, doc_lengths, alpha, beta)
    return TopicModel(
        phi=phi,
        theta=theta,
        hyperparams=hp,
        vocab_tokens=corpus.vocabulary.tokens,
        assignments=z,
        doc_offsets=offsets,
        perplexity_trace=trace,
    )


def _validate_counts(doc_of, words, z, n_dk, n_kv, n_k):
    D, K = n_dk.shape
    V = n_kv.shape[1]
    ref_dk = np.zeros((D, K))
    ref_kv = np.zeros((K, V))
    np.add.at(ref_dk, (doc_of, z), 1.0)
    np.add.at(ref_kv, (z, words), 1.0)
    if not (
        np.array_equal(ref_dk, n_dk)
        and np.array_equal(ref_kv, n_kv)
        and np.array_equal(ref_kv.sum(axis=1), n_k)
    ):
        raise AssertionError("Gibbs count matrices out of sync with assignments")


def infer_doc(
    model: TopicModel,
    token_ids,
    fold_in_iters: int = 50,
    seed: int = 0,
) -> np.ndarray:
    """Infer a topic distribution for one document with the topic-word matrix
    held fixed. Tokens outside the vocabulary are ignored; a document with no
    usable tokens gets the uniform prior mean."""
    K = model.n_topics
    V = model.vocab_size
    ids = np.asarray(token_ids, dtype=np.int64)
    ids = ids[(ids >= 0) & (ids < V)].astype(np.int32)
    if ids.size == 0 or fold_in_iters < 1:
        return np.full(K, 1.0 / K)
    alpha = model.hyperparams.effective_alpha
    rng = np.random.default_rng(seed)
    z = rng.integers(0, K, size=ids.size).astype(np.int32)
    nk = np.zeros(K, dtype=np.float64)
    np.add.at(nk, z, 1.0)
    uniforms = rng.random(fold_in_iters * ids.size)
    probs = np.empty(K, dtype=np.float64)
    _fold_in_sweeps(ids, z, nk, model.phi, alpha, uniforms, probs, fold_in_iters)
    theta = (nk + alpha) / (ids.size + K * alpha)
    return theta


def top_words(model: TopicModel, topic_index: int, n: int) -> list[tuple[str, float]]:
    """Top-``n`` tokens of a topic by probability, ties broken by token id."""
    if not (0 <= topic_index < model.n_topics):
        raise IndexError(f"topic index {topic_index} out of range")
    row = model.phi[topic_index]
    order = np.lexsort((np.arange(row.size), -row))
    return [(model.vocab_tokens[i], float(row[i])) for i in order[:n]]


def _perplexity_arrays(phi, theta, doc_of, words) -> float:
    token_probs = np.einsum("ik,ki->i", theta[doc_of], phi[:, words])
    return float(np.exp(-np.mean(np.log(token_probs))))


def perplexity(model: TopicModel, corpus: ProcessedCorpus) -> float:
    """exp(-mean per-token log-likelihood) of the corpus under phi and theta.

    Documents are matched to theta rows by index, so the corpus must be the
    one the model was trained on (or have equally many documents)."""
    if corpus.n_documents != model.theta.shape[0]:
        raise ValueError("corpus does not match the model's document count")
    doc_of, words, _ = _flatten(corpus)
    if words.size == 0:
        raise ValueError("corpus has no tokens")
    return _perplexity_arrays(model.phi, model.theta, doc_of, words)
