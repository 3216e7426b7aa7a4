"""Shared builders for synthetic corpora and series."""

from __future__ import annotations

import json
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest

from forumdyn.corpus import Document, ProcessedCorpus, Vocabulary
from forumdyn.timeseries import ForumSeries, WeekRange


def utc(year, month, day, hour=0) -> datetime:
    return datetime(year, month, day, hour, tzinfo=timezone.utc)


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def corpus_from_token_lists(
    docs: list[list[int]],
    vocab_size: int,
    forum_ids: list[str] | None = None,
    timestamps: list[datetime] | None = None,
) -> ProcessedCorpus:
    """Build a ProcessedCorpus straight from token-id lists. Token names are
    zero-padded so sorted order matches numeric id order."""
    width = len(str(max(vocab_size - 1, 1)))
    tokens = [f"t{i:0{width}d}" for i in range(vocab_size)]
    df = {t: 0 for t in tokens}
    for doc in docs:
        for tid in set(doc):
            df[tokens[tid]] += 1
    vocab = Vocabulary(tokens, df)
    n = len(docs)
    forum_ids = forum_ids or ["f0"] * n
    timestamps = timestamps or [utc(2017, 1, 2) + timedelta(hours=i) for i in range(n)]
    documents = [
        Document(fid, ts, np.asarray(doc, dtype=np.int32))
        for fid, ts, doc in zip(forum_ids, timestamps, docs)
    ]
    return ProcessedCorpus(documents, vocab)


def planted_topic_corpus(
    n_docs: int,
    n_topics: int,
    tokens_per_topic: int,
    doc_len: int,
    seed: int,
    forum_ids: list[str] | None = None,
    timestamps: list[datetime] | None = None,
):
    """Corpus where each document draws all tokens from one topic's disjoint
    vocabulary block. Returns (corpus, true_topic_word, doc_topics)."""
    rng = np.random.default_rng(seed)
    V = n_topics * tokens_per_topic
    doc_topics = rng.integers(0, n_topics, size=n_docs)
    docs = []
    for k in doc_topics:
        lo = int(k) * tokens_per_topic
        docs.append(list(rng.integers(lo, lo + tokens_per_topic, size=doc_len)))
    phi_true = np.zeros((n_topics, V))
    for k in range(n_topics):
        phi_true[k, k * tokens_per_topic : (k + 1) * tokens_per_topic] = (
            1.0 / tokens_per_topic
        )
    corpus = corpus_from_token_lists(docs, V, forum_ids, timestamps)
    return corpus, phi_true, doc_topics


def make_series(
    observations: np.ndarray,
    post_counts=None,
    forum_id: str = "f0",
    start: date = date(2017, 1, 2),
) -> ForumSeries:
    obs = np.asarray(observations, dtype=np.float64)
    W = obs.shape[0]
    if post_counts is None:
        post_counts = np.ones(W, dtype=np.int64)
    wr = WeekRange(start, start + timedelta(weeks=W - 1))
    return ForumSeries(forum_id, wr, obs, np.asarray(post_counts, dtype=np.int64))


def greedy_match_cosine(phi_true: np.ndarray, phi_learned: np.ndarray) -> float:
    """Greedily pair true and learned topics by descending cosine similarity
    and return the mean cosine over the matched pairs."""
    a = phi_true / np.linalg.norm(phi_true, axis=1, keepdims=True)
    b = phi_learned / np.linalg.norm(phi_learned, axis=1, keepdims=True)
    sims = a @ b.T
    pairs = []
    used_t, used_l = set(), set()
    order = np.dstack(np.unravel_index(np.argsort(-sims, axis=None), sims.shape))[0]
    for t, l in order:
        if t in used_t or l in used_l:
            continue
        used_t.add(int(t))
        used_l.add(int(l))
        pairs.append(sims[t, l])
        if len(pairs) == min(sims.shape):
            break
    return float(np.mean(pairs))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
