"""Corpus ingestion, tokenization, frequency filtering, and forum selection.

Input is a JSON Lines file with one post per line:
``{"forum_id": ..., "post_id": ..., "timestamp": ..., "text": ...}``.
Timestamps are ISO-8601 strings or integer/float epoch seconds; naive
timestamps are taken as UTC.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

__all__ = [
    "RawPost",
    "IngestReport",
    "Vocabulary",
    "ProcessedCorpus",
    "ingest",
    "load_stopwords",
    "tokenize",
    "preprocess",
    "select_forums",
]

_TOKEN_RE = re.compile(r"[0-9a-z]+")

REQUIRED_FIELDS = ("forum_id", "post_id", "timestamp", "text")


@dataclass(frozen=True)
class RawPost:
    forum_id: str
    post_id: str
    timestamp: datetime  # timezone-aware, UTC
    text: str


@dataclass
class IngestReport:
    total_lines: int = 0
    valid: int = 0
    malformed: int = 0
    duplicates: int = 0
    dropped_empty: int = 0  # filled in by preprocess

    def to_dict(self) -> dict:
        return {
            "total_lines": self.total_lines,
            "valid": self.valid,
            "malformed": self.malformed,
            "duplicates": self.duplicates,
            "dropped_empty": self.dropped_empty,
        }


class Vocabulary:
    """Token-to-id mapping with document frequencies.

    Ids are dense, assigned in sorted token order so the mapping is a pure
    function of the retained token set.
    """

    def __init__(self, tokens: list[str], doc_freq: dict[str, int]):
        self.tokens = sorted(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.doc_freq = {t: int(doc_freq[t]) for t in self.tokens}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index[token]

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]


@dataclass
class Document:
    forum_id: str
    timestamp: datetime
    token_ids: np.ndarray  # int32, one entry per token occurrence


@dataclass
class ProcessedCorpus:
    documents: list[Document]
    vocabulary: Vocabulary
    forum_index: dict[str, list[int]] = field(default_factory=dict)
    dropped_empty: int = 0

    def __post_init__(self):
        if not self.forum_index:
            for i, doc in enumerate(self.documents):
                self.forum_index.setdefault(doc.forum_id, []).append(i)

    @property
    def n_documents(self) -> int:
        return len(self.documents)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def forum_ids(self) -> list[str]:
        return sorted(self.forum_index)


def _parse_timestamp(value) -> datetime:
    if isinstance(value, bool):
        raise ValueError("timestamp must be a string or a number")
    if isinstance(value, (int, float)):
        return datetime.fromtimestamp(float(value), tz=timezone.utc)
    if isinstance(value, str):
        text = value.strip()
        # datetime.fromisoformat on 3.10 rejects the trailing Z
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.astimezone(timezone.utc)
    raise ValueError("timestamp must be a string or a number")


def ingest(records_file: str | Path) -> tuple[list[RawPost], IngestReport]:
    """Read a JSON Lines post file, skipping malformed lines and duplicates.

    Duplicate (forum_id, post_id) pairs keep the first occurrence so the
    result is deterministic in file order.
    """
    path = Path(records_file)
    if not path.is_file():
        raise FileNotFoundError(f"records file not found: {path}")

    posts: list[RawPost] = []
    seen: set[tuple[str, str]] = set()
    report = IngestReport()
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            report.total_lines += 1
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not an object")
                missing = [k for k in REQUIRED_FIELDS if k not in rec]
                if missing:
                    raise ValueError(f"missing fields: {missing}")
                forum_id = str(rec["forum_id"])
                post_id = str(rec["post_id"])
                if not forum_id or not post_id:
                    raise ValueError("empty forum_id or post_id")
                ts = _parse_timestamp(rec["timestamp"])
                text = rec["text"]
                if not isinstance(text, str):
                    raise ValueError("text must be a string")
            except (ValueError, KeyError, TypeError, OverflowError, OSError):
                report.malformed += 1
                continue
            key = (forum_id, post_id)
            if key in seen:
                report.duplicates += 1
                continue
            seen.add(key)
            posts.append(RawPost(forum_id, post_id, ts, text))
    report.valid = len(posts)
    return posts, report


def load_stopwords(path: str | Path) -> set[str]:
    """Load a plain-text stopword list, one token per line."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"stopword list not found: {p}")
    words = set()
    with p.open("r", encoding="utf-8") as fh:
        for line in fh:
            w = line.strip().lower()
            if w:
                words.add(w)
    return words


def tokenize(text: str, min_token_len: int = 2) -> list[str]:
    """Lowercase and split on non-alphanumeric boundaries.

    Tokens shorter than ``min_token_len`` are dropped.
    """
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= min_token_len]


def preprocess(
    posts: list[RawPost],
    stopwords: set[str],
    min_df: int,
    max_df: float,
    min_token_len: int = 2,
    report: IngestReport | None = None,
) -> ProcessedCorpus:
    """Tokenize posts, remove stopwords, and filter tokens by document frequency.

    Retains tokens with document frequency in ``[min_df, max_df * n_docs]``
    where ``n_docs`` counts the documents the bounds are evaluated against.
    Because dropping emptied documents changes ``n_docs``, the filter is
    iterated to a fixed point: rerunning preprocess on its own output removes
    nothing further.
    """
    if not posts:
        raise ValueError("preprocess requires at least one post")
    if not (0.0 < max_df <= 1.0):
        raise ValueError(f"max_df must be in (0, 1], got {max_df}")
    if min_df < 1:
        raise ValueError(f"min_df must be >= 1, got {min_df}")

    docs = []
    dropped = 0
    for post in posts:
        toks = [t for t in tokenize(post.text, min_token_len) if t not in stopwords]
        if toks:
            docs.append((post.forum_id, post.timestamp, toks))
        else:
            dropped += 1

    # Fixed-point df filtering: recompute document frequencies after every
    # round of token removal and document dropping until stable.
    while docs:
        n_docs = len(docs)
        df = Counter()
        for _, _, toks in docs:
            df.update(set(toks))
        cutoff = max_df * n_docs
        keep = {t for t, c in df.items() if min_df <= c <= cutoff}
        if len(keep) == len(df):
            break
        next_docs = []
        for forum_id, ts, toks in docs:
            toks = [t for t in toks if t in keep]
            if toks:
                next_docs.append((forum_id, ts, toks))
            else:
                dropped += 1
        docs = next_docs

    if not docs:
        vocab = Vocabulary([], {})
        corpus = ProcessedCorpus([], vocab, dropped_empty=dropped)
    else:
        df = Counter()
        for _, _, toks in docs:
            df.update(set(toks))
        vocab = Vocabulary(list(df), df)
        documents = [
            Document(
                forum_id,
                ts,
                np.array([vocab.id_of(t) for t in toks], dtype=np.int32),
            )
            for forum_id, ts, toks in docs
        ]
        corpus = ProcessedCorpus(documents, vocab, dropped_empty=dropped)
    if report is not None:
        report.dropped_empty = corpus.dropped_empty
    return corpus


def select_forums(
    corpus: ProcessedCorpus,
    min_posts: int = 100,
    min_span: timedelta = timedelta(days=28),
) -> list[str]:
    """Return forums with more than ``min_posts`` posts spanning ``min_span``.

    The post-count test is strict (count > min_posts); the activity-span test
    is inclusive (last - first >= min_span). Result is sorted by forum id.
    """
    if corpus.n_documents == 0:
        raise ValueError("corpus is empty")
    selected = []
    for forum_id, idxs in corpus.forum_index.items():
        if len(idxs) <= min_posts:
            continue
        stamps = [corpus.documents[i].timestamp for i in idxs]
        if max(stamps) - min(stamps) >= min_span:
            selected.append(forum_id)
    return sorted(selected)
