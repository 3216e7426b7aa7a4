"""Weekly topic time series per forum.

Weeks are ISO-8601 calendar weeks of the UTC timestamp, identified by their
Monday date. All forums share one contiguous global week range; a week with
no posts gets the all-zero sentinel vector, which lies off the topic simplex
and is therefore separable from real observations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .corpus import ProcessedCorpus
from .lda import TopicModel, infer_doc

__all__ = ["WeekRange", "ForumSeries", "week_monday", "global_week_range",
           "build_series", "write_series_csv"]


def week_monday(ts: datetime) -> date:
    """Monday of the ISO week containing the UTC instant."""
    d = ts.date()
    return d - timedelta(days=d.isoweekday() - 1)


@dataclass(frozen=True)
class WeekRange:
    """Contiguous range of ISO weeks, inclusive, keyed by Monday dates."""

    start: date
    end: date

    def __post_init__(self):
        if self.start.isoweekday() != 1 or self.end.isoweekday() != 1:
            raise ValueError("week range bounds must be Mondays")
        if self.end < self.start:
            raise ValueError("week range end precedes start")

    @property
    def n_weeks(self) -> int:
        return (self.end - self.start).days // 7 + 1

    def index_of(self, ts: datetime) -> int | None:
        """Week index of a timestamp, or None if outside the range."""
        monday = week_monday(ts)
        if monday < self.start or monday > self.end:
            return None
        return (monday - self.start).days // 7

    def week_dates(self) -> list[date]:
        return [self.start + timedelta(weeks=w) for w in range(self.n_weeks)]


def global_week_range(
    corpus: ProcessedCorpus,
    forum_ids: list[str],
    start: date | None = None,
    end: date | None = None,
) -> WeekRange:
    """Union week range over the given forums, optionally clipped to
    [start, end] (arbitrary dates; snapped to their ISO weeks)."""
    mondays = [
        week_monday(corpus.documents[i].timestamp)
        for fid in forum_ids
        for i in corpus.forum_index.get(fid, [])
    ]
    if not mondays:
        raise ValueError("no posts found for the given forums")
    lo, hi = min(mondays), max(mondays)
    if start is not None:
        snapped = start - timedelta(days=start.isoweekday() - 1)
        lo = max(lo, snapped)
    if end is not None:
        snapped = end - timedelta(days=end.isoweekday() - 1)
        hi = min(hi, snapped)
    return WeekRange(lo, hi)


@dataclass
class ForumSeries:
    forum_id: str
    week_range: WeekRange
    observations: np.ndarray  # (W, K); zero rows are the no-post sentinel
    post_counts: np.ndarray  # (W,) int

    @property
    def n_weeks(self) -> int:
        return self.week_range.n_weeks

    @property
    def n_topics(self) -> int:
        return self.observations.shape[1]

    def to_dict(self) -> dict:
        return {
            "forum_id": self.forum_id,
            "week_start": self.week_range.start.isoformat(),
            "week_end": self.week_range.end.isoformat(),
            "observations": self.observations.tolist(),
            "post_counts": self.post_counts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ForumSeries":
        wr = WeekRange(
            date.fromisoformat(data["week_start"]),
            date.fromisoformat(data["week_end"]),
        )
        return cls(
            forum_id=data["forum_id"],
            week_range=wr,
            observations=np.asarray(data["observations"], dtype=np.float64),
            post_counts=np.asarray(data["post_counts"], dtype=np.int64),
        )


def build_series(
    model: TopicModel,
    corpus: ProcessedCorpus,
    forum_id: str,
    week_range: WeekRange,
    fold_in_iters: int = 50,
    seed: int = 0,
) -> ForumSeries:
    """Weekly mean topic vectors for one forum over the shared week range.

    Each post's topic vector comes from ``infer_doc`` with a per-document
    seed derived from ``seed`` and the document's corpus index, so the result
    does not depend on forum iteration order. Posts outside the range are
    ignored.
    """
    if forum_id not in corpus.forum_index:
        raise KeyError(f"forum {forum_id!r} not present in corpus")
    W = week_range.n_weeks
    K = model.n_topics
    sums = np.zeros((W, K))
    counts = np.zeros(W, dtype=np.int64)
    # fixed accumulation order: permutation-proof down to the last bit
    for doc_idx in sorted(corpus.forum_index[forum_id]):
        doc = corpus.documents[doc_idx]
        w = week_range.index_of(doc.timestamp)
        if w is None:
            continue
        vec = infer_doc(model, doc.token_ids, fold_in_iters, seed=[seed, doc_idx])
        sums[w] += vec
        counts[w] += 1
    if counts.sum() == 0:
        raise ValueError(f"forum {forum_id!r} has no posts in the week range")
    obs = np.zeros((W, K))
    nonempty = counts > 0
    obs[nonempty] = sums[nonempty] / counts[nonempty, None]
    return ForumSeries(forum_id, week_range, obs, counts)


def write_series_csv(series: ForumSeries, path: str | Path) -> None:
    """Per-forum CSV: week_start_date, post_count, k0..k{K-1}."""
    K = series.n_topics
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["week_start_date", "post_count"] + [f"k{i}" for i in range(K)])
        for w, day in enumerate(series.week_range.week_dates()):
            row = [day.isoformat(), int(series.post_counts[w])]
            row += [repr(float(x)) for x in series.observations[w]]
            writer.writerow(row)
