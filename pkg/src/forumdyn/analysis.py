"""Analytics derived from the fitted segmentation model and weekly series:
pairwise similarity, agglomerative clustering, volatility measures,
cross-entropy dynamics, and anomaly reports.

The "empty state" below is any global state whose mean is far off the topic
simplex (coordinate sum < 0.5): only the zero-vector no-post sentinel weeks
produce such states, so it marks weeks without data and is excluded from
volatility and event analytics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bphmm.model import BPHMMModel
from .timeseries import ForumSeries

__all__ = [
    "SimilarityMatrix",
    "Dendrogram",
    "VolatilityReport",
    "RareState",
    "TransitionEvent",
    "ActivityPeak",
    "AnomalyReport",
    "empty_state_ids",
    "expand_transition_model",
    "similarity_matrix",
    "cluster",
    "volatility_hmm",
    "cross_entropy_series",
    "smooth",
    "volatility_report",
    "rare_states",
    "transition_events",
    "activity_peaks",
    "anomaly_report",
]

EMPTY_STATE_MEAN_SUM = 0.5


def empty_state_ids(model: BPHMMModel) -> set[int]:
    """States whose mean lies off the simplex: the no-post sentinel states."""
    sums = model.state_means.sum(axis=1)
    return {int(k) for k in np.flatnonzero(sums < EMPTY_STATE_MEAN_SUM)}


# ---------------------------------------------------------------------------
# similarity and clustering


@dataclass
class SimilarityMatrix:
    series_ids: list[str]
    values: np.ndarray  # (N, N), symmetric, entries in (0, 1]
    smoothing: float


def expand_transition_model(
    model: BPHMMModel, series_index: int, smoothing: float
) -> tuple[np.ndarray, np.ndarray]:
    """Lift one series' transition model to the global state set with
    additive smoothing; rows for states the series never exhibits come out
    uniform."""
    K = model.n_states
    tm = model.transitions[series_index]
    act = np.asarray(tm.active_states, dtype=np.int64)
    T = np.full((K, K), smoothing)
    T[np.ix_(act, act)] += tm.matrix
    T /= T.sum(axis=1, keepdims=True)
    pi = np.full(K, smoothing)
    pi[act] += tm.initial
    pi /= pi.sum()
    return pi, T


def similarity_matrix(model: BPHMMModel, smoothing: float = 1e-3) -> SimilarityMatrix:
    """Symmetric cross-likelihood similarity: average of the per-step
    geometric-mean likelihoods of each sequence under the other's smoothed
    transition model."""
    from .bphmm.hmm import seq_loglik

    if smoothing <= 0:
        raise ValueError("smoothing must be > 0")
    N = model.n_series
    expanded = [expand_transition_model(model, j, smoothing) for j in range(N)]
    cross = np.empty((N, N))
    for i in range(N):
        seq = model.sequences[i].states
        for j in range(N):
            pi, T = expanded[j]
            cross[i, j] = math.exp(seq_loglik(seq, T, pi))
    sim = 0.5 * (cross + cross.T)
    return SimilarityMatrix(list(model.series_ids), sim, smoothing)


@dataclass
class Dendrogram:
    """Binary merge tree over the leaves. Node ids: 0..N-1 are leaves, merge
    m creates node N+m. Heights are the average-linkage distances."""

    labels: list[str]
    merges: list[tuple[int, int, float, int]]  # (left, right, height, size)
    leaf_order: list[int] = field(default_factory=list)

    @property
    def n_leaves(self) -> int:
        return len(self.labels)

    def cut(self, n_clusters: int) -> list[int]:
        """Cluster labels from cutting the tree at ``n_clusters`` groups.
        Labels are 0-based, numbered by each cluster's smallest leaf index."""
        N = self.n_leaves
        if not (1 <= n_clusters <= N):
            raise ValueError(f"n_clusters must be in [1, {N}]")
        parent = list(range(N + len(self.merges)))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for m, (a, b, _, _) in enumerate(self.merges[: N - n_clusters]):
            node = N + m
            parent[find(a)] = node
            parent[find(b)] = node
        roots: dict[int, list[int]] = {}
        for leaf in range(N):
            roots.setdefault(find(leaf), []).append(leaf)
        groups = sorted(roots.values(), key=min)
        out = [0] * N
        for label, members in enumerate(groups):
            for leaf in members:
                out[leaf] = label
        return out

    def to_newick(self) -> str:
        """Newick text with ultrametric branch lengths (leaf depth equals
        half the root height)."""
        N = self.n_leaves
        heights = {i: 0.0 for i in range(N)}
        children: dict[int, tuple[int, int]] = {}
        for m, (a, b, h, _) in enumerate(self.merges):
            node = N + m
            heights[node] = h
            children[node] = (a, b)

        def render(node: int, parent_h: float) -> str:
            length = 0.5 * (parent_h - heights[node])
            if node < N:
                name = self.labels[node].replace(" ", "_").replace(",", "_")
                return f"{name}:{length:.10g}"
            a, b = children[node]
            h = heights[node]
            return f"({render(a, h)},{render(b, h)}):{length:.10g}"

        if not self.merges:
            return f"{self.labels[0]};" if N == 1 else ";"
        root = N + len(self.merges) - 1
        a, b = children[root]
        h = heights[root]
        return f"({render(a, h)},{render(b, h)});"

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "merges": [
                {"left": a, "right": b, "height": h, "size": s}
                for a, b, h, s in self.merges
            ],
            "leaf_order": self.leaf_order,
        }


def cluster(sim: SimilarityMatrix) -> Dendrogram:
    """Average-linkage agglomerative clustering on distance -ln(similarity).

    Ties pick the merge with the lexicographically smallest (id, id) pair.
    """
    N = len(sim.series_ids)
    if N < 1:
        raise ValueError("similarity matrix is empty")
    with np.errstate(divide="ignore"):
        base = -np.log(sim.values)
    dist: dict[tuple[int, int], float] = {}
    for i in range(N):
        for j in range(i + 1, N):
            dist[(i, j)] = float(base[i, j])
    size = {i: 1 for i in range(N)}
    active = set(range(N))
    merges: list[tuple[int, int, float, int]] = []
    last_h = -math.inf
    for m in range(N - 1):
        (a, b) = min(dist, key=lambda p: (dist[p], p))
        h = dist[(a, b)]
        assert h >= last_h - 1e-9, "average-linkage heights must be non-decreasing"
        last_h = max(last_h, h)
        node = N + m
        merges.append((a, b, h, size[a] + size[b]))
        active.discard(a)
        active.discard(b)
        size[node] = size[a] + size[b]
        for c in active:
            ca = (min(a, c), max(a, c))
            cb = (min(b, c), max(b, c))
            d_new = (size[a] * dist[ca] + size[b] * dist[cb]) / size[node]
            dist[(c, node)] = d_new
            del dist[ca], dist[cb]
        del dist[(a, b)]
        active.add(node)

    order: list[int] = []

    def walk(node: int) -> None:
        if node < N:
            order.append(node)
        else:
            a, b, _, _ = merges[node - N]
            walk(a)
            walk(b)

    if merges:
        walk(N + len(merges) - 1)
    else:
        order = [0]
    return Dendrogram(list(sim.series_ids), merges, order)


# ---------------------------------------------------------------------------
# volatility


def volatility_hmm(model: BPHMMModel, forum_index: int) -> float | None:
    """Mean off-diagonal transition mass after dropping the empty state's
    row and column and renormalizing. None when only the empty state is
    exhibited."""
    tm = model.transitions[forum_index]
    empty = empty_state_ids(model)
    keep = [idx for idx, k in enumerate(tm.active_states) if k not in empty]
    if not keep:
        return None
    M = tm.matrix[np.ix_(keep, keep)]
    row_sums = M.sum(axis=1)
    if np.any(row_sums <= 0):
        raise ValueError("transition rows vanish after removing the empty state")
    M = M / row_sums[:, None]
    return float(np.mean(1.0 - np.diag(M)))


def cross_entropy_series(series: ForumSeries, eps: float = 1e-10) -> np.ndarray:
    """Weekly cross-entropy in bits between each nonempty week's topic
    distribution and the forum's timespan-average distribution. Empty weeks
    are NaN."""
    counts = np.asarray(series.post_counts)
    nonempty = counts > 0
    if not nonempty.any():
        raise ValueError("series has no nonempty weeks")
    P = np.asarray(series.observations, dtype=np.float64)
    Q = P[nonempty].mean(axis=0)
    Q = np.maximum(Q, eps)
    Q = Q / Q.sum()
    out = np.full(counts.shape[0], np.nan)
    out[nonempty] = -(P[nonempty] * np.log2(Q)).sum(axis=1)
    return out


def smooth(values, window: int = 4) -> np.ndarray:
    """Trailing rolling mean. Early points average what is available; NaN
    entries are ignored inside the window (all-NaN windows stay NaN)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    vals = np.asarray(values, dtype=np.float64)
    out = np.full(vals.shape[0], np.nan)
    for t in range(vals.shape[0]):
        chunk = vals[max(0, t - window + 1) : t + 1]
        good = chunk[~np.isnan(chunk)]
        if good.size:
            out[t] = good.mean()
    return out


@dataclass
class VolatilityReport:
    forum_ids: list[str]
    hmm_volatility: dict[str, float | None]
    ce_volatility: dict[str, float]
    hmm_ranking: list[str]  # descending volatility; missing values excluded
    ce_ranking: list[str]

    def to_dict(self) -> dict:
        return {
            "forum_ids": self.forum_ids,
            "hmm_volatility": self.hmm_volatility,
            "ce_volatility": self.ce_volatility,
            "hmm_ranking": self.hmm_ranking,
            "ce_ranking": self.ce_ranking,
        }


def volatility_report(
    model: BPHMMModel, series_list: list[ForumSeries], eps: float = 1e-10
) -> VolatilityReport:
    """Both volatility measures with descending rankings; ties break by
    forum id ascending."""
    ids = [s.forum_id for s in series_list]
    if ids != list(model.series_ids):
        raise ValueError("series list does not match the model's series ids")
    hmm_vol = {
        fid: volatility_hmm(model, i) for i, fid in enumerate(ids)
    }
    ce_vol = {
        s.forum_id: float(np.nanmean(cross_entropy_series(s, eps)))
        for s in series_list
    }
    hmm_ranking = sorted(
        (f for f in ids if hmm_vol[f] is not None),
        key=lambda f: (-hmm_vol[f], f),
    )
    ce_ranking = sorted(ids, key=lambda f: (-ce_vol[f], f))
    return VolatilityReport(ids, hmm_vol, ce_vol, hmm_ranking, ce_ranking)


# ---------------------------------------------------------------------------
# anomalies


@dataclass
class RareState:
    state_id: int
    occupancy: float  # fraction of nonempty decoded forum-weeks
    occurrences: list[tuple[str, int]]  # (forum_id, week index)

    def to_dict(self) -> dict:
        return {
            "state_id": self.state_id,
            "occupancy": self.occupancy,
            "occurrences": [
                {"forum_id": f, "week": w} for f, w in self.occurrences
            ],
        }


@dataclass
class TransitionEvent:
    forum_id: str
    week: int
    from_state: int
    to_state: int
    forum_volatility: float

    def to_dict(self) -> dict:
        return {
            "forum_id": self.forum_id,
            "week": self.week,
            "from_state": self.from_state,
            "to_state": self.to_state,
            "forum_volatility": self.forum_volatility,
        }


@dataclass
class ActivityPeak:
    forum_id: str
    week: int
    z_score: float

    def to_dict(self) -> dict:
        return {"forum_id": self.forum_id, "week": self.week, "z_score": self.z_score}


@dataclass
class AnomalyReport:
    rare_states: list[RareState]
    transition_events: list[TransitionEvent]
    activity_peaks: list[ActivityPeak]

    def to_dict(self) -> dict:
        return {
            "rare_states": [r.to_dict() for r in self.rare_states],
            "transition_events": [e.to_dict() for e in self.transition_events],
            "activity_peaks": [p.to_dict() for p in self.activity_peaks],
        }


def rare_states(model: BPHMMModel, occupancy_threshold: float = 0.01) -> list[RareState]:
    """States decoded in a sub-threshold fraction of nonempty forum-weeks,
    with every occurrence listed. The empty state and states never decoded
    are excluded. Sorted by occupancy, then state id."""
    empty = empty_state_ids(model)
    occurrences: dict[int, list[tuple[str, int]]] = {}
    total = 0
    for seq in model.sequences:
        for w, k in enumerate(seq.states):
            k = int(k)
            if k in empty:
                continue
            total += 1
            occurrences.setdefault(k, []).append((seq.forum_id, w))
    if total == 0:
        return []
    out = []
    for k, occ in occurrences.items():
        frac = len(occ) / total
        if frac < occupancy_threshold:
            out.append(RareState(k, frac, occ))
    out.sort(key=lambda r: (r.occupancy, r.state_id))
    return out


def transition_events(model: BPHMMModel) -> list[TransitionEvent]:
    """Weeks where the decoded state changes, excluding hops into or out of
    the empty state. Sorted so events in low-volatility forums come first."""
    empty = empty_state_ids(model)
    events = []
    for i, seq in enumerate(model.sequences):
        vol = volatility_hmm(model, i)
        s = seq.states
        for t in range(1, s.shape[0]):
            a, b = int(s[t - 1]), int(s[t])
            if a != b and a not in empty and b not in empty:
                events.append(TransitionEvent(seq.forum_id, t, a, b, vol))
    events.sort(key=lambda e: (e.forum_volatility, e.forum_id, e.week))
    return events


def activity_peaks(series: ForumSeries, z_threshold: float = 3.0) -> list[ActivityPeak]:
    """Weeks whose post count exceeds mean + z_threshold * stdev of the
    forum's counts. Series shorter than 8 weeks yield nothing."""
    counts = np.asarray(series.post_counts, dtype=np.float64)
    if counts.size < 8:
        return []
    mu = counts.mean()
    sd = counts.std()
    if sd == 0:
        return []
    thr = mu + z_threshold * sd
    return [
        ActivityPeak(series.forum_id, int(w), float((counts[w] - mu) / sd))
        for w in np.flatnonzero(counts > thr)
    ]


def anomaly_report(
    model: BPHMMModel,
    series_list: list[ForumSeries],
    occupancy_threshold: float = 0.01,
    z_threshold: float = 3.0,
) -> AnomalyReport:
    peaks = []
    for s in series_list:
        peaks.extend(activity_peaks(s, z_threshold))
    return AnomalyReport(
        rare_states=rare_states(model, occupancy_threshold),
        transition_events=transition_events(model),
        activity_peaks=peaks,
    )
