"""Deterministic synthetic fixture: a small four-forum post corpus with
planted topic structure, suitable for end-to-end pipeline runs and tests.

Forums alpha and bravo discuss the security block, charlie and delta the
market block; delta occasionally flips to the security block so the fitted
model has visible transitions. With ``anomalies=True`` bravo additionally
spends exactly two weeks on an otherwise-unused third block (a rare state)
and delta gets one week with ten times its usual post volume.
"""

from __future__ import annotations

import json
from datetime import date, timedelta
from pathlib import Path

import numpy as np

__all__ = ["write_fixture", "TOPIC_BLOCKS", "STOPWORDS"]

TOPIC_BLOCKS = {
    "security": [
        "exploit", "malware", "botnet", "payload", "rootkit",
        "phishing", "breach", "keylogger",
    ],
    "market": [
        "vendor", "escrow", "bitcoin", "shipping", "listing",
        "refund", "stealth", "reship",
    ],
    "pharma": [
        "xanax", "adderall", "overnight", "prescription", "generic",
        "dosage", "pharmacy", "tablets",
    ],
}

STOPWORDS = ["the", "and", "for", "with", "this", "that"]

N_WEEKS = 40
START_MONDAY = date(2017, 1, 2)

# deterministic post-count cycles per forum (low variance: no activity peaks)
_COUNT_CYCLES = {
    "alpha": [1, 2, 1, 1, 2],
    "bravo": [2, 1, 1, 2, 1],
    "charlie": [1, 1, 2, 1, 2],
    "delta": [2, 1, 2, 1, 1],
}

# weeks with zero posts (exercises the no-data sentinel state)
_EMPTY_WEEKS = {"charlie": {12, 13, 14}, "delta": {25, 26}}

_SPIKE_WEEK = 30  # delta, anomalies only
_RARE_WEEKS = (20, 21)  # bravo on the pharma block, anomalies only


def _forum_block(forum: str, week: int, anomalies: bool) -> str:
    if anomalies and forum == "bravo" and week in _RARE_WEEKS:
        return "pharma"
    if forum in ("alpha", "bravo"):
        return "security"
    if forum == "delta" and week % 8 in (5, 6):
        return "security"  # delta flips periodically: visible transitions
    return "market"


def _post_text(rng: np.random.Generator, block: str, post_idx: int) -> str:
    words = TOPIC_BLOCKS[block]
    body = [words[int(i)] for i in rng.integers(0, len(words), size=15)]
    filler = [STOPWORDS[int(i)] for i in rng.integers(0, len(STOPWORDS), size=3)]
    tokens = body + filler
    if post_idx % 37 == 0:
        tokens.append(f"hapax{post_idx}")  # filtered out by min_df
    rng.shuffle(tokens)
    return " ".join(tokens)


def default_config(posts_path, stopwords_path, output_dir, seed: int) -> dict:
    return {
        "input": {"posts": str(posts_path), "stopwords": str(stopwords_path)},
        "output_dir": str(output_dir),
        "seed": seed,
        "preprocess": {"min_df": 2, "max_df": 0.9, "min_token_len": 2},
        "forums": {"min_posts": 20, "min_span_days": 28},
        "lda": {
            "topics": 4,
            "alpha": 0.2,
            "beta": 0.01,
            "iterations": 80,
            "fold_in_iterations": 30,
        },
        "weeks": {"start": None, "end": None},
        "bphmm": {
            "sweeps": 150,
            "burn_in": 75,
            "alpha": 2.0,
            "covariance": "diagonal",
            "init_states": 5,
        },
        "analysis": {
            # ~155 nonempty forum-weeks: a 2-week state sits at ~1.3%
            "rare_state_threshold": 0.02,
            "similarity_smoothing": 1e-3,
            "activity_z_threshold": 3.0,
            "smoothing_window": 4,
        },
    }


def write_fixture(
    directory: str | Path, seed: int = 0, anomalies: bool = False
) -> dict:
    """Write posts.jsonl, stopwords.txt, and config.json under ``directory``.
    Returns the paths and the planted ground truth."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 7041776])
    posts_path = directory / "posts.jsonl"
    stop_path = directory / "stopwords.txt"
    config_path = directory / "config.json"

    post_idx = 0
    with posts_path.open("w", encoding="utf-8") as fh:
        for forum, cycle in _COUNT_CYCLES.items():
            for week in range(N_WEEKS):
                n_posts = cycle[week % len(cycle)]
                if week in _EMPTY_WEEKS.get(forum, set()):
                    n_posts = 0
                if anomalies and forum == "delta" and week == _SPIKE_WEEK:
                    n_posts = 10 * n_posts + 5  # ~10x the usual volume
                block = _forum_block(forum, week, anomalies)
                monday = START_MONDAY + timedelta(weeks=week)
                for p in range(n_posts):
                    day = monday + timedelta(days=int(rng.integers(0, 7)))
                    ts = f"{day.isoformat()}T{int(rng.integers(0, 24)):02d}:00:00Z"
                    rec = {
                        "forum_id": forum,
                        "post_id": f"{forum}-{post_idx}",
                        "timestamp": ts,
                        "text": _post_text(rng, block, post_idx),
                    }
                    fh.write(json.dumps(rec) + "\n")
                    post_idx += 1

    stop_path.write_text("\n".join(STOPWORDS) + "\n", encoding="utf-8")
    config = default_config(posts_path, stop_path, directory / "out", seed)
    config_path.write_text(json.dumps(config, indent=2, sort_keys=True))

    truth = {
        "n_posts": post_idx,
        "forums": list(_COUNT_CYCLES),
        "rare_state_weeks": [("bravo", w) for w in _RARE_WEEKS] if anomalies else [],
        "spike_week": ("delta", _SPIKE_WEEK) if anomalies else None,
        "empty_weeks": {f: sorted(w) for f, w in _EMPTY_WEEKS.items()},
    }
    return {
        "posts": posts_path,
        "stopwords": stop_path,
        "config": config_path,
        "truth": truth,
    }
