"""Model containers and sampler configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["McmcConfig", "TransitionModel", "StateSequence", "BPHMMModel"]


@dataclass(frozen=True)
class McmcConfig:
    sweeps: int = 1000
    burn_in: int = 500
    seed: int = 0
    alpha: float = 2.0  # beta-process mass: expected new states decay as alpha/n
    trans_conc: float = 1.0  # symmetric Dirichlet concentration, transition rows
    init_conc: float = 1.0  # symmetric Dirichlet concentration, initial distribution
    covariance: str = "diagonal"  # or "full"
    variance_floor: float = 1e-6
    kappa0: float = 1.0
    a0: float = 2.0
    b0: float | None = None  # None -> pooled empirical variance per dimension
    mean0: list[float] | None = None  # None -> pooled empirical mean
    df0: float | None = None  # full covariance only; None -> dim + 2
    init_states: int = 6

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if not (0 <= self.burn_in < self.sweeps):
            raise ValueError("burn_in must satisfy 0 <= burn_in < sweeps")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.trans_conc <= 0 or self.init_conc <= 0:
            raise ValueError("Dirichlet concentrations must be > 0")
        if self.covariance not in ("diagonal", "full"):
            raise ValueError("covariance must be 'diagonal' or 'full'")
        if self.init_states < 1:
            raise ValueError("init_states must be >= 1")

    def to_dict(self) -> dict:
        return {
            "sweeps": self.sweeps,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "alpha": self.alpha,
            "trans_conc": self.trans_conc,
            "init_conc": self.init_conc,
            "covariance": self.covariance,
            "variance_floor": self.variance_floor,
            "kappa0": self.kappa0,
            "a0": self.a0,
            "b0": self.b0,
            "mean0": self.mean0,
            "df0": self.df0,
            "init_states": self.init_states,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "McmcConfig":
        return cls(**data)


@dataclass
class TransitionModel:
    """Initial distribution and transition matrix over one series' active
    states (global ids, ascending)."""

    active_states: list[int]
    initial: np.ndarray  # (k,)
    matrix: np.ndarray  # (k, k), row-stochastic

    def __post_init__(self):
        k = len(self.active_states)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.initial.shape != (k,) or self.matrix.shape != (k, k):
            raise ValueError("transition model shapes disagree with active state count")
        if not np.allclose(self.matrix.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("transition rows must sum to 1")
        if not np.isclose(self.initial.sum(), 1.0, atol=1e-12):
            raise ValueError("initial distribution must sum to 1")


@dataclass
class StateSequence:
    forum_id: str
    states: np.ndarray  # (W,) global state ids

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass
class BPHMMModel:
    """MAP sample from the posterior: shared Gaussian states, the binary
    series-by-state usage matrix, per-series transition dynamics, and the
    Viterbi-decoded state sequences."""

    series_ids: list[str]
    feature_matrix: np.ndarray  # (N, K) 0/1
    state_means: np.ndarray  # (K, D)
    state_scales: np.ndarray  # (K, D) variances or (K, D, D) covariances
    covariance: str
    transitions: list[TransitionModel]
    sequences: list[StateSequence]
    log_posterior: float
    config: McmcConfig
    observations: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_series(self) -> int:
        return self.feature_matrix.shape[0]

    @property
    def n_states(self) -> int:
        return self.feature_matrix.shape[1]

    @property
    def n_dims(self) -> int:
        return self.state_means.shape[1]

    def active_states(self, series_index: int) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.feature_matrix[series_index])]

    def to_dict(self) -> dict:
        return {
            "series_ids": self.series_ids,
            "feature_matrix": self.feature_matrix.astype(int).tolist(),
            "states": {
                "means": self.state_means.tolist(),
                "scales": self.state_scales.tolist(),
                "covariance": self.covariance,
            },
            "transitions": [
                {
                    "active_states": tm.active_states,
                    "initial": tm.initial.tolist(),
                    "matrix": tm.matrix.tolist(),
                }
                for tm in self.transitions
            ],
            "sequences": [
                {"forum_id": sq.forum_id, "states": sq.states.tolist()}
                for sq in self.sequences
            ],
            "log_posterior": self.log_posterior,
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BPHMMModel":
        return cls(
            series_ids=list(data["series_ids"]),
            feature_matrix=np.asarray(data["feature_matrix"], dtype=np.int8),
            state_means=np.asarray(data["states"]["means"], dtype=np.float64),
            state_scales=np.asarray(data["states"]["scales"], dtype=np.float64),
            covariance=data["states"]["covariance"],
            transitions=[
                TransitionModel(
                    active_states=[int(k) for k in tm["active_states"]],
                    initial=np.asarray(tm["initial"]),
                    matrix=np.asarray(tm["matrix"]),
                )
                for tm in data["transitions"]
            ],
            sequences=[
                StateSequence(sq["forum_id"], np.asarray(sq["states"]))
                for sq in data["sequences"]
            ],
            log_posterior=float(data["log_posterior"]),
            config=McmcConfig.from_dict(data["config"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "BPHMMModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
