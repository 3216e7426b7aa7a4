"""MCMC inference for the joint segmentation model.

Each sweep runs five blocks:
  (a) Gibbs updates of shared features: for a state used by at least one
      other series, the on-probability combines the buffet-process
      conditional m_k / N with the marginal data likelihood from the
      forward filter.
  (b) Birth/death Metropolis-Hastings moves on each series' unique states,
      with acceptance matched to the Poisson(alpha / N) prior on the number
      of unique states; new parameters are proposed from their priors.
  (c) Blocked resampling of every state sequence by forward filtering and
      backward sampling.
  (d) Conjugate posterior draws of the Gaussian state parameters.
  (e) Dirichlet posterior draws of initial and transition distributions,
      kept as unnormalized gamma weights over the full state set so that
      feature toggles in the next sweep have transition parameters for
      newly activated states.

The returned model is the post-burn-in sample with the highest joint log
posterior; its sequences are Viterbi decodes under that sample's parameters.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import gammaln

from .emissions import gaussian_loglik_matrix, make_family
from .hmm import ffbs, forward_loglik, viterbi
from .ibp import ibp_log_prior
from .model import BPHMMModel, McmcConfig, StateSequence, TransitionModel

__all__ = ["fit_bphmm", "decode"]


def _coerce_series(series) -> tuple[list[str], list[np.ndarray]]:
    ids, arrays = [], []
    for i, item in enumerate(series):
        if hasattr(item, "observations") and hasattr(item, "forum_id"):
            ids.append(str(item.forum_id))
            arrays.append(np.asarray(item.observations, dtype=np.float64))
        else:
            ids.append(f"series{i}")
            arrays.append(np.atleast_2d(np.asarray(item, dtype=np.float64)))
    return ids, arrays


def _collapsed_chain_logprob(
    zi: np.ndarray, active: np.ndarray, c_trans: float, c_init: float
) -> float:
    """log p(z | active states) with the initial distribution and every
    transition row integrated out against their symmetric Dirichlet priors."""
    k = active.size
    lp = math.log(c_init) - math.log(k * c_init)  # Dirichlet-multinomial, one draw
    if zi.size < 2:
        return lp
    loc = np.searchsorted(active, zi)
    counts = np.zeros((k, k))
    np.add.at(counts, (loc[:-1], loc[1:]), 1.0)
    row_tot = counts.sum(axis=1)
    lp += float(
        np.sum(gammaln(k * c_trans) - gammaln(k * c_trans + row_tot))
        + np.sum(gammaln(c_trans + counts) - gammaln(c_trans))
    )
    return lp


class _Sampler:
    def __init__(self, ids: list[str], Y: list[np.ndarray], cfg: McmcConfig):
        self.ids = ids
        self.Y = Y
        self.cfg = cfg
        self.N = len(Y)
        self.D = Y[0].shape[1]
        self.rng = np.random.default_rng(cfg.seed)

        pooled = np.vstack(Y)
        mean0 = (
            pooled.mean(axis=0)
            if cfg.mean0 is None
            else np.asarray(cfg.mean0, dtype=np.float64)
        )
        b0 = (
            np.maximum(pooled.var(axis=0), cfg.variance_floor)
            if cfg.b0 is None
            else np.broadcast_to(float(cfg.b0), (self.D,)).copy()
        )
        self.family = make_family(
            cfg.covariance, mean0, cfg.kappa0, cfg.a0, b0, cfg.df0, cfg.variance_floor
        )

        self._init_from_kmeans(pooled)
        self._refresh_emission_cache()

    # ------------------------------------------------------------------
    # initialization

    def _init_from_kmeans(self, pooled: np.ndarray) -> None:
        cfg = self.cfg
        distinct = np.unique(pooled, axis=0)
        k0 = min(cfg.init_states, distinct.shape[0])
        if distinct.shape[0] <= cfg.init_states:
            # few distinct observations: one cluster per distinct row
            _, labels = np.unique(pooled, axis=0, return_inverse=True)
            k0 = distinct.shape[0]
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # empty clusters are pruned below
                _, labels = kmeans2(pooled, k0, minit="++", rng=self.rng)
        used = np.unique(labels)
        remap = {int(old): new for new, old in enumerate(used)}
        labels = np.array([remap[int(l)] for l in labels], dtype=np.int64)
        K = used.size

        self.F = np.zeros((self.N, K), dtype=bool)
        self.z = []
        pos = 0
        for i, Yi in enumerate(self.Y):
            zi = labels[pos : pos + Yi.shape[0]]
            pos += Yi.shape[0]
            self.z.append(zi.copy())
            self.F[i, np.unique(zi)] = True

        self.means = np.empty((K, self.D))
        if cfg.covariance == "diagonal":
            self.scales = np.empty((K, self.D))
        else:
            self.scales = np.empty((K, self.D, self.D))
        for k in range(K):
            X = pooled[labels == k]
            self.means[k], self.scales[k] = self.family.sample_state(self.rng, X)

        self.trans_w = np.empty((self.N, K, K))
        self.init_w = np.empty((self.N, K))
        self._sample_transition_weights()

    # ------------------------------------------------------------------
    # helpers

    @property
    def K(self) -> int:
        return self.F.shape[1]

    def _refresh_emission_cache(self) -> None:
        self.log_E = [
            gaussian_loglik_matrix(Yi, self.means, self.scales, self.cfg.covariance)
            for Yi in self.Y
        ]

    def _restricted(self, i: int, active: np.ndarray):
        w0 = self.init_w[i, active]
        pi = w0 / w0.sum()
        wt = self.trans_w[i][np.ix_(active, active)]
        T = wt / wt.sum(axis=1, keepdims=True)
        return pi, T

    def _series_loglik(self, i: int, active: np.ndarray) -> float:
        pi, T = self._restricted(i, active)
        return forward_loglik(pi, T, self.log_E[i][:, active])

    # ------------------------------------------------------------------
    # sweep blocks

    def _sample_shared_features(self) -> None:
        N = self.N
        m = self.F.sum(axis=0)
        for i in range(N):
            cur_ll: float | None = None
            for k in range(self.K):
                m_minus = int(m[k]) - int(self.F[i, k])
                if m_minus == 0:
                    continue  # unique features belong to the birth/death move
                on = self.F[i].copy()
                on[k] = True
                off = on.copy()
                off[k] = False
                act_on = np.flatnonzero(on)
                act_off = np.flatnonzero(off)
                if act_off.size == 0:
                    continue  # a series must keep at least one state
                if self.F[i, k]:
                    ll_on = cur_ll if cur_ll is not None else self._series_loglik(i, act_on)
                    ll_off = self._series_loglik(i, act_off)
                else:
                    ll_off = cur_ll if cur_ll is not None else self._series_loglik(i, act_off)
                    ll_on = self._series_loglik(i, act_on)
                log_odds = math.log(m_minus) - math.log(N - m_minus) + ll_on - ll_off
                if log_odds > 35:
                    p_on = 1.0
                elif log_odds < -35:
                    p_on = 0.0
                else:
                    p_on = 1.0 / (1.0 + math.exp(-log_odds))
                new_val = self.rng.random() < p_on
                if new_val != self.F[i, k]:
                    m[k] += 1 if new_val else -1
                    self.F[i, k] = new_val
                cur_ll = ll_on if new_val else ll_off

    def _grow_state(self, i: int, mean_new, scale_new, init_w_new, trans_row, trans_col):
        """Commit a birth: append one state column everywhere. The proposing
        series keeps the weights used during evaluation; other series get
        fresh prior draws."""
        K, N, cfg = self.K, self.N, self.cfg
        self.F = np.hstack([self.F, np.zeros((N, 1), dtype=bool)])
        self.F[i, K] = True
        self.means = np.vstack([self.means, mean_new[None]])
        self.scales = np.concatenate([self.scales, scale_new[None]], axis=0)

        new_trans = np.empty((N, K + 1, K + 1))
        new_trans[:, :K, :K] = self.trans_w
        new_trans[:, :K, K] = self.rng.gamma(cfg.trans_conc, size=(N, K))
        new_trans[:, K, :] = self.rng.gamma(cfg.trans_conc, size=(N, K + 1))
        new_trans[i, :K, K] = trans_col
        new_trans[i, K, :] = trans_row
        self.trans_w = new_trans

        new_init = np.empty((N, K + 1))
        new_init[:, :K] = self.init_w
        new_init[:, K] = self.rng.gamma(cfg.init_conc, size=N)
        new_init[i, K] = init_w_new
        self.init_w = new_init

        for j in range(N):
            col = gaussian_loglik_matrix(
                self.Y[j], mean_new[None], scale_new[None], cfg.covariance
            )
            self.log_E[j] = np.hstack([self.log_E[j], col])

    def _drop_state(self, k: int) -> None:
        self.F = np.delete(self.F, k, axis=1)
        self.means = np.delete(self.means, k, axis=0)
        self.scales = np.delete(self.scales, k, axis=0)
        self.trans_w = np.delete(np.delete(self.trans_w, k, axis=1), k, axis=2)
        self.init_w = np.delete(self.init_w, k, axis=1)
        self.log_E = [np.delete(le, k, axis=1) for le in self.log_E]

    def _sample_unique_features(self) -> None:
        cfg = self.cfg
        lam = cfg.alpha / self.N
        for i in range(self.N):
            m = self.F.sum(axis=0)
            unique = np.flatnonzero((m == 1) & self.F[i])
            n_u = unique.size
            active = np.flatnonzero(self.F[i])
            cur_ll = self._series_loglik(i, active)
            birth = n_u == 0 or self.rng.random() < 0.5
            if birth:
                q_fwd = 1.0 if n_u == 0 else 0.5
                mean_new, scale_new = self.family.sample_state(self.rng, None)
                init_w_new = self.rng.gamma(cfg.init_conc)
                trans_col = self.rng.gamma(cfg.trans_conc, size=self.K)
                trans_row = self.rng.gamma(cfg.trans_conc, size=self.K + 1)
                new_ll = self._birth_loglik(
                    i, active, mean_new, scale_new, init_w_new, trans_col, trans_row
                )
                log_acc = (
                    new_ll
                    - cur_ll
                    + math.log(lam)
                    - math.log(n_u + 1)
                    + math.log(0.5 / (n_u + 1))
                    - math.log(q_fwd)
                )
                if math.log(self.rng.random()) < log_acc:
                    self._grow_state(
                        i, mean_new, scale_new, init_w_new, trans_row, trans_col
                    )
            else:
                k_star = int(unique[self.rng.integers(n_u)])
                act_new = active[active != k_star]
                if act_new.size == 0:
                    continue  # removing the only state is out of support
                new_ll = self._series_loglik(i, act_new)
                q_rev = 1.0 if n_u == 1 else 0.5
                log_acc = (
                    new_ll
                    - cur_ll
                    + math.log(n_u)
                    - math.log(lam)
                    + math.log(q_rev)
                    - math.log(0.5 / n_u)
                )
                if math.log(self.rng.random()) < log_acc:
                    self._drop_state(k_star)

    def _birth_loglik(
        self, i, active, mean_new, scale_new, init_w_new, trans_col, trans_row
    ) -> float:
        """Likelihood of series i with a trial state appended, without
        touching the global arrays."""
        cfg = self.cfg
        le_new = gaussian_loglik_matrix(
            self.Y[i], mean_new[None], scale_new[None], cfg.covariance
        )
        log_e = np.hstack([self.log_E[i][:, active], le_new])
        w0 = np.append(self.init_w[i, active], init_w_new)
        pi = w0 / w0.sum()
        k = active.size
        wt = np.empty((k + 1, k + 1))
        wt[:k, :k] = self.trans_w[i][np.ix_(active, active)]
        wt[:k, k] = trans_col[active]
        wt[k, :k] = trans_row[active]
        wt[k, k] = trans_row[self.K]
        T = wt / wt.sum(axis=1, keepdims=True)
        return forward_loglik(pi, T, log_e)

    def _prune_dead_states(self) -> None:
        dead = np.flatnonzero(self.F.sum(axis=0) == 0)
        for k in dead[::-1]:
            self._drop_state(int(k))

    def _resample_sequences(self) -> None:
        for i in range(self.N):
            active = np.flatnonzero(self.F[i])
            pi, T = self._restricted(i, active)
            local = ffbs(self.rng, pi, T, self.log_E[i][:, active])
            self.z[i] = active[local]

    def _sample_emissions(self) -> None:
        groups: list[list[np.ndarray]] = [[] for _ in range(self.K)]
        for i, zi in enumerate(self.z):
            for k in np.unique(zi):
                groups[int(k)].append(self.Y[i][zi == k])
        for k in range(self.K):
            X = np.vstack(groups[k]) if groups[k] else None
            self.means[k], self.scales[k] = self.family.sample_state(self.rng, X)

    def _sample_transition_weights(self) -> None:
        cfg = self.cfg
        K = self.K
        for i in range(self.N):
            zi = self.z[i]
            shape_t = np.full((K, K), cfg.trans_conc)
            if zi.size > 1:
                np.add.at(shape_t, (zi[:-1], zi[1:]), 1.0)
            self.trans_w[i] = self.rng.gamma(shape_t)
            shape_0 = np.full(K, cfg.init_conc)
            shape_0[zi[0]] += 1.0
            self.init_w[i] = self.rng.gamma(shape_0)

    # ------------------------------------------------------------------
    # scoring and snapshots

    def _joint_log_posterior(self) -> float:
        """Collapsed joint log p(F, z, y): Gaussian parameters and transition
        distributions integrated out analytically, so scores are comparable
        across sweeps with different state counts."""
        cfg = self.cfg
        lp = ibp_log_prior(self.F.astype(np.int8), cfg.alpha)
        for i in range(self.N):
            active = np.flatnonzero(self.F[i])
            lp += _collapsed_chain_logprob(
                self.z[i], active, cfg.trans_conc, cfg.init_conc
            )
        for k in range(self.K):
            parts = [self.Y[i][zi == k] for i, zi in enumerate(self.z) if np.any(zi == k)]
            X = np.vstack(parts) if parts else None
            lp += self.family.log_marginal(X)
        return float(lp)

    def _snapshot(self, score: float) -> dict:
        transitions = []
        for i in range(self.N):
            active = np.flatnonzero(self.F[i])
            pi, T = self._restricted(i, active)
            transitions.append(
                TransitionModel([int(k) for k in active], pi.copy(), T.copy())
            )
        return {
            "F": self.F.copy(),
            "means": self.means.copy(),
            "scales": self.scales.copy(),
            "transitions": transitions,
            "log_posterior": score,
        }

    # ------------------------------------------------------------------

    def run(self) -> BPHMMModel:
        cfg = self.cfg
        best: dict | None = None
        for sweep in range(cfg.sweeps):
            self._sample_shared_features()
            self._sample_unique_features()
            self._prune_dead_states()
            assert (self.F.sum(axis=0) > 0).all() and (self.F.sum(axis=1) > 0).all()
            self._resample_sequences()
            self._sample_emissions()
            self._sample_transition_weights()
            self._refresh_emission_cache()
            score = self._joint_log_posterior()
            if not np.isfinite(score):
                raise RuntimeError(f"non-finite joint log posterior at sweep {sweep}")
            if sweep >= cfg.burn_in and (best is None or score > best["log_posterior"]):
                best = self._snapshot(score)
        assert best is not None
        model = BPHMMModel(
            series_ids=self.ids,
            feature_matrix=best["F"].astype(np.int8),
            state_means=best["means"],
            state_scales=best["scales"],
            covariance=cfg.covariance,
            transitions=best["transitions"],
            sequences=[],
            log_posterior=best["log_posterior"],
            config=cfg,
            observations=self.Y,
        )
        model.sequences = [
            decode(model, i, self.Y[i]) for i in range(self.N)
        ]
        return model


def fit_bphmm(series, cfg: McmcConfig | None = None) -> BPHMMModel:
    """Fit the joint segmentation model to a list of series.

    Accepts ForumSeries objects or plain (weeks x dims) arrays. Identical
    inputs and seed give an identical model.
    """
    cfg = cfg or McmcConfig()
    ids, Y = _coerce_series(series)
    if not Y:
        raise ValueError("need at least one series")
    D = Y[0].shape[1]
    for sid, Yi in zip(ids, Y):
        if Yi.ndim != 2 or Yi.shape[0] < 1:
            raise ValueError(f"series {sid!r} must be a nonempty 2-D array")
        if Yi.shape[1] != D:
            raise ValueError(
                f"series {sid!r} has dimension {Yi.shape[1]}, expected {D}"
            )
    return _Sampler(ids, Y, cfg).run()


def decode(model: BPHMMModel, series_index: int, observations=None) -> StateSequence:
    """Viterbi path for one series over its active states, ties toward the
    lower state id. Uses the model's retained observations unless an
    explicit matrix is supplied."""
    if not (0 <= series_index < model.n_series):
        raise IndexError(f"series index {series_index} out of range")
    if observations is None:
        if model.observations is None:
            raise ValueError(
                "model holds no observations; pass the series' observation matrix"
            )
        observations = model.observations[series_index]
    tm = model.transitions[series_index]
    active = np.asarray(tm.active_states, dtype=np.int64)
    log_e = gaussian_loglik_matrix(
        observations, model.state_means[active], model.state_scales[active],
        model.covariance,
    )
    local = viterbi(tm.initial, tm.matrix, log_e)
    return StateSequence(model.series_ids[series_index], active[local])
