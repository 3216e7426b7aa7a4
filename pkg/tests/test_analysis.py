"""Similarity, clustering, volatility, cross-entropy, and anomaly mechanics
verified against independent direct-formula implementations."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forumdyn.analysis import (
    activity_peaks,
    anomaly_report,
    cluster,
    cross_entropy_series,
    empty_state_ids,
    rare_states,
    similarity_matrix,
    smooth,
    transition_events,
    volatility_hmm,
    volatility_report,
    SimilarityMatrix,
)
from forumdyn.bphmm.model import BPHMMModel, McmcConfig, StateSequence, TransitionModel

from conftest import make_series


def hand_model(means, transitions, sequences, series_ids=None):
    """Assemble a fitted-model container directly from parts.

    transitions: list of (active_states, initial, matrix); sequences: list of
    global-id arrays.
    """
    means = np.asarray(means, dtype=np.float64)
    K = means.shape[0]
    n = len(transitions)
    ids = series_ids or [f"f{i}" for i in range(n)]
    F = np.zeros((n, K), dtype=np.int8)
    tms = []
    for i, (active, pi, T) in enumerate(transitions):
        F[i, list(active)] = 1
        tms.append(TransitionModel(list(active), np.asarray(pi), np.asarray(T)))
    seqs = [StateSequence(ids[i], np.asarray(s)) for i, s in enumerate(sequences)]
    return BPHMMModel(
        series_ids=ids,
        feature_matrix=F,
        state_means=means,
        state_scales=np.ones_like(means),
        covariance="diagonal",
        transitions=tms,
        sequences=seqs,
        log_posterior=-1.0,
        config=McmcConfig(sweeps=2, burn_in=0),
    )


def _simplex_means(K, D):
    """State means on the simplex (sum 1); none reads as the empty state."""
    rng = np.random.default_rng(0)
    return rng.dirichlet(np.ones(D), size=K)


class TestEmptyState:
    def test_detects_off_simplex_state(self):
        means = np.array([[0.5, 0.5], [0.01, 0.02]])
        model = hand_model(
            means,
            [([0, 1], [0.5, 0.5], np.full((2, 2), 0.5))],
            [[0, 1]],
        )
        assert empty_state_ids(model) == {1}

    def test_no_empty_state(self):
        means = _simplex_means(3, 4)
        model = hand_model(
            means, [([0, 1, 2], np.ones(3) / 3, np.full((3, 3), 1 / 3))], [[0]]
        )
        assert empty_state_ids(model) == set()


class TestSimilarity:
    def _model_three_forums(self):
        means = _simplex_means(3, 4)
        sticky = np.array([[0.9, 0.1], [0.1, 0.9]])
        seq_a = [0, 0, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0]
        seq_c = [2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2]
        return hand_model(
            means,
            [
                ([0, 1], [0.5, 0.5], sticky),
                ([0, 1], [0.5, 0.5], sticky),
                ([2], [1.0], [[1.0]]),
            ],
            [seq_a, seq_a, seq_c],
        )

    def test_symmetric_and_bounded(self):
        sim = similarity_matrix(self._model_three_forums(), smoothing=1e-3)
        np.testing.assert_allclose(sim.values, sim.values.T, atol=0)
        assert (sim.values > 0).all() and (sim.values <= 1).all()

    def test_identical_processes_equal_self_similarity(self):
        sim = similarity_matrix(self._model_three_forums(), smoothing=1e-3)
        assert sim.values[0, 1] == pytest.approx(sim.values[0, 0], abs=1e-12)

    def test_shared_generator_pair_most_similar(self):
        sim = similarity_matrix(self._model_three_forums(), smoothing=1e-3)
        assert sim.values[0, 1] > sim.values[0, 2]
        assert sim.values[0, 1] > sim.values[1, 2]

    def test_unexhibited_state_rows_uniform(self):
        from forumdyn.analysis import expand_transition_model

        model = self._model_three_forums()
        pi, T = expand_transition_model(model, 2, smoothing=1e-2)
        np.testing.assert_allclose(T[0], 1.0 / 3, atol=1e-12)  # state 0 unexhibited
        np.testing.assert_allclose(T.sum(axis=1), 1.0, atol=1e-12)
        assert pi[2] > pi[0]

    def test_smoothing_must_be_positive(self):
        with pytest.raises(ValueError):
            similarity_matrix(self._model_three_forums(), smoothing=0.0)


class TestCluster:
    def _sim(self, values, ids=None):
        values = np.asarray(values, dtype=np.float64)
        ids = ids or [f"f{i}" for i in range(values.shape[0])]
        return SimilarityMatrix(ids, values, 1e-3)

    def test_single_leaf(self):
        dend = cluster(self._sim([[1.0]]))
        assert dend.merges == []
        assert dend.leaf_order == [0]
        assert dend.cut(1) == [0]

    def test_two_tight_pairs_merge_first(self):
        v = np.full((4, 4), 0.1)
        np.fill_diagonal(v, 1.0)
        v[0, 1] = v[1, 0] = 0.9
        v[2, 3] = v[3, 2] = 0.8
        dend = cluster(self._sim(v))
        first_two = {tuple(sorted(m[:2])) for m in dend.merges[:2]}
        assert first_two == {(0, 1), (2, 3)}
        assert dend.cut(2) == [0, 0, 1, 1]

    def test_tie_breaks_lexicographic(self):
        v = np.full((3, 3), 0.5)
        np.fill_diagonal(v, 1.0)
        dend = cluster(self._sim(v))
        assert dend.merges[0][:2] == (0, 1)

    def test_heights_non_decreasing(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(2, 8))
            raw = rng.uniform(0.05, 1.0, size=(n, n))
            v = (raw + raw.T) / 2
            np.fill_diagonal(v, 1.0)
            dend = cluster(self._sim(v))
            heights = [m[2] for m in dend.merges]
            assert all(b >= a - 1e-12 for a, b in zip(heights, heights[1:]))

    def test_newick_and_dict_exports(self):
        v = np.array([[1.0, 0.6], [0.6, 1.0]])
        dend = cluster(self._sim(v, ids=["alpha", "beta"]))
        nwk = dend.to_newick()
        assert nwk.startswith("(") and nwk.endswith(";")
        assert "alpha" in nwk and "beta" in nwk
        d = dend.to_dict()
        assert d["labels"] == ["alpha", "beta"]
        assert len(d["merges"]) == 1

    def test_cut_bounds(self):
        v = np.array([[1.0, 0.6], [0.6, 1.0]])
        dend = cluster(self._sim(v))
        with pytest.raises(ValueError):
            dend.cut(0)
        with pytest.raises(ValueError):
            dend.cut(3)


def _oracle_volatility(matrix, active, empty):
    """Independent direct evaluation of the volatility definition."""
    keep = [i for i, k in enumerate(active) if k not in empty]
    if not keep:
        return None
    M = np.asarray(matrix, dtype=float)[np.ix_(keep, keep)]
    M = M / M.sum(axis=1, keepdims=True)
    off = [sum(M[r]) - M[r][r] for r in range(len(keep))]
    return sum(off) / len(off)


class TestVolatilityHmm:
    def test_identity_matrix_zero(self):
        means = _simplex_means(2, 3)
        model = hand_model(means, [([0, 1], [0.5, 0.5], np.eye(2))], [[0, 1]])
        assert volatility_hmm(model, 0) == 0.0

    def test_uniform_two_state_half(self):
        means = _simplex_means(2, 3)
        model = hand_model(
            means, [([0, 1], [0.5, 0.5], np.full((2, 2), 0.5))], [[0, 1]]
        )
        assert volatility_hmm(model, 0) == pytest.approx(0.5, abs=1e-12)

    def test_three_state_with_empty_matches_hand_derivation(self):
        means = np.vstack([_simplex_means(2, 3), [[0.0, 0.0, 0.0]]])  # state 2 empty
        T = np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.4, 0.4, 0.2]])
        model = hand_model(means, [([0, 1, 2], [0.4, 0.4, 0.2], T)], [[0, 1, 2]])
        # renormalized 2x2 block: [[2/3, 1/3], [2/7, 5/7]]
        expected = 0.5 * (1 / 3 + 2 / 7)
        assert volatility_hmm(model, 0) == pytest.approx(expected, abs=1e-12)

    def test_random_inputs_match_independent_script(self, rng):
        for _ in range(100):
            K = int(rng.integers(2, 6))
            D = 4
            means = rng.dirichlet(np.ones(D), size=K)
            empty = set()
            if rng.random() < 0.5:
                e = int(rng.integers(K))
                means[e] = 0.0
                empty = {e}
            n_active = int(rng.integers(1, K + 1))
            active = np.sort(rng.choice(K, size=n_active, replace=False))
            T = rng.dirichlet(np.ones(n_active), size=n_active)
            pi = rng.dirichlet(np.ones(n_active))
            model = hand_model(
                means, [(active.tolist(), pi, T)], [[active[0]]]
            )
            expected = _oracle_volatility(T, active.tolist(), empty)
            got = volatility_hmm(model, 0)
            if expected is None:
                assert got is None
            else:
                assert got == pytest.approx(expected, abs=1e-9)

    def test_only_empty_state_reported_missing(self):
        means = np.array([[0.0, 0.0], [0.5, 0.5]])
        model = hand_model(means, [([0], [1.0], [[1.0]])], [[0]])
        assert volatility_hmm(model, 0) is None

    def test_invariant_under_state_relabeling(self, rng):
        # permuting global state ids must not change the volatility
        means = rng.dirichlet(np.ones(3), size=4)
        means[3] = 0.0  # empty state
        T = rng.dirichlet(np.ones(3), size=3)
        pi = rng.dirichlet(np.ones(3))
        base = hand_model(means, [([0, 1, 3], pi, T)], [[0]])
        perm = np.array([2, 0, 3, 1])  # old id -> new id
        inv = np.argsort(perm)
        new_active = sorted(int(perm[k]) for k in [0, 1, 3])
        order = np.argsort([perm[k] for k in [0, 1, 3]])
        relabeled = hand_model(
            means[inv],
            [(new_active, pi[order], T[np.ix_(order, order)])],
            [[new_active[0]]],
        )
        assert volatility_hmm(base, 0) == pytest.approx(
            volatility_hmm(relabeled, 0), abs=1e-12
        )


class TestCrossEntropy:
    def test_self_entropy_identity(self):
        P = np.array([[0.3, 0.7]])
        series = make_series(P, post_counts=[1])
        h = cross_entropy_series(series, eps=1e-10)[0]
        shannon = -(0.3 * math.log2(0.3) + 0.7 * math.log2(0.7))
        assert h == pytest.approx(shannon, abs=1e-9)

    def test_one_bit_case(self):
        # P=[1,0], Q=[0.5,0.5]: a single nonempty week can't give that Q,
        # so build two weeks averaging to uniform
        series = make_series([[1.0, 0.0], [0.0, 1.0]], post_counts=[1, 1])
        h = cross_entropy_series(series)
        np.testing.assert_allclose(h, [1.0, 1.0], atol=1e-12)

    def test_frozen_direct_evaluation(self):
        # P=[0.5,0.5] vs Q=[0.25,0.75]; frozen from -0.5*log2(0.25)-0.5*log2(0.75)
        series = make_series(
            [[0.5, 0.5], [0.0, 1.0]], post_counts=[1, 1]
        )  # Q = [0.25, 0.75]
        h = cross_entropy_series(series)
        assert h[0] == pytest.approx(1.2075187496394219, abs=1e-9)

    def test_empty_weeks_yield_nan(self):
        series = make_series(
            [[0.5, 0.5], [0.0, 0.0], [0.4, 0.6]], post_counts=[1, 0, 2]
        )
        h = cross_entropy_series(series)
        assert np.isnan(h[1]) and not np.isnan(h[0]) and not np.isnan(h[2])

    def test_all_empty_errors(self):
        series = make_series([[0.0, 0.0]], post_counts=[0])
        with pytest.raises(ValueError):
            cross_entropy_series(series)

    def test_gibbs_inequality_random(self, rng):
        for _ in range(100):
            K = int(rng.integers(2, 8))
            W = int(rng.integers(2, 10))
            P = rng.dirichlet(np.ones(K), size=W)
            series = make_series(P, post_counts=np.ones(W, dtype=int))
            h = cross_entropy_series(series)
            Q = P.mean(axis=0)
            for w in range(W):
                self_h = -(P[w] * np.log2(np.maximum(P[w], 1e-300))).sum()
                assert h[w] >= self_h - 1e-6
                # direct independent evaluation
                direct = -sum(
                    P[w, k] * math.log2(max(Q[k], 1e-10) / max(Q.sum(), 1))
                    for k in range(K)
                )
                # recompute with the same floor-renormalize rule
                Qf = np.maximum(Q, 1e-10)
                Qf = Qf / Qf.sum()
                direct = -sum(P[w, k] * math.log2(Qf[k]) for k in range(K))
                assert h[w] == pytest.approx(direct, abs=1e-9)


class TestSmooth:
    def test_constant_unchanged(self):
        np.testing.assert_allclose(smooth([2.0] * 6, 4), [2.0] * 6)

    def test_two_point_window(self):
        np.testing.assert_allclose(smooth([0.0, 4.0], 2), [0.0, 2.0])

    def test_linear_ramp_trailing_means(self):
        got = smooth([0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 4)
        np.testing.assert_allclose(got, [0.0, 0.5, 1.0, 1.5, 2.5, 3.5])

    def test_nan_gaps_ignored(self):
        got = smooth([1.0, np.nan, 3.0], 2)
        np.testing.assert_allclose(got, [1.0, 1.0, 3.0])

    def test_window_one_is_identity(self):
        vals = [3.0, 1.0, 4.0]
        np.testing.assert_allclose(smooth(vals, 1), vals)

    def test_bad_window(self):
        with pytest.raises(ValueError):
            smooth([1.0], 0)

    @given(
        st.lists(st.floats(-100, 100), min_size=1, max_size=30),
        st.integers(1, 8),
    )
    @settings(max_examples=100, deadline=None)
    def test_matches_independent_trailing_mean(self, vals, window):
        got = smooth(vals, window)
        for t in range(len(vals)):
            lo = max(0, t - window + 1)
            expected = sum(vals[lo : t + 1]) / (t - lo + 1)
            assert got[t] == pytest.approx(expected, rel=1e-12, abs=1e-12)


class TestRareStates:
    def _planted(self):
        means = np.vstack([_simplex_means(3, 4), [[0, 0, 0, 0]]])  # state 3 empty
        seq_a = [0] * 48 + [2, 2]  # state 2 rare: 2 of 100 nonempty weeks
        seq_b = [1] * 40 + [3] * 10  # 10 empty-state weeks excluded
        uni = np.full((4, 4), 0.25)
        model = hand_model(
            means,
            [
                ([0, 2], [0.5, 0.5], np.full((2, 2), 0.5)),
                ([1, 3], [0.5, 0.5], np.full((2, 2), 0.5)),
            ],
            [seq_a, seq_b],
        )
        return model

    def test_planted_rare_state_exact_occurrences(self):
        model = self._planted()
        rare = rare_states(model, occupancy_threshold=0.05)
        assert len(rare) == 1
        r = rare[0]
        assert r.state_id == 2
        assert r.occupancy == pytest.approx(2 / 90)
        assert r.occurrences == [("f0", 48), ("f0", 49)]

    def test_zero_threshold_empty(self):
        assert rare_states(self._planted(), occupancy_threshold=0.0) == []

    def test_empty_state_never_listed(self):
        rare = rare_states(self._planted(), occupancy_threshold=2.0)
        assert all(r.state_id != 3 for r in rare)


class TestTransitionEvents:
    def _model(self, seqs, means=None):
        K = int(max(max(s) for s in seqs)) + 1
        means = means if means is not None else _simplex_means(K, 4)
        trans = []
        for s in seqs:
            active = sorted(set(int(x) for x in s))
            k = len(active)
            trans.append((active, np.ones(k) / k, np.full((k, k), 1.0 / k)))
        return hand_model(means, trans, seqs)

    def test_single_change_detected(self):
        model = self._model([[0, 0, 0, 1, 1]])
        events = transition_events(model)
        assert len(events) == 1
        assert (events[0].week, events[0].from_state, events[0].to_state) == (3, 0, 1)

    def test_constant_sequence_no_events(self):
        assert transition_events(self._model([[0, 0, 0, 0]])) == []

    def test_empty_state_hops_excluded(self):
        means = np.vstack([_simplex_means(2, 4), [[0, 0, 0, 0]]])
        model = self._model([[0, 2, 1]], means=means)  # 0 -> empty -> 1
        assert transition_events(model) == []

    def test_sorted_by_forum_volatility(self):
        means = _simplex_means(2, 4)
        calm = np.array([[0.95, 0.05], [0.05, 0.95]])
        wild = np.array([[0.5, 0.5], [0.5, 0.5]])
        model = hand_model(
            means,
            [([0, 1], [0.5, 0.5], wild), ([0, 1], [0.5, 0.5], calm)],
            [[0, 1, 0], [0, 0, 1]],
            series_ids=["wild", "calm"],
        )
        events = transition_events(model)
        assert events[0].forum_id == "calm"
        assert events[0].forum_volatility < events[-1].forum_volatility


class TestActivityPeaks:
    def test_constant_counts_none(self):
        series = make_series(np.full((10, 2), 0.5), post_counts=[5] * 10)
        assert activity_peaks(series) == []

    def test_single_spike_flagged_with_zscore_oracle(self):
        counts = [5] * 19 + [50]
        series = make_series(np.full((20, 2), 0.5), post_counts=counts)
        peaks = activity_peaks(series, z_threshold=3.0)
        assert [p.week for p in peaks] == [19]
        arr = np.asarray(counts, dtype=float)
        expected_z = (50 - arr.mean()) / arr.std()
        assert peaks[0].z_score == pytest.approx(expected_z, abs=1e-9)

    def test_short_series_guard(self):
        series = make_series(np.full((7, 2), 0.5), post_counts=[1, 1, 1, 1, 1, 1, 99])
        assert activity_peaks(series) == []


class TestVolatilityReportAndAnomalies:
    def test_report_rankings_deterministic(self):
        means = _simplex_means(2, 3)
        calm = np.array([[0.9, 0.1], [0.1, 0.9]])
        wild = np.full((2, 2), 0.5)
        model = hand_model(
            means,
            [([0, 1], [0.5, 0.5], wild), ([0, 1], [0.5, 0.5], calm)],
            [[0, 1, 0, 1], [0, 0, 1, 1]],
            series_ids=["b", "a"],
        )
        s0 = make_series(np.array([[0.2, 0.8]] * 4), post_counts=[1] * 4, forum_id="b")
        s1 = make_series(
            np.array([[0.2, 0.8], [0.8, 0.2], [0.2, 0.8], [0.8, 0.2]]),
            post_counts=[1] * 4,
            forum_id="a",
        )
        report = volatility_report(model, [s0, s1])
        assert report.hmm_ranking == ["b", "a"]
        assert report.ce_ranking[0] == "a"  # oscillating topics: higher CE
        assert set(report.hmm_volatility) == {"a", "b"}

    def test_anomaly_report_assembles_all(self):
        means = np.vstack([_simplex_means(2, 2), [[0.0, 0.0]]])
        model = hand_model(
            means,
            [([0, 1], [0.5, 0.5], np.full((2, 2), 0.5))],
            [[0] * 99 + [1]],
            series_ids=["f0"],
        )
        counts = [5] * 99 + [50]
        series = make_series(np.full((100, 2), 0.5), post_counts=counts, forum_id="f0")
        rep = anomaly_report(model, [series], occupancy_threshold=0.05, z_threshold=3.0)
        assert [r.state_id for r in rep.rare_states] == [1]
        assert len(rep.transition_events) == 1
        assert [p.week for p in rep.activity_peaks] == [99]
        d = rep.to_dict()
        assert set(d) == {"rare_states", "transition_events", "activity_peaks"}
