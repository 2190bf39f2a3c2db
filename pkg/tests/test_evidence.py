"""Aggregation, discounted accumulation, and rectification."""

import math

import numpy as np
import pytest

from glean.core import EPS_CLAMP, RatingMatrix, ValidationError, logit, sigmoid
from glean.evidence import (
    AggregationSpec,
    accumulate,
    aggregate_matrix,
    aggregate_step,
    rectify,
    rectify_matrix,
)


class TestAggregationSpec:
    def test_default_is_min_avg(self):
        spec = AggregationSpec()
        assert spec.statistics == ("min", "avg")
        assert spec.d == 2

    def test_rejects_duplicates_and_unknown(self):
        with pytest.raises(ValidationError):
            AggregationSpec(("min", "min"))
        with pytest.raises(ValidationError):
            AggregationSpec(("median",))
        with pytest.raises(ValidationError):
            AggregationSpec(())


class TestAggregateStep:
    def test_min_avg_hand_computed(self):
        out = aggregate_step([0.6, 0.8, 0.7], AggregationSpec(("min", "avg")))
        np.testing.assert_allclose(out, [0.6, 0.7], atol=1e-12)

    def test_single_element(self):
        out = aggregate_step([0.8], AggregationSpec(("min", "avg")))
        np.testing.assert_allclose(out, [0.8, 0.8], atol=1e-12)

    def test_zero_variance_std_clamps(self):
        out = aggregate_step([0.5, 0.5], AggregationSpec(("std",)))
        assert out[0] == EPS_CLAMP

    def test_population_std(self):
        # population (ddof=0) formula over {0.2, 0.4}
        out = aggregate_step([0.2, 0.4], AggregationSpec(("std",)))
        np.testing.assert_allclose(out, [0.1], atol=1e-12)

    def test_empty_scores_error(self):
        with pytest.raises(ValidationError):
            aggregate_step([], AggregationSpec())


class TestAccumulate:
    def test_neutral_scores_give_zero(self):
        evs = accumulate([np.array([0.5]), np.array([0.5])], 0.7)
        assert evs[-1].values[0] == 0.0

    def test_discounted_hand_computed(self):
        # 0.5 * logit(0.8) + logit(0.9) = 0.5 ln 4 + ln 9
        evs = accumulate([np.array([0.8]), np.array([0.9])], 0.5)
        expected = 0.5 * math.log(4.0) + math.log(9.0)
        np.testing.assert_allclose(evs[-1].values, [expected], atol=1e-5)

    def test_undiscounted_sum(self):
        evs = accumulate([np.array([0.8])] * 3, 1.0)
        np.testing.assert_allclose(evs[-1].values, [3 * math.log(4.0)], atol=1e-5)

    def test_recurrence_matches_explicit_sum(self):
        rng = np.random.default_rng(7)
        for beta in (0.0, 0.3, 0.5, 0.7, 1.0):
            feats = [rng.uniform(0.05, 0.95, size=3) for _ in range(20)]
            evs = accumulate(feats, beta)
            for t, ev in enumerate(evs, start=1):
                explicit = sum(
                    beta ** (t - i) * logit(feats[i - 1]) for i in range(1, t + 1)
                )
                np.testing.assert_allclose(ev.values, explicit, atol=1e-9)

    def test_beta_zero_is_per_step_logit(self):
        rng = np.random.default_rng(8)
        feats = [rng.uniform(0.1, 0.9, size=2) for _ in range(5)]
        evs = accumulate(feats, 0.0)
        for f, ev in zip(feats, evs):
            assert np.array_equal(ev.values, logit(f))

    def test_beta_one_is_cumulative_sum(self):
        rng = np.random.default_rng(9)
        feats = [rng.uniform(0.1, 0.9, size=2) for _ in range(5)]
        evs = accumulate(feats, 1.0)
        running = np.zeros(2)
        for f, ev in zip(feats, evs):
            running = running + logit(f)
            assert np.array_equal(ev.values, running)

    def test_monotone_in_any_single_score(self):
        """Raising one rating weakly raises every later evidence component."""
        rng = np.random.default_rng(10)
        spec = AggregationSpec(("min", "avg"))
        for _ in range(20):
            scores = rng.uniform(0.1, 0.9, size=(6, 3))
            feats = [aggregate_step(row, spec) for row in scores]
            base = accumulate(feats, 0.5)
            t_bump = int(rng.integers(6))
            g_bump = int(rng.integers(3))
            bumped = scores.copy()
            bumped[t_bump, g_bump] = min(0.95, bumped[t_bump, g_bump] + 0.04)
            feats_b = [aggregate_step(row, spec) for row in bumped]
            after = accumulate(feats_b, 0.5)
            for t in range(t_bump, 6):
                assert np.all(after[t].values >= base[t].values - 1e-12)

    def test_invalid_beta(self):
        with pytest.raises(ValidationError):
            accumulate([np.array([0.5])], 1.5)
        with pytest.raises(ValidationError):
            accumulate([np.array([0.5])], -0.1)

    def test_empty_features(self):
        with pytest.raises(ValidationError):
            accumulate([], 0.5)

    def test_steps_are_numbered_from_one(self):
        evs = accumulate([np.array([0.5])] * 4, 0.5)
        assert [e.step for e in evs] == [1, 2, 3, 4]


class TestRectify:
    def test_neutral_competitor_is_identity(self):
        # logit(0.5) = 0, so any alpha leaves the score alone
        for alpha in (0.0, 0.2, 1.0, 5.0):
            assert abs(rectify(0.9, 0.5, alpha) - 0.9) <= 1e-10

    def test_symmetric_cancellation(self):
        assert abs(rectify(0.9, 0.9, 1.0) - 0.5) <= 1e-10

    def test_hand_computed(self):
        # sigmoid(logit(0.8) - 0.2 * logit(0.9))
        expected = sigmoid(math.log(4.0) - 0.2 * math.log(9.0))
        assert abs(rectify(0.8, 0.9, 0.2) - expected) <= 1e-12
        assert abs(expected - 0.720502) <= 1e-4

    def test_alpha_zero_exact_identity(self):
        rng = np.random.default_rng(11)
        for s in rng.uniform(EPS_CLAMP, 1 - EPS_CLAMP, 100):
            assert rectify(float(s), 0.9, 0.0) == float(s)

    def test_round_trip_precision(self):
        rng = np.random.default_rng(12)
        for s in rng.uniform(EPS_CLAMP, 1 - EPS_CLAMP, 500):
            assert abs(sigmoid(logit(float(s))) - float(s)) <= 1e-10

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValidationError):
            rectify(0.5, 0.5, -0.1)


class TestRectifyMatrix:
    def _matrices(self, rng, n_steps=4, n_cols=3):
        m = RatingMatrix(
            "t", tuple(f"g{i}" for i in range(n_cols)),
            rng.uniform(0.1, 0.9, size=(n_steps, n_cols)),
        )
        comp = RatingMatrix(
            "t", ("c0", "c1"), rng.uniform(0.1, 0.9, size=(n_steps, 2))
        )
        return m, comp

    def test_neutral_competitive(self):
        m = RatingMatrix("t", ("g0",), np.array([[0.7], [0.3]]))
        comp = RatingMatrix("t", ("c0",), np.full((2, 1), 0.5))
        out = rectify_matrix(m, comp, 0.2)
        np.testing.assert_allclose(out.scores, m.scores, atol=1e-10)

    def test_alpha_zero_identity(self):
        rng = np.random.default_rng(13)
        m, comp = self._matrices(rng)
        out = rectify_matrix(m, comp, 0.0)
        assert np.array_equal(out.scores, m.scores)
        assert out.guideline_ids == m.guideline_ids

    def test_matches_per_cell_oracle(self):
        rng = np.random.default_rng(14)
        for _ in range(25):
            m, comp = self._matrices(rng)
            out = rectify_matrix(m, comp, 0.2)
            s_max = comp.scores.max(axis=1)
            for t in range(m.n_steps):
                for g in range(len(m.guideline_ids)):
                    expected = rectify(m.scores[t, g], s_max[t], 0.2)
                    assert abs(out.scores[t, g] - expected) <= 1e-12

    def test_row_max_hand_case(self):
        m = RatingMatrix("t", ("g0",), np.array([[0.8], [0.8]]))
        comp = RatingMatrix(
            "t", ("c0", "c1"), np.array([[0.7, 0.6], [0.2, 0.9]])
        )
        out = rectify_matrix(m, comp, 0.2)
        assert abs(out.scores[0, 0] - rectify(0.8, 0.7, 0.2)) <= 1e-12
        assert abs(out.scores[1, 0] - rectify(0.8, 0.9, 0.2)) <= 1e-12

    def test_step_count_mismatch(self):
        m = RatingMatrix("t", ("g0",), np.full((3, 1), 0.5))
        comp = RatingMatrix("t", ("c0",), np.full((2, 1), 0.5))
        with pytest.raises(ValidationError, match="step-count"):
            rectify_matrix(m, comp, 0.2)

    def test_trajectory_mismatch(self):
        m = RatingMatrix("t1", ("g0",), np.full((2, 1), 0.5))
        comp = RatingMatrix("t2", ("c0",), np.full((2, 1), 0.5))
        with pytest.raises(ValidationError):
            rectify_matrix(m, comp, 0.2)


class TestAggregateMatrix:
    def test_shape_and_rows(self):
        rng = np.random.default_rng(15)
        m = RatingMatrix("t", ("a", "b", "c"), rng.uniform(0.1, 0.9, (5, 3)))
        spec = AggregationSpec(("min", "avg", "max", "std"))
        feats = aggregate_matrix(m, spec)
        assert feats.shape == (5, 4)
        for i in range(5):
            np.testing.assert_array_equal(feats[i], aggregate_step(m.scores[i], spec))
