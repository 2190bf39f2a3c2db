"""Metric oracles: AUROC, Risk@fraction, ECE, Brier, Best-of-N, linearity."""

import math

import numpy as np
import pytest

from glean.core import ValidationError
from glean.metrics import (
    ScoredSample,
    auroc,
    best_of_n,
    brier,
    ece,
    linearity_diagnostic,
    risk_at,
)
from glean.synthetic import sample_scalar_evidence


def samples_from(scores, labels, case_ids=None, answers=None):
    case_ids = case_ids or [None] * len(scores)
    answers = answers or [None] * len(scores)
    return [
        ScoredSample(score=s, label=bool(z), case_id=c, answer=a)
        for s, z, c, a in zip(scores, labels, case_ids, answers)
    ]


def brute_force_auroc(scores, labels):
    """O(n^2) pairwise count; ties worth one half."""
    pos = [s for s, z in zip(scores, labels) if z]
    neg = [s for s, z in zip(scores, labels) if not z]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuroc:
    def test_perfect_separation(self):
        s = samples_from([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0])
        assert auroc(s) == 1.0

    def test_enumerated_pairs(self):
        s = samples_from([0.9, 0.3, 0.6, 0.4], [1, 1, 0, 0])
        assert auroc(s) == 0.5

    def test_all_ties(self):
        s = samples_from([0.7] * 6, [1, 0, 1, 0, 1, 0])
        assert auroc(s) == 0.5

    def test_single_class_error(self):
        with pytest.raises(ValidationError):
            auroc(samples_from([0.1, 0.9], [1, 1]))

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            n = int(rng.integers(5, 120))
            scores = rng.choice(np.linspace(0, 1, 11), size=n)
            labels = rng.random(n) < 0.5
            if labels.all() or not labels.any():
                continue
            s = samples_from(scores, labels)
            assert auroc(s) == brute_force_auroc(list(scores), list(labels))

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(18)
        scores = rng.uniform(0, 1, 80)
        labels = rng.random(80) < 0.5
        labels[0], labels[1] = True, False
        base = auroc(samples_from(scores, labels))
        cubed = auroc(samples_from(scores**3, labels))
        assert base == cubed


class TestRiskAt:
    def test_full_fraction_is_error_rate(self):
        s = samples_from([0.9, 0.2, 0.6], [1, 0, 0])
        assert abs(risk_at(s, 1.0) - 2 / 3) <= 1e-15
        assert abs(risk_at(s, 1.0) - (1 - np.mean([x.label for x in s]))) <= 1e-15

    def test_hand_sorted_example(self):
        s = samples_from([0.9, 0.8, 0.6, 0.4], [1, 0, 1, 0])
        assert risk_at(s, 0.5) == 0.5  # keeps {0.9, 0.8}; one error

    def test_all_correct_gives_zero(self):
        s = samples_from([0.2, 0.8, 0.5], [1, 1, 1])
        for frac in (0.25, 0.5, 1.0):
            assert risk_at(s, frac) == 0.0

    def test_ties_break_by_input_order(self):
        s = samples_from([0.5, 0.5], [0, 1])
        assert risk_at(s, 0.5) == 1.0  # first sample kept

    def test_fraction_validation(self):
        with pytest.raises(ValidationError):
            risk_at(samples_from([0.5], [1]), 0.0)


class TestEce:
    def test_perfect_confidence_zero(self):
        s = samples_from([1.0, 0.0, 1.0], [1, 0, 1])
        assert ece(s, 10) == 0.0

    def test_single_bin_arithmetic(self):
        s = samples_from([0.75] * 4, [1, 1, 1, 0])
        assert abs(ece(s, 10) - 0.0) <= 1e-15

    def test_constant_overconfidence(self):
        s = samples_from([0.9] * 4, [1, 0, 1, 0])
        assert abs(ece(s, 10) - 0.4) <= 1e-15

    def test_bounds(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            n = int(rng.integers(1, 60))
            s = samples_from(rng.uniform(0, 1, n), rng.random(n) < 0.5)
            assert 0.0 <= ece(s, 10) <= 1.0

    def test_bin_edges_right_closed(self):
        # 0.1 belongs to the first bin [0, 0.1]; 0.1000001 to the second.
        low = samples_from([0.1, 0.05], [0, 0])
        assert abs(ece(low, 10) - 0.075) <= 1e-12


class TestBrier:
    def test_perfect_zero(self):
        assert brier(samples_from([1.0, 0.0], [1, 0])) == 0.0

    def test_constant_half(self):
        assert brier(samples_from([0.5] * 5, [1, 0, 1, 1, 0])) == 0.25

    def test_hand_computed(self):
        s = samples_from([0.8, 0.3], [1, 0])
        assert abs(brier(s) - 0.065) <= 1e-12

    def test_bounds(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            n = int(rng.integers(1, 60))
            s = samples_from(rng.uniform(0, 1, n), rng.random(n) < 0.5)
            assert 0.0 <= brier(s) <= 1.0


class TestBestOfN:
    def test_argmax_selection(self):
        s = samples_from([0.3, 0.7], [0, 1], case_ids=["c1", "c1"])
        assert best_of_n(s, 2) == 1.0

    def test_n_one_is_first_candidate_accuracy(self):
        s = samples_from(
            [0.2, 0.9, 0.8, 0.1], [0, 1, 1, 0], case_ids=["a", "a", "b", "b"]
        )
        assert best_of_n(s, 1) == 0.5  # first of a wrong, first of b right

    def test_oracle_scores_equal_pass_at_n(self):
        rng = np.random.default_rng(23)
        n_cases, width = 40, 8
        labels = rng.random((n_cases, width)) < 0.4
        flat, cases = [], []
        for ci in range(n_cases):
            for k in range(width):
                flat.append(float(labels[ci, k]))
                cases.append(f"case{ci}")
        s = samples_from(flat, labels.reshape(-1), case_ids=cases)
        for n in (1, 2, 4, 8):
            pass_at_n = np.mean([labels[ci, :n].any() for ci in range(n_cases)])
            assert best_of_n(s, n) == pass_at_n

    def test_monotone_in_n_for_oracle(self):
        rng = np.random.default_rng(24)
        labels = rng.random((30, 8)) < 0.3
        flat = [float(z) for row in labels for z in row]
        cases = [f"c{ci}" for ci in range(30) for _ in range(8)]
        s = samples_from(flat, labels.reshape(-1), case_ids=cases)
        accs = [best_of_n(s, n) for n in (1, 2, 4, 8)]
        assert all(b >= a for a, b in zip(accs, accs[1:]))

    def test_ties_go_to_lowest_index(self):
        s = samples_from([0.5, 0.5], [1, 0], case_ids=["c", "c"])
        assert best_of_n(s, 2) == 1.0

    def test_group_too_small_names_case(self):
        s = samples_from([0.5], [1], case_ids=["lonely"])
        with pytest.raises(ValidationError, match="lonely"):
            best_of_n(s, 2)

    def test_truth_map_overrides_labels(self):
        s = samples_from(
            [0.9, 0.1], [0, 0], case_ids=["c", "c"], answers=["right", "wrong"]
        )
        truth = {"c": lambda ans: ans == "right"}
        assert best_of_n(s, 2, truth=truth) == 1.0


class TestLinearityDiagnostic:
    def test_recovers_known_slope(self):
        samples, _ = sample_scalar_evidence(5000, 1.5, -0.2, 2.0, seed=33)
        pairs = [(float(s.evidence.values[0]), s.label) for s in samples]
        diag = linearity_diagnostic(pairs, n_bins=10)
        assert diag.r_squared >= 0.98
        assert abs(diag.slope - 1.5) <= 0.2
        assert diag.welch_p < 1e-3
        assert diag.n_bins == 10

    def test_shuffled_labels_not_significant(self):
        samples, _ = sample_scalar_evidence(1500, 1.5, -0.2, 2.0, seed=34)
        values = np.array([float(s.evidence.values[0]) for s in samples])
        labels = np.array([s.label for s in samples])
        rng = np.random.default_rng(35)
        hits = sum(
            linearity_diagnostic(
                list(zip(values, rng.permutation(labels))), n_bins=10
            ).welch_p > 0.01
            for _ in range(20)
        )
        assert hits >= 18

    def test_strong_shift_significant(self):
        rng = np.random.default_rng(36)
        neg = rng.normal(0.0, 1.0, 400)
        pos = rng.normal(3.0, 1.0, 400)
        pairs = [(float(v), False) for v in neg] + [(float(v), True) for v in pos]
        diag = linearity_diagnostic(pairs, n_bins=10)
        assert diag.welch_p < 1e-3
        assert diag.welch_t > 0

    def test_pure_bins_survive_smoothing(self):
        # Perfectly separated labels would give infinite logits unsmoothed.
        values = list(np.linspace(-5, -1, 30)) + list(np.linspace(1, 5, 30))
        labels = [False] * 30 + [True] * 30
        diag = linearity_diagnostic(list(zip(values, labels)), n_bins=5)
        assert math.isfinite(diag.slope)
        assert diag.slope > 0

    def test_requires_both_classes(self):
        with pytest.raises(ValidationError):
            linearity_diagnostic([(0.1, True), (0.5, True), (0.9, True)], n_bins=3)

    def test_requires_three_bins(self):
        pairs = [(0.1, True), (0.5, False)]
        with pytest.raises(ValidationError):
            linearity_diagnostic(pairs, n_bins=2)

    def test_too_few_usable_bins(self):
        pairs = [(0.1, True), (0.5, False)]
        with pytest.raises(ValidationError, match="usable bins"):
            linearity_diagnostic(pairs, n_bins=8)


class TestScoredSample:
    def test_score_range_enforced(self):
        with pytest.raises(ValidationError):
            ScoredSample(score=1.2, label=True)
