"""Verification orchestration: trigger logic, phases, batch behavior."""

import math

import numpy as np
import pytest

from glean.calibration import CalibratorPosterior, predict, uncertainty
from glean.core import Guideline, Step, Trajectory, ValidationError, binary_entropy
from glean.evidence import AggregationSpec, accumulate, aggregate_matrix
from glean.judge import JudgeBackendConfig, judge_trajectory
from glean.pipeline import (
    PipelineConfig,
    sibling_answer_pools,
    verify,
    verify_batch,
)
from glean.retrieval import GuidelineStore, retrieve


def posterior(pairs, d=2):
    w = np.array([p[0] for p in pairs], dtype=float).reshape(len(pairs), d)
    b = np.array([p[1] for p in pairs], dtype=float)
    return CalibratorPosterior(
        weights=w, intercepts=b, lam=1.0, seed=0, n_burn_in=0,
        acceptance_rate=0.25, d=d,
    )


SYMMETRIC_POST = posterior([((1.0, 1.0), 0.0), ((-1.0, -1.0), 0.0)])


def pinned_trajectory(tid, score_map, n_steps=2, answer="alpha condition",
                      case_id="case-a"):
    """Trajectory whose observations pin mock scores for the given keys."""
    table = " ".join(f"{k}={v!r}" for k, v in score_map.items())
    steps = tuple(
        Step(
            index=i,
            observation=f"finding {i} [judge-scores: {table}]",
            action=f"assess {i}",
        )
        for i in range(1, n_steps + 1)
    )
    return Trajectory(id=tid, case_id=case_id, steps=steps, answer=answer)


def small_store(extra_topics=()):
    gs = [
        Guideline(id="g-alpha-1", title="alpha condition criteria one",
                  content="x [judge-key: g-alpha-1]"),
        Guideline(id="g-alpha-2", title="alpha condition criteria two",
                  content="x [judge-key: g-alpha-2]"),
        Guideline(id="g-alpha-x", title="alpha supplement",
                  content="x [judge-key: g-alpha-x]"),
    ]
    for topic in extra_topics:
        gs.append(
            Guideline(
                id=f"g-{topic}-1",
                title=f"{topic} condition criteria one",
                content=f"x [judge-key: g-{topic}-1]",
            )
        )
    return GuidelineStore(gs)


def base_config(**kw):
    defaults = dict(k=2, n_extra=1, n_comp=2, seed=3)
    defaults.update(kw)
    return PipelineConfig(**defaults)


MOCK = JudgeBackendConfig(kind="mock", mock_seed=0)


class TestVerifyTrigger:
    def test_neutral_evidence_triggers(self):
        """All ratings 0.5 -> evidence 0 -> symmetric posterior gives 0.5,
        entropy 1 > 0.5, so active verification fires."""
        t = pinned_trajectory(
            "t1",
            {"g-alpha-1": 0.5, "g-alpha-2": 0.5, "g-alpha-x": 0.5},
        )
        report = verify(t, small_store(), MOCK, SYMMETRIC_POST, base_config())
        assert report.confidence == 0.5
        assert report.uncertainty == 1.0
        assert report.active_triggered
        assert np.all(report.per_step_evidence[-1].values == 0.0)

    def test_confident_posterior_does_not_trigger(self):
        # A single draw with zero weights and b = logit(0.99) pins the
        # confidence at 0.99; H(0.99) ~ 0.0808 < 0.5.
        b = math.log(0.99 / 0.01)
        post = posterior([((0.0, 0.0), b)])
        t = pinned_trajectory("t1", {"g-alpha-1": 0.5, "g-alpha-2": 0.5})
        report = verify(t, small_store(), MOCK, post, base_config())
        assert abs(report.confidence - 0.99) <= 1e-12
        assert abs(report.uncertainty - binary_entropy(0.99)) <= 1e-12
        assert report.uncertainty < 0.5
        assert not report.active_triggered
        assert report.guidelines_used == ("g-alpha-1", "g-alpha-2")
        assert report.competitive_guidelines == ()

    def test_active_disabled_matches_passive(self):
        t = pinned_trajectory("t1", {"g-alpha-1": 0.5, "g-alpha-2": 0.5})
        off = verify(t, small_store(), MOCK, SYMMETRIC_POST,
                     base_config(active_enabled=False))
        assert not off.active_triggered
        assert off.guidelines_used == ("g-alpha-1", "g-alpha-2")
        assert off.confidence == 0.5

    def test_epsilon_one_never_triggers(self):
        # H <= 1 with equality only at 0.5, and the trigger is strict.
        t = pinned_trajectory("t1", {"g-alpha-1": 0.5, "g-alpha-2": 0.5})
        report = verify(t, small_store(), MOCK, SYMMETRIC_POST,
                        base_config(epsilon_u=1.0))
        assert not report.active_triggered
        passive = verify(t, small_store(), MOCK, SYMMETRIC_POST,
                         base_config(active_enabled=False))
        assert report == passive  # a disabled trigger is exactly passive

    def test_epsilon_zero_always_triggers(self):
        t = pinned_trajectory("t1", {"g-alpha-1": 0.9, "g-alpha-2": 0.8})
        post = posterior([((0.0, 0.0), math.log(0.99 / 0.01))])
        report = verify(t, small_store(), MOCK, post, base_config(epsilon_u=0.0))
        assert report.active_triggered


class TestActivePhase:
    def test_expansion_adds_guideline(self):
        t = pinned_trajectory(
            "t1", {"g-alpha-1": 0.5, "g-alpha-2": 0.5, "g-alpha-x": 0.9}
        )
        report = verify(t, small_store(), MOCK, SYMMETRIC_POST, base_config())
        assert report.active_triggered
        assert "g-alpha-x" in report.guidelines_used
        # evidence recomputed over three columns now
        assert report.per_step_evidence[-1].d == 2

    def test_differential_check_rectifies(self):
        t = pinned_trajectory(
            "t1",
            {
                "g-alpha-1": 0.5,
                "g-alpha-2": 0.5,
                "g-alpha-x": 0.5,
                "g-beta-1": 0.9,
            },
        )
        store = small_store(extra_topics=("beta",))
        report = verify(
            t, store, MOCK, SYMMETRIC_POST, base_config(),
            candidate_answers=["beta condition"],
        )
        assert report.competitive_guidelines == ("g-beta-1",)
        # rectified scores drop below 0.5, dragging evidence negative
        assert report.per_step_evidence[-1].values[0] < 0.0

    def test_empty_competitive_pool_recorded_and_expansion_stands(self):
        t = pinned_trajectory(
            "t1", {"g-alpha-1": 0.5, "g-alpha-2": 0.5, "g-alpha-x": 0.5}
        )
        report = verify(
            t, small_store(), MOCK, SYMMETRIC_POST, base_config(),
            candidate_answers=["alpha condition"],  # same terms: excluded
        )
        assert report.active_triggered
        assert report.competitive_guidelines == ()
        assert "g-alpha-x" in report.guidelines_used

    def test_ablation_flags(self):
        t = pinned_trajectory(
            "t1",
            {
                "g-alpha-1": 0.5,
                "g-alpha-2": 0.5,
                "g-alpha-x": 0.5,
                "g-beta-1": 0.9,
            },
        )
        store = small_store(extra_topics=("beta",))
        no_exp = verify(
            t, store, MOCK, SYMMETRIC_POST, base_config(expansion_enabled=False),
            candidate_answers=["beta condition"],
        )
        assert "g-alpha-x" not in no_exp.guidelines_used
        assert no_exp.competitive_guidelines == ("g-beta-1",)
        no_diff = verify(
            t, store, MOCK, SYMMETRIC_POST, base_config(differential_enabled=False),
            candidate_answers=["beta condition"],
        )
        assert no_diff.competitive_guidelines == ()
        assert "g-alpha-x" in no_diff.guidelines_used

    def test_passive_phase_equals_manual_composition(self):
        """Integration oracle: verify's passive output must equal composing
        retrieve -> judge -> aggregate -> accumulate -> predict by hand."""
        t = pinned_trajectory(
            "t1", {"g-alpha-1": 0.8, "g-alpha-2": 0.7}, n_steps=3
        )
        store = small_store()
        cfg = base_config(active_enabled=False)
        report = verify(t, store, MOCK, SYMMETRIC_POST, cfg)

        ranked = retrieve(store, t.answer, cfg.k)
        matrix = judge_trajectory(
            t, [store.by_id[g] for g in ranked.ranked_ids], MOCK
        )
        feats = aggregate_matrix(matrix, AggregationSpec(("min", "avg")))
        evidence = accumulate(list(feats), cfg.beta)
        confidence = predict(SYMMETRIC_POST, evidence[-1])
        assert report.confidence == confidence
        assert report.uncertainty == uncertainty(confidence)
        assert tuple(report.guidelines_used) == ranked.ranked_ids
        assert all(
            np.array_equal(a.values, b.values)
            for a, b in zip(report.per_step_evidence, evidence)
        )

    def test_dimension_mismatch_rejected(self):
        t = pinned_trajectory("t1", {"g-alpha-1": 0.5})
        post = posterior([((0.0,), 0.0)], d=1)
        with pytest.raises(ValidationError, match="dimension"):
            verify(t, small_store(), MOCK, post, base_config())


class TestVerifyBatch:
    def _batch(self):
        ts = [
            pinned_trajectory("t1", {"g-alpha-1": 0.8, "g-alpha-2": 0.7},
                              case_id="c1"),
            pinned_trajectory("t2", {"g-alpha-1": 0.4, "g-alpha-2": 0.6},
                              case_id="c1"),
            pinned_trajectory("t3", {}, answer="zzz unknown", case_id="c2"),
        ]
        return ts, small_store()

    def test_partial_failure_keeps_order(self):
        ts, store = self._batch()
        outs = verify_batch(ts, store, MOCK, SYMMETRIC_POST, base_config())
        assert [o.trajectory_id for o in outs] == ["t1", "t2", "t3"]
        assert outs[0].ok and outs[1].ok
        assert not outs[2].ok
        assert "no relevant guideline" in outs[2].error

    def test_duplicate_trajectory_identical_reports(self):
        t = pinned_trajectory("t1", {"g-alpha-1": 0.8, "g-alpha-2": 0.7})
        outs = verify_batch(
            [t, t], small_store(), MOCK, SYMMETRIC_POST, base_config()
        )
        assert outs[0].report == outs[1].report

    def test_parallelism_does_not_change_results(self):
        ts, store = self._batch()
        seq = verify_batch(ts, store, MOCK, SYMMETRIC_POST, base_config(),
                           parallelism=1)
        par = verify_batch(ts, store, MOCK, SYMMETRIC_POST, base_config(),
                           parallelism=8)
        for a, b in zip(seq, par):
            assert a.report == b.report
            assert a.error == b.error

    def test_sibling_pools(self):
        ts, _ = self._batch()
        pools = sibling_answer_pools(ts, extra_answers=["external"])
        assert pools["t1"] == ["alpha condition", "external"]
        assert pools["t3"] == ["external"]


class TestActiveOnCleanData:
    def test_no_coverage_gap_leaves_auroc_unchanged(self):
        """With nothing to recover, running the full active pipeline moves
        AUROC by less than 0.01 relative to passive."""
        from glean.calibration import CalibrationSample, fit
        from glean.metrics import ScoredSample, auroc
        from glean.synthetic import SyntheticSpec, generate

        spec = SyntheticSpec(n_cases=200, coverage_gap_rate=0.0, seed=51)
        ds = generate(spec)
        agg = AggregationSpec(spec.statistics)
        by_id = {m.trajectory_id: m for m in ds.ratings}
        train = [t for t in ds.trajectories if int(t.case_id.split("-")[1]) < 100]
        test = [t for t in ds.trajectories if int(t.case_id.split("-")[1]) >= 100]
        post = fit(
            [
                CalibrationSample(
                    evidence=accumulate(
                        list(aggregate_matrix(by_id[t.id], agg)), spec.beta
                    )[-1],
                    label=t.label,
                )
                for t in train
            ],
            lam=1.0,
            n_draws=500,
            seed=7,
        )
        judge_cfg = JudgeBackendConfig(kind="mock", mock_seed=3)

        def run_auroc(active, epsilon):
            cfg = PipelineConfig(active_enabled=active, epsilon_u=epsilon, seed=11)
            outs = verify_batch(test, ds.store, judge_cfg, post, cfg, parallelism=4)
            assert all(o.ok for o in outs)
            return auroc([
                ScoredSample(score=o.report.confidence, label=t.label)
                for o, t in zip(outs, test)
            ])

        passive = run_auroc(False, 0.5)
        eager = run_auroc(True, 0.0)
        assert abs(eager - passive) < 0.01
