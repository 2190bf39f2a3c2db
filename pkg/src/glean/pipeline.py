"""End-to-end trajectory verification.

Passive phase: retrieve the top-k guidelines for the answer, judge every
step against them, aggregate, accumulate, and map the final evidence to a
calibrated confidence with entropy uncertainty. When active verification
is enabled and the entropy exceeds the trigger threshold, the guideline
set is expanded, competitive guidelines are judged, scores are rectified
against the strongest competitor, and the confidence is recomputed with
the same calibrator.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .calibration import CalibratorPosterior, predict, uncertainty
from .core import (
    RatingMatrix,
    Trajectory,
    ValidationError,
    VerificationReport,
)
from .evidence import AggregationSpec, accumulate, aggregate_matrix, rectify_matrix
from .judge import JudgeBackendConfig, judge_trajectory
from .retrieval import GuidelineStore, expand, retrieve, retrieve_competitive


@dataclass(frozen=True)
class PipelineConfig:
    """Verification knobs; defaults follow the evaluated configuration."""

    k: int = 3
    beta: float = 0.5
    alpha: float = 0.2
    epsilon_u: float = 0.5
    n_extra: int = 1
    n_comp: int = 2
    aggregation: AggregationSpec = field(default_factory=AggregationSpec)
    active_enabled: bool = True
    expansion_enabled: bool = True
    differential_enabled: bool = True
    seed: int = 0
    max_in_flight: int = 8

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if not 0.0 <= self.epsilon_u <= 1.0:
            raise ValidationError("epsilon_u must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValidationError("beta must lie in [0, 1]")
        if self.alpha < 0:
            raise ValidationError("alpha must be >= 0")
        if self.n_extra < 1 or self.n_comp < 1:
            raise ValidationError("n_extra and n_comp must be >= 1")


@dataclass(frozen=True)
class VerifyOutcome:
    """Per-trajectory result of a batch run: a report or an error message."""

    trajectory_id: str
    report: VerificationReport | None
    error: str | None

    @property
    def ok(self) -> bool:
        return self.report is not None


def _competitive_seed(seed: int, trajectory_id: str) -> int:
    # Stable per-trajectory seed so batch order and parallelism do not
    # change which competitive guidelines get sampled.
    digest = hashlib.blake2b(
        f"{seed}:{trajectory_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") % 2**32


def _predict_phase(matrix: RatingMatrix, post, cfg):
    feats = aggregate_matrix(matrix, cfg.aggregation)
    evidence = accumulate(list(feats), cfg.beta)
    confidence = predict(post, evidence[-1])
    return evidence, confidence, uncertainty(confidence)


def verify(
    t: Trajectory,
    store: GuidelineStore,
    judge_cfg: JudgeBackendConfig,
    post: CalibratorPosterior,
    cfg: PipelineConfig,
    candidate_answers: Sequence[str] = (),
) -> VerificationReport:
    """Verify one trajectory, optionally escalating through active
    verification when the confidence entropy exceeds the trigger.

    candidate_answers holds alternative answers (normally from sibling
    trajectories of the same case) used to retrieve competitive guidelines
    for the differential check.
    """
    if post.d != cfg.aggregation.d:
        raise ValidationError(
            f"calibrator dimension {post.d} does not match aggregation "
            f"dimension {cfg.aggregation.d}"
        )

    ranked = retrieve(store, t.answer, cfg.k)
    used = list(ranked.ranked_ids)
    matrix = judge_trajectory(
        t,
        [store.by_id[gid] for gid in used],
        judge_cfg,
        max_in_flight=cfg.max_in_flight,
    )
    evidence, confidence, entropy = _predict_phase(matrix, post, cfg)

    triggered = cfg.active_enabled and entropy > cfg.epsilon_u
    competitive_ids: list[str] = []
    if triggered:
        if cfg.expansion_enabled:
            extra = expand(store, t.answer, set(used), cfg.n_extra)
            if extra:
                extra_matrix = judge_trajectory(
                    t, extra, judge_cfg, max_in_flight=cfg.max_in_flight
                )
                matrix = RatingMatrix(
                    trajectory_id=t.id,
                    guideline_ids=matrix.guideline_ids + extra_matrix.guideline_ids,
                    scores=np.hstack([matrix.scores, extra_matrix.scores]),
                )
                used.extend(g.id for g in extra)
        if cfg.differential_enabled:
            competitive = retrieve_competitive(
                store,
                t.answer,
                list(candidate_answers),
                cfg.n_comp,
                exclude=set(used),
                seed=_competitive_seed(cfg.seed, t.id),
            )
            if competitive:
                comp_matrix = judge_trajectory(
                    t, competitive, judge_cfg, max_in_flight=cfg.max_in_flight
                )
                matrix = rectify_matrix(matrix, comp_matrix, cfg.alpha)
                competitive_ids = [g.id for g in competitive]
            # An empty pool skips the differential check; the report shows
            # this as competitive_guidelines == () while expansion stands.
        evidence, confidence, entropy = _predict_phase(matrix, post, cfg)

    return VerificationReport(
        trajectory_id=t.id,
        confidence=confidence,
        uncertainty=entropy,
        per_step_evidence=tuple(evidence),
        active_triggered=triggered,
        guidelines_used=tuple(used),
        competitive_guidelines=tuple(competitive_ids),
    )


def sibling_answer_pools(
    trajectories: Sequence[Trajectory], extra_answers: Sequence[str] = ()
) -> dict[str, list[str]]:
    """Candidate answers per trajectory id: answers of other trajectories
    sharing the case, plus any external pool, in stable order."""
    by_case: dict[str, list[Trajectory]] = {}
    for t in trajectories:
        by_case.setdefault(t.case_id, []).append(t)
    pools: dict[str, list[str]] = {}
    for t in trajectories:
        siblings = [s.answer for s in by_case[t.case_id] if s.id != t.id]
        pools[t.id] = siblings + list(extra_answers)
    return pools


def verify_batch(
    trajectories: Sequence[Trajectory],
    store: GuidelineStore,
    judge_cfg: JudgeBackendConfig,
    post: CalibratorPosterior,
    cfg: PipelineConfig,
    *,
    parallelism: int = 1,
    extra_answers: Sequence[str] = (),
    candidate_pools: Mapping[str, Sequence[str]] | None = None,
) -> list[VerifyOutcome]:
    """Verify many trajectories; outcomes come back in input order.

    Each trajectory is independent, so failures stay per-item rather than
    aborting the batch. Candidate answers default to sibling trajectories
    of the same case within the batch.
    """
    if parallelism < 1:
        raise ValidationError("parallelism must be >= 1")
    pools = (
        dict(candidate_pools)
        if candidate_pools is not None
        else sibling_answer_pools(trajectories, extra_answers)
    )

    def run(t: Trajectory) -> VerifyOutcome:
        try:
            report = verify(t, store, judge_cfg, post, cfg, pools.get(t.id, ()))
            return VerifyOutcome(trajectory_id=t.id, report=report, error=None)
        except Exception as exc:  # per-item isolation by design
            return VerifyOutcome(trajectory_id=t.id, report=None, error=str(exc))

    if parallelism == 1 or len(trajectories) <= 1:
        return [run(t) for t in trajectories]
    with ThreadPoolExecutor(
        max_workers=min(parallelism, len(trajectories))
    ) as pool:
        return list(pool.map(run, trajectories))
