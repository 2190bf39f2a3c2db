"""Synthetic verification datasets with evidence-level ground truth.

Each trajectory carries a latent quality q. Clean per-step, per-guideline
ratings are sigmoid(q + noise); the label is drawn from
sigmoid(slope * E + intercept), where E is the component mean of the
discounted evidence accumulated from the clean passive ratings. The
conditional label model is therefore exact by construction, which makes
calibration, discrimination, and linearity claims checkable against known
truth. Coverage gaps replace passive ratings with uniform noise while the
label still follows the clean evidence, degrading passive verification on
purpose.

Step and guideline texts embed the score directives the mock judge honors
([judge-key: ...] / [judge-scores: ...]), so running the real pipeline over
these datasets reproduces the scripted ratings cell for cell — including
the expansion and competitive columns used by active verification. The
discount factor and aggregation statistics used during generation are
recorded in the manifest; downstream stages must reuse them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .calibration import CalibrationSample
from .core import (
    EvidenceVector,
    Guideline,
    RatingMatrix,
    Step,
    Trajectory,
    ValidationError,
    save_guidelines,
    save_ratings,
    save_trajectories,
)
from .evidence import AggregationSpec, accumulate, aggregate_step
from .retrieval import GuidelineStore, expand, extract_query_terms, retrieve

# Scripted ratings stay inside the mock judge's range so every logit is
# comfortably finite.
_SCORE_LOW = 0.05
_SCORE_HIGH = 0.95


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the generative model.

    true_slope / true_intercept define the label model on the scalar
    evidence projection; rating_noise_sd perturbs each rating's logit
    around the latent quality; coverage_gap_rate is the fraction replaced
    by uninformative noise. beta and statistics must match the pipeline
    that will consume the data (they are echoed in the manifest).
    """

    n_cases: int
    steps_per_trajectory: tuple[int, int] = (3, 8)
    true_slope: float = 1.5
    true_intercept: float = -0.2
    rating_noise_sd: float = 0.5
    coverage_gap_rate: float = 0.0
    seed: int = 0
    candidates_per_case: int = 2
    quality_sd: float = 1.0
    k_guidelines: int = 3
    n_extra: int = 1
    beta: float = 0.5
    statistics: tuple[str, ...] = ("min", "avg")

    def __post_init__(self):
        object.__setattr__(
            self, "steps_per_trajectory", tuple(self.steps_per_trajectory)
        )
        object.__setattr__(self, "statistics", tuple(self.statistics))
        if self.n_cases < 1:
            raise ValidationError("n_cases must be >= 1")
        lo, hi = self.steps_per_trajectory
        if not 1 <= lo <= hi:
            raise ValidationError("steps_per_trajectory must be a range 1 <= lo <= hi")
        if self.rating_noise_sd < 0:
            raise ValidationError("rating_noise_sd must be >= 0")
        if not 0.0 <= self.coverage_gap_rate <= 1.0:
            raise ValidationError("coverage_gap_rate must lie in [0, 1]")
        if self.candidates_per_case < 1:
            raise ValidationError("candidates_per_case must be >= 1")
        if self.k_guidelines < 1 or self.n_extra < 1:
            raise ValidationError("k_guidelines and n_extra must be >= 1")


@dataclass(frozen=True)
class SyntheticDataset:
    trajectories: tuple[Trajectory, ...]
    ratings: tuple[RatingMatrix, ...]
    store: GuidelineStore
    manifest: dict


def sample_scalar_evidence(
    n: int,
    slope: float = 1.5,
    intercept: float = -0.2,
    evidence_sd: float = 2.0,
    seed: int = 0,
) -> tuple[list[CalibrationSample], np.ndarray]:
    """Labeled scalar-evidence samples from the exact logistic model.

    Returns the samples plus the true per-sample probabilities, so tests
    can compare predictions against the Bayes-optimal answer.
    """
    rng = np.random.default_rng(seed)
    values = rng.normal(0.0, evidence_sd, size=n)
    probs = expit(slope * values + intercept)
    labels = rng.random(n) < probs
    samples = [
        CalibrationSample(
            evidence=EvidenceVector(values=np.array([v]), step=1), label=bool(z)
        )
        for v, z in zip(values, labels)
    ]
    return samples, probs


def _topic_guidelines(topic_idx: int, k: int, n_extra: int) -> list[Guideline]:
    topic = f"topic{topic_idx:04d}"
    focus = f"focus{topic_idx:04d}"
    out = []
    for j in range(1, k + 1):
        gid = f"g-{topic}-p{j}"
        out.append(
            Guideline(
                id=gid,
                title=f"Protocol {topic} {focus} variant {j}",
                abstract=f"Criteria for {topic} cases, variant {j}.",
                content=(
                    f"Alignment criteria for {topic} ({focus}), variant {j}. "
                    f"[judge-key: {gid}]"
                ),
            )
        )
    for j in range(1, n_extra + 1):
        gid = f"g-{topic}-x{j}"
        out.append(
            Guideline(
                id=gid,
                title=f"Protocol {topic} supplement {j}",
                abstract=f"Supplementary notes for {topic}.",
                content=f"Extended criteria for {topic}, part {j}. [judge-key: {gid}]",
            )
        )
    return out


def _answer_text(topic_idx: int) -> str:
    return f"topic{topic_idx:04d} focus{topic_idx:04d} presentation"


def _clean_scores(rng, center: float, shape, noise_sd: float) -> np.ndarray:
    logits = center + rng.normal(0.0, noise_sd, size=shape)
    return np.clip(expit(logits), _SCORE_LOW, _SCORE_HIGH)


def _noise_scores(rng, shape) -> np.ndarray:
    return rng.uniform(_SCORE_LOW, _SCORE_HIGH, size=shape)


def _scalar_projection(ev: EvidenceVector) -> float:
    return float(ev.values.mean())


def generate(spec: SyntheticSpec) -> SyntheticDataset:
    """Trajectories, scripted ratings, and a guideline store from the model.

    Coverage gaps apply independently per passive guideline column. Labels
    always follow the clean (pre-gap) evidence.
    """
    return _generate(spec, active_scenario=False)


def generate_active_scenario(spec: SyntheticSpec) -> SyntheticDataset:
    """Dataset where active verification recovers signal that passive misses.

    A coverage_gap_rate fraction of trajectories get all-noise passive
    columns while their expansion column stays clean and their competitive
    columns are informative (anti-aligned with quality), so expansion and
    differential checks raise discrimination over passive-only by
    construction. Sibling candidates of a case answer two different topics,
    which supplies the competing answers.
    """
    if spec.coverage_gap_rate <= 0.0:
        raise ValidationError("active scenario requires coverage_gap_rate > 0")
    return _generate(spec, active_scenario=True)


def _generate(spec: SyntheticSpec, active_scenario: bool) -> SyntheticDataset:
    rng = np.random.default_rng(spec.seed)
    agg = AggregationSpec(spec.statistics)
    lo, hi = spec.steps_per_trajectory
    n_topics = max(2, min(16, spec.n_cases))

    guidelines = []
    for topic_idx in range(n_topics):
        guidelines.extend(
            _topic_guidelines(topic_idx, spec.k_guidelines, spec.n_extra)
        )
    store = GuidelineStore(guidelines)

    trajectories: list[Trajectory] = []
    ratings: list[RatingMatrix] = []

    for ci in range(spec.n_cases):
        case_id = f"case-{ci:04d}"
        if active_scenario:
            pair = rng.choice(n_topics, size=2, replace=False)
            topics = [int(pair[c % 2]) for c in range(spec.candidates_per_case)]
        else:
            topic = int(rng.integers(n_topics))
            topics = [topic] * spec.candidates_per_case
        answers = [_answer_text(t) for t in topics]

        for c in range(spec.candidates_per_case):
            traj_id = f"{case_id}-cand-{c:02d}"
            n_steps = int(rng.integers(lo, hi + 1))
            quality = rng.normal(0.0, spec.quality_sd)

            passive_ids = list(
                retrieve(store, answers[c], spec.k_guidelines).ranked_ids
            )
            extra = expand(store, answers[c], set(passive_ids), spec.n_extra)
            extra_ids = [g.id for g in extra]

            clean = _clean_scores(
                rng, quality, (n_steps, len(passive_ids)), spec.rating_noise_sd
            )
            if active_scenario:
                gapped = rng.random() < spec.coverage_gap_rate
                observed = (
                    _noise_scores(rng, clean.shape) if gapped else clean.copy()
                )
            else:
                observed = clean.copy()
                for j in range(observed.shape[1]):
                    if rng.random() < spec.coverage_gap_rate:
                        observed[:, j] = _noise_scores(rng, n_steps)

            extra_scores = _clean_scores(
                rng, quality, (n_steps, len(extra_ids)), spec.rating_noise_sd
            )

            # Competitive columns: the top-1 guideline of each sibling answer
            # whose terms differ, scored anti-aligned with quality.
            comp_scores: dict[str, np.ndarray] = {}
            own_terms = set(extract_query_terms(answers[c]))
            for other in dict.fromkeys(answers):
                if set(extract_query_terms(other)) == own_terms:
                    continue
                top_id = retrieve(store, other, 1).ranked_ids[0]
                if top_id in passive_ids or top_id in extra_ids:
                    continue
                if top_id not in comp_scores:
                    comp_scores[top_id] = _clean_scores(
                        rng, -quality, n_steps, spec.rating_noise_sd
                    )

            # Label from the clean passive evidence, per the exact model.
            feats = [aggregate_step(row, agg) for row in clean]
            final = accumulate(feats, spec.beta)[-1]
            p_true = float(expit(
                spec.true_slope * _scalar_projection(final) + spec.true_intercept
            ))
            label = bool(rng.random() < p_true)

            steps = []
            for t in range(n_steps):
                entries = {gid: observed[t, j] for j, gid in enumerate(passive_ids)}
                entries.update(
                    {gid: extra_scores[t, j] for j, gid in enumerate(extra_ids)}
                )
                entries.update({gid: col[t] for gid, col in comp_scores.items()})
                table = " ".join(
                    f"{gid}={float(v)!r}" for gid, v in entries.items()
                )
                steps.append(
                    Step(
                        index=t + 1,
                        observation=(
                            f"Finding {t + 1} for {traj_id}. "
                            f"[judge-scores: {table}]"
                        ),
                        action=(
                            f"Weigh finding {t + 1} against "
                            f"topic{topics[c]:04d} criteria."
                        ),
                    )
                )
            trajectories.append(
                Trajectory(
                    id=traj_id,
                    case_id=case_id,
                    steps=tuple(steps),
                    answer=answers[c],
                    label=label,
                )
            )
            ratings.append(
                RatingMatrix(
                    trajectory_id=traj_id,
                    guideline_ids=tuple(passive_ids),
                    scores=observed,
                )
            )

    manifest = {
        "slope": spec.true_slope,
        "intercept": spec.true_intercept,
        "seed": spec.seed,
        "beta": spec.beta,
        "statistics": list(spec.statistics),
        "scalar_projection": "component_mean",
        "n_cases": spec.n_cases,
        "candidates_per_case": spec.candidates_per_case,
        "steps_per_trajectory": [lo, hi],
        "rating_noise_sd": spec.rating_noise_sd,
        "coverage_gap_rate": spec.coverage_gap_rate,
        "quality_sd": spec.quality_sd,
        "k_guidelines": spec.k_guidelines,
        "n_extra": spec.n_extra,
        "n_topics": n_topics,
        "active_scenario": active_scenario,
    }
    return SyntheticDataset(
        trajectories=tuple(trajectories),
        ratings=tuple(ratings),
        store=store,
        manifest=manifest,
    )


def save_dataset(dataset: SyntheticDataset, out_dir) -> None:
    """Write trajectories/guidelines/ratings JSONL plus the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_trajectories(out / "trajectories.jsonl", dataset.trajectories)
    save_guidelines(out / "guidelines.jsonl", dataset.store.guidelines)
    save_ratings(out / "ratings.jsonl", dataset.ratings)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(dataset.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
