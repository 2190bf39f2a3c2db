"""Step-feature aggregation and discounted logit-space evidence accumulation.

A rating matrix row (one step's scores across guidelines) is reduced to a
small feature vector of order statistics, the features are mapped to logit
space and accumulated with a discount factor, and — during differential
checks — raw scores can be rectified against the strongest competitive
alignment before aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    EvidenceVector,
    RatingMatrix,
    ValidationError,
    clamp,
    clamp_array,
    logit,
    sigmoid,
)

STATISTIC_NAMES = ("avg", "min", "max", "std")

_STAT_FN = {
    "avg": np.mean,
    "min": np.min,
    "max": np.max,
    "std": np.std,  # population form, so a single rating is defined (std 0)
}


@dataclass(frozen=True)
class AggregationSpec:
    """Ordered statistics extracted from each step's guideline ratings."""

    statistics: tuple[str, ...] = ("min", "avg")

    def __post_init__(self):
        object.__setattr__(self, "statistics", tuple(self.statistics))
        if not self.statistics:
            raise ValidationError("aggregation requires at least one statistic")
        if len(set(self.statistics)) != len(self.statistics):
            raise ValidationError("duplicate statistics in aggregation")
        unknown = [s for s in self.statistics if s not in STATISTIC_NAMES]
        if unknown:
            raise ValidationError(f"unknown statistics: {unknown}")

    @property
    def d(self) -> int:
        return len(self.statistics)


def aggregate_step(scores, spec: AggregationSpec) -> np.ndarray:
    """Reduce one step's ratings to the requested statistics, re-clamped."""
    arr = np.asarray(scores, dtype=float)
    if arr.size == 0:
        raise ValidationError("cannot aggregate an empty set of scores")
    feats = np.array([_STAT_FN[s](arr) for s in spec.statistics])
    return clamp_array(feats)


def aggregate_matrix(m: RatingMatrix, spec: AggregationSpec) -> np.ndarray:
    """Per-step features for a whole rating matrix, shape (T, d)."""
    return np.stack([aggregate_step(row, spec) for row in m.scores])


def accumulate(features, beta: float) -> list[EvidenceVector]:
    """Discounted logit-space accumulation of per-step features.

    Computes S_t = beta * S_{t-1} + logit(s_t) for t = 1..T, which equals
    the explicit sum over i <= t of beta^(t-i) * logit(s_i). beta = 0 keeps
    only the current step; beta = 1 is the plain cumulative sum.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValidationError(f"beta must lie in [0, 1], got {beta}")
    feats = [np.asarray(f, dtype=float).reshape(-1) for f in features]
    if not feats:
        raise ValidationError("features must be non-empty")
    d = feats[0].shape[0]
    if any(f.shape[0] != d for f in feats):
        raise ValidationError("feature vectors must share one dimension")
    state = np.zeros(d)
    out = []
    for t, f in enumerate(feats, start=1):
        state = beta * state + logit(clamp_array(f))
        out.append(EvidenceVector(values=state.copy(), step=t))
    return out


def rectify(score: float, competitive_max: float, alpha: float) -> float:
    """Shift a score in logit space against the strongest competitive score.

    Returns sigmoid(logit(score) - alpha * logit(competitive_max)), clamped.
    alpha = 0 returns the (clamped) score unchanged.
    """
    if alpha < 0:
        raise ValidationError(f"alpha must be >= 0, got {alpha}")
    s = clamp(score)
    if alpha == 0.0:
        return s
    return clamp(sigmoid(logit(s) - alpha * logit(clamp(competitive_max))))


def rectify_matrix(
    m: RatingMatrix, competitive: RatingMatrix, alpha: float
) -> RatingMatrix:
    """Rectify every cell of m against the rowwise max of competitive scores."""
    if alpha < 0:
        raise ValidationError(f"alpha must be >= 0, got {alpha}")
    if m.trajectory_id != competitive.trajectory_id:
        raise ValidationError(
            f"matrices belong to different trajectories: "
            f"'{m.trajectory_id}' vs '{competitive.trajectory_id}'"
        )
    if m.n_steps != competitive.n_steps:
        raise ValidationError(
            f"step-count mismatch: {m.n_steps} vs {competitive.n_steps}"
        )
    if alpha == 0.0:
        return RatingMatrix(m.trajectory_id, m.guideline_ids, m.scores.copy())
    s_minus = clamp_array(competitive.scores.max(axis=1))
    z = logit(clamp_array(m.scores)) - alpha * logit(s_minus)[:, None]
    return RatingMatrix(m.trajectory_id, m.guideline_ids, clamp_array(sigmoid(z)))
