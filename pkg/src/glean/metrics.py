"""Evaluation of verification signals.

Discrimination (AUROC), selective risk, calibration (ECE, Brier),
Best-of-N selection accuracy, and the two evidence diagnostics: a Welch
test separating evidence of correct vs incorrect trajectories, and a
binned logit-linearity fit of correctness probability against evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .core import ValidationError


@dataclass(frozen=True)
class ScoredSample:
    """A verifier score for one trajectory, with its correctness label."""

    score: float
    label: bool
    case_id: str | None = None
    answer: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score out of range: {self.score}")


@dataclass(frozen=True)
class LinearityDiagnostic:
    """Fitted line of logit P(correct | evidence) against evidence, plus the
    Welch two-sample separation test between the label populations."""

    slope: float
    intercept: float
    r_squared: float
    n_bins: int
    bin_edges: tuple[float, ...]
    welch_t: float
    welch_p: float

    def __post_init__(self):
        if not 0.0 <= self.r_squared <= 1.0:
            raise ValidationError(f"r_squared out of range: {self.r_squared}")


def _arrays(samples: Sequence[ScoredSample]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.array([s.score for s in samples], dtype=float)
    labels = np.array([s.label for s in samples], dtype=bool)
    return scores, labels


def auroc(samples: Sequence[ScoredSample]) -> float:
    """Probability that a random positive outscores a random negative.

    Mann-Whitney form with ties counted one half, computed from average
    ranks in O(n log n).
    """
    scores, labels = _arrays(samples)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("auroc requires both classes")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[i : j + 1] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    rank_of = np.empty(len(scores))
    rank_of[order] = ranks
    u = rank_of[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def risk_at(samples: Sequence[ScoredSample], fraction: float) -> float:
    """Error rate among the ceil(fraction * n) most confident samples.

    Sorting is by score descending with ties kept in input order; samples
    are ranked by the score itself (a one-sided correctness probability).
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must lie in (0, 1], got {fraction}")
    if not samples:
        raise ValidationError("risk_at requires at least one sample")
    order = sorted(range(len(samples)), key=lambda i: (-samples[i].score, i))
    keep = math.ceil(fraction * len(samples))
    kept = order[:keep]
    errors = sum(1 for i in kept if not samples[i].label)
    return errors / keep


def ece(samples: Sequence[ScoredSample], n_bins: int = 10) -> float:
    """Expected calibration error over equal-width bins.

    Bins partition [0, 1] right-closed except the first; the result is the
    bin-size-weighted mean absolute gap between mean score and mean label.
    """
    if n_bins < 1:
        raise ValidationError(f"n_bins must be >= 1, got {n_bins}")
    if not samples:
        return 0.0
    scores, labels = _arrays(samples)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.maximum(np.searchsorted(edges, scores, side="left") - 1, 0)
    total = 0.0
    n = len(samples)
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        if count == 0:
            continue
        total += (count / n) * abs(scores[mask].mean() - labels[mask].mean())
    return float(total)


def brier(samples: Sequence[ScoredSample]) -> float:
    """Mean squared error between scores and the 0/1 labels."""
    if not samples:
        raise ValidationError("brier requires at least one sample")
    scores, labels = _arrays(samples)
    return float(np.mean((scores - labels.astype(float)) ** 2))


def best_of_n(
    samples: Sequence[ScoredSample],
    n: int,
    truth: Mapping[str, Callable[[str], bool]] | None = None,
) -> float:
    """Accuracy of picking the highest-scored of each case's first n
    candidates.

    Candidates are grouped by case_id in input order; score ties go to the
    lowest candidate index. Correctness of the pick comes from its label,
    or from truth[case_id](answer) when a truth map is supplied.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    groups: dict[str, list[ScoredSample]] = {}
    for s in samples:
        if s.case_id is None:
            raise ValidationError("best_of_n requires case_id on every sample")
        groups.setdefault(s.case_id, []).append(s)
    if not groups:
        raise ValidationError("best_of_n requires at least one case")
    hits = 0
    for case_id, group in groups.items():
        if len(group) < n:
            raise ValidationError(
                f"case '{case_id}' has only {len(group)} candidates, need {n}"
            )
        best_i = 0
        for i in range(1, n):
            if group[i].score > group[best_i].score:
                best_i = i
        chosen = group[best_i]
        if truth is not None:
            if case_id not in truth:
                raise ValidationError(f"truth map misses case '{case_id}'")
            if chosen.answer is None:
                raise ValidationError(
                    f"case '{case_id}': candidate has no answer to check"
                )
            hits += bool(truth[case_id](chosen.answer))
        else:
            hits += bool(chosen.label)
    return hits / len(groups)


def linearity_diagnostic(
    evidence: Sequence[tuple[float, bool]], n_bins: int = 10
) -> LinearityDiagnostic:
    """Binned logit-linearity fit of P(correct | evidence) plus Welch test.

    Evidence values are split into n_bins equal-count bins; each non-empty
    bin contributes (mean evidence, logit of the Laplace-smoothed positive
    rate) to an ordinary least-squares line. The Welch t-test compares the
    evidence populations of correct vs incorrect samples without assuming
    equal variances.
    """
    if n_bins < 3:
        raise ValidationError(f"n_bins must be >= 3, got {n_bins}")
    values = np.array([v for v, _ in evidence], dtype=float)
    labels = np.array([z for _, z in evidence], dtype=bool)
    if labels.all() or not labels.any():
        raise ValidationError("linearity diagnostic requires both classes")

    order = np.argsort(values, kind="mergesort")
    chunks = [c for c in np.array_split(order, n_bins) if len(c) > 0]
    xs, ys = [], []
    edges = [float(values[order[0]])]
    for chunk in chunks:
        edges.append(float(values[chunk[-1]]))
        # Laplace (add-1 / add-2) smoothing keeps pure bins finite in logit.
        p = (labels[chunk].sum() + 1.0) / (len(chunk) + 2.0)
        xs.append(float(values[chunk].mean()))
        ys.append(math.log(p / (1.0 - p)))
    if len(xs) < 3:
        raise ValidationError(f"fewer than 3 usable bins (got {len(xs)})")

    xs_arr = np.array(xs)
    ys_arr = np.array(ys)
    slope, intercept = np.polyfit(xs_arr, ys_arr, 1)
    pred = slope * xs_arr + intercept
    ss_res = float(((ys_arr - pred) ** 2).sum())
    ss_tot = float(((ys_arr - ys_arr.mean()) ** 2).sum())
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    r_squared = min(max(r_squared, 0.0), 1.0)

    welch = stats.ttest_ind(values[labels], values[~labels], equal_var=False)
    return LinearityDiagnostic(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
        n_bins=n_bins,
        bin_edges=tuple(edges),
        welch_t=float(welch.statistic),
        welch_p=float(welch.pvalue),
    )
