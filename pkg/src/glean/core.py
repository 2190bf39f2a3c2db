"""Core domain types, validation, and JSON Lines serialization.

Everything else builds on the types here: the trajectories under
verification, the guideline documents they are scored against, per-step
rating matrices, accumulated evidence vectors, and the final verification
reports. All types are immutable after construction and safe to share
across threads; the JSONL loaders are single-threaded per file and report
errors by line number.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from scipy.special import expit

# Probabilities are clamped into [EPS_CLAMP, 1 - EPS_CLAMP] before any logit
# transform, bounding |logit| at ~9.21 so no single saturated rating can
# contribute infinite evidence.
EPS_CLAMP = 1e-4


class JsonlError(ValueError):
    """Malformed or schema-violating JSON Lines input."""


class ValidationError(ValueError):
    """A domain invariant does not hold."""


def clamp(p: float) -> float:
    """Clamp a probability so its logit is finite."""
    return min(max(float(p), EPS_CLAMP), 1.0 - EPS_CLAMP)


def clamp_array(p) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=float), EPS_CLAMP, 1.0 - EPS_CLAMP)


def logit(p):
    """log(p / (1 - p)), elementwise for arrays."""
    arr = np.asarray(p, dtype=float)
    out = np.log(arr) - np.log1p(-arr)
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    """Inverse of logit, elementwise for arrays."""
    out = expit(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def binary_entropy(p: float, *, nats: bool = False) -> float:
    """Binary entropy of p in bits (or nats), with 0 * log 0 taken as 0."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"probability out of range: {p}")
    h = 0.0
    for q in (p, 1.0 - p):
        if q > 0.0:
            h -= q * math.log(q)
    return h if nats else h / math.log(2.0)


@dataclass(frozen=True)
class Step:
    """One (observation, action) pair of a trajectory; index is 1-based."""

    index: int
    observation: str
    action: str

    def __post_init__(self):
        if self.index < 1:
            raise ValidationError(f"step index must be >= 1, got {self.index}")
        if not self.observation.strip():
            raise ValidationError(f"step {self.index}: observation is empty")
        if not self.action.strip():
            raise ValidationError(f"step {self.index}: action is empty")


@dataclass(frozen=True)
class Trajectory:
    """An agent run: ordered steps, a final answer, and an optional label.

    The label is tri-state: True/False when correctness is known (needed
    for calibration and evaluation), None otherwise. Verification itself
    never requires it.
    """

    id: str
    case_id: str
    steps: tuple[Step, ...]
    answer: str
    label: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.id:
            raise ValidationError("trajectory id must be non-empty")
        if not self.steps:
            raise ValidationError(f"trajectory '{self.id}' has no steps")
        for pos, step in enumerate(self.steps, start=1):
            if step.index != pos:
                raise ValidationError(
                    f"trajectory '{self.id}': step indices must be contiguous "
                    f"1..T, found index {step.index} at position {pos}"
                )

    @property
    def n_steps(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class Guideline:
    """A titled protocol document used as an evidence source for ratings."""

    id: str
    title: str
    content: str
    abstract: str | None = None
    keywords: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.keywords is not None:
            object.__setattr__(self, "keywords", tuple(self.keywords))
        if not self.id:
            raise ValidationError("guideline id must be non-empty")
        if not self.title.strip():
            raise ValidationError(f"guideline '{self.id}': title is empty")
        if not self.content.strip():
            raise ValidationError(f"guideline '{self.id}': content is empty")


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Per-step, per-guideline alignment scores for one trajectory.

    Rows are steps 1..T, columns follow guideline_ids. Construction fixes
    shape and freezes the array; value-range checks live in
    validate_rating_matrix so out-of-range inputs can still be inspected.
    """

    trajectory_id: str
    guideline_ids: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "guideline_ids", tuple(self.guideline_ids))
        arr = np.array(self.scores, dtype=float)
        if arr.ndim != 2:
            raise ValidationError("scores must be a 2-D matrix")
        if arr.shape[1] != len(self.guideline_ids):
            raise ValidationError(
                f"scores have {arr.shape[1]} columns but "
                f"{len(self.guideline_ids)} guideline ids were given"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "scores", arr)

    @property
    def n_steps(self) -> int:
        return self.scores.shape[0]

    def __eq__(self, other):
        if not isinstance(other, RatingMatrix):
            return NotImplemented
        return (
            self.trajectory_id == other.trajectory_id
            and self.guideline_ids == other.guideline_ids
            and np.array_equal(self.scores, other.scores)
        )


@dataclass(frozen=True, eq=False)
class EvidenceVector:
    """Accumulated logit-space evidence after a given step; unbounded reals."""

    values: np.ndarray
    step: int

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"evidence at step {self.step} is not finite")
        if self.step < 1:
            raise ValidationError(f"evidence step must be >= 1, got {self.step}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, EvidenceVector):
            return NotImplemented
        return self.step == other.step and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of verifying one trajectory.

    competitive_guidelines is empty when no differential check ran;
    guidelines_used includes any expansion columns added by active
    verification.
    """

    trajectory_id: str
    confidence: float
    uncertainty: float
    per_step_evidence: tuple[EvidenceVector, ...]
    active_triggered: bool
    guidelines_used: tuple[str, ...]
    competitive_guidelines: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_step_evidence", tuple(self.per_step_evidence))
        object.__setattr__(self, "guidelines_used", tuple(self.guidelines_used))
        object.__setattr__(
            self, "competitive_guidelines", tuple(self.competitive_guidelines)
        )
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence out of range: {self.confidence}")
        if abs(self.uncertainty - binary_entropy(self.confidence)) > 1e-9:
            raise ValidationError(
                "uncertainty does not equal the binary entropy of confidence"
            )


def validate_rating_matrix(
    m: RatingMatrix, t: Trajectory, known_ids: Iterable[str] | None = None
) -> None:
    """Check all RatingMatrix invariants against a trajectory.

    When known_ids is given, every guideline id in the matrix must be a
    member. Raises ValidationError on the first violation.
    """
    if m.trajectory_id != t.id:
        raise ValidationError(
            f"matrix is for trajectory '{m.trajectory_id}', not '{t.id}'"
        )
    if m.n_steps != t.n_steps:
        raise ValidationError(
            f"row-count mismatch: matrix has {m.n_steps} rows, "
            f"trajectory '{t.id}' has {t.n_steps} steps"
        )
    if len(set(m.guideline_ids)) != len(m.guideline_ids):
        raise ValidationError("duplicate guideline ids in rating matrix")
    if m.scores.size and (
        m.scores.min() < EPS_CLAMP or m.scores.max() > 1.0 - EPS_CLAMP
    ):
        raise ValidationError(
            f"score outside clamp range [{EPS_CLAMP}, {1.0 - EPS_CLAMP}]"
        )
    if known_ids is not None:
        known = set(known_ids)
        for gid in m.guideline_ids:
            if gid not in known:
                raise ValidationError(f"unknown guideline id '{gid}'")


# ---------------------------------------------------------------------------
# JSON Lines serialization
# ---------------------------------------------------------------------------


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise JsonlError(f"{path}: line {lineno}: invalid JSON: {exc.msg}")
            if not isinstance(obj, dict):
                raise JsonlError(f"{path}: line {lineno}: expected a JSON object")
            yield lineno, obj


def _write_jsonl(path, dicts: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for d in dicts:
            fh.write(json.dumps(d) + "\n")


def _req(obj: dict, key: str):
    if key not in obj:
        raise ValueError(f"missing field '{key}'")
    return obj[key]


def trajectory_to_dict(t: Trajectory) -> dict:
    d = {
        "id": t.id,
        "case_id": t.case_id,
        "steps": [
            {"index": s.index, "observation": s.observation, "action": s.action}
            for s in t.steps
        ],
        "answer": t.answer,
    }
    if t.label is not None:
        d["label"] = t.label
    return d


def trajectory_from_dict(d: dict) -> Trajectory:
    steps = tuple(
        Step(
            index=int(_req(s, "index")),
            observation=str(_req(s, "observation")),
            action=str(_req(s, "action")),
        )
        for s in _req(d, "steps")
    )
    label = d.get("label")
    return Trajectory(
        id=str(_req(d, "id")),
        case_id=str(_req(d, "case_id")),
        steps=steps,
        answer=str(_req(d, "answer")),
        label=None if label is None else bool(label),
    )


def guideline_to_dict(g: Guideline) -> dict:
    d = {"id": g.id, "title": g.title}
    if g.abstract is not None:
        d["abstract"] = g.abstract
    d["content"] = g.content
    if g.keywords is not None:
        d["keywords"] = list(g.keywords)
    return d


def guideline_from_dict(d: dict) -> Guideline:
    kw = d.get("keywords")
    return Guideline(
        id=str(_req(d, "id")),
        title=str(_req(d, "title")),
        content=str(_req(d, "content")),
        abstract=None if d.get("abstract") is None else str(d["abstract"]),
        keywords=None if kw is None else tuple(str(k) for k in kw),
    )


def rating_matrix_to_dict(m: RatingMatrix) -> dict:
    return {
        "trajectory_id": m.trajectory_id,
        "guideline_ids": list(m.guideline_ids),
        "scores": m.scores.tolist(),
    }


def rating_matrix_from_dict(d: dict) -> RatingMatrix:
    return RatingMatrix(
        trajectory_id=str(_req(d, "trajectory_id")),
        guideline_ids=tuple(str(g) for g in _req(d, "guideline_ids")),
        scores=np.asarray(_req(d, "scores"), dtype=float),
    )


def report_to_dict(r: VerificationReport) -> dict:
    return {
        "trajectory_id": r.trajectory_id,
        "confidence": r.confidence,
        "uncertainty": r.uncertainty,
        "per_step_evidence": [
            {"step": e.step, "values": e.values.tolist()} for e in r.per_step_evidence
        ],
        "active_triggered": r.active_triggered,
        "guidelines_used": list(r.guidelines_used),
        "competitive_guidelines": list(r.competitive_guidelines),
    }


def report_from_dict(d: dict) -> VerificationReport:
    evidence = tuple(
        EvidenceVector(values=np.asarray(_req(e, "values"), dtype=float),
                       step=int(_req(e, "step")))
        for e in _req(d, "per_step_evidence")
    )
    return VerificationReport(
        trajectory_id=str(_req(d, "trajectory_id")),
        confidence=float(_req(d, "confidence")),
        uncertainty=float(_req(d, "uncertainty")),
        per_step_evidence=evidence,
        active_triggered=bool(_req(d, "active_triggered")),
        guidelines_used=tuple(str(g) for g in _req(d, "guidelines_used")),
        competitive_guidelines=tuple(
            str(g) for g in _req(d, "competitive_guidelines")
        ),
    )


def _load_unique(path, from_dict, kind: str) -> list:
    seen: dict[str, int] = {}
    out = []
    for lineno, obj in _iter_jsonl(Path(path)):
        try:
            item = from_dict(obj)
        except (ValueError, TypeError) as exc:
            raise JsonlError(f"{path}: line {lineno}: {exc}") from exc
        if item.id in seen:
            raise JsonlError(
                f"{path}: duplicate {kind} id '{item.id}' on lines "
                f"{seen[item.id]} and {lineno}"
            )
        seen[item.id] = lineno
        out.append(item)
    return out


def load_trajectories(path) -> list[Trajectory]:
    """Read trajectories.jsonl; ids are verified unique, empty file is []."""
    return _load_unique(path, trajectory_from_dict, "trajectory")


def save_trajectories(path, trajectories: Iterable[Trajectory]) -> None:
    _write_jsonl(path, (trajectory_to_dict(t) for t in trajectories))


def load_guidelines(path) -> list[Guideline]:
    return _load_unique(path, guideline_from_dict, "guideline")


def save_guidelines(path, guidelines: Iterable[Guideline]) -> None:
    _write_jsonl(path, (guideline_to_dict(g) for g in guidelines))


def load_ratings(path) -> list[RatingMatrix]:
    out = []
    for lineno, obj in _iter_jsonl(Path(path)):
        try:
            out.append(rating_matrix_from_dict(obj))
        except (ValueError, TypeError) as exc:
            raise JsonlError(f"{path}: line {lineno}: {exc}") from exc
    return out


def save_ratings(path, matrices: Iterable[RatingMatrix]) -> None:
    _write_jsonl(path, (rating_matrix_to_dict(m) for m in matrices))


def load_reports(path) -> list[VerificationReport]:
    out = []
    for lineno, obj in _iter_jsonl(Path(path)):
        try:
            out.append(report_from_dict(obj))
        except (ValueError, TypeError) as exc:
            raise JsonlError(f"{path}: line {lineno}: {exc}") from exc
    return out


def save_reports(path, reports: Iterable[VerificationReport]) -> None:
    _write_jsonl(path, (report_to_dict(r) for r in reports))
