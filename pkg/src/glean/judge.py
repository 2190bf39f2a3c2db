"""Pluggable step-alignment judging.

A judge scores how well one trajectory step aligns with one guideline, as
a probability. Two backends ship: a deterministic mock (seeded hash of the
request texts, overridable by score directives embedded in those texts —
the synthetic generator uses the directives to script exact ratings), and
a remote client for OpenAI-compatible chat-completion endpoints that
extracts YES/NO token log-probabilities from the first generated token.
"""

from __future__ import annotations

import hashlib
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import httpx
import numpy as np
from scipy.special import expit, logsumexp

from ._client import TransportError, post_json
from .core import Guideline, RatingMatrix, Step, Trajectory, ValidationError, clamp

ENV_JUDGE_ENDPOINT = "GLEAN_JUDGE_ENDPOINT"
ENV_JUDGE_API_KEY = "GLEAN_JUDGE_API_KEY"

MOCK_SCORE_LOW = 0.05
MOCK_SCORE_HIGH = 0.95

DEFAULT_MAX_IN_FLIGHT = 8


class JudgeError(RuntimeError):
    """A judgment could not be produced."""


class JudgeTransportError(JudgeError):
    """The remote endpoint could not be reached or kept failing."""


class UnresolvableJudgmentError(JudgeError):
    """Neither a YES nor a NO variant appeared among the returned tokens."""

    def __init__(self, tokens):
        self.tokens = list(tokens)
        super().__init__(
            f"no YES/NO variant among returned top tokens: {self.tokens!r}"
        )


@dataclass(frozen=True)
class JudgeRequest:
    """One judging call: the step under review plus its context.

    history renders steps 1..t-1 and may be empty only for the first step;
    guideline_text may be empty for the uninformed (no-guideline) variant.
    """

    history: str
    observation: str
    action: str
    guideline_text: str
    answer: str


@dataclass(frozen=True)
class JudgeBackendConfig:
    kind: str  # "mock" or "remote"
    endpoint: str | None = None
    model_name: str | None = None
    api_key: str | None = None
    top_logprobs: int = 10
    timeout_ms: int = 30_000
    max_retries: int = 3
    mock_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("mock", "remote"):
            raise ValidationError(f"unknown judge kind '{self.kind}'")
        if self.top_logprobs < 2:
            raise ValidationError("top_logprobs must be >= 2")
        if self.kind == "remote":
            if not self.model_name:
                raise ValidationError("remote judge requires model_name")
            if not (self.endpoint or os.environ.get(ENV_JUDGE_ENDPOINT)):
                raise ValidationError(
                    f"remote judge requires an endpoint (or {ENV_JUDGE_ENDPOINT})"
                )


_PROMPT_GROUNDED = """You are a board-certified clinician and a strict guideline compliance evaluator.

You will be given:
(1) The diagnosis history so far (prior steps),
(2) The current step, including the new observation(s) and the decision/action taken,
(3) A reference clinical guideline relevant to the proposed diagnosis or management.

Your job is NOT to judge the entire final diagnosis. Your job is to judge whether the CURRENT STEP is clinically appropriate and consistent with the guideline, given the available information up to this step.

Be strict and conservative:
- Answer YES only if the current step is clearly supported by the patient information so far AND is consistent with the guideline.
- Answer NO if the step is unsupported, premature, contradicts key facts, violates guideline recommendations, skips required checks, or is not justified as the next best step.

Reply with exactly one token: YES or NO.

Diagnosis so far (prior steps):
{history}

Current step:
Observation(s):
{observation}

Rationale & Action:
{action}

Reference guideline:
{guideline}

Task: Is the CURRENT STEP appropriate and guideline-consistent given the patient information so far?
Reply with YES or NO only."""

_PROMPT_UNINFORMED = """You are a board-certified clinician and a strict compliance evaluator.

You will be given:
(1) The diagnosis history so far (prior steps),
(2) The current step, including the new observation(s) and the decision/action taken.

Your job is NOT to judge the entire final diagnosis. Your job is to judge whether the CURRENT STEP is clinically appropriate, given the available information up to this step.

Be strict and conservative:
- Answer YES only if the current step is clearly supported by the patient information so far.
- Answer NO if the step is unsupported, premature, contradicts key facts, skips required checks, or is not justified as the next best step.

Reply with exactly one token: YES or NO.

Diagnosis so far (prior steps):
{history}

Current step:
Observation(s):
{observation}

Rationale & Action:
{action}

Task: Is the CURRENT STEP appropriate given the patient information so far?
Reply with YES or NO only."""


def build_prompt(req: JudgeRequest) -> str:
    """Fill the judging prompt; an empty guideline_text selects the
    uninformed variant with no guideline section."""
    if req.guideline_text:
        return _PROMPT_GROUNDED.format(
            history=req.history,
            observation=req.observation,
            action=req.action,
            guideline=req.guideline_text,
        )
    return _PROMPT_UNINFORMED.format(
        history=req.history, observation=req.observation, action=req.action
    )


def render_history(steps) -> str:
    """Fixed rendering of prior steps so prompts are reproducible."""
    return "\n\n".join(
        f"Step {s.index}:\nObservation: {s.observation}\nAction: {s.action}"
        for s in steps
    )


def render_guideline(g: Guideline) -> str:
    return f"{g.title}\n\n{g.content}"


def score_from_token_logprobs(logprob_yes: float, logprob_no: float) -> float:
    """P(YES) / (P(YES) + P(NO)) from two log-probabilities (or raw logits;
    only the difference matters), clamped into the finite-logit range."""
    if not (math.isfinite(logprob_yes) and math.isfinite(logprob_no)):
        raise ValidationError("log-probabilities must be finite")
    return clamp(float(expit(logprob_yes - logprob_no)))


# --- mock backend ----------------------------------------------------------

# Texts may pin the mock verdict: guideline text carries "[judge-key: KEY]"
# and the step's observation/action carries "[judge-scores: KEY=0.7 ...]".
# Synthetic datasets use this to make end-to-end runs reproduce scripted
# ratings; unpinned requests fall back to the seeded hash.
_KEY_RE = re.compile(r"\[judge-key:\s*([^\]\s]+)\s*\]")
_TABLE_RE = re.compile(r"\[judge-scores:([^\]]*)\]")


@lru_cache(maxsize=8192)
def _parse_score_table(text: str) -> dict:
    table: dict[str, float] = {}
    for match in _TABLE_RE.finditer(text):
        for token in match.group(1).split():
            key, sep, value = token.partition("=")
            if not sep:
                continue
            try:
                table[key] = float(value)
            except ValueError:
                continue
    return table


def _pinned_score(req: JudgeRequest) -> float | None:
    key_match = _KEY_RE.search(req.guideline_text)
    if key_match is None:
        return None
    key = key_match.group(1)
    for text in (req.observation, req.action):
        value = _parse_score_table(text).get(key)
        if value is not None:
            return value
    return None


def _hash_unit(parts) -> float:
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big") / 2.0**64


def _mock_score(req: JudgeRequest, seed: int) -> float:
    pinned = _pinned_score(req)
    if pinned is not None:
        return clamp(pinned)
    u = _hash_unit(
        (req.history, req.observation, req.action, req.guideline_text, str(seed))
    )
    return MOCK_SCORE_LOW + (MOCK_SCORE_HIGH - MOCK_SCORE_LOW) * u


# --- remote backend --------------------------------------------------------


def _resolve_endpoint(cfg: JudgeBackendConfig) -> str:
    endpoint = cfg.endpoint or os.environ.get(ENV_JUDGE_ENDPOINT)
    if not endpoint:
        raise ValidationError(
            f"no judge endpoint configured (set {ENV_JUDGE_ENDPOINT})"
        )
    return endpoint


def _first_token_candidates(data: dict) -> list[tuple[str, float]]:
    try:
        first = data["choices"][0]["logprobs"]["content"][0]
        candidates = {
            str(entry["token"]): float(entry["logprob"])
            for entry in first.get("top_logprobs", [])
        }
        # The sampled token is a candidate too, even if the endpoint omits
        # it from top_logprobs.
        if "token" in first and "logprob" in first:
            candidates.setdefault(str(first["token"]), float(first["logprob"]))
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise JudgeError(f"malformed completion response: {exc!r}") from exc
    if not candidates:
        raise JudgeError("completion response carries no token candidates")
    return list(candidates.items())


def _group_logprob(candidates, word: str) -> float | None:
    vals = [lp for tok, lp in candidates if tok.lstrip().casefold() == word]
    if not vals:
        return None
    return float(logsumexp(vals))


def _remote_score(
    req: JudgeRequest, cfg: JudgeBackendConfig, client: httpx.Client | None
) -> float:
    payload = {
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": build_prompt(req)}],
        "max_tokens": 1,
        "logprobs": True,
        "top_logprobs": cfg.top_logprobs,
    }
    try:
        data = post_json(
            _resolve_endpoint(cfg),
            payload,
            api_key=cfg.api_key or os.environ.get(ENV_JUDGE_API_KEY),
            timeout_ms=cfg.timeout_ms,
            max_retries=cfg.max_retries,
            client=client,
        )
    except TransportError as exc:
        raise JudgeTransportError(str(exc)) from exc
    candidates = _first_token_candidates(data)
    lp_yes = _group_logprob(candidates, "yes")
    lp_no = _group_logprob(candidates, "no")
    if lp_yes is None and lp_no is None:
        raise UnresolvableJudgmentError([tok for tok, _ in candidates])
    # One side missing from the top-k list: bound it by the smallest
    # returned log-probability (the true value can only be lower).
    floor = min(lp for _, lp in candidates)
    if lp_yes is None:
        lp_yes = floor
    if lp_no is None:
        lp_no = floor
    return score_from_token_logprobs(lp_yes, lp_no)


def judge_step(
    req: JudgeRequest,
    cfg: JudgeBackendConfig,
    *,
    client: httpx.Client | None = None,
) -> float:
    """Score one step against one guideline as a probability in clamp range."""
    if cfg.kind == "mock":
        return _mock_score(req, cfg.mock_seed)
    return _remote_score(req, cfg, client)


def judge_trajectory(
    t: Trajectory,
    guidelines,
    cfg: JudgeBackendConfig,
    *,
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    client: httpx.Client | None = None,
) -> RatingMatrix:
    """Judge every (step, guideline) cell of a trajectory.

    Cells are independent, so they may run concurrently up to max_in_flight;
    the resulting matrix is identical regardless of execution order. Any
    cell failure aborts the whole trajectory, reporting the first failing
    (step, guideline) pair.
    """
    guidelines = list(guidelines)
    if not guidelines:
        raise ValidationError("judge_trajectory requires at least one guideline")
    if max_in_flight < 1:
        raise ValidationError("max_in_flight must be >= 1")

    jobs = []
    for i, step in enumerate(t.steps):
        history = render_history(t.steps[:i])
        for j, g in enumerate(guidelines):
            req = JudgeRequest(
                history=history,
                observation=step.observation,
                action=step.action,
                guideline_text=render_guideline(g),
                answer=t.answer,
            )
            jobs.append((i, j, req))

    scores = np.empty((t.n_steps, len(guidelines)))
    failures: dict[tuple[int, int], Exception] = {}

    own_client = client is None and cfg.kind == "remote"
    cl = httpx.Client(timeout=cfg.timeout_ms / 1000.0) if own_client else client
    try:
        if max_in_flight == 1 or len(jobs) == 1:
            for i, j, req in jobs:
                try:
                    scores[i, j] = judge_step(req, cfg, client=cl)
                except JudgeError as exc:
                    failures[(i, j)] = exc
                    break
        else:
            def run(job):
                i, j, req = job
                return i, j, judge_step(req, cfg, client=cl)

            with ThreadPoolExecutor(
                max_workers=min(max_in_flight, len(jobs))
            ) as pool:
                futures = [pool.submit(run, job) for job in jobs]
                for job, fut in zip(jobs, futures):
                    try:
                        i, j, score = fut.result()
                        scores[i, j] = score
                    except JudgeError as exc:
                        failures[(job[0], job[1])] = exc
    finally:
        if own_client:
            cl.close()

    if failures:
        (i, j) = min(failures)
        raise JudgeError(
            f"trajectory '{t.id}': judging failed at step {i + 1}, "
            f"guideline '{guidelines[j].id}': {failures[(i, j)]}"
        )
    return RatingMatrix(
        trajectory_id=t.id,
        guideline_ids=tuple(g.id for g in guidelines),
        scores=scores,
    )
