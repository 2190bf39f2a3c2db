"""Guideline selection: keyword matching over titles with embedding rerank.

Supplies the passive set for an answer, expansion guidelines beyond it,
and competitive guidelines (retrieved for alternative answers) for
differential checks. The embedding provider is pluggable; the default is
an offline deterministic hashed bag-of-words embedder.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import httpx
import numpy as np

from ._client import TransportError, post_json
from .core import Guideline, ValidationError, load_guidelines

ENV_EMBED_ENDPOINT = "GLEAN_EMBED_ENDPOINT"
ENV_EMBED_API_KEY = "GLEAN_EMBED_API_KEY"


class UnretrievableAnswerError(ValueError):
    """The answer text reduces to zero query terms."""


class NoRelevantGuidelineError(LookupError):
    """No stored guideline shares a keyword with the answer."""


STOPWORDS = frozenset(
    """
    a an the and or nor but if then else when while of in on at to from by
    for with without about into over under between among through during
    before after above below up down out off again further once here there
    where why how all any both each few more most other some such no not
    only own same so than too very can will just should now is are was were
    be been being am do does did doing have has had having this that these
    those it its itself they them their theirs he him his she her hers i me
    my mine we us our ours you your yours as
    """.split()
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def extract_query_terms(answer: str) -> list[str]:
    """Lowercased, punctuation-stripped, stopword-free terms of an answer,
    order preserved and duplicates removed."""
    terms = [t for t in _tokenize(answer) if t not in STOPWORDS]
    terms = list(dict.fromkeys(terms))
    if not terms:
        raise UnretrievableAnswerError(
            f"unretrievable answer: no query terms in {answer!r}"
        )
    return terms


class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


class HashedEmbedder:
    """Deterministic bag-of-words embedding by feature hashing.

    Offline stand-in for a sentence embedder: each token hashes to a signed
    coordinate, the sum is L2-normalized. Identical (seed, text) pairs
    always embed identically.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 1:
            raise ValidationError("embedding dim must be >= 1")
        self.dim = dim
        self.seed = seed

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in _tokenize(text):
            digest = hashlib.blake2b(
                f"{self.seed}:{tok}".encode("utf-8"), digest_size=8
            ).digest()
            value = int.from_bytes(digest, "big")
            sign = 1.0 if value & 1 == 0 else -1.0
            vec[(value >> 1) % self.dim] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class RemoteEmbedder:
    """Client for an OpenAI-compatible embeddings endpoint."""

    def __init__(
        self,
        endpoint: str | None = None,
        model_name: str | None = None,
        api_key: str | None = None,
        timeout_ms: int = 30_000,
        max_retries: int = 3,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint or os.environ.get(ENV_EMBED_ENDPOINT)
        if not self.endpoint:
            raise ValidationError(
                f"no embedding endpoint configured (set {ENV_EMBED_ENDPOINT})"
            )
        self.model_name = model_name
        self.api_key = api_key or os.environ.get(ENV_EMBED_API_KEY)
        self.timeout_ms = timeout_ms
        self.max_retries = max_retries
        self._client = client

    def embed(self, text: str) -> np.ndarray:
        payload = {"input": [text]}
        if self.model_name:
            payload["model"] = self.model_name
        try:
            data = post_json(
                self.endpoint,
                payload,
                api_key=self.api_key,
                timeout_ms=self.timeout_ms,
                max_retries=self.max_retries,
                client=self._client,
            )
            vec = np.asarray(data["data"][0]["embedding"], dtype=float)
        except TransportError:
            raise
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed embedding response: {exc!r}") from exc
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked guideline ids with their keyword-overlap counts and cosine
    rerank scores; sorted by (match_count desc, rerank_score desc, id asc)."""

    ranked_ids: tuple[str, ...]
    match_counts: tuple[int, ...]
    rerank_scores: tuple[float, ...]

    def __post_init__(self):
        if not (
            len(self.ranked_ids) == len(self.match_counts) == len(self.rerank_scores)
        ):
            raise ValidationError("retrieval result fields disagree in length")


class GuidelineStore:
    """Immutable keyword + embedding index over a guideline corpus."""

    def __init__(self, guidelines: Iterable[Guideline], embedder: Embedder | None = None):
        self.guidelines = tuple(guidelines)
        self.embedder = embedder if embedder is not None else HashedEmbedder()
        self.by_id: dict[str, Guideline] = {}
        for g in self.guidelines:
            if g.id in self.by_id:
                raise ValidationError(f"duplicate guideline id '{g.id}' in store")
            self.by_id[g.id] = g

        # Index covers exactly the title terms plus declared keywords.
        self._terms: dict[str, frozenset[str]] = {}
        index: dict[str, list[str]] = {}
        for g in self.guidelines:
            terms = set(_tokenize(g.title))
            if g.keywords:
                for kw in g.keywords:
                    terms.update(_tokenize(kw))
            self._terms[g.id] = frozenset(terms)
            for term in terms:
                index.setdefault(term, []).append(g.id)
        self.keyword_index: dict[str, tuple[str, ...]] = {
            term: tuple(sorted(ids)) for term, ids in index.items()
        }
        self._embeddings: dict[str, np.ndarray] = {
            g.id: self.embedder.embed(
                g.title if g.abstract is None else f"{g.title} {g.abstract}"
            )
            for g in self.guidelines
        }

    def __len__(self) -> int:
        return len(self.guidelines)

    @classmethod
    def from_jsonl(cls, path, embedder: Embedder | None = None) -> "GuidelineStore":
        return cls(load_guidelines(path), embedder=embedder)


def _rank_all(store: GuidelineStore, answer: str) -> RetrievalResult:
    terms = extract_query_terms(answer)
    counts: dict[str, int] = {}
    for term in terms:
        for gid in store.keyword_index.get(term, ()):
            counts[gid] = counts.get(gid, 0) + 1
    if not counts:
        raise NoRelevantGuidelineError(
            f"no relevant guideline for answer {answer!r}"
        )
    query_vec = store.embedder.embed(answer)
    sims = {gid: _cosine(query_vec, store._embeddings[gid]) for gid in counts}
    ranked = sorted(counts, key=lambda gid: (-counts[gid], -sims[gid], gid))
    return RetrievalResult(
        ranked_ids=tuple(ranked),
        match_counts=tuple(counts[g] for g in ranked),
        rerank_scores=tuple(sims[g] for g in ranked),
    )


def retrieve(store: GuidelineStore, answer: str, k: int) -> RetrievalResult:
    """Top-k guidelines for an answer.

    Guidelines with at least one keyword match are ranked by match count,
    ties broken by embedding similarity between the answer and title plus
    abstract, residual ties by id; fewer than k results are returned when
    fewer match.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if not store.guidelines:
        raise ValidationError("guideline store is empty")
    full = _rank_all(store, answer)
    return RetrievalResult(
        ranked_ids=full.ranked_ids[:k],
        match_counts=full.match_counts[:k],
        rerank_scores=full.rerank_scores[:k],
    )


def expand(
    store: GuidelineStore,
    answer: str,
    already_used: Iterable[str],
    n_extra: int,
) -> list[Guideline]:
    """Next n_extra guidelines in retrieve order, skipping already_used.

    May return fewer (or none) when the ranking is exhausted or the answer
    matches nothing.
    """
    if n_extra < 1:
        raise ValidationError(f"n_extra must be >= 1, got {n_extra}")
    used = set(already_used)
    try:
        full = _rank_all(store, answer)
    except (UnretrievableAnswerError, NoRelevantGuidelineError):
        return []
    picked = [gid for gid in full.ranked_ids if gid not in used]
    return [store.by_id[gid] for gid in picked[:n_extra]]


def retrieve_competitive(
    store: GuidelineStore,
    answer: str,
    candidate_answers: Sequence[str],
    n_comp: int,
    *,
    exclude: Iterable[str] = (),
    seed: int = 0,
) -> list[Guideline]:
    """Guidelines supporting competing answers, for differential checks.

    Each candidate answer whose extracted terms differ from the verified
    answer's contributes its top-1 guideline to a pool (minus the excluded
    passive/expanded set); up to n_comp pool members are then picked by
    seeded uniform sampling. An empty pool yields an empty list, in which
    case the caller skips the differential check.
    """
    if n_comp < 1:
        raise ValidationError(f"n_comp must be >= 1, got {n_comp}")
    excluded = set(exclude)
    own_terms = set(extract_query_terms(answer))
    pool: list[str] = []
    for cand in candidate_answers:
        try:
            cand_terms = set(extract_query_terms(cand))
        except UnretrievableAnswerError:
            continue
        if cand_terms == own_terms:
            continue
        try:
            top = retrieve(store, cand, 1)
        except NoRelevantGuidelineError:
            continue
        gid = top.ranked_ids[0]
        if gid not in excluded and gid not in pool:
            pool.append(gid)
    if len(pool) > n_comp:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(pool), size=n_comp, replace=False)
        pool = [pool[i] for i in chosen]
    return [store.by_id[gid] for gid in pool]
