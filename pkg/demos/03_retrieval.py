"""Walk-through: guideline retrieval, expansion, and competitive selection.

Builds a small corpus, ranks guidelines for an answer by keyword overlap
with embedding-similarity tie-breaks, then shows the two active-phase
selectors: next-ranked expansion and competitor retrieval for differential
checks.
"""

from glean import (
    Guideline,
    GuidelineStore,
    expand,
    extract_query_terms,
    retrieve,
    retrieve_competitive,
)

corpus = [
    Guideline(
        id="g-panc-1",
        title="Acute pancreatitis management",
        abstract="Diagnosis requires two of: pain, lipase elevation, imaging.",
        content="Full management protocol for acute pancreatitis.",
    ),
    Guideline(
        id="g-panc-2",
        title="Acute pancreatitis severity scoring",
        abstract="Stratify severity on admission and at 48 hours.",
        content="Severity assessment protocol.",
    ),
    Guideline(
        id="g-chole-1",
        title="Acute cholecystitis diagnostic pathway",
        abstract="Ultrasound first; consider HIDA when equivocal.",
        content="Cholecystitis workup protocol.",
    ),
    Guideline(
        id="g-div-1",
        title="Diverticulitis outpatient criteria",
        abstract="Uncomplicated cases may be managed without admission.",
        content="Diverticulitis triage protocol.",
    ),
]
store = GuidelineStore(corpus)

answer = "Acute pancreatitis of the biliary tract"
print("answer:", answer)
print("query terms:", extract_query_terms(answer))

result = retrieve(store, answer, k=2)
print("\ntop-2 retrieval:")
for gid, hits, sim in zip(result.ranked_ids, result.match_counts,
                          result.rerank_scores):
    print(f"  {gid:<10} keyword hits={hits}  cosine={sim:+.3f}")

extra = expand(store, answer, already_used=set(result.ranked_ids), n_extra=1)
print("\nexpansion picks the next-ranked unused guideline:")
print("  ", [g.id for g in extra])

# Competing answers from sibling trajectories of the same case drive the
# differential check: each contributes its own top guideline.
competitors = retrieve_competitive(
    store,
    answer,
    candidate_answers=["acute cholecystitis", "diverticulitis flare", answer],
    n_comp=2,
    exclude=set(result.ranked_ids),
    seed=0,
)
print("\ncompetitive guidelines (answers matching the verified one are skipped):")
print("  ", [g.id for g in competitors])
