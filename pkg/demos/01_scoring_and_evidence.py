"""Walk-through: from step ratings to accumulated evidence.

Scores one trajectory against two guidelines with the deterministic mock
judge, aggregates each step's ratings into [min, avg] features, and
accumulates them as discounted logit-space evidence.
"""

import numpy as np

from glean import (
    AggregationSpec,
    Guideline,
    JudgeBackendConfig,
    Step,
    Trajectory,
    accumulate,
    aggregate_matrix,
    judge_trajectory,
)

# A 4-step trajectory: observations and agent actions, then a final answer.
steps = tuple(
    Step(
        index=i,
        observation=f"patient presents sign {i} consistent with inflammation",
        action=f"request follow-up examination {i}",
    )
    for i in range(1, 5)
)
trajectory = Trajectory(
    id="demo-1",
    case_id="case-demo",
    steps=steps,
    answer="acute diverticulitis",
)

guidelines = [
    Guideline(
        id="g-div-1",
        title="Acute diverticulitis diagnostic criteria",
        content="Confirm localized tenderness, fever, and imaging findings.",
    ),
    Guideline(
        id="g-div-2",
        title="Diverticulitis imaging and laboratory workup",
        content="CT imaging is the reference standard; check inflammatory markers.",
    ),
]

# The mock judge hashes each (history, step, guideline) into a stable score,
# so this demo is reproducible end to end.
judge_cfg = JudgeBackendConfig(kind="mock", mock_seed=7)
matrix = judge_trajectory(trajectory, guidelines, judge_cfg)
print("rating matrix (steps x guidelines):")
print(np.round(matrix.scores, 3))

spec = AggregationSpec(("min", "avg"))
features = aggregate_matrix(matrix, spec)
print("\nper-step features [min, avg]:")
print(np.round(features, 3))

# Discounted accumulation: S_t = beta * S_{t-1} + logit(s_t).
for beta in (0.0, 0.5, 1.0):
    evidence = accumulate(list(features), beta)
    trail = ["%.3f" % float(e.values.mean()) for e in evidence]
    print(f"\nbeta={beta}: evidence trail (component mean) {trail}")
print("\nbeta=0 keeps only the current step; beta=1 sums every step equally.")
