"""Calibrated verification of multi-step agent trajectories.

Per-step alignment with domain guidelines is scored by a pluggable judge,
aggregated into step features, accumulated as discounted logit-space
evidence, and mapped to a correctness probability by a Bayesian
logistic-regression calibrator; high-entropy cases escalate through
guideline expansion and differential checks.
"""

from .calibration import (
    CalibrationSample,
    CalibratorPosterior,
    DegenerateCalibrationError,
    fit,
    load_calibrator,
    log_posterior,
    predict,
    predict_variance,
    save_calibrator,
    uncertainty,
)
from .core import (
    EPS_CLAMP,
    EvidenceVector,
    Guideline,
    JsonlError,
    RatingMatrix,
    Step,
    Trajectory,
    ValidationError,
    VerificationReport,
    binary_entropy,
    clamp,
    load_guidelines,
    load_ratings,
    load_reports,
    load_trajectories,
    save_guidelines,
    save_ratings,
    save_reports,
    save_trajectories,
    validate_rating_matrix,
)
from .evidence import (
    AggregationSpec,
    accumulate,
    aggregate_matrix,
    aggregate_step,
    rectify,
    rectify_matrix,
)
from .judge import (
    JudgeBackendConfig,
    JudgeError,
    JudgeRequest,
    JudgeTransportError,
    UnresolvableJudgmentError,
    build_prompt,
    judge_step,
    judge_trajectory,
    render_guideline,
    render_history,
    score_from_token_logprobs,
)
from .metrics import (
    LinearityDiagnostic,
    ScoredSample,
    auroc,
    best_of_n,
    brier,
    ece,
    linearity_diagnostic,
    risk_at,
)
from .pipeline import (
    PipelineConfig,
    VerifyOutcome,
    sibling_answer_pools,
    verify,
    verify_batch,
)
from .retrieval import (
    GuidelineStore,
    HashedEmbedder,
    NoRelevantGuidelineError,
    RemoteEmbedder,
    RetrievalResult,
    UnretrievableAnswerError,
    expand,
    extract_query_terms,
    retrieve,
    retrieve_competitive,
)
from .synthetic import (
    SyntheticDataset,
    SyntheticSpec,
    generate,
    generate_active_scenario,
    sample_scalar_evidence,
    save_dataset,
)

__version__ = "0.1.0"
