"""Walk-through: Bayesian logistic calibration of evidence.

Draws labeled scalar evidence from a known logistic model, fits the
Metropolis-sampled posterior, and checks that predictions track the true
probabilities.
"""

import numpy as np

from glean import fit, predict, predict_variance, uncertainty
from glean.core import EvidenceVector
from glean.synthetic import sample_scalar_evidence

TRUE_SLOPE, TRUE_INTERCEPT = 1.5, -0.2

train, _ = sample_scalar_evidence(500, TRUE_SLOPE, TRUE_INTERCEPT, 2.0, seed=1)
posterior = fit(train, lam=1.0, n_draws=2000, seed=0)

print(f"true (w, b)      = ({TRUE_SLOPE}, {TRUE_INTERCEPT})")
print(
    f"posterior mean   = ({posterior.weights.mean():.3f}, "
    f"{posterior.intercepts.mean():.3f})"
)
print(
    f"posterior sd     = ({posterior.weights.std():.3f}, "
    f"{posterior.intercepts.std():.3f})"
)
print(f"acceptance rate  = {posterior.acceptance_rate:.3f}")

# Predictions average sigmoid(w*S + b) over all kept draws.
print("\n evidence   prediction   true prob   entropy   draw variance")
for s in (-3.0, -1.0, 0.0, 1.0, 3.0):
    ev = EvidenceVector(values=np.array([s]), step=1)
    p = predict(posterior, ev)
    true_p = 1.0 / (1.0 + np.exp(-(TRUE_SLOPE * s + TRUE_INTERCEPT)))
    print(
        f"  {s:+5.1f}      {p:8.4f}    {true_p:8.4f}   {uncertainty(p):7.4f}"
        f"   {predict_variance(posterior, ev):.2e}"
    )

held_out, p_true = sample_scalar_evidence(2000, TRUE_SLOPE, TRUE_INTERCEPT, 2.0, seed=2)
preds = np.array([predict(posterior, s.evidence) for s in held_out])
print(f"\nheld-out mean |prediction - true probability| = "
      f"{np.mean(np.abs(preds - p_true)):.4f}")
