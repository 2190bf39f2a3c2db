"""Bayesian logistic-regression calibration of accumulated evidence.

The calibrator maps final-step evidence vectors to correctness
probabilities. Its posterior over (weights, intercept), under a Gaussian
prior with precision lambda, is sampled with adaptive random-walk
Metropolis initialized at the MAP point; predictions average the sigmoid
over all kept draws (the posterior predictive mean), and uncertainty is
the binary entropy of that mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .core import EPS_CLAMP, EvidenceVector, JsonlError, ValidationError, binary_entropy


class DegenerateCalibrationError(ValueError):
    """The calibration set cannot identify a calibrator (e.g. one class only)."""


@dataclass(frozen=True)
class CalibrationSample:
    """Final-step evidence paired with the trajectory's correctness label."""

    evidence: EvidenceVector
    label: bool


@dataclass(frozen=True, eq=False)
class CalibratorPosterior:
    """Kept posterior draws plus the metadata of the sampling run.

    weights has shape (n_draws, d) and intercepts shape (n_draws,); the
    acceptance rate is measured over the post-burn-in proposals.
    """

    weights: np.ndarray
    intercepts: np.ndarray
    lam: float
    seed: int
    n_burn_in: int
    acceptance_rate: float
    d: int

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = np.array(self.intercepts, dtype=float)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ValidationError("draw arrays have inconsistent shapes")
        if w.shape[0] < 1:
            raise ValidationError("posterior must hold at least one draw")
        if w.shape[1] != self.d:
            raise ValidationError("weight dimension disagrees with d")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError("posterior draws must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "intercepts", b)

    @property
    def n_draws(self) -> int:
        return self.weights.shape[0]

    def draws(self) -> list[tuple[np.ndarray, float]]:
        return [(w, float(b)) for w, b in zip(self.weights, self.intercepts)]


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    # -log(1 + exp(-x)) without ever rounding a probability to 0 or 1.
    return -np.logaddexp(0.0, -x)


def _design(data: Sequence[CalibrationSample]) -> tuple[np.ndarray, np.ndarray]:
    try:
        X = np.stack([s.evidence.values for s in data])
    except ValueError as exc:
        raise ValidationError(f"evidence dimensions disagree: {exc}") from exc
    z = np.array([1.0 if s.label else 0.0 for s in data])
    return X, z


def _log_post(theta: np.ndarray, X: np.ndarray, z: np.ndarray, lam: float) -> float:
    eta = X @ theta[:-1] + theta[-1]
    ll = z @ _log_sigmoid(eta) + (1.0 - z) @ _log_sigmoid(-eta)
    return float(ll - 0.5 * lam * (theta @ theta))


def _grad(theta: np.ndarray, X: np.ndarray, z: np.ndarray, lam: float) -> np.ndarray:
    resid = z - expit(X @ theta[:-1] + theta[-1])
    g = np.empty_like(theta)
    g[:-1] = X.T @ resid
    g[-1] = resid.sum()
    return g - lam * theta


def log_posterior(
    w, b: float, data: Sequence[CalibrationSample], lam: float
) -> float:
    """Log posterior (up to an additive constant) of (w, b) given labeled
    evidence, under the N(0, lam^-1 I) prior on both w and b."""
    if lam <= 0:
        raise ValidationError(f"lambda must be > 0, got {lam}")
    w = np.asarray(w, dtype=float).reshape(-1)
    theta = np.concatenate([w, [float(b)]])
    if not np.all(np.isfinite(theta)):
        raise ValidationError("non-finite calibrator parameters")
    if not data:
        return float(-0.5 * lam * (theta @ theta))
    X, z = _design(data)
    if X.shape[1] != w.shape[0]:
        raise ValidationError(
            f"weight dimension {w.shape[0]} does not match evidence "
            f"dimension {X.shape[1]}"
        )
    return _log_post(theta, X, z, lam)


def _map_estimate(
    X: np.ndarray, z: np.ndarray, lam: float, max_steps: int = 500
) -> np.ndarray:
    """Deterministic gradient ascent to the posterior mode."""
    theta = np.zeros(X.shape[1] + 1)
    lp = _log_post(theta, X, z, lam)
    lr = 1.0 / (len(z) + lam)
    for _ in range(max_steps):
        g = _grad(theta, X, z, lam)
        if np.linalg.norm(g) < 1e-9:
            break
        cand = theta + lr * g
        lp_cand = _log_post(cand, X, z, lam)
        while lp_cand < lp and lr > 1e-14:
            lr *= 0.5
            cand = theta + lr * g
            lp_cand = _log_post(cand, X, z, lam)
        if lp_cand < lp:
            break
        theta, lp = cand, lp_cand
        lr *= 1.2
    return theta


def _proposal_scales(
    theta: np.ndarray, X: np.ndarray, z: np.ndarray, lam: float
) -> np.ndarray:
    # Per-coordinate scale from the Laplace approximation at the mode,
    # with the standard 2.4 / sqrt(dim) random-walk factor.
    p = expit(X @ theta[:-1] + theta[-1])
    wgt = p * (1.0 - p)
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    H = Xa.T @ (Xa * wgt[:, None]) + lam * np.eye(Xa.shape[1])
    cov_diag = np.diag(np.linalg.inv(H))
    return 2.4 / math.sqrt(Xa.shape[1]) * np.sqrt(np.maximum(cov_diag, 1e-300))


def fit(
    data: Sequence[CalibrationSample],
    lam: float = 1.0,
    n_draws: int = 2000,
    seed: int = 0,
) -> CalibratorPosterior:
    """Sample the calibrator posterior with random-walk Metropolis.

    The chain starts at the MAP point, adapts its proposal scale toward a
    20-40% acceptance rate during a burn-in of n_draws proposals, then
    keeps every second of the next 2 * n_draws proposals. The run is fully
    deterministic given the seed.
    """
    if lam <= 0:
        raise ValidationError(f"lambda must be > 0, got {lam}")
    if n_draws < 100:
        raise ValidationError(f"n_draws must be >= 100, got {n_draws}")
    if not data:
        raise DegenerateCalibrationError("degenerate calibration set: no samples")
    X, z = _design(data)
    if z.min() == z.max():
        raise DegenerateCalibrationError(
            "degenerate calibration set: all labels identical"
        )

    theta = _map_estimate(X, z, lam)
    lp = _log_post(theta, X, z, lam)
    if not np.isfinite(lp):
        raise ValidationError("non-finite posterior at the MAP point")
    scales = _proposal_scales(theta, X, z, lam)

    rng = np.random.default_rng(seed)
    n_burn = n_draws
    total = n_burn + 2 * n_draws
    dim = theta.shape[0]
    factor = 1.0
    window_hits = 0
    window_size = 100
    accepted_post = 0
    kept_w = np.empty((n_draws, dim - 1))
    kept_b = np.empty(n_draws)
    kept = 0

    for it in range(total):
        prop = theta + factor * scales * rng.standard_normal(dim)
        lp_prop = _log_post(prop, X, z, lam)
        diff = lp_prop - lp
        accept = np.isfinite(lp_prop) and (
            diff >= 0 or rng.random() < math.exp(diff)
        )
        if accept:
            theta, lp = prop, lp_prop
        if it < n_burn:
            window_hits += accept
            if (it + 1) % window_size == 0:
                rate = window_hits / window_size
                if rate < 0.2:
                    factor *= 0.7
                elif rate > 0.4:
                    factor *= 1.4
                window_hits = 0
        else:
            accepted_post += accept
            if (it - n_burn) % 2 == 1:
                kept_w[kept] = theta[:-1]
                kept_b[kept] = theta[-1]
                kept += 1

    return CalibratorPosterior(
        weights=kept_w,
        intercepts=kept_b,
        lam=lam,
        seed=seed,
        n_burn_in=n_burn,
        acceptance_rate=accepted_post / (2 * n_draws),
        d=dim - 1,
    )


def predict(post: CalibratorPosterior, evidence: EvidenceVector) -> float:
    """Posterior predictive mean of sigmoid(w . S + b) over all draws."""
    if evidence.d != post.d:
        raise ValidationError(
            f"evidence dimension {evidence.d} does not match calibrator "
            f"dimension {post.d}"
        )
    return float(expit(post.weights @ evidence.values + post.intercepts).mean())


def predict_variance(post: CalibratorPosterior, evidence: EvidenceVector) -> float:
    """Variance of sigmoid(w . S + b) across draws; diagnostic only, not
    used for triggering."""
    if evidence.d != post.d:
        raise ValidationError(
            f"evidence dimension {evidence.d} does not match calibrator "
            f"dimension {post.d}"
        )
    return float(expit(post.weights @ evidence.values + post.intercepts).var())


def uncertainty(p: float, *, nats: bool = False) -> float:
    """Binary entropy of a confidence, in bits by default (so the value
    lies in [0, 1] and 0.5 sits mid-range as a trigger threshold)."""
    return binary_entropy(p, nats=nats)


def save_calibrator(
    path,
    post: CalibratorPosterior,
    *,
    statistics: Iterable[str],
    beta: float,
) -> None:
    """Write calibrator.jsonl: a header line with fit metadata, then one
    line per draw, so predictions are exact under reload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "lambda": post.lam,
        "seed": post.seed,
        "n_burn_in": post.n_burn_in,
        "acceptance_rate": post.acceptance_rate,
        "d": post.d,
        "statistics": list(statistics),
        "beta": beta,
        "clamp": EPS_CLAMP,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for w, b in zip(post.weights, post.intercepts):
            fh.write(json.dumps({"w": w.tolist(), "b": float(b)}) + "\n")


def load_calibrator(path) -> tuple[CalibratorPosterior, dict]:
    """Read calibrator.jsonl; returns the posterior and the header metadata."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise JsonlError(f"{path}: empty calibrator file")
    try:
        header = json.loads(lines[0])
        draws = [json.loads(line) for line in lines[1:]]
        weights = np.array([d["w"] for d in draws], dtype=float)
        intercepts = np.array([d["b"] for d in draws], dtype=float)
        post = CalibratorPosterior(
            weights=weights,
            intercepts=intercepts,
            lam=float(header["lambda"]),
            seed=int(header["seed"]),
            n_burn_in=int(header["n_burn_in"]),
            acceptance_rate=float(header["acceptance_rate"]),
            d=int(header["d"]),
        )
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise JsonlError(f"{path}: malformed calibrator file: {exc}") from exc
    return post, header
