"""Fingerprinting score functions and soundness/recall measurement.

A tracer knows the data distribution (here: the true mean drawn for the
trial) and scores candidate points by their correlation with the learned
parameter after centering.  Fresh points score zero in expectation, so a
threshold calibrated on an independent null sample controls the false
positive rate while training points of accurate learners score high.

Two score families are implemented:

* sparse score (k-sparse ternary data):
  (d^(1/p) / sqrt(k)) * sum_{j in supp(z)} theta_j (z_j - (d/k) mu_j)
* scaling-matrix score (dense +/-1 data):
  sqrt(s) * sum_j theta_j L_j (z_j - mu_j),
  L_j = (1 - (mu_j/gamma)^2) / (1 - mu_j^2),
  which keeps the fingerprinting identity exact when the prior lives on a
  sub-interval [-gamma, gamma] of the mean domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .distributions import BetaPrior, MeanVector, TernarySample, sample_matrix, sample_prior
from .learners import Dataset, LearnerConfig, train
from .problems import BOX_LP, ParameterPoint, ProblemSpec, data_distribution, excess_risk, is_feasible

SPARSE_SCORE = "sparse"
SCALING_MATRIX_SCORE = "scaling_matrix"
TRACER_KINDS = (SPARSE_SCORE, SCALING_MATRIX_SCORE)

HALF_TRACE_VALUE = "half_trace_value"
NULL_QUANTILE = "null_quantile"

# A learner is either a config for the zoo or a deterministic map from the
# (n, d) sample matrix to a parameter vector.
LearnerLike = Union[LearnerConfig, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class TracerSpec:
    """Score-function parameters; built from the true mean of each trial."""

    kind: str
    mu: np.ndarray
    d: int
    clip_bound: float
    k: int | None = None
    p: float | None = None
    gamma: float | None = None
    s: int | None = None

    def __post_init__(self):
        arr = np.array(self.mu, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "mu", arr)
        if self.kind not in TRACER_KINDS:
            raise ValueError(f"unknown tracer kind {self.kind!r}")
        if arr.shape != (self.d,):
            raise ValueError("mu dimension does not match d")
        if not self.clip_bound > 0:
            raise ValueError("clip_bound must be positive")
        if self.kind == SPARSE_SCORE:
            if self.k is None or not 1 <= self.k <= self.d or self.p is None or self.p < 1:
                raise ValueError("sparse tracer requires 1 <= k <= d and p >= 1")
            if np.max(np.abs(arr)) > self.k / self.d + 1e-12:
                raise ValueError("sparse tracer requires |mu_j| <= k/d")
        else:
            if self.gamma is None or not 0 < self.gamma < 1 or self.s is None or self.s < 1:
                raise ValueError("scaling tracer requires gamma in (0, 1) and s >= 1")
            if np.max(np.abs(arr)) >= 1.0:
                raise ValueError("scaling tracer is singular at |mu_j| = 1")


def _mu_array(mu) -> np.ndarray:
    return mu.values if isinstance(mu, MeanVector) else np.asarray(mu, dtype=float)


def sparse_tracer(mu, k: int, p: float, d: int, clip_bound: float | None = None) -> TracerSpec:
    """Sparse-score tracer; the default clip bound 2 sqrt(k) is never active
    for feasible parameters of the matching box problem."""
    if clip_bound is None:
        clip_bound = 2.0 * math.sqrt(k)
    return TracerSpec(SPARSE_SCORE, _mu_array(mu), d, clip_bound, k=k, p=p)


def scaling_tracer(mu, gamma: float, s: int, d: int, clip_bound: float | None = None) -> TracerSpec:
    """Scaling-matrix tracer for dense +/-1 data.

    The sqrt(s) factor is the useful part of the subgaussian normalization;
    any unknown constant in that normalization is dropped here and absorbed
    by threshold calibration downstream.
    """
    if clip_bound is None:
        clip_bound = 2.0 * math.sqrt(s)
    return TracerSpec(SCALING_MATRIX_SCORE, _mu_array(mu), d, clip_bound, gamma=gamma, s=s)


def _theta_array(theta) -> np.ndarray:
    return theta.theta if isinstance(theta, ParameterPoint) else np.asarray(theta, dtype=float)


def _entries(z) -> np.ndarray:
    return z.entries if isinstance(z, TernarySample) else np.asarray(z)


def score_batch(tr: TracerSpec, theta, Z: np.ndarray) -> tuple[np.ndarray, int]:
    """Scores for the rows of Z, clamped to [-clip_bound, clip_bound].

    Returns (scores, number of clamped entries).  In-range configurations
    never clamp; a nonzero count signals an out-of-contract parameter.
    """
    theta = _theta_array(theta)
    Z = np.asarray(Z)
    if Z.ndim != 2 or Z.shape[1] != tr.d or theta.shape != (tr.d,):
        raise ValueError("dimension mismatch between tracer, theta, and data")
    Zf = Z.astype(np.float64, copy=False)
    if tr.kind == SPARSE_SCORE:
        scale = tr.d ** (1.0 / tr.p) / math.sqrt(tr.k)
        ratio = tr.d / tr.k
        raw = scale * (Zf @ theta - ratio * (np.abs(Zf) @ (theta * tr.mu)))
    else:
        lam = (1.0 - (tr.mu / tr.gamma) ** 2) / (1.0 - tr.mu**2)
        raw = math.sqrt(tr.s) * ((Zf - tr.mu) @ (theta * lam))
    clipped = np.clip(raw, -tr.clip_bound, tr.clip_bound)
    return clipped, int(np.count_nonzero(np.abs(raw) > tr.clip_bound))


def score_sparse(tr: TracerSpec, theta, z) -> float:
    """Sparse fingerprinting score of a single candidate point."""
    if tr.kind != SPARSE_SCORE:
        raise ValueError("tracer is not a sparse-score tracer")
    entries = _entries(z)
    if np.count_nonzero(entries) != tr.k:
        raise ValueError(f"candidate must have exactly k={tr.k} nonzeros")
    scores, _ = score_batch(tr, theta, entries[None, :])
    return float(scores[0])


def score_scaling_matrix(tr: TracerSpec, theta, z) -> float:
    """Scaling-matrix fingerprinting score of a single candidate point."""
    if tr.kind != SCALING_MATRIX_SCORE:
        raise ValueError("tracer is not a scaling-matrix tracer")
    entries = _entries(z)
    if not np.isin(entries, (-1, 1)).all():
        raise ValueError("candidate must be a dense +/-1 vector")
    scores, _ = score_batch(tr, theta, entries[None, :])
    return float(scores[0])


@dataclass(frozen=True)
class ThresholdPolicy:
    """How to turn scores into In/Out decisions."""

    kind: str
    xi: float | None = None
    t_hat: float | None = None

    def __post_init__(self):
        if self.kind == HALF_TRACE_VALUE:
            if self.t_hat is None or not math.isfinite(self.t_hat):
                raise ValueError("half_trace_value requires a finite t_hat")
        elif self.kind == NULL_QUANTILE:
            if self.xi is None or not 0 < self.xi < 1:
                raise ValueError("null_quantile requires xi in (0, 1)")
        else:
            raise ValueError(f"unknown threshold policy {self.kind!r}")


def half_trace_value(t_hat: float) -> ThresholdPolicy:
    return ThresholdPolicy(HALF_TRACE_VALUE, t_hat=t_hat)


def null_quantile(xi: float) -> ThresholdPolicy:
    return ThresholdPolicy(NULL_QUANTILE, xi=xi)


def calibrate_threshold(policy: ThresholdPolicy, null_scores) -> float:
    """Threshold lambda from a policy and (for null_quantile) a null sample.

    null_quantile picks the smallest order statistic whose upper tail in
    the null sample has mass at most xi, so the empirical false-positive
    rate at calibration time is <= xi by construction.
    """
    if policy.kind == HALF_TRACE_VALUE:
        return policy.t_hat / 2.0
    scores = np.sort(np.asarray(null_scores, dtype=float))
    m = scores.size
    if m * policy.xi < 1.0:
        raise ValueError(f"null sample of size {m} is insufficient; need >= {math.ceil(1.0 / policy.xi)}")
    j = math.ceil(m * (1.0 - policy.xi) - 1e-12)
    return float(scores[min(j, m - 1)])


@dataclass(frozen=True)
class TraceReport:
    """Per-trial attack outcome.

    ``recall_estimate`` is the flagged-training-point count (so it lies in
    [0, n]); ``soundness_estimate`` is the flagged fraction of the fresh
    sample.  ``ci_halfwidths`` holds 95% half-widths for (recall,
    soundness).  The mean, realized risk, and clip counter ride along for
    experiment records.
    """

    scores_train: np.ndarray
    scores_fresh: np.ndarray
    threshold: float
    flagged: np.ndarray
    recall_estimate: float
    soundness_estimate: float
    ci_halfwidths: tuple[float, float]
    mu_l1: float
    excess_risk: float
    clip_events: int


def _train_any(learner: LearnerLike, spec: ProblemSpec, data: Dataset, rng: np.random.Generator) -> ParameterPoint:
    if isinstance(learner, LearnerConfig):
        return train(learner, spec, data, rng)
    theta = np.asarray(learner(data.z.astype(np.float64)), dtype=float)
    return ParameterPoint(theta, is_feasible(spec, theta))


def tracer_for(spec: ProblemSpec, mu: np.ndarray, kind: str, prior_gamma: float) -> TracerSpec:
    """Build the tracer matching a problem spec from the trial's true mean."""
    if kind == SPARSE_SCORE:
        if spec.variant != BOX_LP:
            raise ValueError("sparse tracer requires the box_lp data space")
        return sparse_tracer(mu, spec.k, spec.p, spec.d)
    if spec.data_sparsity != spec.d:
        raise ValueError("scaling-matrix tracer requires dense +/-1 data")
    return scaling_tracer(mu, prior_gamma, spec.s if spec.s is not None else 1, spec.d)


def null_calibration_size(xi: float) -> int:
    """Independent null-sample size used inside trace trials."""
    return max(1000, math.ceil(10.0 / xi))


def run_trace_trial(
    learner: LearnerLike,
    spec: ProblemSpec,
    tracer_kind: str,
    prior: BetaPrior,
    n: int,
    M: int,
    policy: ThresholdPolicy,
    rng: np.random.Generator,
) -> TraceReport:
    """One full attack trial.

    Draws mu from the prior (clipped to the population box bound), builds
    the tracer from that true mean, samples n training and M fresh points,
    trains, scores everything, and calibrates the threshold on a separate
    null sample so soundness estimates carry no selection bias.  Fresh and
    null points never influence training.
    """
    if n < 1 or M < 1:
        raise ValueError("n and M must be >= 1")
    bound = spec.data_sparsity / spec.d
    mu = np.clip(sample_prior(prior, rng).values, -bound, bound)
    if tracer_kind == SCALING_MATRIX_SCORE:
        mu = np.clip(mu, -prior.gamma, prior.gamma)
    tracer = tracer_for(spec, mu, tracer_kind, prior.gamma)
    pop = data_distribution(spec, mu)

    z_train = sample_matrix(pop, n, rng)
    z_fresh = sample_matrix(pop, M, rng)
    if policy.kind == NULL_QUANTILE:
        z_null = sample_matrix(pop, null_calibration_size(policy.xi), rng)
    else:
        z_null = np.empty((0, spec.d), dtype=np.int8)

    theta = _train_any(learner, spec, Dataset(z_train), rng)

    scores_train, clip_tr = score_batch(tracer, theta, z_train)
    scores_fresh, clip_fr = score_batch(tracer, theta, z_fresh)
    if policy.kind == NULL_QUANTILE:
        scores_null, clip_nu = score_batch(tracer, theta, z_null)
    else:
        scores_null, clip_nu = np.empty(0), 0
    lam = calibrate_threshold(policy, scores_null)

    flagged = np.flatnonzero(scores_train >= lam)
    recall = float(flagged.size)
    soundness = float(np.count_nonzero(scores_fresh >= lam)) / M
    p_hat = recall / n
    ci = (
        1.96 * math.sqrt(n * p_hat * (1.0 - p_hat)),
        1.96 * math.sqrt(soundness * (1.0 - soundness) / M),
    )
    risk = excess_risk(spec, theta, mu) if theta.feasible else float("nan")
    return TraceReport(
        scores_train=scores_train,
        scores_fresh=scores_fresh,
        threshold=lam,
        flagged=flagged,
        recall_estimate=recall,
        soundness_estimate=soundness,
        ci_halfwidths=ci,
        mu_l1=float(np.sum(np.abs(mu))),
        excess_risk=risk,
        clip_events=clip_tr + clip_fr + clip_nu,
    )


def trace_value_contribution(
    learner: LearnerLike,
    spec: ProblemSpec,
    tracer_kind: str,
    prior: BetaPrior,
    n: int,
    rng: np.random.Generator,
) -> float:
    """One trial's average training-point score, (1/n) sum_i phi(theta_hat, Z_i)."""
    bound = spec.data_sparsity / spec.d
    mu = np.clip(sample_prior(prior, rng).values, -bound, bound)
    if tracer_kind == SCALING_MATRIX_SCORE:
        mu = np.clip(mu, -prior.gamma, prior.gamma)
    tracer = tracer_for(spec, mu, tracer_kind, prior.gamma)
    pop = data_distribution(spec, mu)
    z_train = sample_matrix(pop, n, rng)
    theta = _train_any(learner, spec, Dataset(z_train), rng)
    scores, _ = score_batch(tracer, theta, z_train)
    return float(scores.mean())


def estimate_trace_value(
    learner: LearnerLike,
    spec: ProblemSpec,
    tracer_kind: str,
    prior: BetaPrior,
    n: int,
    trials: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Plug-in trace value: mean over trials of the average training score.

    This fixes one learner/tracer pair, so the estimate is neither an upper
    nor a lower bound on the adversarial trace value; reports label it a
    plug-in.  Returns (T_hat, 95% CI half-width).
    """
    if trials < 30:
        raise ValueError("trials must be >= 30 for a meaningful CI")
    per_trial = np.empty(trials)
    for t in range(trials):
        per_trial[t] = trace_value_contribution(learner, spec, tracer_kind, prior, n, rng)
    half = 1.96 * float(per_trial.std(ddof=1)) / math.sqrt(trials)
    return float(per_trial.mean()), half


def recall_lower_bound_pz(scores, lam: float) -> float:
    """Anti-concentration lower bound on the count of scores >= lam.

    With A1 = sum a_i, A2 = sum a_i^2, and beta = n * lam, the count of
    entries >= lam is at least max(A1 - beta, 0)^2 / A2.  The inequality
    only holds for beta >= 0, so negative betas are clamped to 0, where
    the count >= lam threshold is a fortiori weaker.  All scores zero
    gives 0 by convention; the bound never exceeds the direct count.
    """
    a = np.asarray(scores, dtype=float)
    a2 = float(np.sum(a**2))
    if a2 == 0.0:
        return 0.0
    a1 = float(np.sum(a))
    beta = max(a.size * lam, 0.0)
    return max(a1 - beta, 0.0) ** 2 / a2


def default_beta(spec: ProblemSpec, alpha_target: float) -> float:
    """Prior shape matched to a target excess risk, floored at 1.

    box_lp uses (k^(1/p) / (6 d^(1/p) alpha))^2, the scale at which the
    prior puts enough l_1 mass on the mean to make risk-alpha learners
    correlate with their samples.  The l_1 variants use
    1 + log(d / (16 max(s, 14))) / 2.
    """
    if not alpha_target > 0:
        raise ValueError("alpha_target must be positive")
    if spec.variant == BOX_LP:
        ratio = (spec.k / spec.d) ** (1.0 / spec.p)
        return max(1.0, (ratio / (6.0 * alpha_target)) ** 2)
    s = spec.s if spec.s is not None else 1
    return max(1.0, 1.0 + 0.5 * math.log(spec.d / (16.0 * max(s, 14))))


def default_prior(
    spec: ProblemSpec,
    alpha_target: float | None = None,
    beta: float | None = None,
    gamma: float | None = None,
) -> BetaPrior:
    """Prior used by trace experiments when not overridden.

    box_lp pins gamma to the population box bound k/d; the l_1 variants
    default to gamma = min(8 alpha, 0.99), kept strictly below 1 so the
    scaling matrix stays finite.
    """
    if beta is None:
        if alpha_target is None:
            raise ValueError("either beta or alpha_target must be given")
        beta = default_beta(spec, alpha_target)
    if spec.variant == BOX_LP:
        gamma = spec.k / spec.d
    elif gamma is None:
        if alpha_target is None:
            raise ValueError("either gamma or alpha_target must be given for l1 variants")
        gamma = min(8.0 * alpha_target, 0.99)
    return BetaPrior(beta=beta, gamma=gamma, d=spec.d)


def _score_map(tr: TracerSpec, Z: np.ndarray) -> np.ndarray:
    """Matrix M with raw (unclipped) scores M @ theta for the rows of Z."""
    Zf = np.asarray(Z).astype(np.float64, copy=False)
    if tr.kind == SPARSE_SCORE:
        scale = tr.d ** (1.0 / tr.p) / math.sqrt(tr.k)
        return scale * (Zf - (tr.d / tr.k) * tr.mu * np.abs(Zf))
    lam = (1.0 - (tr.mu / tr.gamma) ** 2) / (1.0 - tr.mu**2)
    return math.sqrt(tr.s) * lam * (Zf - tr.mu)


def max_score_vector_norm(
    tr: TracerSpec,
    Z: np.ndarray,
    radius: float,
    rng: np.random.Generator,
    restarts: int = 32,
    max_sweeps: int = 64,
) -> float:
    """Heuristic max over box vertices of the score-vector l_2 norm.

    The score vector is linear in theta, so the maximum of its norm over a
    box is attained at a vertex; coordinate ascent from random vertices
    gives a lower bound on the true supremum.
    """
    columns = _score_map(tr, Z)
    best = 0.0
    for _ in range(restarts):
        theta = radius * np.where(rng.random(tr.d) < 0.5, 1.0, -1.0)
        phi = columns @ theta
        for _ in range(max_sweeps):
            changed = False
            for j in range(tr.d):
                rest = phi - columns[:, j] * theta[j]
                new = radius if float(np.dot(rest, columns[:, j])) >= 0 else -radius
                if new != theta[j]:
                    phi = rest + columns[:, j] * new
                    theta[j] = new
                    changed = True
            if not changed:
                break
        best = max(best, float(np.linalg.norm(phi)))
    return best
