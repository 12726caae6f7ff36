"""Tracing attacks, fingerprinting identities, and privacy audits for hard
stochastic convex optimization instances."""

from .distributions import (
    BetaPrior,
    MeanVector,
    QuadratureRule,
    SparsePopulation,
    TernarySample,
    pmf,
    prior_quadrature,
    sample_matrix,
    sample_prior,
    sample_sparse,
    sample_support,
)
from .harness import ExperimentConfig, TrialRecord, main, parse_cli, run
from .learners import Dataset, LearnerConfig, measure_excess_risk, train
from .oracles import (
    IdentityCheckResult,
    check_beta_abs_moment,
    check_card_moments,
    verify_scaling_identity,
    verify_sparse_identity,
)
from .problems import (
    ParameterPoint,
    ProblemSpec,
    excess_risk,
    loss,
    support_argmax,
    validate_lipschitz,
)
from .rng import substream
from .tracers import (
    ThresholdPolicy,
    TraceReport,
    TracerSpec,
    calibrate_threshold,
    estimate_trace_value,
    recall_lower_bound_pz,
    run_trace_trial,
    score_scaling_matrix,
    score_sparse,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
