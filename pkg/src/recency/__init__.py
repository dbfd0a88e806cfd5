"""Likelihood-based HIV recency classification with partially observed labels."""

__version__ = "0.1.0"

from .model import (
    ModelSpec,
    RecencyLabel,
    Subject,
    Theta,
    derive_label,
    initial_theta,
    logistic,
    p0_p1,
    pi_recent,
)
from .likelihood import (
    Case,
    CaseContribution,
    case_log_contribution,
    log_pseudo_likelihood,
    score,
    score_contributions,
)
from .estimation import (
    FitResult,
    StepwiseResult,
    VariantFit,
    backward_stepwise,
    best_variant,
    compare_eta_variants,
    fit,
    fit_report,
    sandwich_covariance,
)
from .densityratio import (
    TiltSolution,
    fit_extended,
    profile_log_likelihood,
    solve_mu,
    tilt,
)
from .prediction import (
    RiskPair,
    export_predictions,
    incidence,
    recency_rate,
    rita_classify,
    type1_risk,
    type2_risk,
)
from .glm import LogisticFit, fit_weighted_logistic
from .simulation import (
    GeneratedData,
    ParamStats,
    ReplicateSummary,
    ScenarioConfig,
    auc,
    default_config,
    generate,
    run_replicates,
)
from .dataio import ColumnMap, DataError, RawRecord, StandardizationReport, load, preprocess

__all__ = [
    "__version__",
    "ModelSpec", "RecencyLabel", "Subject", "Theta",
    "derive_label", "initial_theta", "logistic", "p0_p1", "pi_recent",
    "Case", "CaseContribution", "case_log_contribution",
    "log_pseudo_likelihood", "score", "score_contributions",
    "FitResult", "StepwiseResult", "VariantFit", "backward_stepwise",
    "best_variant", "compare_eta_variants", "fit", "fit_report",
    "sandwich_covariance",
    "TiltSolution", "fit_extended", "profile_log_likelihood", "solve_mu", "tilt",
    "RiskPair", "export_predictions", "incidence", "recency_rate",
    "rita_classify", "type1_risk", "type2_risk",
    "LogisticFit", "fit_weighted_logistic",
    "GeneratedData", "ParamStats", "ReplicateSummary", "ScenarioConfig",
    "auc", "default_config", "generate", "run_replicates",
    "ColumnMap", "DataError", "RawRecord", "StandardizationReport", "load", "preprocess",
]
