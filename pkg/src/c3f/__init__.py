"""Shift-aware, counterfactually regularized group-conditional conformal prediction."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .calibration import (
    ThresholdSet,
    calibrate,
    coverage_bound,
    eccg_bound,
    marginal_threshold,
    split_budget,
    weighted_ecdf,
    weighted_quantile,
)
from .counterfactual import (
    CfDisparity,
    ScmSpec,
    abduct,
    cf_gradient,
    counterfactual_covariates,
    estimate_cf_disparity,
    regularize_thresholds,
)
from .ingest import CalibrationRecord, RunConfig, load_config, load_records, write_records
from .metrics import CoverageReport, audit, eccg, efficiency, group_coverage
from .predict import PredictionSet, covered, mixed_threshold, predict_set
from .weights import WeightModel, estimate_B, fit_weight_model, weights_for

__all__ = [
    "BACKEND", "ThresholdSet", "calibrate", "coverage_bound", "eccg_bound", "marginal_threshold",
    "split_budget", "weighted_ecdf", "weighted_quantile", "CfDisparity", "ScmSpec", "abduct",
    "cf_gradient", "counterfactual_covariates", "estimate_cf_disparity", "regularize_thresholds",
    "CalibrationRecord", "RunConfig", "load_config", "load_records", "write_records",
    "CoverageReport", "audit", "eccg", "efficiency", "group_coverage", "PredictionSet", "covered",
    "mixed_threshold", "predict_set", "WeightModel", "estimate_B", "fit_weight_model", "weights_for",
]
