"""Calibrate -> regularize -> predict -> audit, composed from the module operations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibration import ThresholdSet, calibrate, split_budget
from .counterfactual import CfDisparity, CfProblem, default_temperature, disparity_report, regularize_thresholds
from .errors import C3FError, GroupError
from .ingest import RunConfig
from .metrics import CoverageReport, audit, outcomes_for
from .predict import predict_records
from .weights import WeightModel, fit_weight_model, weights_for


@dataclass
class CalibrationResult:
    thresholds: ThresholdSet
    weight_model: WeightModel | None = None
    cf: CfDisparity | None = None


def group_universe(records: Sequence, declared: Sequence[str] = ()) -> tuple[str, ...]:
    seen = set(declared)
    for r in records:
        seen.update(r.membership())
    return tuple(sorted(seen))


def linear_score_fn(coef, intercept: float):
    """Absolute-residual score hook for a linear base predictor."""
    coef = np.asarray(coef, dtype=np.float64)

    def score_fn(X, records):
        y = np.array([r.label for r in records], dtype=np.float64)
        return np.abs(y - (X @ coef + intercept))

    return score_fn


def surrogate_predictor(records: Sequence) -> tuple[np.ndarray, float]:
    """Least-squares linear fit of the recorded predictions on the covariates."""
    rows = [r for r in records if r.pred is not None]
    if len(rows) < 2 or not rows[0].covariates:
        raise C3FError("cannot fit a surrogate predictor: records need covariates and 'pred'")
    X = np.array([r.covariates for r in rows], dtype=np.float64)
    y = np.array([r.pred for r in rows], dtype=np.float64)
    A = np.hstack([X, np.ones((X.shape[0], 1))])
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    return sol[:-1], float(sol[-1])


def score_hook(config: RunConfig, records: Sequence):
    if config.task != "regression":
        raise C3FError("counterfactual regularization supports regression (absolute-residual scores) only")
    if config.predictor is not None:
        return linear_score_fn(config.predictor["coef"], float(config.predictor.get("intercept", 0.0)))
    return linear_score_fn(*surrogate_predictor(records))


def record_weights(records: Sequence, groups: Sequence[str], config: RunConfig,
                   target_records: Sequence | None = None):
    """Per-group weight arrays aligned with ``records`` (``None`` for unit weights)."""
    if config.weight_source == "unit":
        return None, None
    n = len(records)
    if config.weight_source == "provided":
        missing = [r.id for r in records if r.weight is None]
        if missing:
            raise C3FError(f"weight_source 'provided' but rows lack a weight: {missing[:10]}")
        w = np.array([r.weight for r in records], dtype=np.float64)
        if config.weight_clip is not None:
            w = np.minimum(w, config.weight_clip)
        return {g: w for g in groups}, None
    if target_records is None:
        raise C3FError("weight_source 'estimate' requires target covariates")
    if any(r.group is None for r in list(records) + list(target_records)):
        raise GroupError("weight estimation needs hard group labels on calibration and target rows")
    cal_x = {g: np.array([r.covariates for r in records if r.group == g]) for g in groups}
    tgt_x = {g: np.array([r.covariates for r in target_records if r.group == g]) for g in groups}
    model = fit_weight_model(cal_x, tgt_x, clip_max=config.weight_clip, seed=config.seed)
    labels = np.array([r.group for r in records])
    out = {}
    for g in groups:
        w = np.ones(n)
        idx = np.flatnonzero(labels == g)
        w[idx] = weights_for(model, cal_x[g], g)
        out[g] = w
    return out, model


def run_calibration(records: Sequence, config: RunConfig, target_records: Sequence | None = None,
                    cf_records: Sequence | None = None) -> CalibrationResult:
    """Scores -> weights -> budgets -> weighted quantiles -> CF gradient -> regularization."""
    if not records:
        raise C3FError("no calibration records")
    groups = group_universe(records, config.groups)
    scores = np.array([r.score for r in records], dtype=np.float64)
    membership = {g: np.array([r.membership().get(g, 0.0) for r in records]) for g in groups}
    n_a = {g: float(membership[g].sum()) for g in groups}
    weights, model = record_weights(records, groups, config, target_records)
    budgets = split_budget(config.alpha, groups, n_a, config.budget_scheme, config.budgets, config.proportions)
    pi = config.proportions or {g: n_a[g] / sum(n_a.values()) for g in groups}
    ts = calibrate(scores, membership, budgets, weights, config.finite_sample_correction,
                   alpha=config.alpha, delta=config.delta, pi=pi)
    cf = None
    if config.lambda_ > 0:
        cf_records = records if cf_records is None else cf_records
        problem = CfProblem.build(cf_records, config.scm, score_hook(config, records), groups=groups,
                                  paths=config.cf_paths)
        temperature = config.temperature or default_temperature(scores)
        cf = disparity_report(problem, ts.q, temperature, config.fd_step)
        ts = regularize_thresholds(ts, cf.gradient, config.lambda_, config.regularizer_sign)
    return CalibrationResult(ts, model, cf)


def run_evaluation(records: Sequence, thresholds: ThresholdSet, config: RunConfig,
                   cal_records: Sequence | None = None) -> tuple[list, CoverageReport]:
    """Predict every test record and audit the outcomes."""
    if any(r.label is None for r in records):
        raise C3FError("evaluation needs a true label on every test row")
    psets = predict_records(records, thresholds, config.task)
    outcomes = outcomes_for(records, psets)
    cf = None
    if config.scm is not None and config.task == "regression" and all(r.group is not None for r in records):
        problem = CfProblem.build(records, config.scm, score_hook(config, cal_records or records),
                                  groups=thresholds.groups, paths=config.cf_paths)
        base = np.array([r.score for r in (cal_records or records)], dtype=np.float64)
        temperature = config.temperature or default_temperature(base)
        cf = disparity_report(problem, thresholds.effective(), temperature, config.fd_step)
    return psets, audit(thresholds, outcomes, psets, cf)
