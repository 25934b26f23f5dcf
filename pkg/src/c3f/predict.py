"""Decision rule: mixed per-group thresholds turned into prediction sets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .calibration import ThresholdSet
from .errors import C3FError, GroupError


@dataclass(frozen=True)
class PredictionSet:
    """Prediction set for one test point.

    ``kind`` is ``interval`` (regression, absolute-residual score),
    ``label_set`` (classification, per-label scores) or ``membership``
    (precomputed score only: a single accept/reject decision for the true
    label). Intervals store center and radius so that membership is decided
    by the same residual comparison that defines the score.
    """

    point_id: str
    kind: str
    mixed_threshold: float
    center: float | None = None
    labels: tuple[str, ...] | None = None
    universe: tuple[str, ...] | None = None
    accepted: bool | None = None

    @property
    def radius(self) -> float:
        return self.mixed_threshold

    @property
    def empty(self) -> bool:
        if self.kind == "interval":
            return self.mixed_threshold < 0
        if self.kind == "label_set":
            return len(self.labels) == 0
        return not self.accepted

    @property
    def infinite(self) -> bool:
        return math.isinf(self.mixed_threshold) and self.mixed_threshold > 0

    @property
    def interval(self) -> tuple[float, float] | None:
        if self.kind != "interval" or self.empty:
            return None
        return (self.center - self.mixed_threshold, self.center + self.mixed_threshold)

    def size(self) -> float | None:
        """Interval width, label count, or ``None`` for membership-only sets."""
        if self.kind == "interval":
            return 0.0 if self.empty else 2.0 * self.mixed_threshold
        if self.kind == "label_set":
            return float(len(self.labels))
        return None


def mixed_threshold(posterior: Mapping[str, float], thresholds: ThresholdSet, use_regularized: bool = True) -> float:
    """Posterior-weighted threshold ``sum_a p(a | x) * q_a``."""
    q = thresholds.effective(use_regularized)
    unknown = [g for g in posterior if g not in q]
    if unknown:
        raise GroupError(f"posterior over unknown groups {unknown}")
    total = sum(posterior.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"posterior sums to {total}, expected 1")
    # one-hot posteriors must reproduce q_a bit-exactly, and 0 * inf is nan
    nonzero = [(g, p) for g, p in posterior.items() if p != 0]
    if len(nonzero) == 1 and nonzero[0][1] == 1.0:
        return q[nonzero[0][0]]
    return float(sum(p * q[g] for g, p in nonzero))


def threshold_for(record, thresholds: ThresholdSet, use_regularized: bool = True) -> float:
    """Threshold applied to one test record: posterior mix if present, else its group's."""
    if record.posterior is not None:
        return mixed_threshold(dict(record.posterior), thresholds, use_regularized)
    if record.group not in thresholds.groups:
        raise GroupError(f"record {record.id!r}: group {record.group!r} not in calibrated groups")
    return thresholds.effective(use_regularized)[record.group]


def predict_set(point, threshold: float, task: str = "regression",
                label_universe: Sequence[str] | None = None, score_form: str | None = None) -> PredictionSet:
    """Build ``{y : score(x, y) <= threshold}`` for one record.

    Regression with an absolute-residual score (``pred`` present) gives
    ``[pred - q, pred + q]``. Classification needs per-label scores
    (``label_scores``). Records carrying only a precomputed ``score`` give a
    membership decision.
    """
    if score_form is None:
        if task == "classification":
            score_form = "precomputed" if point.label_scores is None and point.score is not None else "per_label"
        elif point.pred is not None:
            score_form = "absolute_residual"
        else:
            score_form = "precomputed"
    if task == "classification":
        if score_form == "precomputed":
            return _membership(point, threshold)
        if point.label_scores is None:
            raise C3FError(f"record {point.id!r}: classification needs per-label scores (eta_* columns)")
        universe = tuple(label_universe) if label_universe is not None else tuple(l for l, _ in point.label_scores)
        ls = dict(point.label_scores)
        missing = [lab for lab in universe if lab not in ls]
        if missing:
            raise C3FError(f"record {point.id!r}: missing scores for labels {missing}")
        labels = tuple(lab for lab in universe if ls[lab] <= threshold)
        return PredictionSet(point.id, "label_set", threshold, labels=labels, universe=universe)
    if task != "regression":
        raise ValueError(f"unknown task {task!r}")
    if score_form == "absolute_residual":
        if point.pred is None:
            raise C3FError(f"record {point.id!r}: absolute-residual intervals need a prediction")
        return PredictionSet(point.id, "interval", threshold, center=point.pred)
    if score_form == "precomputed":
        return _membership(point, threshold)
    raise ValueError(f"unsupported score form {score_form!r} for regression")


def _membership(point, threshold):
    if point.score is None:
        raise C3FError(f"record {point.id!r}: no score to test against the threshold")
    return PredictionSet(point.id, "membership", threshold, accepted=point.score <= threshold)


def covered(point, pset: PredictionSet) -> bool:
    """Whether the true label of ``point`` lies in ``pset`` (closed sets)."""
    if pset.kind == "interval":
        if point.label is None:
            raise C3FError(f"record {point.id!r}: no true label")
        if pset.empty:
            return False
        return abs(point.label - pset.center) <= pset.mixed_threshold
    if pset.kind == "label_set":
        if point.label is None:
            raise C3FError(f"record {point.id!r}: no true label")
        return str(point.label) in pset.labels
    return bool(pset.accepted)


def predict_records(records: Sequence, thresholds: ThresholdSet, task: str = "regression",
                    use_regularized: bool = True) -> list[PredictionSet]:
    """Prediction sets for a batch; group errors list every offending row."""
    bad = [r.id for r in records
           if r.posterior is None and r.group not in thresholds.groups]
    bad += [r.id for r in records
            if r.posterior is not None and any(g not in thresholds.groups for g, _ in r.posterior)]
    if bad:
        raise GroupError(f"rows with groups absent from the threshold artifact: {bad}")
    universe = None
    if task == "classification":
        universe = []
        for r in records:
            for lab, _ in (r.label_scores or ()):
                if lab not in universe:
                    universe.append(lab)
    return [predict_set(r, threshold_for(r, thresholds, use_regularized), task, universe) for r in records]
