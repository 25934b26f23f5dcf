"""Group-conditional importance-weighted conformal thresholds and their bounds."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import C3FWarning, GroupError
from .weights import estimate_B, effective_sample_size

ALPHA_CLAMP = 1e-6
BUDGET_TOL = 1e-9


def _as_pair(scores, weights):
    scores = np.asarray(scores, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if scores.ndim != 1 or weights.shape != scores.shape:
        raise ValueError(
            f"scores and weights must be 1-D of equal length, got {scores.shape} and {weights.shape}"
        )
    if scores.size == 0:
        raise ValueError("scores must be nonempty")
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be positive and finite")
    return scores, weights


def weighted_ecdf(scores, weights, q: float) -> float:
    """Self-normalized weighted ECDF, ``sum(w * 1{score <= q}) / sum(w)``."""
    scores, weights = _as_pair(scores, weights)
    return kernels.ecdf_at(scores, weights, q)


def weighted_quantile(scores, weights, level: float, finite_sample_correction: bool = False) -> float:
    """Smallest observed score whose weighted ECDF reaches ``level``.

    Parameters
    ----------
    scores, weights : array-like of shape (n,)
        Nonconformity scores and positive importance weights.
    level : float
        Target ECDF level in (0, 1), typically ``1 - alpha_a``.
    finite_sample_correction : bool, default=False
        Replace ``level`` by ``min(1, level * (n + 1) / n)``.

    Returns
    -------
    float
        The threshold, or ``inf`` when no observed score reaches the level.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    scores, weights = _as_pair(scores, weights)
    n = scores.size
    if finite_sample_correction:
        level = min(1.0, level * (n + 1) / n)
    order = np.argsort(scores, kind="stable")
    idx = kernels.quantile_index(weights[order], level)
    if idx < 0:
        return math.inf
    return float(scores[order[idx]])


def marginal_threshold(scores, alpha: float) -> float:
    """Plain pooled split-CP threshold: unweighted ``(1 - alpha)`` quantile of all scores."""
    scores = np.asarray(scores, dtype=np.float64)
    return weighted_quantile(scores, np.ones_like(scores), 1.0 - alpha)


def split_budget(alpha, groups, n_a, scheme="uniform", explicit=None, proportions=None):
    """Allocate the miscoverage budget so that ``sum_a pi_a * alpha_a == alpha``.

    ``pi_a`` defaults to ``n_a / n``. ``scaled`` uses ``alpha * pi_a / sum_b pi_b**2``.
    Returns a dict group -> alpha_a, clamped into (1e-6, 1 - 1e-6).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    groups = list(groups)
    if proportions is None:
        counts = np.array([float(n_a[g]) for g in groups])
        pi = dict(zip(groups, counts / counts.sum()))
    else:
        pi = {g: float(proportions[g]) for g in groups}

    if scheme == "uniform":
        out = {g: float(alpha) for g in groups}
    elif scheme == "scaled":
        s2 = sum(p * p for p in pi.values())
        out = {g: alpha * pi[g] / s2 for g in groups}
    elif scheme == "explicit":
        if explicit is None:
            raise ValueError("explicit budget scheme requires a per-group alpha table")
        missing = [g for g in groups if g not in explicit]
        if missing:
            raise GroupError(f"explicit budgets missing for groups {missing}")
        out = {g: float(explicit[g]) for g in groups}
        total = sum(pi[g] * out[g] for g in groups)
        if abs(total - alpha) > BUDGET_TOL:
            raise ValueError(
                f"explicit budgets give sum(pi_a * alpha_a) = {total!r}, expected {alpha!r}"
            )
    else:
        raise ValueError(f"unknown budget scheme {scheme!r}")

    for g, a in out.items():
        clamped = min(max(a, ALPHA_CLAMP), 1.0 - ALPHA_CLAMP)
        if clamped != a:
            warnings.warn(f"alpha for group {g!r} clamped from {a} to {clamped}", C3FWarning, stacklevel=2)
            out[g] = clamped
    return out


@dataclass(frozen=True)
class ThresholdSet:
    """Per-group thresholds plus everything needed to state their guarantees.

    ``q_reg`` is ``None`` until the counterfactual regularizer has run; use
    :meth:`effective` to get the thresholds the decision rule should apply.
    """

    groups: tuple[str, ...]
    q: dict[str, float]
    n: dict[str, float]
    alpha_a: dict[str, float]
    B: dict[str, float]
    n_eff: dict[str, float]
    alpha: float
    delta: float
    lambda_: float = 0.0
    q_reg: dict[str, float] | None = None
    pi: dict[str, float] | None = None
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def effective(self, use_regularized: bool = True) -> dict[str, float]:
        if use_regularized and self.q_reg is not None:
            return dict(self.q_reg)
        return dict(self.q)

    def to_dict(self) -> dict:
        bounds = {
            g: coverage_bound(self.n[g], self.B[g], len(self.groups), self.delta, self.alpha_a[g])
            for g in self.groups
        }
        return {
            "groups": list(self.groups),
            "q": {g: _enc(self.q[g]) for g in self.groups},
            "q_reg": {g: _enc(self.effective()[g]) for g in self.groups},
            "alpha_a": dict(self.alpha_a),
            "n": dict(self.n),
            "B": dict(self.B),
            "n_eff": dict(self.n_eff),
            "pi": dict(self.pi) if self.pi is not None else None,
            "alpha": self.alpha,
            "delta": self.delta,
            "lambda": self.lambda_,
            "regularized": self.q_reg is not None,
            "coverage_bound": bounds,
            "eccg_bound": eccg_bound(self),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ThresholdSet":
        groups = tuple(d["groups"])
        q_reg = {g: _dec(v) for g, v in d["q_reg"].items()} if d.get("regularized") else None
        return cls(
            groups=groups,
            q={g: _dec(d["q"][g]) for g in groups},
            n={g: d["n"][g] for g in groups},
            alpha_a={g: float(d["alpha_a"][g]) for g in groups},
            B={g: float(d["B"][g]) for g in groups},
            n_eff={g: float(d["n_eff"][g]) for g in groups},
            alpha=float(d["alpha"]),
            delta=float(d["delta"]),
            lambda_=float(d.get("lambda", 0.0)),
            q_reg=q_reg,
            pi=dict(d["pi"]) if d.get("pi") is not None else None,
            warnings=tuple(d.get("warnings", ())),
        )


def _enc(x: float):
    # JSON has no infinity literal; the sentinel travels as a string.
    return "inf" if math.isinf(x) and x > 0 else x


def _dec(x) -> float:
    return math.inf if x == "inf" else float(x)


def calibrate(
    scores,
    membership: Mapping[str, np.ndarray],
    budgets: Mapping[str, float],
    weights: Mapping[str, np.ndarray] | None = None,
    correction: bool = False,
    alpha: float | None = None,
    delta: float = 0.1,
    pi: Mapping[str, float] | None = None,
) -> ThresholdSet:
    """Per-group weighted ``(1 - alpha_a)`` quantiles.

    Parameters
    ----------
    scores : array-like of shape (n,)
        Calibration nonconformity scores.
    membership : mapping group -> array of shape (n,)
        Group membership mass per record: one-hot for hard labels, the
        posterior ``p(a | x_i)`` in soft mode.
    budgets : mapping group -> alpha_a
    weights : mapping group -> array of shape (n,), optional
        Importance weights ``w_a(x_i)``; ``None`` means unit weights.

    Notes
    -----
    The effective per-record weight for group ``a`` is ``membership * w_a``.
    ``n_a`` is the total membership mass (the plain count for hard groups).
    """
    scores = np.asarray(scores, dtype=np.float64)
    groups = tuple(membership.keys())
    q, n, B, n_eff = {}, {}, {}, {}
    notes = []
    for g in groups:
        m = np.asarray(membership[g], dtype=np.float64)
        w = np.ones_like(scores) if weights is None else np.asarray(weights[g], dtype=np.float64)
        sel = m > 0
        if int(sel.sum()) < 2:
            raise GroupError(f"group {g!r} has {int(sel.sum())} calibration records; need at least 2")
        wg = w[sel]
        q[g] = weighted_quantile(scores[sel], m[sel] * wg, 1.0 - budgets[g], correction)
        if math.isinf(q[g]):
            msg = f"group {g!r}: threshold is +inf, prediction sets will be trivial"
            warnings.warn(msg, C3FWarning, stacklevel=2)
            notes.append(msg)
        total = float(m[sel].sum())
        n[g] = int(round(total)) if np.all(np.isin(m, (0.0, 1.0))) else total
        B[g] = estimate_B(wg)
        n_eff[g] = effective_sample_size(m[sel] * wg)
    if alpha is None:
        alpha = float(sum(budgets[g] for g in groups) / len(groups))
    return ThresholdSet(
        groups=groups, q=q, n=n, alpha_a={g: float(budgets[g]) for g in groups},
        B=B, n_eff=n_eff, alpha=float(alpha), delta=float(delta),
        pi=dict(pi) if pi is not None else None, warnings=tuple(notes),
    )


def deviation_term(n_a: float, B_a: float, n_groups: int, delta: float) -> float:
    """``sqrt((1 + B_a) / (2 n_a) * log(2 |A| / delta))``."""
    if n_a < 1:
        raise ValueError(f"n_a must be >= 1, got {n_a}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt((1.0 + B_a) / (2.0 * n_a) * math.log(2.0 * n_groups / delta))


def coverage_bound(n_a: float, B_a: float, n_groups: int, delta: float, alpha_a: float) -> float:
    """High-probability lower bound on target-domain coverage for one group.

    May be negative; a vacuous bound is returned as-is.
    """
    return 1.0 - alpha_a - deviation_term(n_a, B_a, n_groups, delta)


def eccg_bound(thresholds: ThresholdSet) -> float:
    """Upper bound on the equalized conditional coverage gap.

    Budget spread ``max |alpha_a - alpha_a'|`` plus the largest
    ``eps_a + eps_a'`` over distinct pairs. A single group has no gap: 0.
    """
    gs = thresholds.groups
    k = len(gs)
    alphas = [thresholds.alpha_a[g] for g in gs]
    eps = [deviation_term(thresholds.n[g], thresholds.B[g], k, thresholds.delta) for g in gs]
    if k < 2:
        return 0.0
    spread = max(abs(a - b) for a in alphas for b in alphas)
    return spread + max(eps[i] + eps[j] for i in range(k) for j in range(k) if i != j)


def with_regularized(thresholds: ThresholdSet, q_reg: Mapping[str, float], lambda_: float,
                     notes: Sequence[str] = ()) -> ThresholdSet:
    """Copy of ``thresholds`` carrying regularized thresholds."""
    return replace(
        thresholds, q_reg=dict(q_reg), lambda_=float(lambda_),
        warnings=tuple(thresholds.warnings) + tuple(notes),
    )


__all__ = [
    "ThresholdSet", "weighted_ecdf", "weighted_quantile", "marginal_threshold",
    "split_budget", "calibrate", "deviation_term", "coverage_bound", "eccg_bound",
    "with_regularized",
]
