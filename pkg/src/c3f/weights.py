"""Per-group importance weights and weight diagnostics.

Weights are density ratios ``dQ_X(. | A=a) / dP_cal,X(. | A=a)``. When they
are not supplied, they are estimated by a logistic discriminator trained
to tell calibration covariates (label 0) from target covariates (label 1):
the discriminator odds, rescaled by the class-count ratio, estimate the
density ratio.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernels
from ._backend import parallel_map
from .errors import C3FWarning, GroupError

GD_STEP = 0.1
GD_L2 = 1e-4
GD_TOL = 1e-8
GD_MAX_ITER = 10_000


@dataclass(frozen=True)
class GroupDiscriminator:
    """Fitted logistic discriminator for one group (on standardized covariates)."""

    coef: np.ndarray
    intercept: float
    center: np.ndarray
    scale: np.ndarray
    n_cal: int
    n_tgt: int
    n_iter: int
    grad_norm: float
    converged: bool

    def log_odds(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.center) / self.scale
        return Z @ self.coef + self.intercept


@dataclass(frozen=True)
class WeightModel:
    groups: dict[str, GroupDiscriminator]
    clip_max: float | None = None
    seed: int = 0
    notes: tuple[str, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class ShiftStats:
    B: dict[str, float]
    n_eff: dict[str, float]


def _as_matrix(X, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be a 2-D covariate matrix")
    return X


def _fit_one(group, Xc, Xt):
    if Xc.shape[0] < 2 or Xt.shape[0] < 2:
        raise GroupError(
            f"group {group!r}: need >= 2 rows on each side, got {Xc.shape[0]} calibration, {Xt.shape[0]} target"
        )
    if Xc.shape[1] != Xt.shape[1]:
        raise ValueError(f"group {group!r}: covariate dimension mismatch {Xc.shape[1]} vs {Xt.shape[1]}")
    X = np.vstack([Xc, Xt])
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    y = np.concatenate([np.zeros(Xc.shape[0]), np.ones(Xt.shape[0])])
    coef, intercept, it, gn = kernels.logistic_fit(
        (X - center) / scale, y, GD_STEP, GD_L2, GD_TOL, GD_MAX_ITER
    )
    return GroupDiscriminator(
        coef=coef, intercept=intercept, center=center, scale=scale,
        n_cal=Xc.shape[0], n_tgt=Xt.shape[0], n_iter=it, grad_norm=gn,
        converged=gn < GD_TOL,
    )


def fit_weight_model(cal_covariates: Mapping[str, np.ndarray], tgt_covariates: Mapping[str, np.ndarray],
                     clip_max: float | None = None, seed: int = 0) -> WeightModel:
    """Fit one calibration-vs-target discriminator per group.

    Gradient descent starts from zero, so the fit is fully deterministic;
    ``seed`` is recorded for provenance only. Non-convergence is a warning
    stored in ``WeightModel.notes``, not an error.
    """
    if clip_max is not None and not clip_max > 0:
        raise ValueError(f"clip_max must be positive, got {clip_max}")
    groups = list(cal_covariates)
    for g in groups:
        if g not in tgt_covariates:
            raise GroupError(f"group {g!r} has no target covariates")
    for g in tgt_covariates:
        if g not in cal_covariates:
            raise GroupError(f"group {g!r} has no calibration covariates")

    fitted = parallel_map(
        lambda g: _fit_one(g, _as_matrix(cal_covariates[g], "calibration"),
                           _as_matrix(tgt_covariates[g], "target")),
        groups,
    )
    notes = []
    for g, model in zip(groups, fitted):
        if not model.converged:
            msg = (f"group {g!r}: discriminator stopped at {model.n_iter} iterations "
                   f"with gradient norm {model.grad_norm:.3g}")
            warnings.warn(msg, C3FWarning, stacklevel=2)
            notes.append(msg)
    return WeightModel(groups=dict(zip(groups, fitted)), clip_max=clip_max, seed=seed, notes=tuple(notes))


def raw_weights(model: WeightModel, covariates, group: str) -> np.ndarray:
    """Odds-ratio weights ``p/(1-p) * n_cal/n_tgt``, clipped, not normalized."""
    if group not in model.groups:
        raise GroupError(f"weight model has no group {group!r}")
    disc = model.groups[group]
    w = np.exp(disc.log_odds(_as_matrix(covariates, "covariates"))) * (disc.n_cal / disc.n_tgt)
    if model.clip_max is not None:
        w = np.minimum(w, model.clip_max)
    return w


def self_normalize(weights) -> np.ndarray:
    """Rescale to mean 1."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError("cannot normalize an empty weight vector")
    total = w.sum()
    if not total > 0:
        raise ValueError("weights must have positive total mass")
    return w * (w.size / total)


def weights_for(model: WeightModel, covariates, group: str) -> np.ndarray:
    """Estimated ``w_a(x)`` for a batch, self-normalized to mean 1."""
    return self_normalize(raw_weights(model, covariates, group))


def estimate_B(weights) -> float:
    """Second-moment excess ``mean(w_hat**2) - 1`` of mean-1 weights, floored at 0.

    >>> estimate_B([0.5, 1.5])
    0.25
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError("estimate_B needs a nonempty weight vector")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    wn = self_normalize(w)
    return max(0.0, float(np.mean(wn * wn)) - 1.0)


def effective_sample_size(weights) -> float:
    """Kish effective sample size ``(sum w)**2 / sum w**2``."""
    w = np.asarray(weights, dtype=np.float64)
    return float(w.sum() ** 2 / np.dot(w, w))


def shift_stats(weights_by_group: Mapping[str, np.ndarray]) -> ShiftStats:
    return ShiftStats(
        B={g: estimate_B(w) for g, w in weights_by_group.items()},
        n_eff={g: effective_sample_size(w) for g, w in weights_by_group.items()},
    )
