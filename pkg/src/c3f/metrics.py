"""Coverage audit: group coverage, ECCG, efficiency, and bound comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .calibration import ThresholdSet, coverage_bound, eccg_bound
from .counterfactual import CfDisparity
from .errors import GroupError
from .predict import PredictionSet, covered as _covered


def _mass(membership) -> dict:
    if isinstance(membership, Mapping):
        return {str(g): float(p) for g, p in membership.items()}
    return {str(membership): 1.0}


def group_coverage(outcomes: Sequence[tuple], groups: Sequence[str] | None = None) -> dict:
    """Per-group coverage from ``(membership, covered)`` pairs.

    ``membership`` is a hard group label or a posterior mapping; posterior
    points contribute ``p(a | x) * 1{covered}`` to group ``a``, normalized by
    the group's total posterior mass.
    """
    num: dict[str, float] = {}
    den: dict[str, float] = {}
    for membership, cov in outcomes:
        for g, p in _mass(membership).items():
            den[g] = den.get(g, 0.0) + p
            num[g] = num.get(g, 0.0) + p * (1.0 if cov else 0.0)
    universe = list(groups) if groups is not None else sorted(den)
    empty = [g for g in universe if den.get(g, 0.0) <= 0]
    if empty:
        raise GroupError(f"no test points for groups {empty}")
    return {g: num[g] / den[g] for g in universe}


def group_counts(outcomes: Sequence[tuple], groups: Sequence[str]) -> dict:
    den = {g: 0.0 for g in groups}
    for membership, _ in outcomes:
        for g, p in _mass(membership).items():
            den[g] = den.get(g, 0.0) + p
    return den


def eccg(coverages: Mapping[str, float]) -> float:
    """Equalized conditional coverage gap: largest pairwise coverage difference."""
    vals = list(coverages.values())
    if not vals:
        raise ValueError("eccg needs at least one group")
    return float(max(vals) - min(vals))


@dataclass(frozen=True)
class Efficiency:
    mean_size: float
    n_infinite: int
    n_empty: int
    n_membership_only: int


def efficiency(psets: Sequence[PredictionSet]) -> Efficiency:
    """Mean interval width or label count; infinite sets are counted, not averaged."""
    if not psets:
        raise ValueError("efficiency needs at least one prediction set")
    sizes, n_inf, n_empty, n_mem = [], 0, 0, 0
    for ps in psets:
        if ps.kind == "membership":
            n_mem += 1
            continue
        if ps.empty:
            n_empty += 1
        if ps.kind == "interval" and ps.infinite:
            n_inf += 1
            continue
        sizes.append(ps.size())
    mean = math.fsum(sizes) / len(sizes) if sizes else math.nan
    return Efficiency(mean, n_inf, n_empty, n_mem)


@dataclass(frozen=True)
class CoverageReport:
    groups: tuple[str, ...]
    coverage: dict[str, float]
    n: dict[str, float]
    eccg: float
    mean_set_size: float
    n_infinite: int
    n_empty: int
    coverage_bound: dict[str, float]
    eccg_bound: float
    violations: dict[str, bool]
    alpha_a: dict[str, float]
    n_cal: dict[str, float]
    B: dict[str, float]
    cf_disparity: CfDisparity | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "groups": list(self.groups),
            "coverage": dict(self.coverage),
            "n": dict(self.n),
            "eccg": self.eccg,
            "mean_set_size": None if math.isnan(self.mean_set_size) else self.mean_set_size,
            "n_infinite": self.n_infinite,
            "n_empty": self.n_empty,
            "coverage_bound": dict(self.coverage_bound),
            "eccg_bound": self.eccg_bound,
            "violations": dict(self.violations),
            "alpha_a": dict(self.alpha_a),
            "n_cal": dict(self.n_cal),
            "B": dict(self.B),
            "cf_disparity": None if self.cf_disparity is None else self.cf_disparity.to_dict(),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CoverageReport":
        kw = dict(d)
        kw["groups"] = tuple(kw["groups"])
        kw["mean_set_size"] = math.nan if kw["mean_set_size"] is None else kw["mean_set_size"]
        if kw.get("cf_disparity") is not None:
            kw["cf_disparity"] = CfDisparity.from_dict(kw["cf_disparity"])
        return cls(**kw)

    def write_csv(self, path) -> None:
        cols = ["group", "n", "coverage", "coverage_bound", "violation", "alpha_a", "n_cal", "B"]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for g in self.groups:
                w.writerow([g, repr(float(self.n[g])), repr(float(self.coverage[g])), repr(float(self.coverage_bound[g])),
                            int(self.violations[g]), repr(float(self.alpha_a[g])), repr(float(self.n_cal[g])),
                            repr(float(self.B[g]))])


def outcomes_for(records: Sequence, psets: Sequence[PredictionSet]) -> list[tuple]:
    """``(membership, covered)`` for each test record; hard labels take precedence."""
    out = []
    for r, ps in zip(records, psets):
        membership = r.group if r.group is not None else dict(r.posterior)
        out.append((membership, _covered(r, ps)))
    return out


def audit(thresholds: ThresholdSet, outcomes: Sequence[tuple], psets: Sequence[PredictionSet],
          cf_disparity: CfDisparity | None = None) -> CoverageReport:
    """Assemble a :class:`CoverageReport`; a violation is coverage strictly below its bound."""
    col = {g: j for j, g in enumerate(thresholds.groups)}
    mass = np.zeros((len(outcomes), len(col)))
    cov = np.zeros(len(outcomes), dtype=bool)
    soft = False
    extra = set()
    for i, (membership, c) in enumerate(outcomes):
        if isinstance(membership, Mapping):
            soft = True
        for g, p in _mass(membership).items():
            if g not in col:
                extra.add(g)
                continue
            mass[i, col[g]] = p
        cov[i] = bool(c)
    if extra:
        raise GroupError(f"outcome groups {sorted(extra)} are not in the threshold set")
    sizes = np.array([_size(ps) for ps in psets], dtype=np.float64)
    empty = np.array([ps.kind != "membership" and ps.empty for ps in psets], dtype=bool)
    return audit_arrays(thresholds, mass, cov, sizes, soft, cf_disparity, empty)


def _size(ps: PredictionSet) -> float:
    s = ps.size()
    if s is None:
        return math.nan
    return math.inf if ps.kind == "interval" and ps.infinite else s


def audit_arrays(thresholds: ThresholdSet, mass: np.ndarray, covered: np.ndarray, sizes: np.ndarray,
                 soft: bool = False, cf_disparity: CfDisparity | None = None,
                 empty: np.ndarray | None = None) -> CoverageReport:
    """Array core of :func:`audit`.

    ``mass[i, j]`` is point ``i``'s membership in ``thresholds.groups[j]``;
    ``sizes`` holds set sizes with ``inf`` for unbounded sets and ``nan`` for
    membership-only decisions. ``empty`` flags empty sets (default: size 0).
    """
    groups = thresholds.groups
    den = mass.sum(axis=0)
    missing = [g for g, d in zip(groups, den) if not d > 0]
    if missing:
        raise GroupError(f"no test outcomes for calibrated groups {missing}")
    num = mass[covered].sum(axis=0)
    cov = {g: float(num[j] / den[j]) for j, g in enumerate(groups)}
    k = len(groups)
    bounds = {g: coverage_bound(thresholds.n[g], thresholds.B[g], k, thresholds.delta, thresholds.alpha_a[g])
              for g in groups}
    if sizes.size == 0:
        raise ValueError("efficiency needs at least one prediction set")
    finite = sizes[np.isfinite(sizes)]
    mean_size = math.fsum(finite.tolist()) / finite.size if finite.size else math.nan
    meta = {"soft_groups": bool(soft)}
    if soft:
        meta["soft_estimator"] = "posterior-weighted coverage sum_i p(a|x_i) 1{cov_i} / sum_i p(a|x_i)"
    return CoverageReport(
        groups=groups, coverage=cov, n={g: float(den[j]) for j, g in enumerate(groups)}, eccg=eccg(cov),
        mean_set_size=mean_size, n_infinite=int(np.sum(np.isinf(sizes))), n_empty=int(np.sum(sizes == 0 if empty is None else empty)),
        coverage_bound=bounds, eccg_bound=eccg_bound(thresholds),
        violations={g: cov[g] < bounds[g] for g in groups},
        alpha_a={g: thresholds.alpha_a[g] for g in groups},
        n_cal={g: thresholds.n[g] for g in groups}, B={g: thresholds.B[g] for g in groups},
        cf_disparity=cf_disparity, metadata=meta,
    )
