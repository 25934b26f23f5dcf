"""Linear-Gaussian SCM counterfactuals and the counterfactual coverage disparity.

Counterfactuals follow abduction, action, prediction: recover the exogenous
noise exactly from an observation, set the attribute, re-simulate. Path
specificity is realized edge-wise. Every edge ``p -> c`` transmits either
the factual or the counterfactual value of ``p``:

* ``paths="all"``: every edge transmits counterfactual values (total effect).
* ``paths="fair"``: unfair edges transmit factual values, so unfair paths are
  neutralized and only fair-path influence remains.
* ``paths="unfair"``: only unfair edges transmit counterfactual values, so the
  change is exactly the path-specific effect along unfair paths.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from .calibration import ThresholdSet, with_regularized
from .errors import C3FError, C3FWarning, ConfigError, GroupError

PATH_MODES = ("all", "fair", "unfair")


@dataclass(frozen=True)
class Edge:
    parent: str
    child: str
    coef: float


@dataclass(frozen=True)
class ScmSpec:
    """Linear SCM ``x_v = sum_p coef(p, v) * x_p + u_v`` with Gaussian ``u_v``.

    ``levels`` maps group labels to numeric attribute values; labels that
    parse as numbers map to themselves when absent from ``levels``.
    """

    variables: tuple[str, ...]
    edges: tuple[Edge, ...]
    attribute: str
    noise: Mapping[str, float] = field(default_factory=dict)
    unfair_edges: frozenset = frozenset()
    levels: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        names = set(self.variables)
        if len(names) != len(self.variables):
            raise ConfigError("scm: duplicate variable names")
        if self.attribute not in names:
            raise ConfigError(f"scm: attribute {self.attribute!r} is not a declared variable")
        sorter = TopologicalSorter({v: set() for v in self.variables})
        seen = set()
        for e in self.edges:
            if e.parent not in names or e.child not in names:
                raise ConfigError(f"scm: edge {e.parent}->{e.child} references an undeclared variable")
            if not math.isfinite(e.coef):
                raise ConfigError(f"scm: edge {e.parent}->{e.child} has non-finite coefficient")
            if (e.parent, e.child) in seen:
                raise ConfigError(f"scm: duplicate edge {e.parent}->{e.child}")
            seen.add((e.parent, e.child))
            sorter.add(e.child, e.parent)
        if any(e.child == self.attribute for e in self.edges):
            raise ConfigError("scm: the attribute must be a root node")
        try:
            order = tuple(sorter.static_order())
        except CycleError as exc:
            raise ConfigError(f"scm: edge set is cyclic ({exc.args[1]})") from exc
        for v, s in self.noise.items():
            if v not in names:
                raise ConfigError(f"scm: noise given for undeclared variable {v!r}")
            if not (s > 0 and math.isfinite(s)):
                raise ConfigError(f"scm: noise scale for {v!r} must be positive and finite")
        desc = self.descendants(self.attribute)
        for p, c in self.unfair_edges:
            if (p, c) not in seen:
                raise ConfigError(f"scm: unfair edge {p}->{c} is not an edge of the model")
            if p != self.attribute and p not in desc:
                raise ConfigError(f"scm: unfair edge {p}->{c} is not on a path from {self.attribute!r}")
        object.__setattr__(self, "_order", order)

    @property
    def order(self) -> tuple[str, ...]:
        return self._order

    def parents(self, v: str) -> list[Edge]:
        return [e for e in self.edges if e.child == v]

    def descendants(self, v: str) -> set[str]:
        out, stack = set(), [v]
        while stack:
            cur = stack.pop()
            for e in self.edges:
                if e.parent == cur and e.child not in out:
                    out.add(e.child)
                    stack.append(e.child)
        return out

    def level(self, group) -> float:
        if group in self.levels:
            return float(self.levels[group])
        try:
            return float(group)
        except (TypeError, ValueError):
            raise GroupError(f"scm: unknown attribute level {group!r}") from None

    def noise_scale(self, v: str) -> float:
        return float(self.noise.get(v, 1.0))

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScmSpec":
        allowed = {"variables", "edges", "noise", "attribute", "unfair_edges", "levels"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"scm: unknown keys {sorted(unknown)}")
        for key in ("variables", "edges", "attribute"):
            if key not in d:
                raise ConfigError(f"scm: missing key {key!r}")
        try:
            edges = tuple(Edge(str(e["from"]), str(e["to"]), float(e["coef"])) for e in d["edges"])
            unfair = frozenset((str(e["from"]), str(e["to"])) for e in d.get("unfair_edges", ()))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"scm: malformed edge entry ({exc})") from exc
        return cls(
            variables=tuple(str(v) for v in d["variables"]),
            edges=edges,
            attribute=str(d["attribute"]),
            noise={str(k): float(v) for k, v in d.get("noise", {}).items()},
            unfair_edges=unfair,
            levels={str(k): float(v) for k, v in d.get("levels", {}).items()},
        )

    def to_dict(self) -> dict:
        return {
            "variables": list(self.variables),
            "edges": [{"from": e.parent, "to": e.child, "coef": e.coef} for e in self.edges],
            "noise": dict(self.noise),
            "attribute": self.attribute,
            "unfair_edges": [{"from": p, "to": c} for p, c in sorted(self.unfair_edges)],
            "levels": dict(self.levels),
        }


# ---------------------------------------------------------------------------
# abduction / action / prediction (vectorized over records)
# ---------------------------------------------------------------------------


def _check_obs(scm: ScmSpec, obs: Mapping):
    missing = [v for v in scm.variables if v not in obs]
    if missing:
        raise C3FError(f"observation is missing values for {missing}")


def abduct(scm: ScmSpec, observation: Mapping[str, float]) -> dict:
    """Exogenous noise ``u_v = x_v - sum_p coef * x_p``, exact for a linear SCM."""
    _check_obs(scm, observation)
    u = {}
    for v in scm.order:
        x = np.asarray(observation[v], dtype=np.float64)
        if v == scm.attribute:
            u[v] = x
            continue
        u[v] = x - sum((e.coef * np.asarray(observation[e.parent], dtype=np.float64)
                        for e in scm.parents(v)), np.zeros_like(x))
    return {k: (float(v) if np.ndim(v) == 0 else v) for k, v in u.items()}


def predict_from_noise(scm: ScmSpec, noise: Mapping[str, float], attribute_value) -> dict:
    """Forward simulation with every edge carrying the simulated values."""
    x = {}
    for v in scm.order:
        if v == scm.attribute:
            x[v] = np.asarray(attribute_value, dtype=np.float64) + 0.0 * np.asarray(noise[v])
            continue
        x[v] = np.asarray(noise[v], dtype=np.float64) + sum(
            (e.coef * x[e.parent] for e in scm.parents(v)), 0.0)
    return {k: (float(v) if np.ndim(v) == 0 else v) for k, v in x.items()}


def _propagate(scm: ScmSpec, observation: Mapping, cf_attr, paths: str) -> dict:
    """Path-specific counterfactual of a linear SCM.

    The change ``cf_attr - a`` is pushed forward in two parts: along paths
    free of unfair edges (``clean``) and along paths containing at least one
    unfair edge (``tainted``). ``paths`` selects which part is applied:
    ``all`` both, ``fair`` the clean part, ``unfair`` the tainted part.
    Reusing the factual values is the abduction step: the noise is unchanged.
    """
    if paths not in PATH_MODES:
        raise ValueError(f"paths must be one of {PATH_MODES}, got {paths!r}")
    _check_obs(scm, observation)
    fact = {v: np.asarray(observation[v], dtype=np.float64) for v in scm.variables}
    A = scm.attribute
    clean = {A: np.asarray(cf_attr, dtype=np.float64) - fact[A]}
    tainted = {A: np.zeros_like(clean[A])}
    cf = {A: np.broadcast_to(np.asarray(cf_attr, dtype=np.float64), fact[A].shape).copy()}
    for v in scm.order:
        if v == A:
            continue
        c = np.zeros_like(clean[A])
        t = np.zeros_like(clean[A])
        for e in scm.parents(v):
            if (e.parent, e.child) in scm.unfair_edges:
                t = t + e.coef * (clean[e.parent] + tainted[e.parent])
            else:
                c = c + e.coef * clean[e.parent]
                t = t + e.coef * tainted[e.parent]
        clean[v], tainted[v] = c, t
        delta = c + t if paths == "all" else (c if paths == "fair" else t)
        cf[v] = fact[v] + delta
    return {k: (float(v) if np.ndim(v) == 0 else v) for k, v in cf.items()}


def counterfactual_covariates(scm: ScmSpec, observation: Mapping[str, float], target_attr,
                              neutralize: bool = False, paths: str | None = None) -> dict:
    """Counterfactual node values under ``do(A <- target_attr)``.

    ``neutralize=True`` blocks unfair edges (they keep the factual attribute
    value); it is shorthand for ``paths="fair"``. ``paths`` overrides it.
    ``target_attr`` is a group label resolved through ``scm.level``.
    """
    if paths is None:
        paths = "fair" if neutralize else "all"
    return _propagate(scm, observation, scm.level(target_attr), paths)


# ---------------------------------------------------------------------------
# counterfactual coverage disparity
# ---------------------------------------------------------------------------

ScoreFn = Callable[[np.ndarray, Sequence], np.ndarray]


@dataclass(frozen=True)
class CfDisparity:
    """Smoothed (``value``) and hard-indicator counterfactual coverage disparity."""

    value: float
    hard_value: float
    pairs: dict[str, float]
    hard_pairs: dict[str, float]
    temperature: float
    gradient: dict[str, float] | None = None
    fd_step: dict[str, float] | None = None
    paths: str = "unfair"

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "hard_value": self.hard_value,
            "pairs": dict(self.pairs),
            "hard_pairs": dict(self.hard_pairs),
            "temperature": self.temperature,
            "gradient": None if self.gradient is None else dict(self.gradient),
            "fd_step": None if self.fd_step is None else dict(self.fd_step),
            "paths": self.paths,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CfDisparity":
        return cls(**{k: d[k] for k in ("value", "hard_value", "pairs", "hard_pairs", "temperature",
                                        "gradient", "fd_step", "paths")})


def pair_key(a: str, b: str) -> str:
    return f"{a}->{b}"


def default_temperature(scores) -> float:
    """``0.05 * IQR`` of calibration scores (falls back to the std, then 1e-6)."""
    s = np.asarray(scores, dtype=np.float64)
    q75, q25 = np.percentile(s, [75, 25])
    iqr = float(q75 - q25)
    if iqr > 0:
        return 0.05 * iqr
    sd = float(np.std(s))
    return 0.05 * sd if sd > 0 else 1e-6


def covariate_observation(scm: ScmSpec, covariates: np.ndarray, attr_values: np.ndarray) -> dict:
    """Map covariate columns ``x0..xk`` and attribute values onto SCM nodes."""
    obs = {scm.attribute: attr_values}
    d = covariates.shape[1]
    for v in scm.variables:
        if v == scm.attribute:
            continue
        if not (v.startswith("x") and v[1:].isdigit() and int(v[1:]) < d):
            raise ConfigError(f"scm variable {v!r} is neither the attribute nor a covariate column x0..x{d - 1}")
        obs[v] = covariates[:, int(v[1:])]
    return obs


class CfProblem:
    """Factual and counterfactual scores for every (group, target group) pair.

    Counterfactual covariates and their scores are computed once; the
    disparity can then be evaluated cheaply at any threshold vector.
    """

    def __init__(self, factual: dict, counterfactual: dict, groups: Sequence[str], paths: str):
        self.factual = factual
        self.counterfactual = counterfactual
        self.groups = tuple(groups)
        self.paths = paths

    @classmethod
    def build(cls, records: Sequence, scm: ScmSpec, score_fn: ScoreFn, groups: Sequence[str] | None = None,
              paths: str = "unfair") -> "CfProblem":
        if any(r.group is None for r in records):
            raise GroupError("counterfactual disparity needs hard group labels on every record")
        if groups is None:
            groups = sorted({r.group for r in records})
        covs = np.array([r.covariates for r in records], dtype=np.float64)
        if covs.ndim != 2 or covs.shape[1] == 0:
            raise C3FError("counterfactual disparity needs covariates on every record")
        labels = np.array([r.group for r in records])
        factual, counterfactual = {}, {}
        for a in groups:
            idx = np.flatnonzero(labels == a)
            if idx.size == 0:
                continue
            sub = [records[i] for i in idx]
            X = covs[idx]
            attr = np.full(idx.size, scm.level(a))
            factual[a] = _scores(score_fn, X, sub)
            obs = covariate_observation(scm, X, attr)
            for b in groups:
                if b == a:
                    continue
                cf = _propagate(scm, obs, scm.level(b), paths)
                Xcf = X.copy()
                for v in scm.variables:
                    if v != scm.attribute:
                        Xcf[:, int(v[1:])] = cf[v]
                counterfactual[(a, b)] = _scores(score_fn, Xcf, sub)
        return cls(factual, counterfactual, groups, paths)

    def _pairs(self, q: Mapping[str, float], fn) -> dict:
        out = {}
        for (a, b), s_cf in self.counterfactual.items():
            s_f = self.factual[a]
            ones = np.ones_like(s_f)
            out[pair_key(a, b)] = abs(fn(q[a], s_f, ones) - fn(q[a], s_cf, ones))
        return out

    def smoothed_pairs(self, q: Mapping[str, float], temperature: float) -> dict:
        def fn(qa, s, w):
            if math.isinf(qa):
                return 1.0
            return kernels.smoothed_mean(qa, s, temperature, w)
        return self._pairs(q, fn)

    def hard_pairs(self, q: Mapping[str, float]) -> dict:
        return self._pairs(q, kernels.hard_mean)

    def smoothed(self, q: Mapping[str, float], temperature: float) -> float:
        pairs = self.smoothed_pairs(q, temperature)
        return max(pairs.values()) if pairs else 0.0

    def hard(self, q: Mapping[str, float]) -> float:
        pairs = self.hard_pairs(q)
        return max(pairs.values()) if pairs else 0.0


def _scores(score_fn: ScoreFn, X: np.ndarray, records: Sequence) -> np.ndarray:
    try:
        s = np.asarray(score_fn(X, records), dtype=np.float64)
    except Exception as exc:
        raise C3FError(f"score recomputation failed for records starting at {records[0].id!r}: {exc}") from exc
    if s.shape != (len(records),):
        raise C3FError(f"score hook returned shape {s.shape}, expected ({len(records)},)")
    bad = np.flatnonzero(~np.isfinite(s))
    if bad.size:
        raise C3FError(f"score recomputation produced a non-finite score for record {records[bad[0]].id!r}")
    return s


def default_fd_steps(q: Mapping[str, float], rel: float = 0.01) -> dict:
    """``h_a = rel * q_a``; zero or infinite thresholds fall back to ``rel``."""
    out = {}
    for g, v in q.items():
        out[g] = rel * abs(v) if (math.isfinite(v) and v != 0) else rel
    return out


def cf_gradient(problem: CfProblem, thresholds: Mapping[str, float], fd_step=None,
                temperature: float = 1.0) -> dict:
    """Central finite difference of the smoothed disparity in each threshold.

    ``fd_step`` may be a scalar or a per-group mapping; defaults to
    ``0.01 * q_a``. Infinite thresholds get gradient 0.
    """
    q = dict(thresholds)
    missing = [g for g in problem.groups if g not in q]
    if missing:
        raise GroupError(f"no threshold for groups {missing}")
    if fd_step is None:
        steps = default_fd_steps(q)
    elif isinstance(fd_step, Mapping):
        steps = {g: float(fd_step[g]) for g in q}
    else:
        steps = {g: float(fd_step) for g in q}
    if any(not h > 0 for h in steps.values()):
        raise ValueError("fd_step must be positive")
    grad = {}
    for g in problem.groups:
        if math.isinf(q[g]):
            grad[g] = 0.0
            continue
        h = steps[g]
        up = dict(q, **{g: q[g] + h})
        dn = dict(q, **{g: q[g] - h})
        grad[g] = (problem.smoothed(up, temperature) - problem.smoothed(dn, temperature)) / (2.0 * h)
    return grad


def estimate_cf_disparity(records: Sequence, scm: ScmSpec, thresholds: Mapping[str, float], score_fn: ScoreFn,
                          temperature: float | None = None, fd_step=None, paths: str = "unfair",
                          groups: Sequence[str] | None = None) -> CfDisparity:
    """Empirical counterfactual coverage disparity with its threshold gradient.

    For each ordered pair ``(a, b)``, compares coverage of group-``a`` records
    at ``q_a`` on factual covariates against the same records' counterfactual
    covariates under ``do(A <- b)``. ``temperature`` defaults to
    :func:`default_temperature` of the factual scores.
    """
    problem = CfProblem.build(records, scm, score_fn, groups=groups, paths=paths)
    return disparity_report(problem, thresholds, temperature, fd_step)


def disparity_report(problem: CfProblem, thresholds: Mapping[str, float], temperature: float | None = None,
                     fd_step=None) -> CfDisparity:
    q = dict(thresholds)
    if temperature is None:
        temperature = default_temperature(np.concatenate(list(problem.factual.values())))
    steps = default_fd_steps(q) if fd_step is None else (
        dict(fd_step) if isinstance(fd_step, Mapping) else {g: float(fd_step) for g in q})
    pairs = problem.smoothed_pairs(q, temperature)
    hard = problem.hard_pairs(q)
    return CfDisparity(
        value=max(pairs.values()) if pairs else 0.0,
        hard_value=max(hard.values()) if hard else 0.0,
        pairs=pairs, hard_pairs=hard, temperature=float(temperature),
        gradient=cf_gradient(problem, q, steps, temperature),
        fd_step=steps, paths=problem.paths,
    )


def regularized_values(q: Mapping[str, float], gradient: Mapping[str, float], lambda_: float,
                       sign: str = "descent") -> tuple[dict, list]:
    """``q_a * (1 - lambda * g_a)`` (descent) or ``q_a * (1 + lambda * g_a)`` (as_written)."""
    if lambda_ < 0:
        raise ValueError(f"lambda must be >= 0, got {lambda_}")
    if sign not in ("descent", "as_written"):
        raise ValueError(f"unknown regularizer sign {sign!r}")
    s = -1.0 if sign == "descent" else 1.0
    out, notes = {}, []
    for g, qa in q.items():
        if lambda_ == 0:
            out[g] = qa
            continue
        v = qa * (1.0 + s * lambda_ * gradient.get(g, 0.0))
        if v < 0:
            msg = f"group {g!r}: regularized threshold {v:.6g} floored at 0"
            warnings.warn(msg, C3FWarning, stacklevel=3)
            notes.append(msg)
            v = 0.0
        out[g] = v
    return out, notes


def regularize_thresholds(thresholds: ThresholdSet, gradient: Mapping[str, float], lambda_: float,
                          sign: str = "descent") -> ThresholdSet:
    """Attach ``q_a^(lambda)`` to a calibrated :class:`ThresholdSet`."""
    q_reg, notes = regularized_values(thresholds.q, gradient, lambda_, sign)
    return with_regularized(thresholds, q_reg, lambda_, notes)
