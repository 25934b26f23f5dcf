"""Synthetic covariate-shift data with exact importance weights.

Calibration covariates are N(0, 1) per coordinate; target covariates of
group ``a`` are N(mu_a, 1). The exact density ratio is therefore
``prod_j exp(mu_a * x_j - mu_a**2 / 2)`` and ``E[w**2] = exp(dim * mu_a**2)``.
Labels follow one conditional in both roles::

    y = x @ beta + sigma_a * exp(hetero * mean(x)) * eps,   eps ~ N(0, 1)

with prediction ``x @ beta`` and score ``|y - pred|``. The heteroscedastic
factor makes the score distribution depend on x, so covariate shift moves
the target score quantile and unweighted calibration undercovers.

Seeds are counter-based: every draw stream is
``SeedSequence(seed, spawn_key=(replicate, role, stream))``, so any
replicate can be regenerated independently of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from ._backend import parallel_map
from .calibration import ThresholdSet
from .counterfactual import ScmSpec
from .errors import ConfigError
from .ingest import CalibrationRecord, RunConfig
from .metrics import CoverageReport, audit_arrays
from .pipeline import run_calibration

_ROLE_CODE = {"calibration": 0, "target": 1}


@dataclass(frozen=True)
class SynthSpec:
    groups: tuple[str, ...]
    n_cal: dict[str, int]
    n_test: dict[str, int]
    shift: dict[str, float] = field(default_factory=dict)
    noise_scale: dict[str, float] = field(default_factory=dict)
    proportions: dict[str, float] | None = None
    dim: int = 1
    hetero: float = 0.5
    beta: tuple[float, ...] | None = None
    scm: ScmSpec | None = None
    soft_test: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.groups:
            raise ConfigError("synth: at least one group required")
        if self.dim < 1:
            raise ConfigError("synth: dim must be >= 1")
        for name in ("n_cal", "n_test"):
            table = getattr(self, name)
            missing = [g for g in self.groups if g not in table]
            if missing:
                raise ConfigError(f"synth: {name} missing groups {missing}")
            if any(int(table[g]) < 0 for g in self.groups):
                raise ConfigError(f"synth: {name} counts must be >= 0")
        for g, mu in self.shift.items():
            if not math.isfinite(mu):
                raise ConfigError(f"synth: shift for {g!r} must be finite")
        if self.scm is not None and any(self.mu(g) != 0 for g in self.groups):
            raise ConfigError("synth: covariate shift and an scm generator cannot be combined")
        if abs(sum(self.pi(g) for g in self.groups) - 1.0) > 1e-9:
            raise ConfigError("synth: proportions must sum to 1")
        if self.beta is not None and len(self.beta) != self.dim:
            raise ConfigError("synth: beta length must equal dim")

    def mu(self, g: str) -> float:
        return float(self.shift.get(g, 0.0))

    def sigma(self, g: str) -> float:
        return float(self.noise_scale.get(g, 1.0))

    def pi(self, g: str) -> float:
        if self.proportions is not None:
            return float(self.proportions[g])
        total = sum(self.n_test[h] for h in self.groups)
        return self.n_test[g] / total if total else 1.0 / len(self.groups)

    @property
    def coef(self) -> np.ndarray:
        return np.ones(self.dim) if self.beta is None else np.asarray(self.beta, dtype=np.float64)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthSpec":
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ConfigError(f"synth: unknown keys {unknown}")
        if "groups" not in d:
            raise ConfigError("synth: 'groups' is required")
        groups = tuple(str(g) for g in d["groups"])

        def per_group(key, default, cast):
            v = d.get(key, default)
            if isinstance(v, Mapping):
                return {str(g): cast(x) for g, x in v.items()}
            return {g: cast(v) for g in groups}

        kw = dict(
            groups=groups,
            n_cal=per_group("n_cal", 500, int),
            n_test=per_group("n_test", 1000, int),
            shift=per_group("shift", 0.0, float),
            noise_scale=per_group("noise_scale", 1.0, float),
            proportions=None if d.get("proportions") is None else {str(g): float(v) for g, v in d["proportions"].items()},
            dim=int(d.get("dim", 1)),
            hetero=float(d.get("hetero", 0.5)),
            beta=None if d.get("beta") is None else tuple(float(b) for b in d["beta"]),
            scm=None if d.get("scm") is None else ScmSpec.from_dict(d["scm"]),
            soft_test=bool(d.get("soft_test", False)),
            seed=int(d.get("seed", 0)),
        )
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "groups": list(self.groups), "n_cal": dict(self.n_cal), "n_test": dict(self.n_test),
            "shift": dict(self.shift), "noise_scale": dict(self.noise_scale),
            "proportions": None if self.proportions is None else dict(self.proportions),
            "dim": self.dim, "hetero": self.hetero,
            "beta": None if self.beta is None else list(self.beta),
            "scm": None if self.scm is None else self.scm.to_dict(),
            "soft_test": self.soft_test, "seed": self.seed,
        }


@dataclass
class SynthData:
    """Column arrays for one generated sample (rows grouped by ``spec.groups`` order)."""

    role: str
    group_names: tuple[str, ...]
    ids: list[str]
    groups: np.ndarray
    X: np.ndarray
    y: np.ndarray
    pred: np.ndarray
    eps: np.ndarray
    weight: np.ndarray | None
    posterior: np.ndarray | None

    @property
    def score(self) -> np.ndarray:
        return np.abs(self.y - self.pred)

    def __len__(self):
        return self.y.size

    def to_records(self, with_group: bool = True, with_posterior: bool = False) -> list[CalibrationRecord]:
        out = []
        score = self.score
        for i in range(len(self)):
            post = None
            if with_posterior and self.posterior is not None:
                post = tuple((g, float(p)) for g, p in zip(self.group_names, self.posterior[i]))
            out.append(CalibrationRecord(
                id=self.ids[i],
                score=float(score[i]),
                group=str(self.groups[i]) if with_group or post is None else None,
                posterior=post,
                covariates=tuple(float(v) for v in self.X[i]),
                weight=None if self.weight is None else float(self.weight[i]),
                label=float(self.y[i]),
                pred=float(self.pred[i]),
            ))
        return out


def rng_for(seed: int, replicate: int, role: str, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate, _ROLE_CODE[role], stream)))


def label_conditional(spec: SynthSpec, X: np.ndarray, eps: np.ndarray, sigma) -> tuple[np.ndarray, np.ndarray]:
    """``(y, pred)`` from covariates and standard-normal draws; shared by both roles."""
    pred = X @ spec.coef
    sd = np.asarray(sigma) * np.exp(spec.hetero * X.mean(axis=1))
    return pred + sd * eps, pred


def exact_weights(X: np.ndarray, mu: float) -> np.ndarray:
    """Density ratio N(mu, I) / N(0, I) at each row of ``X``."""
    return np.exp(mu * X.sum(axis=1) - X.shape[1] * mu * mu / 2.0)


def target_posterior(spec: SynthSpec, X: np.ndarray) -> np.ndarray:
    """Bayes posterior p(a | x) under the target mixture of N(mu_a, I)."""
    logp = np.column_stack([
        math.log(spec.pi(g)) - 0.5 * np.sum((X - spec.mu(g)) ** 2, axis=1) for g in spec.groups
    ])
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


def _scm_covariates(spec: SynthSpec, rng, g: str, n: int) -> np.ndarray:
    scm = spec.scm
    X = rng.standard_normal((n, spec.dim))
    vals = {scm.attribute: np.full(n, scm.level(g))}
    for v in scm.order:
        if v == scm.attribute:
            continue
        if not (v.startswith("x") and v[1:].isdigit() and int(v[1:]) < spec.dim):
            raise ConfigError(f"synth: scm variable {v!r} is not a covariate x0..x{spec.dim - 1}")
        u = scm.noise_scale(v) * rng.standard_normal(n)
        vals[v] = u + sum((e.coef * vals[e.parent] for e in scm.parents(v)), 0.0)
        X[:, int(v[1:])] = vals[v]
    return X


def generate_arrays(spec: SynthSpec, role: str, replicate: int = 0, stream: int = 0) -> SynthData:
    """Draw one sample as column arrays; see :func:`generate`."""
    if role not in _ROLE_CODE:
        raise ValueError(f"role must be one of {tuple(_ROLE_CODE)}")
    rng = rng_for(spec.seed, replicate, role, stream)
    counts = spec.n_cal if role == "calibration" else spec.n_test
    Xs, eps_s, sig_s, labels, ids = [], [], [], [], []
    prefix = "c" if role == "calibration" else "t"
    for g in spec.groups:
        n = int(counts[g])
        if spec.scm is not None:
            X = _scm_covariates(spec, rng, g, n)
        else:
            mu = spec.mu(g) if role == "target" else 0.0
            X = rng.standard_normal((n, spec.dim)) + mu
        Xs.append(X)
        eps_s.append(rng.standard_normal(n))
        sig_s.append(np.full(n, spec.sigma(g)))
        labels += [g] * n
        ids += [f"{prefix}{stream}-{g}-{i}" for i in range(n)]
    X = np.vstack(Xs) if Xs else np.zeros((0, spec.dim))
    eps = np.concatenate(eps_s)
    y, pred = label_conditional(spec, X, eps, np.concatenate(sig_s))
    groups = np.array(labels, dtype=object)
    weight = None
    if role == "calibration":
        weight = np.concatenate([exact_weights(Xg, spec.mu(g)) for g, Xg in zip(spec.groups, Xs)])
    posterior = target_posterior(spec, X) if role == "target" else None
    return SynthData(role, spec.groups, ids, groups, X, y, pred, eps, weight, posterior)


def generate(spec: SynthSpec, role: str, replicate: int = 0, stream: int = 0) -> list[CalibrationRecord]:
    """Records for ``role`` in {"calibration", "target"}.

    Calibration records carry the exact (unnormalized) importance weight in
    ``weight``. Target records carry the Bayes posterior over groups when
    ``spec.soft_test`` is set, alongside the true hard label.
    """
    data = generate_arrays(spec, role, replicate, stream)
    return data.to_records(with_posterior=role == "target" and spec.soft_test)


# ---------------------------------------------------------------------------
# replicate harness
# ---------------------------------------------------------------------------


def evaluate_arrays(data: SynthData, thresholds: ThresholdSet, soft: bool = False, use_regularized: bool = True,
                    cf=None) -> CoverageReport:
    """Vectorized decision rule + audit on a generated target sample."""
    q = thresholds.effective(use_regularized)
    k = len(thresholds.groups)
    col = {g: j for j, g in enumerate(thresholds.groups)}
    mass = np.zeros((len(data), k))
    for g in data.group_names:
        mass[data.groups == g, col[g]] = 1.0
    if soft:
        # accumulate in posterior order to match predict.mixed_threshold exactly
        thr = np.zeros(len(data))
        for j, g in enumerate(data.group_names):
            p = data.posterior[:, j]
            thr = thr + np.where(p != 0, p * q[g], 0.0)
        onehot = data.posterior.max(axis=1) == 1.0
        if onehot.any():
            thr[onehot] = [q[data.group_names[j]] for j in data.posterior[onehot].argmax(axis=1)]
    else:
        thr = np.array([q[g] for g in data.groups], dtype=np.float64)
    cov = kernels.residual_covered(data.y, data.pred, thr)
    sizes = np.where(thr < 0, 0.0, 2.0 * thr)
    return audit_arrays(thresholds, mass, cov, sizes, soft=False, cf_disparity=cf, empty=thr < 0)


def replicate_report(spec: SynthSpec, config: RunConfig, replicate: int, soft: bool = False) -> CoverageReport:
    """One calibrate -> regularize -> predict -> audit run on replicate ``replicate``."""
    cal = generate_arrays(spec, "calibration", replicate).to_records()
    test = generate_arrays(spec, "target", replicate)
    target_x = None
    if config.weight_source == "estimate":
        target_x = generate_arrays(spec, "target", replicate, stream=1).to_records()
    result = run_calibration(cal, config, target_x)
    return evaluate_arrays(test, result.thresholds, soft=soft, cf=result.cf)


@dataclass
class ReplicateSummary:
    reports: list[CoverageReport]

    @property
    def violation_frequency(self) -> float:
        flags = [v for r in self.reports for v in r.violations.values()]
        return sum(flags) / len(flags)

    @property
    def eccg(self) -> np.ndarray:
        return np.array([r.eccg for r in self.reports])

    def mean_coverage(self) -> dict[str, float]:
        groups = self.reports[0].groups
        return {g: float(np.mean([r.coverage[g] for r in self.reports])) for g in groups}

    def to_dict(self) -> dict:
        e = self.eccg
        return {
            "n_reps": len(self.reports),
            "violation_frequency": self.violation_frequency,
            "eccg_mean": float(e.mean()),
            "eccg_std": float(e.std()),
            "mean_coverage": self.mean_coverage(),
        }


def run_replicates(spec: SynthSpec, config: RunConfig, n_reps: int, soft: bool = False,
                   threads: int | None = None) -> ReplicateSummary:
    """Independent replicates, seeds derived from ``spec.seed`` and the replicate index."""
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    reports = parallel_map(lambda i: replicate_report(spec, config, i, soft), range(n_reps), threads)
    return ReplicateSummary(reports)


def with_seed(spec: SynthSpec, seed: int) -> SynthSpec:
    return replace(spec, seed=seed)
