"""CSV record loading and JSON run configuration.

Column schema (one header row, any order)::

    id              opaque string (optional for target_covariates files)
    group | p_<g>   hard group label, or posterior probability per group
    score           nonconformity score for the true label
    weight          precomputed importance weight w_a(x) > 0
    x0 .. xk        covariates
    label, pred     true label and point prediction
    eta_<label>     per-label scores (classification)

Test files may carry both ``group`` and ``p_*``: the posterior drives the
decision rule and the hard label drives the audit.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

from .counterfactual import PATH_MODES, ScmSpec
from .errors import ConfigError, EmptyFileError, RowError, SchemaError

ROLES = ("calibration", "test", "target_covariates")
POSTERIOR_TOL = 1e-9

_COV = re.compile(r"^x(\d+)$")


@dataclass(frozen=True)
class CalibrationRecord:
    """One row of a calibration, test, or target-covariate file.

    ``posterior`` and ``label_scores`` are tuples of ``(name, value)`` pairs in
    file column order, keeping records hashable and order-stable.
    """

    id: str
    score: float | None = None
    group: str | None = None
    posterior: tuple[tuple[str, float], ...] | None = None
    covariates: tuple[float, ...] = ()
    weight: float | None = None
    label: float | str | None = None
    pred: float | None = None
    label_scores: tuple[tuple[str, float], ...] | None = None

    @property
    def posterior_map(self) -> dict[str, float] | None:
        return None if self.posterior is None else dict(self.posterior)

    def membership(self) -> dict[str, float]:
        """Group mass for calibration: one-hot for a hard label, else the posterior."""
        if self.group is not None:
            return {self.group: 1.0}
        return dict(self.posterior)


def _finite(text: str, col: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise RowError(f"column {col!r}: {text!r} is not a number", line) from None
    if not math.isfinite(v):
        raise RowError(f"column {col!r}: non-finite value {text!r}", line)
    return v


class _Layout:
    def __init__(self, header: Sequence[str], role: str):
        self.header = list(header)
        if len(set(header)) != len(header):
            raise SchemaError(f"duplicate column names in header {header}")
        self.posterior = [c for c in header if c.startswith("p_")]
        self.label_scores = [c for c in header if c.startswith("eta_")]
        cov = sorted(((int(m.group(1)), c) for c in header if (m := _COV.match(c))))
        if [i for i, _ in cov] != list(range(len(cov))):
            raise SchemaError(f"covariate columns must be x0..x{len(cov) - 1} without gaps")
        self.covariates = [c for _, c in cov]
        known = {"id", "group", "score", "weight", "label", "pred"}
        extra = [c for c in header
                 if c not in known and c not in self.posterior and c not in self.label_scores
                 and c not in self.covariates]
        if extra:
            raise SchemaError(f"unknown columns {extra}")
        has = set(header)
        if role != "target_covariates" and "id" not in has:
            raise SchemaError("missing required column 'id'")
        if "group" not in has and not self.posterior:
            raise SchemaError("missing required column 'group' (or posterior columns 'p_<group>')")
        if role == "calibration" and "group" in has and self.posterior:
            raise SchemaError("calibration files take either 'group' or 'p_*' columns, not both")
        if role == "calibration" and "score" not in has:
            derivable = "label" in has and ("pred" in has or self.label_scores)
            if not derivable:
                raise SchemaError("missing required column 'score' (or 'label' with 'pred'/'eta_*')")
        if role == "test" and not ({"score", "pred"} & has or self.label_scores):
            raise SchemaError("missing required column 'score' (or 'pred' or 'eta_*' columns)")
        if role == "target_covariates" and not self.covariates:
            raise SchemaError("missing required covariate columns 'x0'..")
        self.has = has


def _parse_row(row: dict, lay: _Layout, role: str, line: int) -> CalibrationRecord:
    rid = row.get("id") if "id" in lay.has else None
    if rid is None or rid == "":
        if role != "target_covariates":
            raise RowError("empty id", line)
        rid = f"row{line}"

    group = row.get("group") or None if "group" in lay.has else None
    posterior = None
    if lay.posterior:
        cells = [(c[2:], row[c]) for c in lay.posterior]
        if all(v == "" for _, v in cells):
            posterior = None
        else:
            posterior = tuple((g, _finite(v, "p_" + g, line)) for g, v in cells)
            if any(p < 0 for _, p in posterior):
                raise RowError("posterior entries must be >= 0", line)
            total = sum(p for _, p in posterior)
            if abs(total - 1.0) > POSTERIOR_TOL:
                raise RowError(f"posterior sums to {total!r}, expected 1", line)
    if group is None and posterior is None:
        raise RowError("row has neither a group label nor a posterior", line)
    if role == "calibration" and group is not None and posterior is not None:
        raise RowError("row has both a group label and a posterior", line)

    covariates = tuple(_finite(row[c], c, line) for c in lay.covariates)

    weight = None
    if "weight" in lay.has and row["weight"] != "":
        weight = _finite(row["weight"], "weight", line)
        if weight <= 0:
            raise RowError(f"weight must be > 0, got {weight!r}", line)

    label_scores = None
    if lay.label_scores:
        label_scores = tuple((c[4:], _finite(row[c], c, line)) for c in lay.label_scores)

    pred = None
    if "pred" in lay.has and row["pred"] != "":
        pred = _finite(row["pred"], "pred", line)

    label = None
    if "label" in lay.has and row["label"] != "":
        # classification labels stay strings; regression labels are reals
        label = row["label"] if label_scores is not None else _finite(row["label"], "label", line)

    score = None
    if "score" in lay.has and row["score"] != "":
        score = _finite(row["score"], "score", line)
    elif label is not None and label_scores is not None:
        ls = dict(label_scores)
        if label not in ls:
            raise RowError(f"label {label!r} has no 'eta_{label}' column", line)
        score = ls[label]
    elif label is not None and pred is not None:
        score = abs(label - pred)
    if role == "calibration" and score is None:
        raise RowError("calibration row has no score and none can be derived", line)

    return CalibrationRecord(
        id=rid, score=score, group=group, posterior=posterior, covariates=covariates,
        weight=weight, label=label, pred=pred, label_scores=label_scores,
    )


def load_records(path, schema_role: str = "calibration") -> list[CalibrationRecord]:
    """Parse a CSV into validated records; row order is preserved.

    Raises
    ------
    EmptyFileError
        The file has no header row.
    SchemaError
        Header does not match the schema for ``schema_role``.
    RowError
        A row violates a record invariant; ``.line`` is the 1-based file line.
    """
    if schema_role not in ROLES:
        raise ValueError(f"schema_role must be one of {ROLES}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyFileError(f"{path}: file is empty") from None
        if not any(header):
            raise EmptyFileError(f"{path}: header row is blank")
        lay = _Layout(header, schema_role)
        records = []
        for raw in reader:
            line = reader.line_num
            if not raw or all(c.strip() == "" for c in raw):
                continue
            if len(raw) != len(header):
                raise RowError(f"expected {len(header)} cells, got {len(raw)}", line)
            row = dict(zip(header, (c.strip() for c in raw)))
            records.append(_parse_row(row, lay, schema_role, line))
    return records


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_records(path, records: Sequence[CalibrationRecord]) -> None:
    """Write records in the ingest schema; ``load_records`` reads them back field-for-field."""
    records = list(records)
    groups_hard = any(r.group is not None for r in records)
    post_names = _ordered_union(r.posterior for r in records)
    ls_names = _ordered_union(r.label_scores for r in records)
    d = max((len(r.covariates) for r in records), default=0)
    header = ["id"]
    if groups_hard:
        header.append("group")
    header += [f"p_{g}" for g in post_names]
    if any(r.score is not None for r in records):
        header.append("score")
    if any(r.weight is not None for r in records):
        header.append("weight")
    header += [f"x{i}" for i in range(d)]
    if any(r.label is not None for r in records):
        header.append("label")
    if any(r.pred is not None for r in records):
        header.append("pred")
    header += [f"eta_{lab}" for lab in ls_names]

    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            row = {"id": r.id, "group": r.group, "score": r.score, "weight": r.weight,
                   "label": r.label, "pred": r.pred}
            for g, p in (r.posterior or ()):
                row[f"p_{g}"] = p
            for i, x in enumerate(r.covariates):
                row[f"x{i}"] = x
            for lab, s in (r.label_scores or ()):
                row[f"eta_{lab}"] = s
            w.writerow([_fmt(row.get(c)) for c in header])


def _ordered_union(seqs) -> list[str]:
    out: list[str] = []
    for s in seqs:
        for name, _ in (s or ()):
            if name not in out:
                out.append(name)
    return out


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_ENUMS = {
    "budget_scheme": ("uniform", "scaled", "explicit"),
    "regularizer_sign": ("descent", "as_written"),
    "weight_source": ("provided", "estimate", "unit"),
    "task": ("regression", "classification"),
    "cf_paths": PATH_MODES,
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; JSON keys match field names (``lambda`` for ``lambda_``)."""

    alpha: float
    delta: float = 0.1
    budget_scheme: str = "uniform"
    budgets: dict[str, float] | None = None
    proportions: dict[str, float] | None = None
    groups: tuple[str, ...] = ()
    lambda_: float = 0.0
    regularizer_sign: str = "descent"
    weight_source: str = "unit"
    weight_clip: float | None = None
    finite_sample_correction: bool = False
    task: str = "regression"
    scm: ScmSpec | None = None
    cf_paths: str = "unfair"
    temperature: float | None = None
    fd_step: float | None = None
    predictor: dict[str, Any] | None = None
    seed: int = 0
    synth: Any = None
    sweep: dict[str, list] | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        for key, allowed in _ENUMS.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.lambda_ < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_}")
        if self.lambda_ > 0 and self.scm is None:
            raise ConfigError("lambda > 0 requires an scm")
        if self.weight_clip is not None and not self.weight_clip > 0:
            raise ConfigError("weight_clip must be positive")
        if self.temperature is not None and not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.fd_step is not None and not self.fd_step > 0:
            raise ConfigError("fd_step must be positive")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            raise ConfigError("seed must be an unsigned integer")
        if self.budget_scheme == "explicit":
            if not self.budgets:
                raise ConfigError("budget_scheme 'explicit' requires a 'budgets' table")
            for g, a in self.budgets.items():
                if not 0.0 < a < 1.0:
                    raise ConfigError(f"budget for group {g!r} must lie in (0, 1)")
            if self.proportions is not None:
                missing = set(self.budgets) ^ set(self.proportions)
                if missing:
                    raise ConfigError(f"budgets and proportions disagree on groups {sorted(missing)}")
                total = sum(self.proportions[g] * self.budgets[g] for g in self.budgets)
                if abs(total - self.alpha) > 1e-9:
                    raise ConfigError(
                        f"explicit budgets give sum(pi_a * alpha_a) = {total!r}, expected alpha = {self.alpha!r}")
        if self.proportions is not None and abs(sum(self.proportions.values()) - 1.0) > 1e-9:
            raise ConfigError("proportions must sum to 1")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            key = "lambda" if f.name == "lambda_" else f.name
            if f.name == "scm" and v is not None:
                v = v.to_dict()
            elif f.name == "synth" and v is not None:
                v = v.to_dict()
            elif f.name == "groups":
                v = list(v)
            out[key] = v
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        names = {("lambda" if f.name == "lambda_" else f.name): f.name for f in fields(cls)}
        unknown = sorted(set(d) - set(names))
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        if "alpha" not in d:
            raise ConfigError("config requires 'alpha'")
        kw = {names[k]: v for k, v in d.items()}
        try:
            for k in ("alpha", "delta", "lambda_"):
                if k in kw:
                    kw[k] = float(kw[k])
            for k in ("weight_clip", "temperature", "fd_step"):
                if kw.get(k) is not None:
                    kw[k] = float(kw[k])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"numeric config value expected ({exc})") from exc
        if "finite_sample_correction" in kw and not isinstance(kw["finite_sample_correction"], bool):
            raise ConfigError("finite_sample_correction must be a boolean")
        if "groups" in kw:
            kw["groups"] = tuple(str(g) for g in kw["groups"])
        for k in ("budgets", "proportions"):
            if kw.get(k) is not None:
                kw[k] = {str(g): float(v) for g, v in kw[k].items()}
        if kw.get("scm") is not None:
            kw["scm"] = ScmSpec.from_dict(kw["scm"])
        if kw.get("synth") is not None:
            from .synth import SynthSpec

            kw["synth"] = SynthSpec.from_dict(kw["synth"])
        if kw.get("sweep") is not None:
            kw["sweep"] = _validate_sweep(kw["sweep"])
        return cls(**kw)


SWEEP_AXES = {
    "weights": ("unit", "provided", "estimate"),
    "budget_scheme": ("uniform", "scaled"),
    "lambda": None,
    "groups": ("hard", "soft"),
}


def _validate_sweep(sweep: Mapping) -> dict:
    unknown = sorted(set(sweep) - set(SWEEP_AXES))
    if unknown:
        raise ConfigError(f"unknown sweep axes {unknown}")
    out = {}
    for axis, values in sweep.items():
        values = list(values)
        allowed = SWEEP_AXES[axis]
        if axis == "lambda":
            values = [float(v) for v in values]
            if any(v < 0 for v in values):
                raise ConfigError("sweep lambda values must be >= 0")
        elif any(v not in allowed for v in values):
            raise ConfigError(f"sweep axis {axis!r} accepts {allowed}")
        out[axis] = values
    return out


def load_config(path) -> RunConfig:
    """Read a JSON run configuration, applying defaults and rejecting unknown keys."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(data)
