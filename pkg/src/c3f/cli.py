"""Command-line interface: ``c3f {synth,calibrate,predict,evaluate,ablate,bound}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import sys
import time
import warnings
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from . import __version__
from ._backend import BACKEND
from .calibration import ThresholdSet, coverage_bound, deviation_term
from .errors import C3FError, ConfigError
from .ingest import RunConfig, load_config, load_records, write_records
from .pipeline import run_calibration, run_evaluation
from .predict import covered, predict_records

log = logging.getLogger("c3f")


class _Run:
    """Collects stage timings, input digests and warnings for the manifest."""

    def __init__(self, command: str, config: RunConfig | None):
        self.command = command
        self.config = config
        self.inputs: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self.warnings: list[str] = []
        self.stage = "cli"

    @contextmanager
    def step(self, name: str):
        self.stage = name
        t0 = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                yield
            except Exception as exc:
                exc.c3f_stage = name
                raise
        self.timings[name] = time.perf_counter() - t0
        for w in caught:
            msg = f"{name}: {w.message}"
            self.warnings.append(msg)
            log.warning(msg)

    def add_input(self, role: str, path) -> Path:
        path = Path(path)
        self.inputs[role] = hashlib.sha256(path.read_bytes()).hexdigest()
        return path

    @property
    def config_hash(self) -> str:
        if self.config is None:
            return ""
        text = json.dumps(self.config.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def manifest_id(self) -> str:
        blob = json.dumps([self.command, self.config_hash, sorted(self.inputs.items()), __version__])
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def write_manifest(self, out: Path, outputs) -> None:
        manifest = {
            "manifest_id": self.manifest_id,
            "command": self.command,
            "config_hash": self.config_hash,
            "inputs": self.inputs,
            "outputs": sorted(outputs),
            "version": __version__,
            "backend": BACKEND,
            "timings": self.timings,
            "warnings": self.warnings,
        }
        _write_json(out / f"manifest_{self.command}.json", manifest)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _config(args, run_seed: bool = True) -> RunConfig:
    cfg = load_config(args.config)
    if run_seed and getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synth import generate_arrays, with_seed

    cfg = _config(args)
    if cfg.synth is None:
        raise ConfigError("synth needs a 'synth' section in the config")
    spec = with_seed(cfg.synth, cfg.seed) if args.seed is not None else cfg.synth
    out = _out(args)
    run = _Run("synth", cfg)
    run.add_input("config", args.config)
    with run.step("synth"):
        cal = generate_arrays(spec, "calibration").to_records()
        test = generate_arrays(spec, "target").to_records(with_posterior=spec.soft_test)
        tx = generate_arrays(spec, "target", stream=1).to_records()
        tx = [replace(r, score=None, weight=None, label=None, pred=None) for r in tx]
        write_records(out / "cal.csv", cal)
        write_records(out / "test.csv", test)
        write_records(out / "target_x.csv", tx)
    run.write_manifest(out, ["cal.csv", "test.csv", "target_x.csv"])
    return 0


def cmd_calibrate(args) -> int:
    run = _Run("calibrate", None)
    with run.step("ingest"):
        cfg = _config(args)
        run.config = cfg
        run.add_input("config", args.config)
        cal = load_records(run.add_input("cal", args.cal), "calibration")
        target = None
        if args.target_x:
            target = load_records(run.add_input("target_x", args.target_x), "target_covariates")
    with run.step("calibration"):
        result = run_calibration(cal, cfg, target)
    out = _out(args)
    artifact = result.thresholds.to_dict()
    artifact["cf_disparity"] = None if result.cf is None else result.cf.to_dict()
    if result.weight_model is not None:
        artifact["weight_model"] = {
            g: {"coef": m.coef.tolist(), "intercept": m.intercept, "n_iter": m.n_iter,
                "converged": m.converged, "n_cal": m.n_cal, "n_tgt": m.n_tgt}
            for g, m in result.weight_model.groups.items()
        }
    artifact["manifest_id"] = run.manifest_id
    _write_json(out / "thresholds.json", artifact)
    run.write_manifest(out, ["thresholds.json"])
    return 0


def _load_thresholds(args, run: _Run) -> ThresholdSet:
    path = Path(args.thresholds) if args.thresholds else Path(args.out) / "thresholds.json"
    run.add_input("thresholds", path)
    return ThresholdSet.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _optional_config(args, ts: ThresholdSet) -> RunConfig:
    if args.config:
        return _config(args)
    return RunConfig(alpha=ts.alpha, delta=ts.delta)


def _prediction_rows(records, psets, task):
    has_label = bool(records) and all(r.label is not None for r in records)
    kind = psets[0].kind if psets else ("label_set" if task == "classification" else "interval")
    header = ["id", "group", "threshold"]
    header += {"interval": ["lo", "hi"], "label_set": ["labels"], "membership": ["accepted"]}[kind]
    if has_label:
        header.append("covered")
    rows = []
    for r, ps in zip(records, psets):
        row = [r.id, r.group or "", repr(float(ps.mixed_threshold))]
        if kind == "interval":
            iv = ps.interval
            row += ["", ""] if iv is None else [repr(float(iv[0])), repr(float(iv[1]))]
        elif kind == "label_set":
            row.append("|".join(ps.labels))
        else:
            row.append(int(ps.accepted))
        if has_label:
            row.append(int(covered(r, ps)))
        rows.append(row)
    return header, rows


def cmd_predict(args) -> int:
    run = _Run("predict", None)
    with run.step("ingest"):
        ts = _load_thresholds(args, run)
        cfg = _optional_config(args, ts)
        run.config = cfg
        test = load_records(run.add_input("test", args.test), "test")
    with run.step("predict"):
        psets = predict_records(test, ts, cfg.task)
        header, rows = _prediction_rows(test, psets, cfg.task)
    out = _out(args)
    with (out / "predictions.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    run.write_manifest(out, ["predictions.csv"])
    return 0


def cmd_evaluate(args) -> int:
    run = _Run("evaluate", None)
    with run.step("ingest"):
        ts = _load_thresholds(args, run)
        cfg = _optional_config(args, ts)
        run.config = cfg
        test = load_records(run.add_input("test", args.test), "test")
        cal = load_records(run.add_input("cal", args.cal), "calibration") if args.cal else None
        if any(r.label is None for r in test):
            raise C3FError("test file has no 'label' column (or empty labels); evaluation needs true labels")
    with run.step("metrics"):
        _, report = run_evaluation(test, ts, cfg, cal)
    out = _out(args)
    payload = report.to_dict()
    payload["manifest_id"] = run.manifest_id
    _write_json(out / "report.json", payload)
    report.write_csv(out / "report.csv")
    run.write_manifest(out, ["report.json", "report.csv"])
    return 0


_METRIC_COLS = ["weights", "budget_scheme", "lambda", "groups", "replicate", "metric", "group", "value"]


def ablation_rows(cfg: RunConfig, n_reps: int, threads: int | None = None) -> list[list]:
    """Long-format rows, one per (setting, replicate, metric[, group])."""
    from .synth import run_replicates

    if cfg.synth is None:
        raise ConfigError("ablate needs a 'synth' section in the config")
    sweep = cfg.sweep or {}
    axes = {
        "weights": sweep.get("weights", [cfg.weight_source]),
        "budget_scheme": sweep.get("budget_scheme", [cfg.budget_scheme]),
        "lambda": sweep.get("lambda", [cfg.lambda_]),
        "groups": sweep.get("groups", ["hard"]),
    }
    if any(len(v) == 0 for v in axes.values()):
        raise ConfigError("ablation sweep grid is empty")
    rows = []
    for wsrc, scheme, lam, gmode in itertools.product(*axes.values()):
        variant = RunConfig.from_dict({**cfg.to_dict(), "weight_source": wsrc, "budget_scheme": scheme,
                                       "lambda": lam, "sweep": None,
                                       "synth": cfg.synth.to_dict()})
        summary = run_replicates(cfg.synth, variant, n_reps, soft=gmode == "soft", threads=threads)
        key = [wsrc, scheme, repr(float(lam)), gmode]
        for i, rep in enumerate(summary.reports):
            for g in rep.groups:
                rows.append(key + [i, "coverage", g, repr(float(rep.coverage[g]))])
                rows.append(key + [i, "coverage_bound", g, repr(float(rep.coverage_bound[g]))])
                rows.append(key + [i, "violation", g, int(rep.violations[g])])
                rows.append(key + [i, "alpha_a", g, repr(float(rep.alpha_a[g]))])
            rows.append(key + [i, "eccg", "", repr(float(rep.eccg))])
            rows.append(key + [i, "mean_set_size", "", repr(float(rep.mean_set_size))])
            if rep.cf_disparity is not None:
                rows.append(key + [i, "cf_disparity", "", repr(float(rep.cf_disparity.value))])
                rows.append(key + [i, "cf_disparity_hard", "", repr(float(rep.cf_disparity.hard_value))])
    return rows


def cmd_ablate(args) -> int:
    run = _Run("ablate", None)
    with run.step("ingest"):
        cfg = _config(args)
        run.config = cfg
        run.add_input("config", args.config)
        if args.seed is not None:
            cfg = replace(cfg, synth=replace(cfg.synth, seed=args.seed)) if cfg.synth else cfg
    with run.step("ablate"):
        rows = ablation_rows(cfg, args.reps)
    out = _out(args)
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_METRIC_COLS)
        w.writerows(rows)
    run.write_manifest(out, ["ablation.csv"])
    return 0


def cmd_bound(args) -> int:
    n = args.n
    k = args.groups or len(n)
    B = _broadcast(args.B, len(n), "--B")
    alpha = _broadcast(args.alpha, len(n), "--alpha")
    eps = [deviation_term(ni, bi, k, args.delta) for ni, bi in zip(n, B)]
    result = {
        "coverage_bound": [coverage_bound(ni, bi, k, args.delta, ai) for ni, bi, ai in zip(n, B, alpha)],
        "deviation": eps,
    }
    if len(n) >= 2:
        spread = max(abs(a - b) for a in alpha for b in alpha)
        result["eccg_bound"] = spread + max(eps[i] + eps[j] for i in range(len(n)) for j in range(len(n)) if i != j)
    print(json.dumps(result, indent=2))
    return 0


def _broadcast(values, n, flag):
    if len(values) == 1:
        return values * n
    if len(values) != n:
        raise C3FError(f"{flag} needs 1 or {n} values")
    return values


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="c3f", description="Shift-aware group-conditional conformal calibration.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("synth", help="write synthetic calibration/test/target CSVs")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("calibrate", help="compute the ThresholdSet artifact")
    common(sp)
    sp.add_argument("--cal", required=True)
    sp.add_argument("--target-x", dest="target_x")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("predict", help="prediction sets for a test CSV")
    common(sp, config_required=False)
    sp.add_argument("--test", required=True)
    sp.add_argument("--thresholds")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="coverage report for a labeled test CSV")
    common(sp, config_required=False)
    sp.add_argument("--test", required=True)
    sp.add_argument("--cal")
    sp.add_argument("--thresholds")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate", help="replicate sweep over ablation axes")
    common(sp)
    sp.add_argument("--reps", type=int, default=10)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("bound", help="print coverage / ECCG bounds without data")
    sp.add_argument("--n", type=float, nargs="+", required=True)
    sp.add_argument("--B", type=float, nargs="+", default=[0.0])
    sp.add_argument("--alpha", type=float, nargs="+", default=[0.1])
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--groups", type=int, help="|A| in the union bound (default: number of --n values)")
    sp.set_defaults(func=cmd_bound)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (C3FError, ValueError, OSError, KeyError) as exc:
        stage = getattr(exc, "c3f_stage", args.command)
        print(f"c3f {args.command}: {stage} error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
