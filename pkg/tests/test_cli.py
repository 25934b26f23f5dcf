import csv
import json

import numpy as np
import pytest

from c3f.cli import main
from oracles import order_statistic_quantile

SYNTH = {"groups": ["a", "b"], "n_cal": 300, "n_test": 400, "shift": {"a": 0.0, "b": 0.5}}


def write_cfg(tmp_path, name="cfg.json", **kw):
    d = {"alpha": 0.1, "seed": 7, "synth": SYNTH}
    d.update(kw)
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def synth_dir(tmp_path):
    cfg = write_cfg(tmp_path, weight_source="provided")
    out = tmp_path / "data"
    assert run("synth", "--config", cfg, "--out", out) == 0
    return cfg, out


class TestPipeline:
    def test_full_run(self, synth_dir, tmp_path):
        cfg, data = synth_dir
        out = tmp_path / "run"
        assert run("calibrate", "--config", cfg, "--cal", data / "cal.csv", "--out", out) == 0
        art = json.loads((out / "thresholds.json").read_text())
        assert set(art["q"]) == {"a", "b"} and art["manifest_id"]
        manifest = json.loads((out / "manifest_calibrate.json").read_text())
        assert manifest["manifest_id"] == art["manifest_id"] and "cal" in manifest["inputs"]
        assert run("predict", "--test", data / "test.csv", "--out", out) == 0
        rows = read_csv(out / "predictions.csv")
        assert len(rows) == 800 and rows[0]["id"] == "t0-a-0"
        assert set(rows[0]) == {"id", "group", "threshold", "lo", "hi", "covered"}
        assert run("evaluate", "--config", cfg, "--test", data / "test.csv", "--out", out) == 0
        rep = json.loads((out / "report.json").read_text())
        assert all(0.8 < c < 1.0 for c in rep["coverage"].values())
        assert rep["cf_disparity"] is None
        assert len(read_csv(out / "report.csv")) == 2

    def test_one_group_unit_weights_matches_split_cp(self, tmp_path, csv_file):
        rng = np.random.default_rng(1)
        s = rng.exponential(size=37)
        cal = csv_file("id,group,score\n" + "".join(f"r{i},g,{float(v)!r}\n" for i, v in enumerate(s)))
        cfg = write_cfg(tmp_path)
        assert run("calibrate", "--config", cfg, "--cal", cal, "--out", tmp_path / "o") == 0
        art = json.loads((tmp_path / "o" / "thresholds.json").read_text())
        assert art["q"]["g"] == order_statistic_quantile(list(s), 0.1)

    def test_lambda_without_scm(self, tmp_path, csv_file, capsys):
        cal = csv_file("id,group,score\nr1,a,0.5\nr2,a,1.0\n")
        cfg = write_cfg(tmp_path, **{"lambda": 0.2})
        assert run("calibrate", "--config", cfg, "--cal", cal, "--out", tmp_path / "o") == 2
        err = capsys.readouterr().err
        assert "ConfigError" in err and "scm" in err
        assert not (tmp_path / "o" / "thresholds.json").exists()

    def test_rerun_byte_identical(self, synth_dir, tmp_path):
        cfg, data = synth_dir
        for name in ("r1", "r2"):
            assert run("calibrate", "--config", cfg, "--cal", data / "cal.csv", "--out", tmp_path / name) == 0
        a = (tmp_path / "r1" / "thresholds.json").read_bytes()
        assert a == (tmp_path / "r2" / "thresholds.json").read_bytes()

    def test_with_scm_regularization(self, tmp_path):
        scm = {"variables": ["A", "x0"], "edges": [{"from": "A", "to": "x0", "coef": 1.0}], "attribute": "A",
               "unfair_edges": [{"from": "A", "to": "x0"}], "levels": {"a": 0, "b": 1}}
        synth = {"groups": ["a", "b"], "n_cal": 300, "n_test": 300, "scm": scm}
        cfg = write_cfg(tmp_path, synth=synth, scm=scm, **{"lambda": 0.1})
        data = tmp_path / "d"
        assert run("synth", "--config", cfg, "--out", data) == 0
        assert run("calibrate", "--config", cfg, "--cal", data / "cal.csv", "--out", data) == 0
        art = json.loads((data / "thresholds.json").read_text())
        assert art["q_reg"] is not None and art["cf_disparity"]["gradient"]
        assert run("evaluate", "--config", cfg, "--test", data / "test.csv", "--out", data) == 0
        assert json.loads((data / "report.json").read_text())["cf_disparity"]["value"] >= 0


class TestPredict:
    def _thresholds(self, tmp_path, csv_file):
        cal = csv_file("id,group,score\n" + "".join(f"c{i},{g},{i + 1}\n" for g in "ab" for i in range(10)), "cal.csv")
        cfg = write_cfg(tmp_path)
        assert run("calibrate", "--config", cfg, "--cal", cal, "--out", tmp_path / "o") == 0
        return tmp_path / "o" / "thresholds.json"

    def test_three_rows_hand_intervals(self, tmp_path, csv_file):
        ts = self._thresholds(tmp_path, csv_file)  # q = 9 for both groups
        test = csv_file("id,group,pred\nt1,a,1.0\nt2,b,-2.5\nt3,a,0.0\n", "test.csv")
        assert run("predict", "--test", test, "--thresholds", ts, "--out", tmp_path / "p") == 0
        rows = read_csv(tmp_path / "p" / "predictions.csv")
        assert [(r["id"], float(r["lo"]), float(r["hi"])) for r in rows] == [
            ("t1", -8.0, 10.0), ("t2", -11.5, 6.5), ("t3", -9.0, 9.0)]

    def test_empty_test_file(self, tmp_path, csv_file):
        ts = self._thresholds(tmp_path, csv_file)
        test = csv_file("id,group,pred\n", "test.csv")
        assert run("predict", "--test", test, "--thresholds", ts, "--out", tmp_path / "p") == 0
        assert (tmp_path / "p" / "predictions.csv").read_text() == "id,group,threshold,lo,hi\n"

    def test_unseen_group(self, tmp_path, csv_file, capsys):
        ts = self._thresholds(tmp_path, csv_file)
        test = csv_file("id,group,pred\nt1,a,1.0\nt2,zz,0.0\nt3,yy,0.0\n", "test.csv")
        assert run("predict", "--test", test, "--thresholds", ts, "--out", tmp_path / "p") == 2
        err = capsys.readouterr().err
        assert "GroupError" in err and "t2" in err and "t3" in err

    def test_evaluate_needs_labels(self, tmp_path, csv_file, capsys):
        ts = self._thresholds(tmp_path, csv_file)
        test = csv_file("id,group,pred\nt1,a,1.0\n", "test.csv")
        assert run("evaluate", "--test", test, "--thresholds", ts, "--out", tmp_path / "e") == 2
        assert "label" in capsys.readouterr().err

    def test_evaluate_toy_coverages(self, tmp_path, csv_file):
        ts = self._thresholds(tmp_path, csv_file)
        # q = 9: a covers 9/10, b covers 8/10
        rows = [f"a{i},a,0,{20 if i == 0 else 1}\n" for i in range(10)]
        rows += [f"b{i},b,0,{20 if i < 2 else 1}\n" for i in range(10)]
        test = csv_file("id,group,pred,label\n" + "".join(rows), "test.csv")
        assert run("evaluate", "--test", test, "--thresholds", ts, "--out", tmp_path / "e") == 0
        rep = json.loads((tmp_path / "e" / "report.json").read_text())
        assert rep["coverage"] == {"a": 0.9, "b": 0.8}
        assert rep["eccg"] == pytest.approx(0.1, abs=1e-15)


class TestAblate:
    def test_degenerate_sweep_matches_evaluate(self, synth_dir, tmp_path):
        cfg, data = synth_dir
        cfg2 = write_cfg(tmp_path, "sweep.json", weight_source="provided", sweep={"lambda": [0.0]})
        assert run("ablate", "--config", cfg2, "--reps", 1, "--out", tmp_path / "ab") == 0
        rows = read_csv(tmp_path / "ab" / "ablation.csv")
        cov = {r["group"]: float(r["value"]) for r in rows if r["metric"] == "coverage"}
        out = tmp_path / "ev"
        assert run("calibrate", "--config", cfg, "--cal", data / "cal.csv", "--out", out) == 0
        assert run("evaluate", "--config", cfg, "--test", data / "test.csv", "--out", out) == 0
        rep = json.loads((out / "report.json").read_text())
        assert cov == rep["coverage"]

    def test_scaled_equals_uniform_when_balanced(self, tmp_path):
        cfg = write_cfg(tmp_path, sweep={"budget_scheme": ["uniform", "scaled"]})
        assert run("ablate", "--config", cfg, "--reps", 2, "--out", tmp_path / "ab") == 0
        rows = read_csv(tmp_path / "ab" / "ablation.csv")
        by = {}
        for r in rows:
            by.setdefault(r["budget_scheme"], []).append((r["replicate"], r["metric"], r["group"], r["value"]))
        assert by["uniform"] == by["scaled"]

    def test_weights_on_closer_to_target(self, tmp_path):
        synth = {"groups": ["a", "b"], "n_cal": 500, "n_test": 2000, "shift": {"a": 0.0, "b": 0.8}}
        cfg = write_cfg(tmp_path, synth=synth, sweep={"weights": ["unit", "provided"]})
        assert run("ablate", "--config", cfg, "--reps", 20, "--out", tmp_path / "ab") == 0
        rows = read_csv(tmp_path / "ab" / "ablation.csv")
        gap = {}
        for w in ("unit", "provided"):
            covs = [float(r["value"]) for r in rows if r["weights"] == w and r["metric"] == "coverage" and r["group"] == "b"]
            gap[w] = abs(np.mean(covs) - 0.9)
        assert gap["provided"] < gap["unit"]

    def test_empty_grid(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, sweep={"lambda": []})
        assert run("ablate", "--config", cfg, "--reps", 1, "--out", tmp_path / "ab") == 2
        assert "empty" in capsys.readouterr().err


def test_bound_command(capsys):
    assert run("bound", "--n", 50, 50) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["coverage_bound"][0] == pytest.approx(0.70793, abs=1e-5)
    assert out["eccg_bound"] == pytest.approx(2 * 0.19207, abs=1e-4)
