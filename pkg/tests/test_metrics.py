import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c3f.calibration import ThresholdSet, calibrate, coverage_bound
from c3f.errors import GroupError
from c3f.metrics import CoverageReport, audit, audit_arrays, eccg, efficiency, group_coverage
from c3f.predict import PredictionSet
from oracles import brute_eccg


def tset(groups, n=100, B=0.0, alpha=0.1, delta=0.1):
    gs = tuple(groups)
    return ThresholdSet(gs, {g: 1.0 for g in gs}, {g: n for g in gs}, {g: alpha for g in gs},
                        {g: B for g in gs}, {g: float(n) for g in gs}, alpha, delta)


def interval(q, center=0.0):
    return PredictionSet("p", "interval", q, center=center)


class TestGroupCoverage:
    def test_hand_count(self):
        outs = [("a", True), ("a", True), ("a", False), ("a", True)]
        assert group_coverage(outs) == {"a": 0.75}

    def test_all_covered(self):
        outs = [(g, True) for g in "abcab"]
        assert group_coverage(outs) == {"a": 1.0, "b": 1.0, "c": 1.0}

    def test_empty_group(self):
        with pytest.raises(GroupError):
            group_coverage([("a", True)], ["a", "b"])

    def test_soft_reduces_to_hard(self, rng):
        groups = ["a", "b", "c"]
        labels = rng.choice(groups, size=60)
        cov = rng.random(60) < 0.8
        hard = group_coverage(list(zip(labels, cov)), groups)
        soft = group_coverage([({g: float(g == l) for g in groups}, c) for l, c in zip(labels, cov)], groups)
        assert soft == hard

    def test_soft_weighting(self):
        outs = [({"a": 0.75, "b": 0.25}, True), ({"a": 0.25, "b": 0.75}, False)]
        assert group_coverage(outs) == {"a": 0.75, "b": 0.25}

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from("abc"), st.booleans()), min_size=1, max_size=40))
    def test_in_unit_interval(self, outs):
        for v in group_coverage(outs).values():
            assert 0.0 <= v <= 1.0


class TestEccg:
    def test_hand(self):
        assert eccg({"a": 0.9, "b": 0.8, "c": 0.85}) == pytest.approx(0.1, abs=1e-15)

    def test_single_and_identical(self):
        assert eccg({"a": 0.7}) == 0.0
        assert eccg({"a": 0.7, "b": 0.7}) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.randoms())
    def test_brute_force_and_permutation(self, vals, rnd):
        cov = {str(i): v for i, v in enumerate(vals)}
        assert eccg(cov) == brute_eccg(vals)
        items = list(cov.items())
        rnd.shuffle(items)
        assert eccg(dict(items)) == eccg(cov)


class TestEfficiency:
    def test_widths(self):
        assert efficiency([PredictionSet("1", "interval", 0.5, center=0.5),
                           PredictionSet("2", "interval", 1.5, center=1.5)]).mean_size == 2.0

    def test_label_counts(self):
        sets = [PredictionSet("1", "label_set", 0.5, labels=("1",)),
                PredictionSet("2", "label_set", 0.5, labels=("1", "2"))]
        assert efficiency(sets).mean_size == 1.5

    def test_all_empty(self):
        sets = [PredictionSet(str(i), "label_set", 0.0, labels=()) for i in range(4)]
        e = efficiency(sets)
        assert e.mean_size == 0.0 and e.n_empty == 4

    def test_infinite_counted_not_averaged(self):
        e = efficiency([interval(1.0), interval(math.inf)])
        assert e.mean_size == 2.0 and e.n_infinite == 1


class TestAudit:
    def test_strict_violation_boundary(self, monkeypatch):
        import c3f.metrics as M

        monkeypatch.setattr(M, "coverage_bound", lambda *args: 0.5)
        ts = tset("a", n=50)
        rep = audit_arrays(ts, np.ones((2, 1)), np.array([True, False]), np.array([1.0, 1.0]))
        assert rep.coverage["a"] == rep.coverage_bound["a"] == 0.5
        assert not rep.violations["a"]
        rep = audit_arrays(ts, np.ones((3, 1)), np.array([True, False, False]), np.ones(3))
        assert rep.violations["a"]

    def test_bound_matches_calculator(self):
        rep = audit_arrays(tset("ab", n=50), np.eye(2), np.array([True, True]), np.ones(2))
        assert rep.coverage_bound["a"] == coverage_bound(50, 0.0, 2, 0.1, 0.1)

    def test_no_cf_optional(self):
        rep = audit(tset("ab"), [("a", True), ("b", False)], [interval(1.0), interval(1.0)])
        assert rep.cf_disparity is None
        assert rep.coverage == {"a": 1.0, "b": 0.0}
        assert rep.eccg == 1.0 and rep.mean_set_size == 2.0

    def test_group_mismatch(self):
        with pytest.raises(GroupError):
            audit(tset("a"), [("a", True), ("zz", True)], [interval(1.0)] * 2)
        with pytest.raises(GroupError):
            audit(tset("ab"), [("a", True)], [interval(1.0)])

    def test_zero_width_is_not_empty(self):
        rep = audit(tset("a"), [("a", True)], [interval(0.0)])
        assert rep.n_empty == 0
        rep = audit(tset("a"), [("a", False)], [interval(-1.0)])
        assert rep.n_empty == 1

    def test_soft_metadata(self):
        rep = audit(tset("ab"), [({"a": 0.5, "b": 0.5}, True), ("a", False)], [interval(1.0)] * 2)
        assert rep.metadata["soft_groups"]
        assert "posterior-weighted" in rep.metadata["soft_estimator"]
        assert rep.coverage["a"] == pytest.approx(1 / 3)

    def test_roundtrip(self, tmp_path):
        rep = audit(tset("ab"), [("a", True), ("b", False), ("b", True)], [interval(math.inf)] * 3)
        again = CoverageReport.from_dict(rep.to_dict())
        assert again.to_dict() == rep.to_dict()
        rep.write_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "group,n,coverage,coverage_bound,violation,alpha_a,n_cal,B"
        assert len(lines) == 3

    def test_no_shift_simulation(self, rng):
        # unit weights, alpha = 0.1, n_a = 1000: average coverage near 0.9
        covs = []
        for _ in range(40):
            cal = np.abs(rng.normal(size=2000))
            labels = np.repeat(["a", "b"], 1000)
            mem = {g: (labels == g).astype(float) for g in "ab"}
            ts = calibrate(cal, mem, {"a": 0.1, "b": 0.1}, delta=0.1)
            test = np.abs(rng.normal(size=4000))
            tl = np.repeat(["a", "b"], 2000)
            cov = np.array([test[i] <= ts.q[tl[i]] for i in range(4000)])
            m = np.stack([(tl == g).astype(float) for g in "ab"], axis=1)
            rep = audit_arrays(ts, m, cov, np.full(4000, 2.0))
            covs.append([rep.coverage["a"], rep.coverage["b"]])
            assert all(b < 0.9 for b in rep.coverage_bound.values())
        mean = np.mean(covs, axis=0)
        assert np.all((mean > 0.88) & (mean < 0.92))
