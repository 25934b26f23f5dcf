import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c3f.calibration import (
    calibrate,
    coverage_bound,
    deviation_term,
    eccg_bound,
    marginal_threshold,
    split_budget,
    weighted_ecdf,
    weighted_quantile,
)
from c3f.errors import C3FWarning, GroupError
from oracles import brute_ecdf, brute_weighted_quantile, mp_coverage_bound, mp_deviation, order_statistic_quantile

scores_st = st.lists(st.floats(-100, 100, allow_nan=False).map(lambda v: round(v, 1)), min_size=1, max_size=30)


def _instance(draw_scores, data):
    n = len(draw_scores)
    weights = data.draw(st.lists(st.floats(0.01, 10.0), min_size=n, max_size=n))
    return np.array(draw_scores), np.array(weights)


class TestWeightedEcdf:
    def test_hand_example(self):
        assert weighted_ecdf([1, 2, 3], [1, 1, 2], 2) == 0.5

    def test_boundaries(self):
        assert weighted_ecdf([1, 2, 3], [1, 1, 2], 0.5) == 0.0
        assert weighted_ecdf([1, 2, 3], [1, 1, 2], 3) == 1.0
        assert weighted_ecdf([1, 2, 3], [1, 1, 2], 10) == 1.0

    def test_unit_weights_match_plain_ecdf(self, rng):
        for _ in range(50):
            s = rng.normal(size=rng.integers(1, 40))
            q = rng.normal()
            assert weighted_ecdf(s, np.ones_like(s), q) == np.mean(s <= q)

    def test_errors(self):
        with pytest.raises(ValueError):
            weighted_ecdf([1, 2], [1], 0)
        with pytest.raises(ValueError):
            weighted_ecdf([], [], 0)

    @settings(max_examples=100, deadline=None)
    @given(scores_st, st.data())
    def test_nondecreasing_and_right_continuous(self, scores, data):
        s, w = _instance(scores, data)
        grid = np.sort(np.concatenate([s, s - 1e-9, s + 1e-9]))
        vals = [weighted_ecdf(s, w, q) for q in grid]
        assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))
        for v in s:
            assert weighted_ecdf(s, w, v) == pytest.approx(brute_ecdf(s, w, v), abs=1e-12)


class TestWeightedQuantile:
    def test_unit_weights_level_075(self):
        assert weighted_quantile([10, 20, 30, 40], [1, 1, 1, 1], 0.75) == 30

    def test_weighted_level_06(self):
        # ECDF steps 0.25, 0.5, 1.0
        assert weighted_quantile([1, 2, 3], [1, 1, 2], 0.6) == 3

    @pytest.mark.parametrize("level", [0.01, 0.5, 0.99])
    def test_single_score(self, level):
        assert weighted_quantile([4.2], [3.0], level) == 4.2

    def test_level_out_of_range(self):
        for lvl in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                weighted_quantile([1, 2], [1, 1], lvl)

    def test_ties_do_not_split_a_step(self):
        # three ties at 2 carry mass 3/4 together
        assert weighted_quantile([1, 2, 2, 2], [1, 1, 1, 1], 0.3) == 2
        assert weighted_quantile([1, 2, 2, 2], [1, 1, 1, 1], 0.25) == 1

    def test_correction_raises_level(self):
        s = np.arange(1, 11, dtype=float)
        w = np.ones(10)
        assert weighted_quantile(s, w, 0.9) == 9
        # 0.9 * 11 / 10 = 0.99 -> needs every point
        assert weighted_quantile(s, w, 0.9, finite_sample_correction=True) == 10

    def test_scale_invariance(self, rng):
        s = rng.normal(size=25)
        w = rng.uniform(0.1, 3, size=25)
        assert weighted_quantile(s, w, 0.8) == weighted_quantile(s, 7.0 * w, 0.8)

    @settings(max_examples=200, deadline=None)
    @given(scores_st, st.data(), st.floats(0.01, 0.99))
    def test_matches_brute_force(self, scores, data, level):
        s, w = _instance(scores, data)
        assert weighted_quantile(s, w, level) == brute_weighted_quantile(list(s), list(w), level)

    @settings(max_examples=100, deadline=None)
    @given(scores_st, st.data(), st.floats(0.01, 0.98), st.floats(0.001, 0.01))
    def test_monotone_in_level(self, scores, data, level, bump):
        s, w = _instance(scores, data)
        assert weighted_quantile(s, w, level) <= weighted_quantile(s, w, min(level + bump, 0.999))

    @settings(max_examples=100, deadline=None)
    @given(scores_st, st.data(), st.floats(0.01, 0.99), st.randoms())
    def test_permutation_invariance(self, scores, data, level, rnd):
        s, w = _instance(scores, data)
        perm = list(range(len(s)))
        rnd.shuffle(perm)
        assert weighted_quantile(s, w, level) == weighted_quantile(s[perm], w[perm], level)

    def test_reduces_to_order_statistic(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 51))
            s = rng.normal(size=n)
            alpha = float(rng.uniform(0.01, 0.5))
            assert weighted_quantile(s, np.ones(n), 1 - alpha) == order_statistic_quantile(list(s), alpha)
            assert marginal_threshold(s, alpha) == order_statistic_quantile(list(s), alpha)


class TestSplitBudget:
    def test_uniform(self):
        assert split_budget(0.1, ["a", "b", "c"], {"a": 5, "b": 9, "c": 2}) == {"a": 0.1, "b": 0.1, "c": 0.1}

    def test_scaled_symmetric_collapses_to_uniform(self):
        out = split_budget(0.1, ["a", "b"], {"a": 50, "b": 50}, "scaled")
        assert out == pytest.approx({"a": 0.1, "b": 0.1}, abs=1e-15)

    def test_scaled_imbalanced(self):
        out = split_budget(0.1, ["a", "b"], {"a": 90, "b": 10}, "scaled")
        # 0.1 * pi_a / 0.82 with pi = (0.9, 0.1)
        assert out["a"] == pytest.approx(0.09 / 0.82, abs=1e-15)
        assert out["b"] == pytest.approx(0.01 / 0.82, abs=1e-15)
        assert round(out["a"], 4) == 0.1098 and round(out["b"], 4) == 0.0122
        assert 0.9 * out["a"] + 0.1 * out["b"] == pytest.approx(0.1, abs=1e-12)

    def test_scaled_constraint_random(self, rng):
        for _ in range(50):
            k = int(rng.integers(1, 6))
            n = {str(i): int(v) for i, v in enumerate(rng.integers(1, 1000, size=k))}
            out = split_budget(0.1, list(n), n, "scaled")
            total = sum(n.values())
            assert sum(n[g] / total * out[g] for g in n) == pytest.approx(0.1, abs=1e-9)

    def test_explicit(self):
        out = split_budget(0.1, ["a", "b"], {"a": 1, "b": 1}, "explicit", {"a": 0.05, "b": 0.15})
        assert out == {"a": 0.05, "b": 0.15}
        with pytest.raises(ValueError):
            split_budget(0.1, ["a", "b"], {"a": 1, "b": 1}, "explicit", {"a": 0.05, "b": 0.2})

    def test_clamp_warns(self):
        with pytest.warns(C3FWarning):
            out = split_budget(0.9, ["a", "b", "c"], {"a": 60, "b": 20, "c": 20}, "scaled")
        assert out["a"] == 1 - 1e-6


class TestCalibrate:
    def _mem(self, labels, groups):
        labels = np.asarray(labels)
        return {g: (labels == g).astype(float) for g in groups}

    def test_one_group_percentiles(self):
        s = np.arange(1, 101) / 100
        ts = calibrate(s, self._mem(["a"] * 100, ["a"]), {"a": 0.1})
        assert ts.q["a"] == 0.90
        assert ts.n["a"] == 100 and ts.B["a"] == 0.0

    def test_identical_groups_identical_thresholds(self, rng):
        s = rng.normal(size=40)
        scores = np.concatenate([s, s])
        labels = ["a"] * 40 + ["b"] * 40
        w = np.concatenate([np.linspace(0.5, 2, 40)] * 2)
        ts = calibrate(scores, self._mem(labels, ["a", "b"]), {"a": 0.1, "b": 0.1}, {"a": w, "b": w})
        assert ts.q["a"] == ts.q["b"] and ts.B["a"] == ts.B["b"]

    def test_constant_weights_equal_unit(self, rng):
        s = rng.normal(size=60)
        labels = ["a"] * 30 + ["b"] * 30
        mem = self._mem(labels, ["a", "b"])
        seven = {g: np.full(60, 7.0) for g in "ab"}
        assert calibrate(s, mem, {"a": 0.1, "b": 0.2}) == calibrate(s, mem, {"a": 0.1, "b": 0.2}, seven)

    def test_small_group_error(self):
        with pytest.raises(GroupError, match="'b'"):
            calibrate([1.0, 2.0, 3.0], self._mem(["a", "a", "b"], ["a", "b"]), {"a": 0.1, "b": 0.1})

    def test_infinite_threshold_warns(self):
        # level above every reachable ECDF step needs the correction to exceed 1
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            ts = calibrate([1.0, 2.0], self._mem(["a", "a"], ["a"]), {"a": 1e-6}, correction=True)
        assert ts.q["a"] == 2.0

    def test_soft_membership(self):
        s = np.array([1.0, 2.0, 3.0, 4.0])
        mem = {"a": np.array([1.0, 0.5, 0.5, 0.0]), "b": np.array([0.0, 0.5, 0.5, 1.0])}
        ts = calibrate(s, mem, {"a": 0.3, "b": 0.3})
        # group a: masses (1, .5, .5) over scores (1, 2, 3): ECDF .5, .75, 1
        assert ts.q["a"] == 2.0
        assert ts.q["b"] == 4.0
        assert ts.n["a"] == 2.0

    def test_roundtrip_dict(self, rng):
        s = rng.normal(size=20)
        ts = calibrate(s, self._mem(["a"] * 10 + ["b"] * 10, ["a", "b"]), {"a": 0.1, "b": 0.1})
        from c3f.calibration import ThresholdSet

        assert ThresholdSet.from_dict(ts.to_dict()) == ts


class TestBounds:
    def test_hand_value(self):
        # sqrt(log(40) / 100) = 0.19207...
        assert coverage_bound(50, 0.0, 2, 0.1, 0.1) == pytest.approx(float(mp_coverage_bound(50, 0, 2, 0.1, 0.1)), rel=1e-14)
        assert coverage_bound(50, 0.0, 2, 0.1, 0.1) == pytest.approx(0.70793, abs=1e-5)

    def test_monotonicity(self):
        base = coverage_bound(100, 0.5, 3, 0.1, 0.1)
        assert coverage_bound(100, 0.6, 3, 0.1, 0.1) < base
        assert coverage_bound(101, 0.5, 3, 0.1, 0.1) > base

    def test_limit(self):
        assert coverage_bound(1e15, 0.0, 2, 1 - 1e-9, 0.1) == pytest.approx(0.9, abs=1e-6)

    def test_vacuous_reported_as_is(self):
        assert coverage_bound(1, 5.0, 10, 0.01, 0.5) < 0

    def _ts(self, n, B, alpha=0.1, delta=0.1):
        from c3f.calibration import ThresholdSet

        gs = tuple(str(i) for i in range(len(n)))
        return ThresholdSet(gs, {g: 1.0 for g in gs}, dict(zip(gs, n)), {g: alpha for g in gs},
                            dict(zip(gs, B)), dict(zip(gs, n)), alpha, delta)

    def test_eccg_uniform_and_symmetric(self):
        ts = self._ts([100, 100], [0.2, 0.2])
        assert eccg_bound(ts) == pytest.approx(2 * deviation_term(100, 0.2, 2, 0.1), rel=1e-15)

    def test_eccg_hand_case(self):
        ts = self._ts([100, 400], [0, 0])
        e1 = math.sqrt(math.log(40) / 200)
        e2 = math.sqrt(math.log(40) / 800)
        assert eccg_bound(ts) == pytest.approx(e1 + e2, rel=1e-14)
        assert deviation_term(100, 0, 2, 0.1) == pytest.approx(float(mp_deviation(100, 0, 2, 0.1)), rel=1e-14)

    def test_eccg_single_group(self):
        assert eccg_bound(self._ts([50], [0])) == 0.0
