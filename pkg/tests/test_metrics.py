"""Harmonic mean, F1, and report assembly."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from castlab.metrics import MetricsReport, f1_scores, harmonic_mean


class TestHarmonicMean:
    def test_published_four_way_values(self):
        # [PAPER] headline balance metrics over four task accuracies
        assert abs(harmonic_mean([72.5, 60.9, 71.6, 85.3]) - 71.6) < 0.05
        assert abs(harmonic_mean([54.9, 52.7, 47.8, 78.9]) - 56.5) < 0.05

    def test_published_two_way_value(self):
        assert abs(harmonic_mean([71.6, 85.3]) - 77.9) < 0.05

    def test_equal_inputs_are_fixed_point(self):
        assert harmonic_mean([42.0, 42.0, 42.0]) == pytest.approx(42.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError, match="positive"):
            harmonic_mean([50.0, 0.0])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            harmonic_mean([])

    @given(st.lists(st.floats(1.0, 100.0), min_size=1, max_size=6))
    @settings(max_examples=50, deadline=None)
    def test_bounded_by_min_and_arithmetic_mean(self, values):
        hm = harmonic_mean(values)
        assert min(values) - 1e-9 <= hm <= np.mean(values) + 1e-9

    @given(st.lists(st.floats(1.0, 100.0), min_size=2, max_size=5))
    @settings(max_examples=30, deadline=None)
    def test_permutation_invariant(self, values):
        assert harmonic_mean(values) == pytest.approx(
            harmonic_mean(values[::-1]))


class TestF1:
    def test_perfect_predictions(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        per_class, weighted, zero = f1_scores(labels, labels, 3)
        assert weighted == pytest.approx(1.0)
        assert all(v == (1.0, 1.0, 1.0) for v in per_class.values())
        assert zero == []

    def test_hand_worked_binary(self):
        # [DERIVED] class 0: tp=2 fp=1 fn=1 -> p=2/3 r=2/3 f1=2/3
        preds = np.array([0, 0, 0, 1, 1])
        labels = np.array([0, 0, 1, 0, 1])
        per_class, weighted, _ = f1_scores(preds, labels, 2)
        assert per_class[0] == pytest.approx((2 / 3, 2 / 3, 2 / 3))
        assert per_class[1] == pytest.approx((1 / 2, 1 / 2, 1 / 2))
        assert weighted == pytest.approx((3 * 2 / 3 + 2 * 1 / 2) / 5)

    def test_zero_support_classes_flagged(self):
        preds = np.array([0, 0])
        labels = np.array([0, 0])
        per_class, _, zero = f1_scores(preds, labels, 3)
        assert zero == [1, 2]
        assert set(per_class) == {0}

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            f1_scores(np.array([]), np.array([]), 2)


class TestMetricsReport:
    def _report(self):
        preds = {"appearance": np.array([0, 1, 1, 0]),
                 "motion": np.array([1, 1, 0, 0])}
        labels = {"appearance": np.array([0, 1, 0, 0]),
                  "motion": np.array([1, 1, 0, 1])}
        return MetricsReport.from_predictions(preds, labels,
                                              config_hash="abc", seed=3)

    def test_top1_in_percent(self):
        r = self._report()
        assert r.top1_per_task["appearance"] == pytest.approx(75.0)
        assert r.top1_per_task["motion"] == pytest.approx(75.0)

    def test_action_requires_all_tasks_correct(self):
        # rows 0 and 1 are correct on both tasks; rows 2 and 3 each miss one
        assert self._report().action_top1 == pytest.approx(50.0)

    def test_harmonic_mean_populated(self):
        r = self._report()
        assert r.harmonic_means["tasks"] == pytest.approx(75.0)

    def test_json_roundtrip_with_extra(self):
        doc = json.loads(self._report().to_json(views="2x2"))
        assert doc["config_hash"] == "abc"
        assert doc["seed"] == 3
        assert doc["views"] == "2x2"
        assert "appearance" in doc["top1_per_task"]

    def test_zero_accuracy_skips_harmonic_mean(self):
        preds = {"appearance": np.array([1, 1])}
        labels = {"appearance": np.array([0, 0])}
        r = MetricsReport.from_predictions(preds, labels)
        assert "tasks" not in r.harmonic_means
