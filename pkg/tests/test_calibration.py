"""Conformal adjustment, online updates and change-point recalibration."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from eegguard.calibration import (CalibrationWarning, ConformalQuantileCalibrator, ConformalState,
                                  conformal_adjust, observe, order_statistic, recalibrate_on_change)
from eegguard.recording import ConfigurationError


def _filled(residuals, **kwargs):
    state = ConformalState(**kwargs)
    zeros = [0.0] * len(state.levels)
    for r in residuals:
        observe(r, zeros, state)
    return state


class TestAdjust:
    def test_zero_residuals(self):
        state = _filled([0.0] * 20)
        assert conformal_adjust(3.5, state).value == 3.5

    def test_sorted_order_statistic(self):
        residuals = np.random.default_rng(0).permutation(np.arange(1.0, 101.0))
        state = _filled(residuals, levels=(0.9,))
        out = conformal_adjust(0.0, state)
        assert out.adjustment == 91.0 and out.calibrated
        # sort oracle: the 91st smallest residual
        assert out.adjustment == np.sort(residuals)[math.ceil(101 * 0.9) - 1]

    @pytest.mark.parametrize("level", [0.05, 0.5, 0.9, 0.99])
    def test_single_residual_clamps(self, level):
        assert order_statistic([5.0], level) == 5.0

    def test_cold_start_passes_through(self):
        state = _filled([4.0] * 9)
        out = conformal_adjust(1.0, state)
        assert out.value == 1.0 and out.flags == ("uncalibrated",)
        observe(4.0, 0.0, state)
        assert conformal_adjust(1.0, state).value == 5.0

    @given(st.lists(st.floats(-100, 100), min_size=10, max_size=60), st.integers(0, 59),
           st.floats(0, 50))
    def test_monotone_in_residuals(self, residuals, index, bump):
        index %= len(residuals)
        raised = list(residuals)
        raised[index] += bump
        assert order_statistic(raised, 0.9) >= order_statistic(residuals, 0.9)


class TestObserve:
    def test_ring_buffer(self):
        state = _filled(np.arange(300.0), n_cal=256)
        assert state.n_residuals() == 256
        assert list(state.buffers[0.9]) == list(np.arange(44.0, 300.0))

    def test_cusum_non_negative_and_deterministic(self):
        seq = np.random.default_rng(1).normal(size=500)
        a, b = _filled(seq), _filled(seq)
        assert a.cusum >= 0
        assert a.to_dict() == b.to_dict()

    def test_false_alarm_rate(self):
        rng = np.random.default_rng(1)
        triggers, runs = 0, 20
        for _ in range(runs):
            state = ConformalState()
            for v in rng.normal(size=10 ** 4):
                observe(v, 0.0, state)
                if state.triggered:
                    triggers += 1
                    recalibrate_on_change(state)
        assert triggers / runs <= 1.0

    def test_mean_shift_detected(self):
        rng = np.random.default_rng(2)
        detected = 0
        for _ in range(1000):
            state = _filled(rng.normal(size=100))
            for v in rng.normal(size=50) + 5.0:
                observe(v, 0.0, state)
                if state.triggered:
                    detected += 1
                    break
        assert detected >= 990

    def test_forecast_count_checked(self):
        with pytest.raises(ConfigurationError):
            observe(1.0, [0.0, 1.0], ConformalState())


class TestRecalibrate:
    def _triggered(self):
        state = _filled(np.random.default_rng(3).normal(size=100))
        while not state.triggered:
            observe(10.0, 0.0, state)
        return state

    def test_clears_buffers(self):
        state = recalibrate_on_change(self._triggered(), timestamp="2024-01-01T00:00:00Z")
        assert state.n_residuals() == 0 and state.cusum == 0.0
        assert state.events[-1]["timestamp"] == "2024-01-01T00:00:00Z"
        assert conformal_adjust(2.0, state).flags == ("uncalibrated",)
        for _ in range(10):
            observe(1.0, 0.0, state)
        assert conformal_adjust(2.0, state).calibrated

    def test_without_trigger_warns(self):
        state = _filled([1.0] * 20)
        before = state.to_dict()
        with pytest.warns(CalibrationWarning):
            recalibrate_on_change(state)
        assert state.to_dict() == before

    def test_coverage_recovers_after_shift(self):
        rng = np.random.default_rng(4)
        coverages = []
        for _ in range(20):
            state = _filled(rng.normal(size=300))
            while not state.triggered:
                observe(rng.normal() * 2 + 4, 0.0, state)
            recalibrate_on_change(state)
            for v in rng.normal(size=256) * 2 + 4:
                observe(v, 0.0, state)
            held = rng.normal(size=500) * 2 + 4
            coverages.append(np.mean(held <= conformal_adjust(0.0, state).value))
        assert abs(np.mean(coverages) - 0.9) <= 0.03


class TestCheckpoint:
    def test_round_trip(self):
        state = _filled(np.random.default_rng(5).normal(size=50), levels=(0.1, 0.5, 0.9))
        doc = json.loads(json.dumps(state.to_dict()))
        again = ConformalState.from_dict(doc)
        assert again.to_dict() == state.to_dict()
        assert conformal_adjust(0.0, again, 0.9) == conformal_adjust(0.0, state, 0.9)

    def test_negative_cusum_rejected(self):
        doc = ConformalState().to_dict()
        doc["cusum"] = -1.0
        with pytest.raises(ConfigurationError):
            ConformalState.from_dict(doc)

    def test_multi_level_needs_level(self):
        with pytest.raises(ConfigurationError):
            conformal_adjust(0.0, ConformalState(levels=(0.1, 0.9)))


class TestEstimator:
    def test_fit_predict(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=2000)
        y = x + rng.normal(size=2000)
        cal = ConformalQuantileCalibrator(alpha=0.9).fit(x[:256], y[:256])
        assert np.mean(y[256:] <= cal.predict(x[256:])) == pytest.approx(0.9, abs=0.03)
        assert clone(cal).get_params() == cal.get_params()

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            ConformalQuantileCalibrator().fit([1.0, 2.0], [1.0])
