"""Online conformal adjustment of forecast quantiles with change-point resets.

A :class:`ConformalState` keeps, for each quantile level, a ring buffer of
residuals ``y - q_hat``. The adjusted quantile is ``q_hat`` plus an order
statistic of that buffer. A one-sided upper CUSUM on standardized residuals
flags regime shifts; :func:`recalibrate_on_change` then clears the buffers.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .recording import ConfigurationError

MIN_RESIDUALS = 10


class CalibrationWarning(UserWarning):
    """Recalibration requested without a change-point trigger."""


def order_statistic(residuals, level: float) -> float:
    """Value at sorted position ``ceil((n + 1) * level)``, clamped to ``[1, n]`` (1-based)."""
    r = np.sort(np.asarray(residuals, dtype=np.float64))
    n = r.size
    if n == 0:
        raise ConfigurationError("no residuals")
    # round before ceil so that e.g. 101 * 0.9 does not land on 90.00000000000001
    idx = math.ceil(round((n + 1) * level, 9))
    return float(r[min(max(idx, 1), n) - 1])


@dataclass(frozen=True)
class AdjustedQuantile:
    value: float
    adjustment: float
    calibrated: bool
    n_residuals: int

    @property
    def flags(self) -> tuple[str, ...]:
        return () if self.calibrated else ("uncalibrated",)


class ConformalState:
    """Residual buffers, adjustments and CUSUM statistic for one recording.

    Parameters
    ----------
    levels : sequence of float
        Quantile levels tracked; each also serves as the target coverage of
        its adjusted quantile.
    n_cal : int
        Ring-buffer capacity.
    cusum_k, cusum_h : float
        Reference value and decision threshold, in standard deviations.
    monitor_level : float, optional
        Level whose residuals feed the CUSUM; defaults to the median level
        when tracked, else the first.
    """

    def __init__(self, levels: Sequence[float] = (0.9,), n_cal: int = 256, cusum_k: float = 0.5,
                 cusum_h: float = 8.0, monitor_level: float | None = None,
                 min_residuals: int = MIN_RESIDUALS):
        levels = tuple(float(a) for a in levels)
        if not levels or not all(0 < a < 1 for a in levels):
            raise ConfigurationError("levels must lie in (0, 1)")
        if n_cal < 1 or min_residuals < 1:
            raise ConfigurationError("n_cal and min_residuals must be positive")
        if not (cusum_k >= 0 and cusum_h > 0):
            raise ConfigurationError("cusum_k must be >= 0 and cusum_h > 0")
        self.levels = levels
        self.n_cal = int(n_cal)
        self.cusum_k = float(cusum_k)
        self.cusum_h = float(cusum_h)
        self.min_residuals = int(min_residuals)
        if monitor_level is None:
            monitor_level = 0.5 if 0.5 in levels else levels[0]
        if monitor_level not in levels:
            raise ConfigurationError("monitor_level must be one of levels")
        self.monitor_level = float(monitor_level)
        self.buffers = {a: deque(maxlen=self.n_cal) for a in levels}
        self.adjustments = {a: 0.0 for a in levels}
        self.cusum = 0.0
        self.n_observed = 0
        self.events: list[dict] = []

    # -- queries --
    @property
    def triggered(self) -> bool:
        return self.cusum >= self.cusum_h

    def n_residuals(self, level: float | None = None) -> int:
        return len(self.buffers[self._level(level)])

    def calibrated(self, level: float | None = None) -> bool:
        return self.n_residuals(level) >= self.min_residuals

    def _level(self, level):
        if level is None:
            if len(self.levels) != 1:
                raise ConfigurationError("level required when several are tracked")
            return self.levels[0]
        level = float(level)
        if level not in self.buffers:
            raise ConfigurationError(f"level {level} not tracked")
        return level

    def _recompute(self, level):
        buf = self.buffers[level]
        self.adjustments[level] = order_statistic(buf, level) if len(buf) >= self.min_residuals else 0.0

    # -- serialization --
    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels), "n_cal": self.n_cal, "cusum_k": self.cusum_k,
            "cusum_h": self.cusum_h, "monitor_level": self.monitor_level,
            "min_residuals": self.min_residuals, "cusum": self.cusum, "n_observed": self.n_observed,
            "residuals": {repr(a): list(self.buffers[a]) for a in self.levels},
            "events": [dict(e) for e in self.events],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ConformalState":
        state = cls(doc["levels"], doc["n_cal"], doc["cusum_k"], doc["cusum_h"],
                    doc.get("monitor_level"), doc.get("min_residuals", MIN_RESIDUALS))
        for key, values in doc.get("residuals", {}).items():
            level = state._level(float(key))
            state.buffers[level].extend(float(v) for v in values)
            state._recompute(level)
        state.cusum = float(doc.get("cusum", 0.0))
        if state.cusum < 0:
            raise ConfigurationError("CUSUM statistic must be non-negative")
        state.n_observed = int(doc.get("n_observed", 0))
        state.events = [dict(e) for e in doc.get("events", [])]
        return state

    def snapshot(self) -> "ConformalState":
        return ConformalState.from_dict(self.to_dict())


def conformal_adjust(q_hat: float, state: ConformalState, level: float | None = None) -> AdjustedQuantile:
    """Shift ``q_hat`` by the buffered residual order statistic.

    Below ``state.min_residuals`` residuals the forecast passes through
    unchanged and the result is flagged uncalibrated.
    """
    level = state._level(level)
    n = len(state.buffers[level])
    if n < state.min_residuals:
        return AdjustedQuantile(float(q_hat), 0.0, False, n)
    adj = state.adjustments[level]
    return AdjustedQuantile(float(q_hat) + adj, adj, True, n)


def observe(y: float, q_hat, state: ConformalState) -> ConformalState:
    """Push the residual(s) for a new observation and update the CUSUM.

    ``q_hat`` is a scalar when one level is tracked, otherwise a sequence
    aligned with ``state.levels``. The CUSUM input is the monitored level's
    residual standardized by the buffer contents before the push; it stays
    at rest until that buffer is calibrated.
    """
    q = np.atleast_1d(np.asarray(q_hat, dtype=np.float64))
    if q.size != len(state.levels):
        raise ConfigurationError(f"expected {len(state.levels)} forecasts, got {q.size}")
    y = float(y)
    for level, qk in zip(state.levels, q):
        r = y - float(qk)
        if level == state.monitor_level:
            buf = state.buffers[level]
            if len(buf) >= state.min_residuals:
                arr = np.fromiter(buf, dtype=np.float64, count=len(buf))
                sd = float(arr.std(ddof=1))
                if sd > 0:
                    z = (r - float(arr.mean())) / sd
                    state.cusum = max(0.0, state.cusum + z - state.cusum_k)
        state.buffers[level].append(r)
        state._recompute(level)
    state.n_observed += 1
    return state


def recalibrate_on_change(state: ConformalState, timestamp: str | None = None,
                          context: dict | None = None) -> ConformalState:
    """Clear all buffers and the CUSUM after a trigger, logging the event.

    Without a trigger the state is returned unchanged and a
    :class:`CalibrationWarning` is emitted.
    """
    if not state.triggered:
        warnings.warn("recalibration requested without change-point trigger", CalibrationWarning,
                      stacklevel=2)
        return state
    event = {"event": "recalibration", "step": state.n_observed, "cusum": state.cusum,
             "timestamp": timestamp}
    event.update(context or {})
    state.events.append(event)
    for level in state.levels:
        state.buffers[level].clear()
        state.adjustments[level] = 0.0
    state.cusum = 0.0
    return state


class ConformalQuantileCalibrator(BaseEstimator):
    """Estimator wrapper: ``fit`` seeds the buffer, ``partial_fit`` streams, ``predict`` adjusts.

    ``X`` holds base forecasts ``q_hat`` (shape ``(n,)``) and ``y`` the
    realized values. Change points trigger automatic recalibration when
    ``auto_recalibrate`` is set.
    """

    def __init__(self, alpha: float = 0.9, n_cal: int = 256, cusum_k: float = 0.5,
                 cusum_h: float = 8.0, auto_recalibrate: bool = True):
        self.alpha = alpha
        self.n_cal = n_cal
        self.cusum_k = cusum_k
        self.cusum_h = cusum_h
        self.auto_recalibrate = auto_recalibrate

    def _new_state(self) -> ConformalState:
        return ConformalState((self.alpha,), self.n_cal, self.cusum_k, self.cusum_h)

    def fit(self, X, y):
        self.state_ = self._new_state()
        return self.partial_fit(X, y)

    def partial_fit(self, X, y):
        if not hasattr(self, "state_"):
            self.state_ = self._new_state()
        X = np.asarray(X, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.shape != y.shape:
            raise ConfigurationError("X and y must have the same length")
        for qk, yk in zip(X, y):
            observe(yk, qk, self.state_)
            if self.auto_recalibrate and self.state_.triggered:
                recalibrate_on_change(self.state_)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "state_")
        X = np.asarray(X, dtype=np.float64)
        return X + conformal_adjust(0.0, self.state_).adjustment
