"""End-to-end analysis of one recording: preprocess, gate, measure, calibrate, report."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .calibration import ConformalState, conformal_adjust, observe, recalibrate_on_change
from .config import RunConfig
from .gating import EventGate, EventWindow, crop_high_rate
from .guardrails import (ALGORITHM_VERSION, Abstention, FrozenMeasurement, Verdict, check_plausibility,
                         envelope_baseline, event_amplitude, event_timing, frequency_from_crop,
                         lateralization, span_timing, violations)
from .neural import DetectionHead
from .preprocessing import preprocess
from .recording import ConfigurationError, Recording
from .report import (NarrativeResult, RecordingInfo, ReportSchema, build_schema, generate_narrative)
from .report.schema import Finding


@dataclass
class AnalysisResult:
    report: ReportSchema
    narrative: NarrativeResult
    provenance: dict
    windows: list[EventWindow]
    timings: dict = field(default_factory=dict)

    @property
    def latency_s(self) -> float:
        return self.timings.get("total_s", 0.0)


def _widen(w: EventWindow, pad: float, duration: float) -> EventWindow:
    return replace(w, t_start_s=max(0.0, w.t_start_s - pad), t_end_s=min(duration, w.t_end_s + pad))


class _Measurer:
    """Measurements for the windows of one preprocessed recording."""

    def __init__(self, rec: Recording, cfg: RunConfig):
        self.rec = rec
        self.cfg = cfg
        self.g = cfg.guardrails
        self.hyst = self.g.hysteresis()
        self.stream = "high" if rec.has_high else "low"
        self.base_params = {
            "stream": self.stream,
            "preprocess": {"notch_hz": cfg.preprocess.notch_hz, "band": list(cfg.preprocess.band)},
        }
        if not rec.has_high:
            self.base_params["flags"] = ["low-rate fallback"]
        self._baselines: dict[tuple[int, ...], tuple[float, float]] = {}

    def baseline(self, channels: tuple[int, ...]) -> tuple[float, float]:
        if channels not in self._baselines:
            data, rate = self.rec.stream(self.stream)
            self._baselines[channels] = envelope_baseline(data[list(channels)], rate, self.hyst.subwindow_s)
        return self._baselines[channels]

    def _attempts(self, w: EventWindow, compute, log: list, field_name: str):
        """Run ``compute`` on ``w`` and, if needed, once more on a widened window."""
        windows = [w, _widen(w, self.g.widen_s, self.rec.duration_s)]
        for attempt, win in enumerate(windows, start=1):
            try:
                result = compute(win)
            except (Abstention, ConfigurationError) as exc:
                reason = str(exc)
            else:
                ms = result if isinstance(result, tuple) else (result,)
                problems = [p for m in ms for p in violations(m)]
                verdicts = {check_plausibility(m, attempt) for m in ms}
                if verdicts == {Verdict.PASS}:
                    if attempt > 1:
                        log.append({"field": field_name, "attempt": attempt, "outcome": "pass_after_widening"})
                    return result
                reason = "; ".join(problems)
            outcome = "re_measure" if attempt < len(windows) else "abstain"
            log.append({"field": field_name, "attempt": attempt, "outcome": outcome, "reason": reason})
        return None

    def measure(self, w: EventWindow, montage) -> tuple[dict, list]:
        g, log = self.g, []
        channels = tuple(w.consensus_channels) or tuple(range(self.rec.n_channels))
        band = tuple(g.band)

        def freq(win):
            crop = crop_high_rate(self.rec, win, channels)
            return frequency_from_crop(crop.data, crop.rate_hz, band, g.segments, g.overlap, g.grid_hz,
                                       window=(win.t_start_s, win.t_end_s), channels=channels,
                                       extra=self.base_params)

        def timing(win):
            crop = crop_high_rate(self.rec, win, channels)
            return event_timing(crop.data, crop.rate_hz, self.hyst, self.baseline(channels),
                                window_start_s=win.t_start_s, channels=channels, extra=self.base_params)

        out: dict[str, FrozenMeasurement | None] = {}
        out["dominant_frequency_hz"] = self._attempts(w, freq, log, "dominant_frequency_hz")
        timed = self._attempts(w, timing, log, "duration_s")
        if timed is None:
            timed = span_timing(w.core_start_s, w.core_end_s, channels=channels, extra=self.base_params)
            log.append({"field": "duration_s", "outcome": "span_fallback"})
        onset, duration = timed
        out["onset_s"], out["duration_s"] = onset, duration

        t0, t1 = onset.raw_value, onset.raw_value + duration.raw_value
        trim = g.core_trim_s
        a0, a1 = (t0 + trim, t1 - trim) if t1 - t0 > 2 * trim + g.subwindow_s else (t0, t1)
        event_win = replace(w, t_start_s=max(0.0, t0), t_end_s=min(self.rec.duration_s, t1))

        def amplitude(win):
            lo, hi = (a0, a1) if win is w else (win.t_start_s, win.t_end_s)
            x = self.rec.crop(self.stream, lo, hi, channels)
            if x.size == 0:
                raise Abstention("amplitude_uv", "empty amplitude window")
            return event_amplitude(x, window=(lo, hi), channels=channels, extra=self.base_params)

        def asym(win):
            lo, hi = (event_win.t_start_s, event_win.t_end_s) if win is w else (win.t_start_s, win.t_end_s)
            _, rate = self.rec.stream(self.stream)
            crop = self.rec.crop(self.stream, lo, hi)
            return lateralization(crop, rate, band, montage, window=(lo, hi), extra=self.base_params)

        out["amplitude_uv"] = self._attempts(w, amplitude, log, "amplitude_uv")
        out["lateralization"] = self._attempts(w, asym, log, "lateralization")
        return out, log


def envelope_calibration(rec: Recording, cfg: RunConfig, timestamp: str | None = None) -> dict:
    """Online conformal calibration of a rolling-median envelope forecast.

    Each frame's pooled RMS is forecast as the median of the previous
    ``forecast_window`` frames; the forecast is conformally shifted to the
    configured level, scored, then the residual is observed. CUSUM triggers
    reset the buffers and are logged.
    """
    c = cfg.calibration
    data, rate = rec.samples_low, rec.low_rate_hz
    width = max(1, int(round(c.frame_s * rate)))
    n_frames = data.shape[1] // width
    state = ConformalState((c.alpha,), c.n_cal, c.cusum_k, c.cusum_h, min_residuals=c.min_residuals)
    summary = {"level": c.alpha, "frame_s": c.frame_s, "forecaster": f"rolling_median_{c.forecast_window}",
               "n_frames": int(n_frames), "n_scored": 0, "empirical_coverage": None}
    if n_frames <= c.forecast_window:
        summary.update(recalibrations=[], checkpoint=state.to_dict())
        return summary
    frames = data[:, :n_frames * width].reshape(data.shape[0], n_frames, width)
    env = np.sqrt(np.mean(frames ** 2, axis=(0, 2)))
    hits = scored = 0
    for t in range(c.forecast_window, n_frames):
        q_hat = float(np.median(env[t - c.forecast_window:t]))
        adj = conformal_adjust(q_hat, state)
        if adj.calibrated:
            scored += 1
            hits += env[t] <= adj.value
        observe(env[t], q_hat, state)
        if state.triggered:
            recalibrate_on_change(state, timestamp, {"t_s": t * c.frame_s})
    summary.update(n_scored=scored, empirical_coverage=hits / scored if scored else None,
                   recalibrations=[dict(e) for e in state.events], checkpoint=state.to_dict())
    return summary


def _rate_notes(rec: Recording, cfg: RunConfig) -> list[str]:
    s, notes = cfg.sampling, []
    if not s.low_rate_min_hz <= rec.low_rate_hz <= s.low_rate_max_hz:
        notes.append("low-rate stream outside the expected range")
    if rec.has_high and rec.high_rate_hz < s.high_rate_min_hz:
        notes.append("high-rate stream below the expected minimum")
    if not rec.has_high:
        notes.append("no high-rate stream; measurements use the low-rate stream")
    return notes


def analyze(rec: Recording, cfg: RunConfig | None = None, *, timestamp: str | None = None,
            templates: Mapping | None = None) -> AnalysisResult:
    """Run the full chain on ``rec`` (as ingested, before filtering).

    Deterministic: the only varying output is ``timestamp``, which is copied
    into the provenance entries as given. ``templates`` maps confidence tiers
    to narrative templates (see :func:`template_set_from_dict`).
    """
    cfg = cfg or RunConfig()
    timings = {}
    start = time.perf_counter()
    pre = preprocess(rec, cfg.preprocess.notch_hz, tuple(cfg.preprocess.band))
    timings["preprocess_s"] = time.perf_counter() - start

    t = time.perf_counter()
    gate = EventGate.from_config(cfg.gating).fit(pre)
    windows = gate.predict(pre)
    timings["gating_s"] = time.perf_counter() - t

    t = time.perf_counter()
    measurer = _Measurer(pre, cfg)
    head = DetectionHead.trigger_default()
    findings, attempts, window_docs = [], {}, []
    for i, w in enumerate(windows, start=1):
        event_id = f"ev{i}"
        values, log = measurer.measure(w, rec.montage)
        score = float(head.score(w.trigger.as_array()))
        findings.append(Finding.from_measurements(event_id, values, score))
        attempts[event_id] = log
        window_docs.append({
            "event_id": event_id, "t_start_s": w.t_start_s, "t_end_s": w.t_end_s,
            "core_start_s": w.core_start_s, "core_end_s": w.core_end_s, "oversize": w.oversize,
            "consensus_channels": list(w.consensus_channels),
            "trigger": {"energy_z": w.trigger.energy_z, "kurtosis": w.trigger.kurtosis,
                        "spectral_peak_prominence": w.trigger.spectral_peak_prominence},
            "detection_score": score,
        })
    timings["measure_s"] = time.perf_counter() - t

    t = time.perf_counter()
    calibration = envelope_calibration(pre, cfg, timestamp)
    timings["calibration_s"] = time.perf_counter() - t

    t = time.perf_counter()
    schema = build_schema(findings, RecordingInfo.from_recording(rec), created_at=timestamp)
    narrative = generate_narrative(schema, tiers=tuple(cfg.report.tiers), template_set=templates)
    report = schema.with_narrative(narrative.text).validate()
    timings["report_s"] = time.perf_counter() - t
    timings["total_s"] = time.perf_counter() - start

    provenance = {
        "created_at": timestamp,
        "algorithm_version": ALGORITHM_VERSION,
        "config": cfg.to_dict(),
        "preprocessing": list(pre.notes[len(rec.notes):]),
        "notes": _rate_notes(rec, cfg),
        "windows": window_docs,
        "measurements": [dict(e) for e in report.provenance_log],
        "measurement_attempts": attempts,
        "calibration": calibration,
        "narrative_mask_events": [
            {"position": e.position, "reason": e.reason, "slot": e.slot} for e in narrative.mask_events],
    }
    return AnalysisResult(report, narrative, provenance, windows, timings)
