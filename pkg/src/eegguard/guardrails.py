"""Exact clinical measurements with provenance (the frozen slots).

Every measurement is computed by deterministic signal processing, rounded
to a fixed decimal text that the report layer copies verbatim, and tagged
with enough provenance to recompute it bit for bit.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .recording import ConfigurationError, MontageGraph, Recording
from .spectral import Psd, bandpower_orthonormal, padded_nfft, segment_layout, spectral_peak, welch_psd

ALGORITHM_VERSION = f"eegguard-{__version__}"
MAD_SCALE = 1.4826

UNITS = {
    "frequency_hz": "Hz",
    "duration_s": "s",
    "onset_s": "s",
    "amplitude_uv": "µV",
    "lateralization_index": "index",
}
DECIMALS = {
    "frequency_hz": 1,
    "duration_s": 1,
    "onset_s": 1,
    "amplitude_uv": 0,
    "lateralization_index": 2,
}


class Abstention(Exception):
    """A measurement declined because its input carries no usable evidence."""

    def __init__(self, kind: str, reason: str):
        super().__init__(f"{kind}: {reason}")
        self.kind = kind
        self.reason = reason


def canonical_text(kind: str, value: float) -> str:
    """Fixed-decimal text for ``value`` (round half to even, no negative zero)."""
    places = DECIMALS[kind]
    quantum = Decimal(1).scaleb(-places)
    text = str(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_EVEN))
    if text.startswith("-") and Decimal(text) == 0:
        text = text[1:]
    return text


def logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x)) if x > -700 else 0.0


@dataclass(frozen=True)
class Provenance:
    """How a value was obtained: method, time window, channels and parameters."""

    method: str
    window: tuple[float, float]
    channels: tuple[int, ...]
    parameters: Mapping[str, Any]
    algorithm_version: str = ALGORITHM_VERSION

    def __post_init__(self):
        object.__setattr__(self, "window", (float(self.window[0]), float(self.window[1])))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.method or not self.channels or not self.parameters or not self.algorithm_version:
            raise ConfigurationError("provenance fields must all be non-empty")
        if not self.window[1] > self.window[0]:
            raise ConfigurationError(f"provenance window {self.window} is empty")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "window": list(self.window),
            "channels": list(self.channels),
            "parameters": json.loads(json.dumps(dict(self.parameters), sort_keys=True)),
            "algorithm_version": self.algorithm_version,
        }

    @property
    def provenance_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return "p-" + hashlib.sha256(blob).hexdigest()[:12]

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Provenance":
        return cls(doc["method"], tuple(doc["window"]), tuple(doc["channels"]),
                   dict(doc["parameters"]), doc.get("algorithm_version", ALGORITHM_VERSION))


@dataclass(frozen=True)
class FrozenMeasurement:
    """An immutable clinical value.

    ``value`` always equals ``float(canonical_text)``; the unrounded result is
    kept in ``raw_value``. Range plausibility is *not* enforced here (see
    :func:`check_plausibility`), so corrupted values can still be represented.
    """

    kind: str
    value: float
    confidence: float
    provenance: Provenance
    canonical_text: str
    raw_value: float
    interval: tuple[float, float] | None = None
    unit: str = field(default="")

    def __post_init__(self):
        if self.kind not in UNITS:
            raise ConfigurationError(f"unknown measurement kind {self.kind!r}")
        object.__setattr__(self, "unit", UNITS[self.kind])
        if float(self.canonical_text) != self.value or canonical_text(self.kind, self.value) != self.canonical_text:
            raise ConfigurationError(
                f"canonical text {self.canonical_text!r} does not round-trip to {self.value!r}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ConfigurationError("confidence must lie in [0, 1]")
        if self.interval is not None:
            lo, hi = float(self.interval[0]), float(self.interval[1])
            if not lo <= self.value <= hi:
                raise ConfigurationError(f"interval {self.interval} excludes value {self.value}")
            object.__setattr__(self, "interval", (lo, hi))

    @classmethod
    def freeze(cls, kind: str, raw_value: float, confidence: float, provenance: Provenance,
               interval: tuple[float, float] | None = None) -> "FrozenMeasurement":
        text = canonical_text(kind, raw_value)
        return cls(kind, float(text), float(confidence), provenance, text, float(raw_value), interval)

    @property
    def provenance_id(self) -> str:
        return self.provenance.provenance_id

    def to_dict(self) -> dict:
        """The report-schema ``measurement`` object."""
        return {
            "value": self.value,
            "text": self.canonical_text,
            "unit": self.unit,
            "confidence": self.confidence,
            "interval": list(self.interval) if self.interval is not None else None,
            "provenance_id": self.provenance_id,
        }


# -- frequency ---------------------------------------------------------------

def dominant_frequency(psd: Psd, band: tuple[float, float], *, window: tuple[float, float] | None = None,
                       channels: Sequence[int] = (0,), extra: Mapping | None = None) -> FrozenMeasurement:
    """Arg-max of the PSD in ``band`` with log-parabolic sub-bin refinement.

    Raises
    ------
    Abstention
        If the PSD is identically zero in the band.
    """
    freq, _, prominence = spectral_peak(psd, band)
    if not math.isfinite(freq):
        raise Abstention("frequency_hz", "no spectral power in band")
    if window is None:
        window = (0.0, psd.segment_samples / psd.rate_hz)
    params = {
        "segments": psd.segment_count, "overlap": psd.overlap, "window_kind": psd.window_kind,
        "nfft": psd.nfft, "band": [float(band[0]), float(band[1])],
        "refinement": "log-parabolic", "channel_reduce": "mean_psd",
    }
    params.update(extra or {})
    prov = Provenance("welch_dominant_frequency", window, channels, params)
    conf = logistic((min(prominence, 60.0) - 6.0) / 3.0)
    half = psd.resolution_hz / 2
    text_value = float(canonical_text("frequency_hz", freq))
    return FrozenMeasurement.freeze("frequency_hz", freq, conf, prov,
                                    interval=(text_value - half, text_value + half))


def frequency_from_crop(crop: np.ndarray, rate_hz: float, band: tuple[float, float],
                        segments: int = 8, overlap: float = 0.5, grid_hz: float = 0.05,
                        **kwargs) -> FrozenMeasurement:
    """Welch PSD of a (channels x samples) crop, then :func:`dominant_frequency`."""
    seg_len, _ = segment_layout(crop.shape[-1], segments, overlap)
    psd = welch_psd(crop, rate_hz, segments, overlap, nfft=padded_nfft(seg_len, rate_hz, grid_hz))
    return dominant_frequency(psd, band, **kwargs)


# -- duration ----------------------------------------------------------------

@dataclass(frozen=True)
class HysteresisConfig:
    """Envelope hysteresis settings.

    Thresholds default to ``baseline + high_mads * spread`` and
    ``baseline + low_mads * spread`` where baseline and spread are the median
    and 1.4826 * MAD of the envelope. Explicit ``t_high``/``t_low`` override.
    """

    subwindow_s: float = 0.25
    steps_per_subwindow: int = 8
    high_mads: float = 4.0
    low_mads: float = 2.0
    merge_gap_s: float = 0.5
    t_high: float | None = None
    t_low: float | None = None


def rms_envelope(x: np.ndarray, rate_hz: float, subwindow_s: float, step: int) -> tuple[np.ndarray, int]:
    """Sliding RMS over ``subwindow_s`` pooled across rows; returns ``(env, width)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    width = max(1, int(round(subwindow_s * rate_hz)))
    if x.shape[1] < width:
        raise Abstention("duration_s", "window shorter than one envelope sub-window")
    power = np.mean(x * x, axis=0)
    csum = np.concatenate(([0.0], np.cumsum(power)))
    starts = np.arange(0, x.shape[1] - width + 1, step)
    ms = (csum[starts + width] - csum[starts]) / width
    return np.sqrt(np.maximum(ms, 0.0)), width


def envelope_baseline(x: np.ndarray, rate_hz: float, subwindow_s: float = 0.25) -> tuple[float, float]:
    """Median and 1.4826 * MAD of non-overlapping sub-window RMS values."""
    width = max(1, int(round(subwindow_s * rate_hz)))
    env, _ = rms_envelope(x, rate_hz, subwindow_s, width)
    med = float(np.median(env))
    return med, float(MAD_SCALE * np.median(np.abs(env - med)))


def hysteresis_thresholds(env: np.ndarray, cfg: HysteresisConfig,
                          baseline: tuple[float, float] | None) -> tuple[float, float]:
    if cfg.t_high is not None and cfg.t_low is not None:
        t_high, t_low = float(cfg.t_high), float(cfg.t_low)
    else:
        if baseline is None:
            med = float(np.median(env))
            spread = float(MAD_SCALE * np.median(np.abs(env - med)))
        else:
            med, spread = baseline
        # a noiseless baseline has zero spread; keep the thresholds distinct
        spread = max(spread, 0.01 * (float(env.max()) - med), 1e-12)
        t_high, t_low = med + cfg.high_mads * spread, med + cfg.low_mads * spread
    if not t_low < t_high:
        raise ConfigurationError("hysteresis needs t_low < t_high")
    return t_high, t_low


def hysteresis_segments(env: np.ndarray, t_high: float, t_low: float) -> list[tuple[int, int]]:
    """Index runs ``[start, stop)`` entered above ``t_high`` and left below ``t_low``."""
    runs, i, n = [], 0, env.size
    while i < n:
        if env[i] > t_high:
            j = i
            while j < n and env[j] >= t_low:
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


def hysteresis_event(x, rate_hz: float, cfg: HysteresisConfig = HysteresisConfig(),
                     baseline: tuple[float, float] | None = None) -> dict:
    """Longest merged hysteresis event in ``x``, times relative to the first sample.

    Onset is the trailing edge of the first sub-window whose RMS exceeds
    ``t_high``; offset is the leading edge of the first sub-window whose RMS
    falls below ``t_low``. Events closer than ``merge_gap_s`` are merged.
    """
    step = max(1, int(round(cfg.subwindow_s * rate_hz / cfg.steps_per_subwindow)))
    env, width = rms_envelope(x, rate_hz, cfg.subwindow_s, step)
    t_high, t_low = hysteresis_thresholds(env, cfg, baseline)
    runs = hysteresis_segments(env, t_high, t_low)
    if not runs:
        raise Abstention("duration_s", "envelope never exceeds the high threshold")
    n_samples = np.atleast_2d(x).shape[-1]
    events = []
    for i, j in runs:
        start = (i * step + width) / rate_hz
        stop = (j * step) / rate_hz if j < env.size else n_samples / rate_hz
        stop = max(stop, start)
        peak = float(env[i:j].max())
        if events and start - events[-1][1] < cfg.merge_gap_s:
            prev = events[-1]
            events[-1] = (prev[0], max(prev[1], stop), max(prev[2], peak))
        else:
            events.append((start, stop, peak))
    start, stop, peak = max(events, key=lambda e: (e[1] - e[0], -e[0]))
    if stop <= start:
        raise Abstention("duration_s", "event shorter than envelope resolution")
    return {"start_s": start, "end_s": stop, "peak_env": peak, "t_high": t_high, "t_low": t_low,
            "step": step, "width": width}


def _hysteresis_params(cfg: HysteresisConfig, ev: dict) -> dict:
    return {"subwindow_s": cfg.subwindow_s, "steps_per_subwindow": cfg.steps_per_subwindow,
            "t_high": ev["t_high"], "t_low": ev["t_low"], "merge_gap_s": cfg.merge_gap_s}


def event_timing(x, rate_hz: float, cfg: HysteresisConfig = HysteresisConfig(),
                 baseline: tuple[float, float] | None = None, *, window_start_s: float = 0.0,
                 channels: Sequence[int] = (0,), extra: Mapping | None = None
                 ) -> tuple[FrozenMeasurement, FrozenMeasurement]:
    """Onset (absolute seconds) and duration of the dominant hysteresis event."""
    ev = hysteresis_event(x, rate_hz, cfg, baseline)
    n = np.atleast_2d(x).shape[-1]
    window = (window_start_s, window_start_s + n / rate_hz)
    params = _hysteresis_params(cfg, ev)
    params.update(extra or {})
    margin_db = 20.0 * math.log10(ev["peak_env"] / ev["t_high"]) if ev["t_high"] > 0 else 60.0
    conf = logistic((min(margin_db, 60.0) - 3.0) / 2.0)
    onset = FrozenMeasurement.freeze("onset_s", window_start_s + ev["start_s"], conf,
                                     Provenance("hysteresis_onset", window, channels, params))
    duration = FrozenMeasurement.freeze("duration_s", ev["end_s"] - ev["start_s"], conf,
                                        Provenance("hysteresis_duration", window, channels, params))
    return onset, duration


def event_duration(x, rate_hz: float, cfg: HysteresisConfig = HysteresisConfig(),
                   baseline: tuple[float, float] | None = None, **kwargs) -> FrozenMeasurement:
    """Duration (s) of the longest merged hysteresis event in ``x``."""
    return event_timing(x, rate_hz, cfg, baseline, **kwargs)[1]


def span_timing(t_start_s: float, t_end_s: float, *, channels: Sequence[int] = (0,),
                extra: Mapping | None = None, confidence: float = 0.3
                ) -> tuple[FrozenMeasurement, FrozenMeasurement]:
    """Onset and duration taken directly from a detector span, for when hysteresis abstains."""
    window = (float(t_start_s), float(t_end_s))
    params = {"source": "gate_core"}
    params.update(extra or {})
    onset = FrozenMeasurement.freeze("onset_s", window[0], confidence,
                                     Provenance("span_onset", window, channels, params))
    duration = FrozenMeasurement.freeze("duration_s", window[1] - window[0], confidence,
                                        Provenance("span_duration", window, channels, params))
    return onset, duration


# -- amplitude ---------------------------------------------------------------

def robust_amplitude(x) -> float:
    """1.4826 * MAD; for 2-D input the median over rows of the per-row values."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ConfigurationError("amplitude of an empty crop")
    if x.ndim == 1:
        return float(MAD_SCALE * np.median(np.abs(x - np.median(x))))
    med = np.median(x, axis=-1, keepdims=True)
    return float(np.median(MAD_SCALE * np.median(np.abs(x - med), axis=-1)))


def event_amplitude(x, method: str = "robust_mad", *, window: tuple[float, float] | None = None,
                    channels: Sequence[int] = (0,), rate_hz: float | None = None,
                    extra: Mapping | None = None) -> FrozenMeasurement:
    """Robust amplitude in uV of an event crop."""
    if method != "robust_mad":
        raise ConfigurationError(f"unknown amplitude method {method!r}")
    value = robust_amplitude(x)
    if window is None:
        n = np.atleast_2d(x).shape[-1]
        window = (0.0, n / rate_hz if rate_hz else float(n))
    params = {"estimator": "1.4826*MAD", "channel_reduce": "median"}
    params.update(extra or {})
    return FrozenMeasurement.freeze("amplitude_uv", value, 0.9,
                                    Provenance("robust_mad_amplitude", window, channels, params))


# -- lateralization ----------------------------------------------------------

def asymmetry_index(p_left: float, p_right: float) -> float:
    total = p_left + p_right
    if total <= 0:
        raise Abstention("lateralization_index", "no band power in either hemisphere")
    return (p_left - p_right) / total


def lateralization(crop, rate_hz: float, band: tuple[float, float], montage: MontageGraph, *,
                   window: tuple[float, float] | None = None,
                   extra: Mapping | None = None) -> FrozenMeasurement:
    """Hemispheric band-power asymmetry ``(P_L - P_R) / (P_L + P_R)``.

    ``crop`` holds every montage channel (rows in node order). Midline
    channels are ignored; ``P_side`` is the mean band power over that side.
    """
    crop = np.atleast_2d(np.asarray(crop, dtype=np.float64))
    left, right = montage.side("left"), montage.side("right")
    if not left or not right:
        raise ConfigurationError("lateralization needs at least one left and one right channel")
    if crop.shape[0] != montage.n_nodes:
        raise ConfigurationError("crop rows must match montage nodes")
    power = [bandpower_orthonormal(row, rate_hz, band)[0] for row in crop]
    p_left = float(np.mean([power[i] for i in left]))
    p_right = float(np.mean([power[i] for i in right]))
    index = asymmetry_index(p_left, p_right)
    if window is None:
        window = (0.0, crop.shape[1] / rate_hz)
    params = {"band": [float(band[0]), float(band[1])], "power": "orthonormal_dft",
              "left": left, "right": right}
    params.update(extra or {})
    return FrozenMeasurement.freeze("lateralization_index", index, 0.8,
                                    Provenance("hemispheric_power_asymmetry", window, left + right, params))


# -- plausibility ------------------------------------------------------------

class Verdict(enum.Enum):
    PASS = "pass"
    RE_MEASURE = "re_measure"
    ABSTAIN = "abstain"


def violations(m: FrozenMeasurement) -> list[str]:
    """Physiological plausibility problems with ``m`` (empty when fine)."""
    v = m.value
    out = []
    if not math.isfinite(v):
        return ["non-finite value"]
    if m.kind == "frequency_hz":
        if not 0.5 <= v <= 80.0:
            out.append(f"frequency {v} Hz outside [0.5, 80]")
        band = m.provenance.parameters.get("band")
        if band is not None and not band[0] <= v <= band[1]:
            out.append(f"frequency {v} Hz outside analysis band {band}")
    elif m.kind == "duration_s" and not v > 0:
        out.append(f"duration {v} s not positive")
    elif m.kind == "amplitude_uv" and v < 0:
        out.append(f"amplitude {v} uV negative")
    elif m.kind == "lateralization_index" and not -1.0 <= v <= 1.0:
        out.append(f"lateralization {v} outside [-1, 1]")
    elif m.kind == "onset_s" and v < 0:
        out.append(f"onset {v} s negative")
    return out


def check_plausibility(m: FrozenMeasurement, attempt: int = 1) -> Verdict:
    """Pass, ask for one re-measurement, or abstain on a repeated violation."""
    if not violations(m):
        return Verdict.PASS
    return Verdict.RE_MEASURE if attempt <= 1 else Verdict.ABSTAIN


# -- provenance replay -------------------------------------------------------

def reexecute(prov: Provenance, rec: Recording) -> float:
    """Recompute the raw value described by ``prov`` from ``rec``.

    ``rec`` is the recording as ingested; preprocessing recorded in the
    parameters is re-applied before cropping.
    """
    from .preprocessing import preprocess

    p = dict(prov.parameters)
    pre = p.get("preprocess")
    if pre is not None:
        rec = preprocess(rec, pre["notch_hz"], tuple(pre["band"]))
    stream = p.get("stream", "low")
    _, rate = rec.stream(stream)
    t0, t1 = prov.window
    if prov.method == "welch_dominant_frequency":
        crop = rec.crop(stream, t0, t1, prov.channels)
        psd = welch_psd(crop, rate, p["segments"], p["overlap"], nfft=p["nfft"], window=p["window_kind"])
        return spectral_peak(psd, tuple(p["band"]))[0]
    if prov.method in ("hysteresis_duration", "hysteresis_onset"):
        crop = rec.crop(stream, t0, t1, prov.channels)
        cfg = HysteresisConfig(p["subwindow_s"], p["steps_per_subwindow"], merge_gap_s=p["merge_gap_s"],
                               t_high=p["t_high"], t_low=p["t_low"])
        ev = hysteresis_event(crop, rate, cfg)
        return t0 + ev["start_s"] if prov.method == "hysteresis_onset" else ev["end_s"] - ev["start_s"]
    if prov.method == "span_onset":
        return t0
    if prov.method == "span_duration":
        return t1 - t0
    if prov.method == "robust_mad_amplitude":
        return robust_amplitude(rec.crop(stream, t0, t1, prov.channels))
    if prov.method == "hemispheric_power_asymmetry":
        crop = rec.crop(stream, t0, t1)
        band = tuple(p["band"])
        power = [bandpower_orthonormal(row, rate, band)[0] for row in crop]
        return asymmetry_index(float(np.mean([power[i] for i in p["left"]])),
                               float(np.mean([power[i] for i in p["right"]])))
    raise ConfigurationError(f"cannot re-execute method {prov.method!r}")
