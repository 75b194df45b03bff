"""Candidate event windows on the low-rate stream and their high-rate crops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .recording import ConfigurationError, Recording
from .spectral import sliding_periodograms

MAD_SCALE = 1.4826


@dataclass(frozen=True)
class TriggerFeatures:
    energy_z: float = 0.0
    kurtosis: float = 0.0
    spectral_peak_prominence: float = 0.0

    def maximum(self, other: "TriggerFeatures") -> "TriggerFeatures":
        return TriggerFeatures(max(self.energy_z, other.energy_z), max(self.kurtosis, other.kurtosis),
                               max(self.spectral_peak_prominence, other.spectral_peak_prominence))

    def as_array(self) -> np.ndarray:
        return np.array([self.energy_z, self.kurtosis, self.spectral_peak_prominence])


@dataclass(frozen=True)
class EventWindow:
    """A gated interval in seconds from recording start.

    ``core_start_s``/``core_end_s`` bound the frames that voted; the window
    adds the margins on both sides (clamped to the recording).
    """

    t_start_s: float
    t_end_s: float
    trigger: TriggerFeatures
    consensus_channels: tuple[int, ...]
    core_start_s: float
    core_end_s: float
    oversize: bool = False

    @property
    def length_s(self) -> float:
        return self.t_end_s - self.t_start_s


@dataclass(frozen=True)
class Crop:
    data: np.ndarray
    rate_hz: float
    stream: str
    t_start_s: float
    flags: tuple[str, ...] = field(default=())


@dataclass(frozen=True)
class GatingConfig:
    min_window_s: float = 2.0
    max_window_s: float = 10.0
    margin_s: float = 2.0
    energy_z_threshold: float = 4.0
    kurtosis_threshold: float = 5.0
    peak_prominence_threshold: float = 6.0
    consensus_k: int | None = None
    merge_gap_s: float = 2.0
    frame_s: float = 1.0
    hop_s: float = 0.25
    band: tuple[float, float] = (0.5, 80.0)
    min_consensus_frames: int = 2

    def __post_init__(self):
        values = (self.min_window_s, self.max_window_s, self.margin_s, self.energy_z_threshold,
                  self.kurtosis_threshold, self.peak_prominence_threshold, self.merge_gap_s)
        if not all(math.isfinite(v) for v in values):
            raise ConfigurationError("gating thresholds must be finite")
        if not (0 < self.min_window_s <= self.max_window_s) or self.margin_s < 0:
            raise ConfigurationError("need 0 < min_window_s <= max_window_s and margin_s >= 0")
        if self.consensus_k is not None and self.consensus_k < 1:
            raise ConfigurationError("consensus_k must be >= 1")
        if self.hop_s <= 0 or self.frame_s < self.hop_s:
            raise ConfigurationError("need 0 < hop_s <= frame_s")
        if int(self.min_consensus_frames) != self.min_consensus_frames or self.min_consensus_frames < 1:
            raise ConfigurationError("min_consensus_frames must be a positive integer")

    def resolved_k(self, n_channels: int) -> int:
        if self.consensus_k is not None:
            return int(self.consensus_k)
        return min(n_channels, max(2, math.ceil(n_channels / 8)))


@dataclass(frozen=True)
class FrameFeatures:
    """Per-channel, per-frame gate features; frame ``i`` spans ``[starts_s[i], starts_s[i] + frame_s)``."""

    starts_s: np.ndarray
    frame_s: float
    rms: np.ndarray
    energy_z: np.ndarray
    kurtosis: np.ndarray
    prominence_db: np.ndarray


def _block_sums(x: np.ndarray, hop: int, n_blocks: int) -> list[np.ndarray]:
    blocks = x[:, :n_blocks * hop].reshape(x.shape[0], n_blocks, hop)
    return [np.sum(blocks ** p, axis=-1) for p in (1, 2, 3, 4)]


def _frame_moments(x: np.ndarray, hop: int, per_frame: int):
    n_blocks = x.shape[1] // hop
    n_frames = n_blocks - per_frame + 1
    sums = _block_sums(x, hop, n_blocks)
    width = hop * per_frame
    raw = []
    for s in sums:
        csum = np.concatenate([np.zeros((s.shape[0], 1)), np.cumsum(s, axis=1)], axis=1)
        raw.append((csum[:, per_frame:per_frame + n_frames] - csum[:, :n_frames]) / width)
    m1, m2r, m3r, m4r = raw
    var = np.maximum(m2r - m1 ** 2, 0.0)
    m4 = m4r - 4 * m1 * m3r + 6 * m1 ** 2 * m2r - 3 * m1 ** 4
    with np.errstate(divide="ignore", invalid="ignore"):
        kurt = np.where(var > 1e-12 * np.maximum(m2r, 1e-300), m4 / var ** 2 - 3.0, 0.0)
    return np.sqrt(np.maximum(m2r, 0.0)), kurt, n_frames


def _context_spectra(x: np.ndarray, rate: float, hop: int, per_frame: int, n_frames: int):
    """Mean of the seven half-overlapping 2-hop periodograms around each frame's centre."""
    out = []
    for row in x:
        freqs, segs = sliding_periodograms(row, rate, 2 * hop, hop)  # (S, F)
        n_seg = segs.shape[0]
        csum = np.concatenate([np.zeros((1, segs.shape[1])), np.cumsum(segs, axis=0)])
        i = np.arange(n_frames)
        lo = np.clip(i - 2, 0, n_seg - 1)
        hi = np.clip(i + per_frame + 1, lo + 1, n_seg)
        out.append(((csum[hi] - csum[lo]) / (hi - lo)[:, None]).astype(np.float32))
    return freqs, np.stack(out)


def _smooth_bins(spec: np.ndarray) -> np.ndarray:
    """[1/4, 1/2, 1/4] smoothing along frequency; a Hann main lobe spans these bins anyway."""
    out = 0.5 * spec
    out[..., 1:] += 0.25 * spec[..., :-1]
    out[..., :-1] += 0.25 * spec[..., 1:]
    out[..., 0] += 0.25 * spec[..., 0]
    out[..., -1] += 0.25 * spec[..., -1]
    return out


def _robust_center(values: np.ndarray, axis: int = -1) -> tuple[np.ndarray, np.ndarray]:
    med = np.median(values, axis=axis, keepdims=True)
    spread = MAD_SCALE * np.median(np.abs(values - med), axis=axis, keepdims=True)
    return med, spread


def merge_windows(windows: Sequence[EventWindow], gap_s: float = 0.0) -> list[EventWindow]:
    """Sort and merge windows whose gap is below ``gap_s`` (overlaps always merge)."""
    out: list[EventWindow] = []
    for w in sorted(windows, key=lambda w: (w.t_start_s, w.t_end_s)):
        if out and (w.t_start_s - out[-1].t_end_s < gap_s or w.t_start_s < out[-1].t_end_s):
            prev = out[-1]
            out[-1] = EventWindow(
                prev.t_start_s, max(prev.t_end_s, w.t_end_s), prev.trigger.maximum(w.trigger),
                tuple(sorted(set(prev.consensus_channels) | set(w.consensus_channels))),
                min(prev.core_start_s, w.core_start_s), max(prev.core_end_s, w.core_end_s),
                prev.oversize or w.oversize)
        else:
            out.append(w)
    return out


class EventGate(BaseEstimator):
    """Energy / kurtosis / spectral-peak gate with spatial consensus.

    ``fit`` learns per-channel baselines (median and 1.4826 * MAD of frame RMS,
    median context spectrum) from a preprocessed recording; ``predict`` returns
    the sorted, merged, margin-padded :class:`EventWindow` list.

    Consensus must hold for ``min_consensus_frames`` consecutive hops. Frames
    overlap, so even a short transient stays visible for several hops while a
    lone noise excursion rarely lasts more than one.
    """

    def __init__(self, min_window_s=2.0, max_window_s=10.0, margin_s=2.0, energy_z_threshold=4.0,
                 kurtosis_threshold=5.0, peak_prominence_threshold=6.0, consensus_k=None,
                 merge_gap_s=2.0, frame_s=1.0, hop_s=0.25, band=(0.5, 80.0), min_consensus_frames=2):
        self.min_window_s = min_window_s
        self.max_window_s = max_window_s
        self.margin_s = margin_s
        self.energy_z_threshold = energy_z_threshold
        self.kurtosis_threshold = kurtosis_threshold
        self.peak_prominence_threshold = peak_prominence_threshold
        self.consensus_k = consensus_k
        self.merge_gap_s = merge_gap_s
        self.frame_s = frame_s
        self.hop_s = hop_s
        self.band = band
        self.min_consensus_frames = min_consensus_frames

    @classmethod
    def from_config(cls, cfg: GatingConfig) -> "EventGate":
        return cls(**{k: getattr(cfg, k) for k in cls._get_param_names()})

    def config(self) -> GatingConfig:
        return GatingConfig(**self.get_params())

    def _layout(self, rate: float) -> tuple[int, int]:
        hop = max(1, int(round(self.hop_s * rate)))
        per_frame = max(1, int(round(self.frame_s / self.hop_s)))
        return hop, per_frame

    def _raw_features(self, rec: Recording):
        x, rate = rec.samples_low, rec.low_rate_hz
        hop, per_frame = self._layout(rate)
        if x.shape[1] < hop * (per_frame + 1):
            return None
        rms, kurt, n_frames = _frame_moments(x, hop, per_frame)
        freqs, ctx = _context_spectra(x, rate, hop, per_frame, n_frames)
        return rms, kurt, freqs, ctx, hop, per_frame

    def fit(self, rec: Recording, y=None):
        self.config()  # validates parameters
        raw = self._raw_features(rec)
        self.n_channels_ = rec.n_channels
        self.rate_hz_ = rec.low_rate_hz
        if raw is None:
            self.rms_median_ = np.zeros((rec.n_channels, 1))
            self.rms_spread_ = np.zeros((rec.n_channels, 1))
            self.baseline_spectrum_ = None
            return self
        rms, _, _, ctx, _, _ = raw
        self.rms_median_, self.rms_spread_ = _robust_center(rms)
        self.baseline_spectrum_ = np.median(ctx, axis=1, keepdims=True)
        self._cache = (id(rec), raw)
        return self

    def frame_features(self, rec: Recording) -> FrameFeatures | None:
        check_is_fitted(self, "rms_median_")
        cached = getattr(self, "_cache", None)
        raw = cached[1] if cached is not None and cached[0] == id(rec) else self._raw_features(rec)
        if raw is None or self.baseline_spectrum_ is None:
            return None
        rms, kurt, freqs, ctx, hop, per_frame = raw
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.rms_spread_ > 0, (rms - self.rms_median_) / self.rms_spread_,
                         np.where(rms > self.rms_median_, np.inf, 0.0))
            ratio = _smooth_bins(ctx) / _smooth_bins(self.baseline_spectrum_)
        nyq = self.rate_hz_ / 2
        lo, hi = self.band[0], min(self.band[1], 0.9 * nyq)
        in_band = (freqs >= lo) & (freqs <= hi)
        ratio = np.where(np.isfinite(ratio), ratio, 0.0)[..., in_band]
        with np.errstate(divide="ignore"):
            prominence = 10.0 * np.log10(ratio.max(axis=-1)) if ratio.size else np.zeros_like(rms)
        starts = np.arange(rms.shape[1]) * hop / self.rate_hz_
        return FrameFeatures(starts, hop * per_frame / self.rate_hz_, rms, z, kurt, prominence)

    def predict(self, rec: Recording) -> list[EventWindow]:
        feats = self.frame_features(rec)
        if feats is None:
            return []
        cfg = self.config()
        votes = ((feats.energy_z > cfg.energy_z_threshold)
                 | (feats.kurtosis > cfg.kurtosis_threshold)
                 | (feats.prominence_db > cfg.peak_prominence_threshold))
        active = votes.sum(axis=0) >= cfg.resolved_k(rec.n_channels)
        cores = []
        for i, j in _runs(active):
            if j - i < cfg.min_consensus_frames:
                continue
            voting = votes[:, i:j]
            channels = tuple(int(c) for c in np.flatnonzero(voting.any(axis=1)))
            trig = TriggerFeatures(*(float(np.where(voting, f[:, i:j], -np.inf).max())
                                     for f in (feats.energy_z, feats.kurtosis, feats.prominence_db)))
            t0 = float(feats.starts_s[i])
            t1 = float(feats.starts_s[j - 1] + feats.frame_s)
            cores.append(EventWindow(t0, t1, trig, channels, t0, t1))
        cores = merge_windows(cores, cfg.merge_gap_s)
        duration = rec.duration_s
        padded = []
        for w in cores:
            t0, t1 = w.core_start_s, w.core_end_s
            if t1 - t0 < cfg.min_window_s:
                pad = (cfg.min_window_s - (t1 - t0)) / 2
                t0, t1 = t0 - pad, t1 + pad
            oversize = t1 - t0 > cfg.max_window_s
            start = max(0.0, t0 - cfg.margin_s)
            end = min(duration, t1 + cfg.margin_s)
            padded.append(replace(w, t_start_s=start, t_end_s=end, oversize=oversize))
        return merge_windows(padded, 0.0)

    def fit_predict(self, rec: Recording, y=None) -> list[EventWindow]:
        return self.fit(rec).predict(rec)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def detect_candidates(rec: Recording, cfg: GatingConfig = GatingConfig()) -> list[EventWindow]:
    """Gate a preprocessed recording with a baseline fitted on itself."""
    return EventGate.from_config(cfg).fit_predict(rec)


def crop_high_rate(rec: Recording, w: EventWindow, channels: Sequence[int] | None = None) -> Crop:
    """High-rate samples inside ``w``; falls back to the low-rate stream when absent."""
    if w.t_start_s < 0 or w.t_end_s > rec.duration_s + 1e-9:
        raise ConfigurationError(f"window [{w.t_start_s}, {w.t_end_s}] exceeds the recording")
    if rec.has_high:
        return Crop(rec.crop("high", w.t_start_s, w.t_end_s, channels), rec.high_rate_hz, "high", w.t_start_s)
    return Crop(rec.crop("low", w.t_start_s, w.t_end_s, channels), rec.low_rate_hz, "low", w.t_start_s,
                ("low-rate fallback",))
