"""Welch power spectral density and orthonormal-coefficient band power."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .recording import ConfigurationError

MIN_SEGMENT_SAMPLES = 8
_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class Psd:
    """One-sided power spectral density in uV^2/Hz on a uniform 0..Nyquist grid."""

    freqs_hz: np.ndarray
    power: np.ndarray
    segment_count: int
    window_kind: str
    overlap: float
    segment_samples: int
    nfft: int
    rate_hz: float

    @property
    def resolution_hz(self) -> float:
        return self.rate_hz / self.nfft

    def total_power(self) -> float:
        return float(np.sum(self.power) * self.resolution_hz)


def segment_layout(n_samples: int, segments: int, overlap: float) -> tuple[int, int]:
    """Segment length and hop so that ``segments`` overlapping segments span ``n_samples``."""
    if segments < 1:
        raise ConfigurationError("segments must be >= 1")
    if not (0.0 <= overlap < 1.0):
        raise ConfigurationError("overlap must lie in [0, 1)")
    seg_len = int(n_samples / (1.0 + (segments - 1) * (1.0 - overlap)))
    while seg_len >= MIN_SEGMENT_SAMPLES:
        hop = seg_len - int(round(seg_len * overlap))
        if hop >= 1 and (segments - 1) * hop + seg_len <= n_samples:
            return seg_len, hop
        seg_len -= 1
    raise ConfigurationError(
        f"window of {n_samples} samples cannot hold {segments} segments of "
        f">= {MIN_SEGMENT_SAMPLES} samples at overlap {overlap}; reduce segments")


def _periodograms(frames: np.ndarray, rate_hz: float, nfft: int, window: np.ndarray) -> np.ndarray:
    frames = frames - frames.mean(axis=-1, keepdims=True)
    spec = np.fft.rfft(frames * window, n=nfft, axis=-1)
    power = (spec.real ** 2 + spec.imag ** 2) / (rate_hz * np.sum(window ** 2))
    if nfft % 2 == 0:
        power[..., 1:-1] *= 2.0
    else:
        power[..., 1:] *= 2.0
    return power


def welch_psd(x, rate_hz: float, segments: int = 8, overlap: float = 0.5,
              nfft: int | None = None, window: str = "hann") -> Psd:
    """Average of ``segments`` windowed periodograms of ``x``.

    Each segment is mean-removed, tapered with a periodic window and
    normalised by the window power, so integrating the PSD returns the mean
    square of the signal. ``nfft`` larger than the segment length evaluates
    the same segment DFTs on a finer grid (zero padding).

    A 2-D ``x`` of shape ``(n_channels, n_samples)`` yields the channel-mean PSD.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] == 0:
        raise ConfigurationError("welch_psd expects a non-empty 1-D or 2-D window")
    seg_len, hop = segment_layout(x.shape[1], segments, overlap)
    nfft = seg_len if nfft is None else int(nfft)
    if nfft < seg_len:
        raise ConfigurationError("nfft must be >= segment length")
    win = signal.get_window(window, seg_len, fftbins=True)
    starts = np.arange(segments) * hop
    frames = np.stack([x[:, s:s + seg_len] for s in starts], axis=1)  # (C, U, L)
    power = _periodograms(frames, rate_hz, nfft, win).mean(axis=(0, 1))
    freqs = np.fft.rfftfreq(nfft, d=1.0 / rate_hz)
    return Psd(freqs, power, segments, window, float(overlap), seg_len, nfft, float(rate_hz))


def padded_nfft(seg_len: int, rate_hz: float, grid_hz: float = 0.05) -> int:
    """Smallest power of two >= seg_len giving a grid spacing of at most ``grid_hz``."""
    target = max(seg_len, int(math.ceil(rate_hz / grid_hz)))
    return 1 << (target - 1).bit_length()


def spectral_peak(psd: Psd, band: tuple[float, float]) -> tuple[float, int, float]:
    """Locate the strongest bin in ``band`` and refine it.

    Returns ``(frequency_hz, bin_index, prominence_db)``. The refinement fits
    a parabola through the log power of the peak bin and its two neighbours.
    Ties resolve to the lowest frequency. Prominence is the peak over the
    median in-band power, in dB.
    """
    lo, hi = band
    mask = (psd.freqs_hz >= lo) & (psd.freqs_hz <= hi)
    if not mask.any():
        raise ConfigurationError(f"band {band} contains no PSD bins")
    idx = np.flatnonzero(mask)
    in_band = psd.power[idx]
    k = int(idx[int(np.argmax(in_band))])
    peak = psd.power[k]
    if peak <= 0:
        return float("nan"), k, float("-inf")
    freq = float(psd.freqs_hz[k])
    if 0 < k < len(psd.power) - 1:
        a, b, c = np.log(np.maximum(psd.power[k - 1:k + 2], _LOG_FLOOR))
        denom = a - 2.0 * b + c
        if denom < 0:
            delta = 0.5 * (a - c) / denom
            freq += float(np.clip(delta, -0.5, 0.5)) * psd.resolution_hz
    median = float(np.median(in_band))
    prominence = 10.0 * math.log10(peak / median) if median > 0 else float("inf")
    return freq, k, prominence


def orthonormal_coefficients(x) -> tuple[np.ndarray, np.ndarray]:
    """Unitary real-DFT coefficients of ``x`` and their energy weights.

    ``sum(weights * |coeffs|**2) == sum(x**2)``: non-DC, non-Nyquist
    coefficients stand for a conjugate pair and carry weight 2.
    """
    x = np.asarray(x, dtype=np.float64)
    coeffs = np.fft.rfft(x, norm="ortho")
    weights = np.full(coeffs.shape, 2.0)
    weights[0] = 1.0
    if x.size % 2 == 0:
        weights[-1] = 1.0
    return coeffs, weights


def bandpower_orthonormal(x, rate_hz: float, band: tuple[float, float],
                          keep_fraction: float = 1.0) -> tuple[float, int]:
    """Band power (mean square, uV^2) from the largest orthonormal coefficients.

    Only the ``ceil(keep_fraction * n_coeffs)`` coefficients of largest
    energy are retained; the band power is read directly from them without
    reconstructing the signal. With ``keep_fraction=1`` this equals the
    time-domain mean square of the ideally band-limited signal.

    Returns
    -------
    power : float
    stored_coeff_count : int
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ConfigurationError("bandpower_orthonormal expects a non-empty 1-D window")
    if not (0.0 < keep_fraction <= 1.0):
        raise ConfigurationError("keep_fraction must lie in (0, 1]")
    coeffs, weights = orthonormal_coefficients(x)
    energy = weights * (coeffs.real ** 2 + coeffs.imag ** 2)
    n_keep = min(energy.size, int(math.ceil(keep_fraction * energy.size)))
    if n_keep < energy.size:
        # stable sort keeps the choice deterministic among equal energies
        order = np.argsort(-energy, kind="stable")
        kept = np.zeros(energy.size, dtype=bool)
        kept[order[:n_keep]] = True
    else:
        kept = np.ones(energy.size, dtype=bool)
    freqs = np.fft.rfftfreq(x.size, d=1.0 / rate_hz)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    return float(np.sum(energy[kept & in_band]) / x.size), int(n_keep)


def sliding_periodograms(x, rate_hz: float, seg_len: int, hop: int) -> tuple[np.ndarray, np.ndarray]:
    """Hann periodograms of every ``seg_len`` segment starting at multiples of ``hop``.

    ``x`` may be 1-D or ``(n_channels, n_samples)``; output has shape
    ``(..., n_segments, n_freqs)``.
    """
    x = np.asarray(x, dtype=np.float64)
    frames = sliding_window_view(x, seg_len, axis=-1)[..., ::hop, :]
    win = signal.get_window("hann", seg_len, fftbins=True)
    return np.fft.rfftfreq(seg_len, d=1.0 / rate_hz), _periodograms(frames, rate_hz, seg_len, win)
