"""Zero-phase notch and band-pass filtering of recordings."""

from __future__ import annotations

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin

from .recording import ConfigurationError, Recording

NOTCH_Q = 30.0
EDGE_ORDER = 4  # per band edge: two cascaded biquads


def design_filter(rate_hz: float, notch_hz: float | None, band: tuple[float, float]) -> np.ndarray:
    """Second-order sections for notch + high-pass + low-pass at ``rate_hz``.

    Raises ConfigurationError when a cutoff is not below Nyquist.
    """
    lo, hi = float(band[0]), float(band[1])
    nyq = rate_hz / 2.0
    if not (0 < lo < hi < nyq):
        raise ConfigurationError(f"band {band} must satisfy 0 < lo < hi < Nyquist ({nyq:g} Hz)")
    sections = [
        signal.butter(EDGE_ORDER, lo, btype="highpass", fs=rate_hz, output="sos"),
        signal.butter(EDGE_ORDER, hi, btype="lowpass", fs=rate_hz, output="sos"),
    ]
    if notch_hz is not None:
        if not (0 < notch_hz < nyq):
            raise ConfigurationError(f"notch {notch_hz} Hz must lie below Nyquist ({nyq:g} Hz)")
        b, a = signal.iirnotch(notch_hz, NOTCH_Q, fs=rate_hz)
        sections.insert(0, signal.tf2sos(b, a))
    return np.vstack(sections)


def filter_array(x: np.ndarray, rate_hz: float, notch_hz: float | None,
                 band: tuple[float, float]) -> np.ndarray:
    """Forward-backward filter along the last axis."""
    sos = design_filter(rate_hz, notch_hz, band)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n <= 3 * (2 * len(sos) + 1):
        raise ConfigurationError(f"signal of {n} samples is too short to filter")
    # mirror extension over ~2 periods of the high-pass edge; odd extension injects a
    # 2*x[0] step that rings for seconds
    padlen = min(n - 1, max(3 * (2 * len(sos) + 1), int(round(2.0 * rate_hz / band[0]))))
    return signal.sosfiltfilt(sos, x, axis=-1, padtype="even", padlen=padlen)


def preprocess(rec: Recording, notch_hz: float | None = 60.0,
               band: tuple[float, float] = (0.5, 80.0)) -> Recording:
    """Notch + band-pass both streams of ``rec`` with zero phase.

    Parameters
    ----------
    rec : Recording
        Input recording; left untouched.
    notch_hz : float or None
        Mains frequency to suppress (50 or 60), or None to skip the notch.
    band : (lo_hz, hi_hz)
        Pass band. Both edges must lie below the Nyquist frequency of the
        slowest stream.

    Returns
    -------
    Recording
        Filtered copy with a provenance note appended.
    """
    min_rate = rec.low_rate_hz
    if band[1] >= min_rate / 2 or (notch_hz is not None and notch_hz >= min_rate / 2):
        raise ConfigurationError(
            f"cutoffs must lie below Nyquist of the low-rate stream ({min_rate / 2:g} Hz)")
    low = filter_array(rec.samples_low, rec.low_rate_hz, notch_hz, band)
    high = None
    if rec.has_high:
        high = filter_array(rec.samples_high, rec.high_rate_hz, notch_hz, band)
    note = (f"preprocess: notch={notch_hz} Q={NOTCH_Q:g}; "
            f"butterworth order {EDGE_ORDER} band={band[0]:g}-{band[1]:g} Hz; sosfiltfilt")
    return rec.replace(samples_low=low, samples_high=high, notes=rec.notes + (note,))


class NotchBandpassFilter(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`filter_array` for ``(n_channels, n_times)`` arrays.

    Also accepts a :class:`Recording`, in which case :func:`preprocess` is used.
    """

    def __init__(self, rate_hz: float = 256.0, notch_hz: float | None = 60.0,
                 band: tuple[float, float] = (0.5, 80.0)):
        self.rate_hz = rate_hz
        self.notch_hz = notch_hz
        self.band = band

    def fit(self, X=None, y=None):
        self.sos_ = design_filter(self.rate_hz, self.notch_hz, self.band)
        return self

    def transform(self, X):
        if isinstance(X, Recording):
            return preprocess(X, self.notch_hz, self.band)
        return filter_array(X, self.rate_hz, self.notch_hz, self.band)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
