"""Synthetic recordings with exactly known events, noise and artifacts."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import signal

from .recording import ConfigurationError, Recording, default_channel_names, standard_montage

WAVEFORMS = ("sine", "spike_wave")
ARTIFACT_KINDS = ("EOG", "EMG", "line-noise")
_MAD_SCALE = 1.4826
# spike-wave harmonic mix: (harmonic, relative amplitude, phase)
_SPIKE_WAVE = ((1, 1.0, 0.0), (2, 0.45, math.pi / 2), (3, 0.2, math.pi))


@dataclass(frozen=True)
class EventSpec:
    onset_s: float
    duration_s: float
    frequency_hz: float
    amplitude_uv: float
    channels: tuple
    waveform: str = "sine"
    taper_s: float = 0.05
    channel_gains: tuple | None = None


@dataclass(frozen=True)
class ArtifactSpec:
    kind: str
    onset_s: float
    duration_s: float
    gain: float
    freq_hz: float = 60.0


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian background: total std ``white_sigma_uv`` with ``pink_fraction`` of its variance 1/f."""

    white_sigma_uv: float = 0.0
    pink_fraction: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    duration_s: float
    low_rate_hz: float = 256.0
    high_rate_hz: float | None = None
    channels: tuple = 4
    events: tuple[EventSpec, ...] = ()
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    artifacts: tuple[ArtifactSpec, ...] = ()
    seed: int = 0

    def __post_init__(self):
        channels = self.channels
        if isinstance(channels, int):
            channels = tuple(default_channel_names(channels))
        object.__setattr__(self, "channels", tuple(str(c) for c in channels))
        object.__setattr__(self, "events", tuple(
            e if isinstance(e, EventSpec) else EventSpec(**e) for e in self.events))
        object.__setattr__(self, "artifacts", tuple(
            a if isinstance(a, ArtifactSpec) else ArtifactSpec(**a) for a in self.artifacts))
        if not isinstance(self.noise, NoiseSpec):
            object.__setattr__(self, "noise", NoiseSpec(**self.noise))
        self.validate()

    def validate(self):
        if not self.channels:
            raise ConfigurationError("at least one channel is required")
        if not (self.duration_s > 0 and self.low_rate_hz > 0):
            raise ConfigurationError("duration_s and low_rate_hz must be positive")
        if self.high_rate_hz is not None and self.high_rate_hz <= self.low_rate_hz:
            raise ConfigurationError("high_rate_hz must exceed low_rate_hz")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.noise.white_sigma_uv < 0 or not (0 <= self.noise.pink_fraction <= 1):
            raise ConfigurationError("noise sigma must be >= 0 and pink_fraction in [0, 1]")
        nyq = (self.high_rate_hz or self.low_rate_hz) / 2
        for ev in self.events:
            if ev.onset_s < 0 or ev.duration_s <= 0 or ev.onset_s + ev.duration_s > self.duration_s:
                raise ConfigurationError(f"event {ev} lies outside [0, {self.duration_s}] s")
            if not (0 < ev.frequency_hz < nyq) or ev.amplitude_uv < 0:
                raise ConfigurationError(f"event {ev} has an invalid frequency or amplitude")
            if ev.waveform not in WAVEFORMS:
                raise ConfigurationError(f"unknown waveform {ev.waveform!r}")
            self.channel_indices(ev.channels)
            if ev.channel_gains is not None and len(ev.channel_gains) != len(ev.channels):
                raise ConfigurationError("channel_gains must match the event's channels")
        for art in self.artifacts:
            if art.kind not in ARTIFACT_KINDS:
                raise ConfigurationError(f"unknown artifact kind {art.kind!r}")
            if art.onset_s < 0 or art.duration_s <= 0 or art.onset_s + art.duration_s > self.duration_s:
                raise ConfigurationError(f"artifact {art} lies outside the recording")

    def channel_indices(self, refs: Sequence) -> list[int]:
        out = []
        for ref in refs:
            if isinstance(ref, str):
                if ref not in self.channels:
                    raise ConfigurationError(f"unknown channel {ref!r}")
                out.append(self.channels.index(ref))
            else:
                if not 0 <= int(ref) < len(self.channels):
                    raise ConfigurationError(f"channel index {ref} out of range")
                out.append(int(ref))
        return out

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["channels"] = list(self.channels)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        doc = dict(doc)
        if "noise" in doc and isinstance(doc["noise"], dict):
            doc["noise"] = NoiseSpec(**doc["noise"])
        doc["events"] = tuple(EventSpec(**{**e, "channels": tuple(e["channels"]),
                                           "channel_gains": tuple(e["channel_gains"])
                                           if e.get("channel_gains") is not None else None})
                              for e in doc.get("events", ()))
        doc["artifacts"] = tuple(ArtifactSpec(**a) for a in doc.get("artifacts", ()))
        if isinstance(doc.get("channels"), list):
            doc["channels"] = tuple(doc["channels"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigurationError(f"invalid synth spec: {exc}") from exc


@dataclass(frozen=True)
class GroundTruthEvent:
    event_id: str
    onset_s: float
    duration_s: float
    frequency_hz: float
    amplitude_uv: float
    robust_amplitude_uv: float
    channels: tuple[str, ...]
    waveform: str


@dataclass(frozen=True)
class GroundTruth:
    duration_s: float
    seed: int
    events: tuple[GroundTruthEvent, ...]
    artifacts: tuple[ArtifactSpec, ...] = ()

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "seed": self.seed,
            "events": [dict(asdict(e), channels=list(e.channels)) for e in self.events],
            "artifacts": [asdict(a) for a in self.artifacts],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GroundTruth":
        events = tuple(GroundTruthEvent(**{**e, "channels": tuple(e["channels"])})
                       for e in doc.get("events", []))
        arts = tuple(ArtifactSpec(**a) for a in doc.get("artifacts", []))
        return cls(float(doc["duration_s"]), int(doc.get("seed", 0)), events, arts)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """Unit-variance 1/f noise by spectral shaping of white noise."""
    if n < 2:
        return np.zeros(n)
    spec = np.fft.rfft(rng.standard_normal(n))
    k = np.arange(spec.size)
    spec[0] = 0.0
    spec[1:] /= np.sqrt(k[1:])
    out = np.fft.irfft(spec, n=n)
    std = out.std()
    return out / std if std > 0 else out


def _envelope(t: np.ndarray, onset: float, duration: float, taper: float) -> np.ndarray:
    env = ((t >= onset) & (t < onset + duration)).astype(np.float64)
    taper = min(taper, duration / 2)
    if taper > 0:
        rise = (t >= onset) & (t < onset + taper)
        env[rise] = 0.5 * (1 - np.cos(np.pi * (t[rise] - onset) / taper))
        fall = (t > onset + duration - taper) & (t < onset + duration)
        env[fall] = 0.5 * (1 - np.cos(np.pi * (onset + duration - t[fall]) / taper))
    return env


def event_waveform(ev: EventSpec, t: np.ndarray, phase: float) -> np.ndarray:
    """Unit-gain waveform of ``ev`` sampled at times ``t`` (zero outside the event)."""
    theta = 2 * np.pi * ev.frequency_hz * (t - ev.onset_s) + phase
    if ev.waveform == "sine":
        core = np.sin(theta)
    else:
        core = sum(a * np.sin(h * theta + p) for h, a, p in _SPIKE_WAVE)
    return ev.amplitude_uv * core * _envelope(t, ev.onset_s, ev.duration_s, ev.taper_s)


def robust_amplitude(ev: EventSpec, phase: float, rate_hz: float) -> float:
    """1.4826 * MAD of the clean, untapered waveform over the event support."""
    t = ev.onset_s + np.arange(int(round(ev.duration_s * rate_hz))) / rate_hz
    theta = 2 * np.pi * ev.frequency_hz * (t - ev.onset_s) + phase
    if ev.waveform == "sine":
        core = np.sin(theta)
    else:
        core = sum(a * np.sin(h * theta + p) for h, a, p in _SPIKE_WAVE)
    x = ev.amplitude_uv * core
    return float(_MAD_SCALE * np.median(np.abs(x - np.median(x))))


def _frontal(channels: Sequence[str]) -> list[int]:
    idx = [i for i, c in enumerate(channels) if c.startswith("Fp") or c.startswith("F")]
    return idx or list(range(min(2, len(channels))))


def _artifact_wave(art: ArtifactSpec, t: np.ndarray, rng: np.random.Generator,
                   rate_hz: float) -> np.ndarray:
    inside = (t >= art.onset_s) & (t < art.onset_s + art.duration_s)
    out = np.zeros_like(t)
    if art.kind == "EOG":
        # slow half-cosine excursion; spectral content ~ 1 / duration (0.3-2 Hz for 0.5-3 s)
        u = (t[inside] - art.onset_s) / art.duration_s
        out[inside] = art.gain * 0.5 * (1 - np.cos(2 * np.pi * u))
    elif art.kind == "EMG":
        hi = min(80.0, 0.45 * rate_hz)
        sos = signal.butter(4, (20.0, hi), btype="bandpass", fs=rate_hz, output="sos")
        burst = signal.sosfilt(sos, rng.standard_normal(t.size))
        std = burst[inside].std() if inside.any() else 0.0
        if std > 0:
            out[inside] = art.gain * burst[inside] / std
    else:
        out[inside] = art.gain * np.sin(2 * np.pi * art.freq_hz * t[inside])
    return out


def _render(spec: SynthSpec, rate: float, n: int, phases: list[float],
            with_noise: bool) -> np.ndarray:
    t = np.arange(n) / rate
    data = np.zeros((len(spec.channels), n))
    if with_noise:
        sigma, p = spec.noise.white_sigma_uv, spec.noise.pink_fraction
        for ch in range(len(spec.channels)):
            if sigma == 0:
                continue
            rng = substream(spec.seed, 0, ch)
            white = rng.standard_normal(n)
            pink = pink_noise(rng, n) if p > 0 else 0.0
            data[ch] = sigma * (math.sqrt(1 - p) * white + math.sqrt(p) * pink)
        for a, art in enumerate(spec.artifacts):
            if art.kind != "EMG":
                continue
            wave = _artifact_wave(art, t, substream(spec.seed, 2, a), rate)
            data += wave
    for art in spec.artifacts:
        if art.kind == "EOG":
            data[_frontal(spec.channels)] += _artifact_wave(art, t, None, rate)
        elif art.kind == "line-noise":
            data += _artifact_wave(art, t, None, rate)
    for ev, phase in zip(spec.events, phases):
        wave = event_waveform(ev, t, phase)
        gains = ev.channel_gains or (1.0,) * len(ev.channels)
        for ch, g in zip(spec.channel_indices(ev.channels), gains):
            data[ch] += g * wave
    return data


def synthesize(spec: SynthSpec) -> tuple[Recording, GroundTruth]:
    """Render ``spec`` into a recording plus its exact ground truth.

    The output is a pure function of ``spec``. Stochastic parts (background
    noise, EMG bursts) are drawn at the highest rate from per-channel Philox
    substreams; when a high-rate stream is requested the low-rate stream
    receives them by polyphase resampling, while deterministic parts (events,
    EOG, line noise) are evaluated exactly on each grid. Samples are rounded
    to float32 precision so the on-disk container round-trips losslessly.
    """
    phases = [float(substream(spec.seed, 1, i).uniform(0, 2 * np.pi)) for i in range(len(spec.events))]
    n_low = int(round(spec.duration_s * spec.low_rate_hz))
    if spec.high_rate_hz is None:
        low = _render(spec, spec.low_rate_hz, n_low, phases, with_noise=True)
        high = None
    else:
        n_high = int(round(spec.duration_s * spec.high_rate_hz))
        high = _render(spec, spec.high_rate_hz, n_high, phases, with_noise=True)
        stochastic = high - _render(spec, spec.high_rate_hz, n_high, phases, with_noise=False)
        ratio = Fraction(spec.low_rate_hz / spec.high_rate_hz).limit_denominator(1000)
        low_noise = signal.resample_poly(stochastic, ratio.numerator, ratio.denominator, axis=-1)
        low_noise = low_noise[:, :n_low]
        if low_noise.shape[1] < n_low:
            low_noise = np.pad(low_noise, ((0, 0), (0, n_low - low_noise.shape[1])))
        low = _render(spec, spec.low_rate_hz, n_low, phases, with_noise=False) + low_noise
        high = high.astype(np.float32).astype(np.float64)
    low = low.astype(np.float32).astype(np.float64)
    rec = Recording(
        channels=spec.channels, low_rate_hz=spec.low_rate_hz, samples_low=low,
        montage=standard_montage(spec.channels), high_rate_hz=spec.high_rate_hz,
        samples_high=high, notes=(f"synthesized seed={spec.seed}",),
    )
    truth_rate = spec.high_rate_hz or spec.low_rate_hz
    events = tuple(
        GroundTruthEvent(
            event_id=f"e{i + 1}", onset_s=ev.onset_s, duration_s=ev.duration_s,
            frequency_hz=ev.frequency_hz, amplitude_uv=ev.amplitude_uv,
            robust_amplitude_uv=robust_amplitude(ev, ph, truth_rate),
            channels=tuple(spec.channels[c] for c in spec.channel_indices(ev.channels)),
            waveform=ev.waveform,
        )
        for i, (ev, ph) in enumerate(zip(spec.events, phases))
    )
    return rec, GroundTruth(spec.duration_s, int(spec.seed), events, spec.artifacts)
