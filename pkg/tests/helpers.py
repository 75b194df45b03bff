"""Shared builders for tests: recordings, measurements and schemas."""

from __future__ import annotations

import numpy as np

from eegguard.guardrails import FrozenMeasurement, Provenance
from eegguard.recording import Recording, standard_montage
from eegguard.report import Finding, RecordingInfo, build_schema

CHANNELS_8 = ("Fp1", "Fp2", "C3", "C4", "O1", "O2", "F3", "F4")


def make_recording(samples, rate=256.0, channels=None, high=None, high_rate=None):
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if channels is None:
        channels = tuple(f"Ch{i + 1}" for i in range(samples.shape[0]))
    return Recording(tuple(channels), rate, samples, standard_montage(channels),
                     high_rate_hz=high_rate, samples_high=high)


def measurement(kind, value, confidence=0.9, method="test", window=(0.0, 1.0)):
    prov = Provenance(method, window, (0,), {"source": "test", "kind": kind})
    return FrozenMeasurement.freeze(kind, value, confidence, prov)


def finding(event_id="ev1", onset=10.0, duration=5.0, freq=3.0, amp=42.0, lat=0.25,
            confidence=0.9):
    values = {
        "onset_s": measurement("onset_s", onset, method="onset"),
        "duration_s": measurement("duration_s", duration, method="duration"),
        "dominant_frequency_hz": None if freq is None else measurement("frequency_hz", freq, method="freq"),
        "amplitude_uv": None if amp is None else measurement("amplitude_uv", amp, method="amp"),
        "lateralization": None if lat is None else measurement("lateralization_index", lat, method="lat"),
    }
    return Finding.from_measurements(event_id, values, confidence)


def schema(*findings, duration=600.0):
    return build_schema(list(findings), RecordingInfo(duration, 8, 256.0, None), created_at="T0")


def tone(freq, seconds, rate, amp=1.0, phase=0.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t + phase)


DIGIT_STRINGS = ("0", "3", "7", "3.0", "4.2", "42", "0.25", "-1", "1e3", "12.5.6", "٣", "²", "...9")
WORDS = ("the", "event", "Hz", "µV", "uV", "s", "at", "lasts", "x7", "seven", "alpha", "O1")
PUNCT = (".", ",", " ", ";", "(", ")", "-", ". ", "..")


def adversarial_tokens(rng, slot_names, length):
    """Random token sequence mixing stray numerals, units and malformed slot regions."""
    from eegguard.report import Token, numeric, punctuation, slot_close, slot_open, word

    out = []
    names = list(slot_names) + ["bogus", "ev9.f", "f"]
    for _ in range(length):
        r = rng.random()
        if r < 0.2:
            out.append(numeric(DIGIT_STRINGS[rng.integers(len(DIGIT_STRINGS))]))
        elif r < 0.45:
            out.append(word(" " + WORDS[rng.integers(len(WORDS))]))
        elif r < 0.6:
            out.append(punctuation(PUNCT[rng.integers(len(PUNCT))]))
        elif r < 0.78:
            out.append(slot_open(names[rng.integers(len(names))], " " if rng.random() < 0.5 else ""))
        elif r < 0.93:
            out.append(slot_close())
        else:
            out.append(Token("word", DIGIT_STRINGS[rng.integers(len(DIGIT_STRINGS))]))
    return out


# one "PASS/FAIL criterion N: ..." line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} ({title}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
