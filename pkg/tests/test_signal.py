"""Recording container, preprocessing filters, synthesis and orthonormal band power."""

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal
from sklearn.base import clone

from eegguard.preprocessing import NotchBandpassFilter, design_filter, filter_array, preprocess
from eegguard.recording import (ClinicalTolerances, ConfigurationError, MontageGraph, Recording,
                                default_channel_names, hemisphere_of, standard_montage)
from eegguard.spectral import bandpower_orthonormal
from eegguard.synth import EventSpec, NoiseSpec, SynthSpec, synthesize

from helpers import make_recording, tone

RATE = 256.0


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def _zero_phase_gain(freq, rate=RATE, notch=60.0, band=(0.5, 80.0)):
    """Oracle: |H(f)|^2 of the designed cascade, evaluated on a dense sweep."""
    sos = design_filter(rate, notch, band)
    freqs = np.linspace(0, rate / 2, 2 ** 16 + 1)
    _, h = signal.sosfreqz(sos, worN=freqs, fs=rate)
    return float(np.interp(freq, freqs, np.abs(h) ** 2))


# -- Recording and montage -----------------------------------------------------

class TestRecording:
    def test_rejects_non_finite_samples(self):
        x = np.zeros((2, 10))
        x[1, 3] = np.nan
        with pytest.raises(ConfigurationError):
            make_recording(x)

    def test_high_rate_must_exceed_low_rate(self):
        with pytest.raises(ConfigurationError):
            make_recording(np.zeros((1, 10)), rate=256, high=np.zeros((1, 10)), high_rate=128)

    def test_high_stream_requires_rate(self):
        with pytest.raises(ConfigurationError):
            make_recording(np.zeros((1, 10)), high=np.zeros((1, 20)))

    def test_samples_are_read_only_copies(self):
        src = np.ones((1, 8))
        rec = make_recording(src)
        src[0, 0] = 5
        assert rec.samples_low[0, 0] == 1
        with pytest.raises(ValueError):
            rec.samples_low[0, 0] = 3

    def test_crop_is_clamped_and_time_aligned(self):
        x = np.arange(2560, dtype=float)[None, :]
        rec = make_recording(x)
        crop = rec.crop("low", 1.0, 2.0)
        assert crop.shape == (1, 256)
        assert crop[0, 0] == 256
        assert rec.crop("low", 9.5, 20.0).shape[1] == 128

    def test_duration_and_stream_lookup(self):
        rec = make_recording(np.zeros((2, 512)), high=np.zeros((2, 2048)), high_rate=1024)
        assert rec.duration_s == 2.0
        assert rec.stream("high")[1] == 1024
        with pytest.raises(ConfigurationError):
            rec.stream("mid")

    def test_montage_validation(self):
        with pytest.raises(ConfigurationError):
            MontageGraph(2, ((0, 2),), {0: "left", 1: "right"})
        with pytest.raises(ConfigurationError):
            MontageGraph(2, (), {0: "left"})
        with pytest.raises(ConfigurationError):
            MontageGraph(2, (), {0: "left", 1: "top"})

    def test_standard_montage_hemispheres(self):
        names = ["Fp1", "Fp2", "Cz", "C3", "C4"]
        m = standard_montage(names)
        assert m.side("left") == [0, 3]
        assert m.side("right") == [1, 4]
        assert m.side("midline") == [2]
        assert hemisphere_of("T6") == "right"
        assert (m.adjacency() == m.adjacency().T).all()

    def test_montage_round_trip(self):
        names = default_channel_names(8)
        m = standard_montage(names)
        back = MontageGraph.from_dict(m.to_dict(names), names)
        assert back == m

    def test_tolerances_positive(self):
        assert ClinicalTolerances() == ClinicalTolerances(0.1, 0.5, 5.0)
        with pytest.raises(ConfigurationError):
            ClinicalTolerances(eps_f_hz=0.0)


# -- preprocessing -------------------------------------------------------------

class TestPreprocess:
    def test_notch_removes_line_tone(self):
        x = tone(60.0, 20, RATE)
        y = filter_array(x, RATE, 60.0, (0.5, 80.0))
        steady = slice(int(RATE), x.size - int(RATE))  # one second of edge ringing each side
        assert _zero_phase_gain(60.0) <= 1e-4
        assert _rms(y[steady]) <= 0.01 * _rms(x[steady])

    def test_passband_tone_within_one_db(self):
        x = tone(10.0, 20, RATE)
        y = filter_array(x, RATE, 60.0, (0.5, 80.0))
        mid = slice(int(5 * RATE), int(15 * RATE))
        gain_db = 20 * np.log10(_rms(y[mid]) / _rms(x[mid]))
        oracle_db = 10 * np.log10(_zero_phase_gain(10.0))
        assert abs(gain_db) <= 1.0
        assert abs(gain_db - oracle_db) < 0.05

    def test_dc_is_removed(self):
        x = np.full(int(30 * RATE), 40.0)
        y = filter_array(x, RATE, 60.0, (0.5, 80.0))
        mid = slice(int(10 * RATE), int(20 * RATE))
        assert np.max(np.abs(y[mid])) < 1e-6 * 40.0

    def test_zero_phase(self):
        # a symmetric pulse stays symmetric about its centre
        x = np.zeros(4096)
        x[2048] = 1.0
        y = filter_array(x, RATE, None, (0.5, 80.0))
        assert np.argmax(y) == 2048
        np.testing.assert_allclose(y[2048 - 200:2048], y[2049:2049 + 200][::-1], atol=1e-12)

    @pytest.mark.parametrize("band, notch", [((0.5, 200.0), 60.0), ((0.5, 80.0), 150.0), ((5, 1), None)])
    def test_cutoff_errors(self, band, notch):
        rec = make_recording(np.zeros((1, 2560)))
        with pytest.raises(ConfigurationError):
            preprocess(rec, notch, band)

    def test_preprocess_keeps_shape_and_adds_note(self):
        rng = np.random.default_rng(0)
        rec = make_recording(rng.normal(size=(2, 2560)), high=rng.normal(size=(2, 10240)), high_rate=1024)
        out = preprocess(rec)
        assert out.samples_low.shape == rec.samples_low.shape
        assert out.samples_high.shape == rec.samples_high.shape
        assert out.notes[-1].startswith("preprocess:")
        assert rec.notes == ()

    @given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2 ** 32 - 1))
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, 1024))
        lhs = filter_array(a * x + b * y, RATE, 60.0, (0.5, 80.0))
        rhs = a * filter_array(x, RATE, 60.0, (0.5, 80.0)) + b * filter_array(y, RATE, 60.0, (0.5, 80.0))
        scale = max(np.max(np.abs(rhs)), 1e-300)
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale + 1e-12

    def test_transformer_api(self):
        f = NotchBandpassFilter(rate_hz=RATE)
        assert clone(f).get_params() == f.get_params()
        x = np.random.default_rng(1).normal(size=(2, 2048))
        np.testing.assert_array_equal(f.fit_transform(x), filter_array(x, RATE, 60.0, (0.5, 80.0)))


# -- synthesis -----------------------------------------------------------------

def _spec(**kw):
    base = dict(duration_s=30, low_rate_hz=256, channels=4,
                events=(EventSpec(10.0, 6.0, 3.0, 50.0, (0, 1, 2, 3)),),
                noise=NoiseSpec(5.0, 0.3), seed=42)
    base.update(kw)
    return SynthSpec(**base)


class TestSynthesize:
    def test_bit_identical_runs(self):
        a, ta = synthesize(_spec(high_rate_hz=1024))
        b, tb = synthesize(_spec(high_rate_hz=1024))
        assert a.samples_low.tobytes() == b.samples_low.tobytes()
        assert a.samples_high.tobytes() == b.samples_high.tobytes()
        assert ta == tb

    def test_seed_changes_noise(self):
        a, _ = synthesize(_spec(seed=1))
        b, _ = synthesize(_spec(seed=2))
        assert not np.array_equal(a.samples_low, b.samples_low)

    def test_zero_events_zero_noise_is_silent(self):
        rec, truth = synthesize(_spec(events=(), noise=NoiseSpec()))
        assert not rec.samples_low.any()
        assert truth.events == ()

    def test_ground_truth_lists_events(self):
        _, truth = synthesize(_spec())
        (ev,) = truth.events
        assert ev.event_id == "e1"
        assert (ev.onset_s, ev.duration_s, ev.frequency_hz, ev.amplitude_uv) == (10.0, 6.0, 3.0, 50.0)
        assert ev.channels == ("Fp1", "Fp2", "C3", "C4")
        # sine robust amplitude is 1.4826 * A * sin(pi/4)
        assert ev.robust_amplitude_uv == pytest.approx(50 * 1.4826 * np.sqrt(0.5), rel=0.01)

    def test_event_frequency_by_padded_dft(self):
        rec, _ = synthesize(_spec())
        seg = rec.crop("low", 10.0, 16.0, [0]).ravel()
        n = 2 ** 20
        spectrum = np.abs(np.fft.rfft(seg - seg.mean(), n=n))
        peak = np.fft.rfftfreq(n, 1 / 256)[np.argmax(spectrum)]
        assert abs(peak - 3.0) <= 0.1

    def test_samples_are_float32_exact(self):
        rec, _ = synthesize(_spec(high_rate_hz=1000))
        for x in (rec.samples_low, rec.samples_high):
            assert np.array_equal(x, x.astype(np.float32).astype(np.float64))

    @pytest.mark.parametrize("bad", [
        dict(events=(EventSpec(28.0, 5.0, 3.0, 10.0, (0,)),)),
        dict(events=(EventSpec(1.0, 5.0, 300.0, 10.0, (0,)),)),
        dict(events=(EventSpec(1.0, 5.0, 3.0, 10.0, (9,)),)),
        dict(events=(EventSpec(1.0, 5.0, 3.0, 10.0, (0,), waveform="square"),)),
        dict(artifacts=({"kind": "ECG", "onset_s": 1, "duration_s": 1, "gain": 1},)),
        dict(seed=-1),
        dict(noise=NoiseSpec(1.0, 2.0)),
    ])
    def test_invalid_specs(self, bad):
        with pytest.raises(ConfigurationError):
            _spec(**bad)

    @pytest.mark.parametrize("kind, check", [
        ("EOG", lambda x: np.abs(x[0]).max() > np.abs(x[2]).max()),
        ("line-noise", lambda x: np.abs(np.fft.rfft(x[2]))[60 * 8] > 100),
        ("EMG", lambda x: x.std() > 1),
    ])
    def test_artifacts(self, kind, check):
        art = {"kind": kind, "onset_s": 2.0, "duration_s": 4.0, "gain": 80.0}
        rec, truth = synthesize(_spec(events=(), noise=NoiseSpec(), artifacts=(art,), duration_s=8))
        assert check(rec.samples_low)
        assert truth.artifacts[0].kind == kind

    def test_spec_round_trip(self):
        spec = _spec(artifacts=({"kind": "EOG", "onset_s": 1, "duration_s": 1, "gain": 5},))
        assert SynthSpec.from_dict(spec.to_dict()) == spec


# -- orthonormal band power ------------------------------------------------------

def _ideal_bandpower(x, rate, band):
    """Oracle: mean square of the brick-wall band-limited signal, reconstructed in time."""
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, 1 / rate)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0
    return float(np.mean(np.fft.irfft(spec, n=x.size) ** 2))


class TestBandpower:
    def test_parseval_on_random_windows(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            x = rng.normal(size=int(rng.integers(16, 600))) * rng.uniform(0.1, 100)
            power, count = bandpower_orthonormal(x, RATE, (0.0, RATE / 2))
            assert count == x.size // 2 + 1
            assert abs(power * x.size - np.sum(x ** 2)) <= 1e-9 * np.sum(x ** 2)

    def test_matches_time_domain_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=1000)
        assert bandpower_orthonormal(x, RATE, (2, 4))[0] == pytest.approx(
            _ideal_bandpower(x, RATE, (2, 4)), rel=1e-9)

    def test_zero_signal(self):
        assert bandpower_orthonormal(np.zeros(64), RATE, (1, 10))[0] == 0.0

    def test_compression_keeps_tone_band_power(self):
        rng = np.random.default_rng(5)
        x = tone(3.0, 8, RATE, amp=20) + rng.normal(0, 5, int(8 * RATE))
        full = bandpower_orthonormal(x, RATE, (2, 4))[0]
        kept, count = bandpower_orthonormal(x, RATE, (2, 4), keep_fraction=0.1)
        assert count == int(np.ceil(0.1 * (x.size // 2 + 1)))
        assert abs(kept - full) <= 0.02 * full

    @pytest.mark.parametrize("x, frac", [(np.zeros(0), 1.0), (np.zeros(8), 0.0), (np.zeros(8), 1.5)])
    def test_errors(self, x, frac):
        with pytest.raises(ConfigurationError):
            bandpower_orthonormal(x, RATE, (1, 2), frac)
