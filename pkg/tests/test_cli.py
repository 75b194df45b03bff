"""Command-line subcommands, exit codes and benchmark arithmetic."""

import json

import pytest

from eegguard import cli
from eegguard.io import read_json, write_json
from eegguard.metrics import detection_metrics, value_errors
from eegguard.report import SchemaValidationError
from eegguard.synth import GroundTruth, GroundTruthEvent

EVENT_3HZ = {"onset_s": 1800.0, "duration_s": 6.0, "frequency_hz": 3.0, "amplitude_uv": 80.0,
             "channels": [0, 1, 2, 3], "waveform": "spike_wave"}


def _spec(tmp_path, name="spec.json", duration=120.0, events=(), seed=5, high=None, channels=4):
    doc = {"duration_s": duration, "low_rate_hz": 256, "high_rate_hz": high, "channels": channels,
           "events": list(events), "noise": {"white_sigma_uv": 5.0, "pink_fraction": 0.3}, "seed": seed}
    write_json(tmp_path / name, doc)
    return tmp_path / name


def _synth(tmp_path, out="data", **kwargs):
    assert cli.main(["synth", "--spec", str(_spec(tmp_path, **kwargs)), "--out", str(tmp_path / out)]) == 0
    return tmp_path / out


class TestSynth:
    def test_byte_identical(self, tmp_path):
        spec = _spec(tmp_path, events=[dict(EVENT_3HZ, onset_s=30.0)])
        for out in ("a", "b"):
            assert cli.main(["synth", "--spec", str(spec), "--out", str(tmp_path / out)]) == 0
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == ["recording.json", "recording.low.eegr", "recording.truth.json"]
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_zero_events(self, tmp_path):
        data = _synth(tmp_path)
        assert read_json(data / "recording.truth.json")["events"] == []

    def test_invalid_spec(self, tmp_path, capsys):
        write_json(tmp_path / "bad.json", {"duration_s": -1})
        assert cli.main(["synth", "--spec", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 2
        assert "error" in capsys.readouterr().err


class TestAnalyze:
    def test_one_hour_three_hertz(self, tmp_path, capsys):
        data = _synth(tmp_path, duration=3600.0, events=[EVENT_3HZ], high=1024)
        out = tmp_path / "out"
        assert cli.main(["analyze", "--input", str(data / "recording.json"), "--out", str(out),
                         "--timestamp", "2024-01-01T00:00:00Z"]) == 0
        assert "latency_s" in capsys.readouterr().out
        report = read_json(out / "report.json")
        assert len(report["findings"]) == 1
        assert report["findings"][0]["dominant_frequency_hz"]["text"] == "3.0"
        assert "3.0 Hz" in (out / "narrative.txt").read_text(encoding="utf-8")
        assert read_json(out / "provenance.json")

    def test_noise_only(self, tmp_path):
        data = _synth(tmp_path, duration=300.0)
        assert cli.main(["analyze", "--input", str(data / "recording.json"), "--out", str(tmp_path / "o")]) == 0
        assert read_json(tmp_path / "o" / "report.json")["overall_impression"] == "no_events"

    def test_byte_identical_reports(self, tmp_path):
        data = _synth(tmp_path, duration=300.0, events=[dict(EVENT_3HZ, onset_s=100.0)], high=1024)
        for out in ("o1", "o2"):
            assert cli.main(["analyze", "--input", str(data / "recording.json"), "--out", str(tmp_path / out),
                             "--seed", "3", "--timestamp", "T"]) == 0
        for name in ("report.json", "narrative.txt", "provenance.json"):
            assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()

    def test_montage_and_config(self, tmp_path):
        data = _synth(tmp_path, duration=120.0, events=[dict(EVENT_3HZ, onset_s=50.0)])
        write_json(tmp_path / "montage.json", read_json(data / "recording.json")["montage"])
        write_json(tmp_path / "templates.json", {"high": ["Event at {onset:onset_s}."],
                                                 "medium": ["Event at {onset:onset_s}."]})
        write_json(tmp_path / "cfg.json", {"report": {"template_set": "templates.json"}})
        assert cli.main(["analyze", "--input", str(data / "recording.json"), "--montage",
                         str(tmp_path / "montage.json"), "--config", str(tmp_path / "cfg.json"),
                         "--out", str(tmp_path / "o")]) == 0
        assert "Event at 5" in (tmp_path / "o" / "narrative.txt").read_text(encoding="utf-8")

    def test_missing_input_exit_2(self, tmp_path):
        assert cli.main(["analyze", "--input", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2

    def test_unknown_config_key_exit_2(self, tmp_path):
        data = _synth(tmp_path)
        write_json(tmp_path / "cfg.json", {"gating": {"thresh": 1}})
        assert cli.main(["analyze", "--input", str(data / "recording.json"), "--config",
                         str(tmp_path / "cfg.json"), "--out", str(tmp_path / "o")]) == 2

    @pytest.mark.parametrize("exc", [SchemaValidationError("bad"), RuntimeError("bug")])
    def test_internal_errors_exit_3(self, tmp_path, monkeypatch, exc):
        data = _synth(tmp_path)

        def broken(*args, **kwargs):
            raise exc

        monkeypatch.setattr(cli, "analyze", broken)
        assert cli.main(["analyze", "--input", str(data / "recording.json"), "--out", str(tmp_path / "o")]) == 3


class TestBench:
    def test_no_predictions_no_truth(self):
        m = detection_metrics([([], [], 3600.0)])
        assert m.fa_per_24h == 0.0 and m.sensitivity is None and m.mean_latency_s is None

    def test_one_false_positive_in_twelve_hours(self):
        assert detection_metrics([([100.0], [], 12 * 3600.0)]).fa_per_24h == 2.0

    def test_latency(self):
        m = detection_metrics([([105.0], [100.0], 3600.0)])
        assert m.mean_latency_s == 5.0 and m.sensitivity == 1.0 and m.fa_per_24h == 0.0

    def test_outside_match_window(self):
        m = detection_metrics([([200.0], [100.0], 86400.0)])
        assert m.sensitivity == 0.0 and m.fa_per_24h == 1.0 and m.mean_latency_s is None

    def test_bench_directory(self, tmp_path):
        _synth(tmp_path, out="data/a", duration=200.0, events=[dict(EVENT_3HZ, onset_s=80.0)], seed=1)
        _synth(tmp_path, out="data/b", duration=200.0, seed=2)
        assert cli.main(["bench", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "m.json")]) == 0
        doc = read_json(tmp_path / "m.json")
        assert doc["n_true"] == 1 and doc["sensitivity"] == 1.0 and doc["fa_per_24h"] == 0.0
        assert abs(doc["mean_latency_s"]) <= 2.0
        assert [r["recording"] for r in doc["recordings"]] == ["a/recording.json", "b/recording.json"]

    def test_empty_directory_exit_2(self, tmp_path):
        (tmp_path / "d").mkdir()
        assert cli.main(["bench", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "m.json")]) == 2


def _truth(freq=3.0, duration=6.0, amp=40.0):
    ev = GroundTruthEvent("e1", 100.0, duration, freq, 80.0, amp, (0, 1), "sine")
    return GroundTruth(600.0, 0, (ev,), ())


def _report(freq=3.0, duration=6.0, amp=40.0):
    def m(v):
        return {"value": v, "text": str(v), "unit": "", "confidence": 1.0, "interval": None,
                "provenance_id": "p-0"}

    return {"findings": [{"event_id": "x", "onset_s": m(101.0), "duration_s": m(duration),
                          "dominant_frequency_hz": m(freq), "amplitude_uv": m(amp), "lateralization": None,
                          "detection_confidence": 0.9, "abstained": ["lateralization"]}]}


class TestEvalValues:
    def test_equal_values(self):
        table = value_errors(_report(), _truth())
        assert all(k["mae"] == 0.0 for k in table["kinds"].values())

    def test_frequency_off_by_two_tenths(self):
        table = value_errors(_report(freq=3.2), _truth())
        freq = table["kinds"]["dominant_frequency_hz"]
        assert freq["mae"] == pytest.approx(0.2) and freq["mae_exceeds_tolerance"]
        assert table["events"][0]["exceeds"] == ["dominant_frequency_hz"]

    def test_cli(self, tmp_path, capsys):
        write_json(tmp_path / "r.json", _report(amp=46.0))
        write_json(tmp_path / "t.json", _truth().to_dict())
        assert cli.main(["eval-values", "--pred", str(tmp_path / "r.json"), "--truth", str(tmp_path / "t.json"),
                         "--out", str(tmp_path / "table.json")]) == 0
        table = json.loads(capsys.readouterr().out)
        assert table["kinds"]["amplitude_uv"]["n_exceeding"] == 1
        assert read_json(tmp_path / "table.json") == table

    def test_not_a_report(self, tmp_path):
        write_json(tmp_path / "r.json", [1, 2])
        write_json(tmp_path / "t.json", _truth().to_dict())
        assert cli.main(["eval-values", "--pred", str(tmp_path / "r.json"), "--truth", str(tmp_path / "t.json")]) == 2
