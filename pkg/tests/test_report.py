"""Findings documents, template selection and the slot-constrained decoder."""

import json
import re

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eegguard.recording import ConfigurationError
from eegguard.report import (DEFAULT_TEMPLATES, Finding, NarrativePlan, NarrativeTemplate, ReportSchema,
                             SchemaValidationError, TemplateTokenStream, decode, digit_runs,
                             generate_narrative, numeric, punctuation, schema_document, select_template,
                             slot_close, slot_open, template_set_from_dict, validate_document, word)

from helpers import adversarial_tokens, finding, schema

ONE_SLOT = NarrativeTemplate.from_text("Dominant frequency {f:frequency_hz} Hz.")


def _allowed(result):
    return {s.text for s in result.slots.values()}


def _assert_no_stray_digits(result):
    allowed = set()
    for text in _allowed(result):
        allowed.update(digit_runs(text))
    stray = [r for r in digit_runs(result.text) if r not in allowed]
    assert not stray, (stray, result.text)


class TestBuildSchema:
    def test_no_events(self):
        doc = schema()
        assert doc.findings == () and doc.overall_impression == "no_events"
        validate_document(doc.to_dict())

    def test_full_finding(self):
        doc = schema(finding())
        (f,) = doc.to_dict()["findings"]
        assert all(f[k] is not None for k in ("dominant_frequency_hz", "amplitude_uv", "lateralization"))
        assert f["abstained"] == []
        assert len(doc.provenance_log) == 5
        assert doc.overall_impression == "events_detected"

    def test_abstained_amplitude(self):
        f = schema(finding(amp=None)).to_dict()["findings"][0]
        assert f["amplitude_uv"] is None and f["abstained"] == ["amplitude_uv"]

    def test_degraded_quality(self):
        assert schema(finding(freq=None, amp=None, lat=None)).overall_impression == "degraded_quality"

    def test_findings_sorted(self):
        doc = schema(finding("a", onset=20.0), finding("b", onset=10.0))
        assert [f.event_id for f in doc.findings] == ["b", "a"]
        with pytest.raises(ConfigurationError):
            ReportSchema(doc.recording, doc.findings[::-1], doc.overall_impression, doc.provenance_log)

    def test_bare_number_rejected(self):
        doc = schema(finding()).to_dict()
        doc["findings"][0]["amplitude_uv"] = 42.0
        with pytest.raises(SchemaValidationError):
            validate_document(doc)

    def test_bare_number_rejected_at_construction(self):
        good = finding()
        with pytest.raises(ConfigurationError):
            Finding("x", good.onset_s, good.duration_s, 3.0, good.amplitude_uv, good.lateralization, 0.9)

    def test_value_and_abstained_exclusive(self):
        good = finding()
        with pytest.raises(ConfigurationError):
            Finding("x", good.onset_s, good.duration_s, good.dominant_frequency_hz, good.amplitude_uv,
                    good.lateralization, 0.9, ("amplitude_uv",))

    def test_implausible_measurement_rejected(self):
        with pytest.raises(ConfigurationError):
            schema(finding(freq=200.0))

    def test_schema_document_keys(self):
        doc = schema_document()
        assert set(doc["required"]) >= {"schema_version", "recording", "findings", "overall_impression",
                                        "narrative", "provenance_log"}
        json.dumps(doc)

    def test_json_is_stable(self):
        assert schema(finding()).to_json() == schema(finding()).to_json()


class TestNarrative:
    def test_frequency_example(self):
        result = generate_narrative(schema(finding()), ONE_SLOT)
        assert result.text == "Dominant frequency 3.0 Hz." and result.mask_count == 0

    def test_wrong_slot_content_replaced(self):
        tokens = [word("Dominant"), word(" frequency"), slot_open("f", " "), numeric("4.2"), slot_close(),
                  punctuation(".")]
        result = decode(tokens, NarrativePlan.build(schema(finding()), ONE_SLOT))
        assert "3.0" in result.text and "4.2" not in result.text
        assert result.mask_count == 1
        assert result.mask_events[0].text == "4.2"

    def test_numeral_outside_slot_masked(self):
        tokens = [word("Dominant"), numeric(" 7"), word(" frequency"), slot_open("f", " "), numeric("3.0"),
                  slot_close(), punctuation(".")]
        result = decode(tokens, NarrativePlan.build(schema(finding()), ONE_SLOT))
        assert result.text == "Dominant frequency 3.0 Hz."
        assert [e.reason for e in result.mask_events] == ["numeral outside slot"]

    def test_unit_outside_slot_masked(self):
        tokens = [word("Dominant"), word(" Hz"), slot_open("f", " "), slot_close()]
        result = decode(tokens, NarrativePlan.build(schema(finding()), ONE_SLOT))
        assert result.text == "Dominant 3.0 Hz"

    def test_missing_slot_appended(self):
        result = decode([word("Nothing")], NarrativePlan.build(schema(finding()), ONE_SLOT))
        assert result.text == "Nothing (dominant frequency 3.0 Hz)"

    def test_default_report(self):
        result = generate_narrative(schema(finding(), finding("ev2", onset=30.0, confidence=0.6)))
        assert result.mask_count == 0
        assert result.text.startswith("Two events were detected in this recording.")
        assert "moderate confidence" in result.text
        assert "3.0 Hz" in result.text and "42 µV" in result.text and "0.25" in result.text
        _assert_no_stray_digits(result)

    def test_no_events_text(self):
        assert generate_narrative(schema()).text == "No events were detected in this recording."

    def test_round_trip(self):
        doc = schema(finding(onset=12.5, duration=6.0, freq=3.5, amp=88.0, lat=-0.4))
        text = generate_narrative(doc).text
        found = re.findall(r"(-?[0-9.]*[0-9])(?: (Hz|s|µV))?(?![0-9])", text)
        f = doc.findings[0]
        expected = [(m.canonical_text, m.unit if m.unit != "index" else "")
                    for m in (f.onset_s, f.duration_s, f.dominant_frequency_hz, f.amplitude_uv, f.lateralization)]
        assert found == expected
        assert [float(v) for v, _ in found] == [m.value for m in f.measurements().values()]

    @given(st.integers(0, 2 ** 32 - 1))
    def test_fuzzed_streams_copy_only_slots(self, seed):
        rng = np.random.default_rng(seed)
        doc = schema(finding(), finding("ev2", onset=30.0, freq=12.5, amp=7.0, lat=-1.0, confidence=0.3))
        plan = NarrativePlan.build(doc)
        names = list(plan.slots())
        result = decode(adversarial_tokens(rng, names, int(rng.integers(0, 60))), plan)
        _assert_no_stray_digits(result)
        for slot in plan.slots().values():
            assert slot.rendered in result.text


class TestTemplates:
    def test_confidence_tiers(self):
        assert select_template(0.9).tier == "high"
        assert select_template(0.6).tier == "medium"
        low = select_template(0.3)
        assert low.tier == "low" and "possible event" in low.text

    def test_abstained_frequency_variant(self):
        t = select_template(0.9, ["dominant_frequency_hz"])
        assert ("f", "frequency_hz") not in t.placeholders()
        text = generate_narrative(schema(finding(freq=None))).text
        assert "No reliable dominant frequency" in text and "Hz" not in text

    def test_low_tier_drops_abstained_slots(self):
        t = select_template(0.2, ["amplitude_uv"])
        assert "amp" not in [name for name, _ in t.placeholders()]

    @pytest.mark.parametrize("text", ["Has 3 events {f:frequency_hz}.", "Bad {f:volume}.",
                                      "Twice {f:frequency_hz} {f:frequency_hz}.", "{unknown}"])
    def test_invalid_templates(self, text):
        with pytest.raises(ConfigurationError):
            NarrativeTemplate.from_text(text)

    def test_unit_after_slot_absorbed(self):
        assert ONE_SLOT.text == "Dominant frequency {f:frequency_hz}."

    def test_unresolvable_placeholder(self):
        t = NarrativeTemplate.from_text("Frequency {f:frequency_hz}.")
        plan = NarrativePlan(((finding(freq=None), t),))
        with pytest.raises(ConfigurationError):
            plan.slots()

    def test_template_set_from_dict(self):
        custom = template_set_from_dict({"high": ["Event at {onset:onset_s}.",
                                                  {"text": "Peak {f:frequency_hz}.", "fallback": "No peak."}]})
        assert custom["medium"] is DEFAULT_TEMPLATES["medium"]
        text = generate_narrative(schema(finding(freq=None)), template_set=custom).text
        assert "Event at 10.0 s. No peak." in text
        with pytest.raises(ConfigurationError):
            template_set_from_dict({"urgent": ["x"]})
        with pytest.raises(ConfigurationError):
            template_set_from_dict({"high": [{"body": "x"}]})

    def test_token_stream_is_well_behaved(self):
        doc = schema(finding())
        result = decode(TemplateTokenStream(doc), NarrativePlan.build(doc))
        assert result.mask_count == 0
