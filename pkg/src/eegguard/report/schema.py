"""Structured findings document whose numbers are all frozen measurements."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

import jsonschema

from ..guardrails import FrozenMeasurement, Provenance, violations
from ..recording import ConfigurationError, Recording

SCHEMA_VERSION = "1.0"
IMPRESSIONS = ("no_events", "events_detected", "degraded_quality")

# finding field -> measurement kind
FIELD_KINDS = {
    "onset_s": "onset_s",
    "duration_s": "duration_s",
    "dominant_frequency_hz": "frequency_hz",
    "amplitude_uv": "amplitude_uv",
    "lateralization": "lateralization_index",
}
REQUIRED_FIELDS = ("onset_s", "duration_s")
OPTIONAL_FIELDS = ("dominant_frequency_hz", "amplitude_uv", "lateralization")


class SchemaValidationError(RuntimeError):
    """A generated report does not match the normative schema document."""


@lru_cache(maxsize=1)
def schema_document() -> dict:
    text = resources.files("eegguard").joinpath("data/report_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_document(doc: Mapping) -> None:
    """Raise :class:`SchemaValidationError` unless ``doc`` matches the report schema."""
    validator = jsonschema.Draft202012Validator(schema_document())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        first = errors[0]
        path = "/".join(str(p) for p in first.path)
        raise SchemaValidationError(f"{len(errors)} schema error(s); first at '{path}': {first.message}")


@dataclass(frozen=True)
class RecordingInfo:
    duration_s: float
    channels: int
    low_rate_hz: float
    high_rate_hz: float | None = None

    @classmethod
    def from_recording(cls, rec: Recording) -> "RecordingInfo":
        return cls(rec.duration_s, rec.n_channels, rec.low_rate_hz, rec.high_rate_hz)

    def to_dict(self) -> dict:
        return {"duration_s": float(self.duration_s), "channels": int(self.channels),
                "low_rate_hz": float(self.low_rate_hz),
                "high_rate_hz": None if self.high_rate_hz is None else float(self.high_rate_hz)}


@dataclass(frozen=True)
class Finding:
    """One detected event.

    Optional fields that could not be measured are ``None`` and listed in
    ``abstained``; a field is never both.
    """

    event_id: str
    onset_s: FrozenMeasurement
    duration_s: FrozenMeasurement
    dominant_frequency_hz: FrozenMeasurement | None
    amplitude_uv: FrozenMeasurement | None
    lateralization: FrozenMeasurement | None
    detection_confidence: float
    abstained: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.event_id:
            raise ConfigurationError("finding needs an event_id")
        for name, kind in FIELD_KINDS.items():
            m = getattr(self, name)
            if m is None:
                if name in REQUIRED_FIELDS:
                    raise ConfigurationError(f"{name} is required")
                continue
            if not isinstance(m, FrozenMeasurement):
                raise ConfigurationError(f"{name} must be a FrozenMeasurement, got {type(m).__name__}")
            if not isinstance(getattr(m, "provenance", None), Provenance):
                raise ConfigurationError(f"{name} lacks provenance")
            if m.kind != kind:
                raise ConfigurationError(f"{name} holds a {m.kind} measurement")
        abstained = tuple(sorted(set(self.abstained)))
        for name in abstained:
            if name not in OPTIONAL_FIELDS:
                raise ConfigurationError(f"cannot abstain on {name!r}")
            if getattr(self, name) is not None:
                raise ConfigurationError(f"{name} is abstained but carries a value")
        missing = [n for n in OPTIONAL_FIELDS if getattr(self, n) is None and n not in abstained]
        if missing:
            raise ConfigurationError(f"fields {missing} are neither measured nor abstained")
        if not 0.0 <= self.detection_confidence <= 1.0:
            raise ConfigurationError("detection_confidence must lie in [0, 1]")
        object.__setattr__(self, "abstained", abstained)
        object.__setattr__(self, "detection_confidence", float(self.detection_confidence))

    @classmethod
    def from_measurements(cls, event_id: str, measurements: Mapping[str, FrozenMeasurement | None],
                          detection_confidence: float) -> "Finding":
        values = {name: measurements.get(name) for name in FIELD_KINDS}
        abstained = tuple(n for n in OPTIONAL_FIELDS if values[n] is None)
        return cls(event_id, detection_confidence=detection_confidence, abstained=abstained, **values)

    def measurements(self) -> dict[str, FrozenMeasurement]:
        return {n: getattr(self, n) for n in FIELD_KINDS if getattr(self, n) is not None}

    def to_dict(self) -> dict:
        out = {"event_id": self.event_id}
        for name in FIELD_KINDS:
            m = getattr(self, name)
            out[name] = None if m is None else m.to_dict()
        out["detection_confidence"] = self.detection_confidence
        out["abstained"] = list(self.abstained)
        return out


@dataclass(frozen=True)
class ReportSchema:
    recording: RecordingInfo
    findings: tuple[Finding, ...]
    overall_impression: str
    provenance_log: tuple[dict, ...]
    narrative: str = ""
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        if self.overall_impression not in IMPRESSIONS:
            raise ConfigurationError(f"unknown impression {self.overall_impression!r}")
        onsets = [f.onset_s.value for f in self.findings]
        if onsets != sorted(onsets):
            raise ConfigurationError("findings must be sorted by onset")

    def finding(self, event_id: str) -> Finding:
        for f in self.findings:
            if f.event_id == event_id:
                return f
        raise KeyError(event_id)

    def with_narrative(self, text: str) -> "ReportSchema":
        return replace(self, narrative=text)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "recording": self.recording.to_dict(),
            "findings": [f.to_dict() for f in self.findings],
            "overall_impression": self.overall_impression,
            "narrative": self.narrative,
            "provenance_log": [dict(e) for e in self.provenance_log],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def validate(self) -> "ReportSchema":
        validate_document(self.to_dict())
        return self


def impression(findings: Sequence[Finding]) -> str:
    """``no_events``; ``degraded_quality`` when most optional fields abstained; else ``events_detected``."""
    if not findings:
        return "no_events"
    abstained = sum(len(f.abstained) for f in findings)
    if abstained * 2 > len(findings) * len(OPTIONAL_FIELDS):
        return "degraded_quality"
    return "events_detected"


def build_schema(findings: Sequence[Finding], recording: RecordingInfo | Recording, *,
                 created_at: str | None = None, narrative: str = "") -> ReportSchema:
    """Assemble and validate a report from plausibility-checked findings.

    Raises
    ------
    ConfigurationError
        If a measurement still violates a plausibility rule (it should have
        been re-measured or abstained before reaching the report).
    SchemaValidationError
        If the assembled document does not match the schema.
    """
    if isinstance(recording, Recording):
        recording = RecordingInfo.from_recording(recording)
    ordered = sorted(findings, key=lambda f: (f.onset_s.value, f.event_id))
    ids = [f.event_id for f in ordered]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate event ids")
    log = []
    for f in ordered:
        for name, m in f.measurements().items():
            problems = violations(m)
            if problems:
                raise ConfigurationError(f"{f.event_id}.{name} is implausible: {problems[0]}")
            entry = {"provenance_id": m.provenance_id, "event_id": f.event_id, "field": name}
            entry.update(m.provenance.to_dict())
            entry["created_at"] = created_at
            log.append(entry)
    schema = ReportSchema(recording, tuple(ordered), impression(ordered), tuple(log), narrative)
    return schema.validate()
