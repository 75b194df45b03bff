"""Run configuration: one strict JSON document mirroring every tunable stage."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

from .gating import GatingConfig
from .guardrails import HysteresisConfig
from .neural import BackboneConfig
from .recording import ClinicalTolerances, ConfigurationError


@dataclass(frozen=True)
class SamplingConfig:
    """Expected stream rates; rates outside the range only add a note."""

    low_rate_min_hz: float = 256.0
    low_rate_max_hz: float = 512.0
    high_rate_min_hz: float = 1000.0


@dataclass(frozen=True)
class PreprocessConfig:
    notch_hz: float | None = 60.0
    band: tuple[float, float] = (0.5, 80.0)

    def __post_init__(self):
        if self.notch_hz is not None and self.notch_hz not in (50.0, 60.0):
            raise ConfigurationError("notch_hz must be 50, 60 or null")
        if not 0 < self.band[0] < self.band[1]:
            raise ConfigurationError("band must satisfy 0 < lo < hi")


@dataclass(frozen=True)
class GuardrailConfig:
    """Measurement settings: Welch, hysteresis and the re-measure widening."""

    segments: int = 8
    overlap: float = 0.5
    grid_hz: float = 0.05
    band: tuple[float, float] = (0.5, 80.0)
    subwindow_s: float = 0.25
    steps_per_subwindow: int = 8
    high_mads: float = 4.0
    low_mads: float = 2.0
    merge_gap_s: float = 0.5
    core_trim_s: float = 0.25
    widen_s: float = 2.0

    def __post_init__(self):
        if self.segments < 1 or not 0 <= self.overlap < 1:
            raise ConfigurationError("segments >= 1 and overlap in [0, 1) required")
        if not self.low_mads < self.high_mads:
            raise ConfigurationError("low_mads must be below high_mads")
        if min(self.grid_hz, self.subwindow_s, self.steps_per_subwindow) <= 0 or self.widen_s < 0:
            raise ConfigurationError("grid, sub-window, steps must be positive and widen_s >= 0")

    def hysteresis(self) -> HysteresisConfig:
        return HysteresisConfig(self.subwindow_s, self.steps_per_subwindow, self.high_mads,
                                self.low_mads, self.merge_gap_s)


@dataclass(frozen=True)
class CalibrationConfig:
    """Conformal settings plus the envelope forecaster they calibrate."""

    n_cal: int = 256
    alpha: float = 0.9
    cusum_k: float = 0.5
    cusum_h: float = 8.0
    min_residuals: int = 10
    frame_s: float = 1.0
    forecast_window: int = 8

    def __post_init__(self):
        if self.n_cal < 1 or not 0 < self.alpha < 1:
            raise ConfigurationError("n_cal >= 1 and alpha in (0, 1) required")
        if self.frame_s <= 0 or self.forecast_window < 1:
            raise ConfigurationError("frame_s and forecast_window must be positive")


@dataclass(frozen=True)
class ReportConfig:
    template_set: str | None = None
    tiers: tuple[float, float] = (0.8, 0.5)

    def __post_init__(self):
        if not 0 <= self.tiers[1] <= self.tiers[0] <= 1:
            raise ConfigurationError("tiers must be (high, medium) with 0 <= medium <= high <= 1")


SECTIONS = {
    "sampling": SamplingConfig,
    "preprocess": PreprocessConfig,
    "gating": GatingConfig,
    "guardrails": GuardrailConfig,
    "calibration": CalibrationConfig,
    "tolerances": ClinicalTolerances,
    "backbone": BackboneConfig,
    "report": ReportConfig,
}


def _tuples(value):
    if isinstance(value, list):
        return tuple(_tuples(v) for v in value)
    return value


def _section(cls, doc: Any, name: str):
    if doc is None:
        return cls()
    if not isinstance(doc, Mapping):
        raise ConfigurationError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    try:
        return cls(**{k: _tuples(v) for k, v in doc.items()})
    except TypeError as exc:
        raise ConfigurationError(f"invalid {name!r} section: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    gating: GatingConfig = field(default_factory=GatingConfig)
    guardrails: GuardrailConfig = field(default_factory=GuardrailConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    tolerances: ClinicalTolerances = field(default_factory=ClinicalTolerances)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: Mapping | None) -> "RunConfig":
        """Build from a partial document; missing keys keep their defaults, unknown keys fail."""
        doc = dict(doc or {})
        unknown = sorted(set(doc) - set(SECTIONS) - {"seed"})
        if unknown:
            raise ConfigurationError(f"unknown top-level key(s): {', '.join(unknown)}")
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
            raise ConfigurationError("seed must be a non-negative 64-bit integer")
        sections = {name: _section(cls_, doc.get(name), name) for name, cls_ in SECTIONS.items()}
        cfg = cls(seed=seed, **sections)
        check_finite(cfg)
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            out[name] = {k: list(v) if isinstance(v, tuple) else v
                         for k, v in dataclasses.asdict(getattr(self, name)).items()}
        out["seed"] = self.seed
        return out

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def load_config(path) -> RunConfig:
    from .io import read_json

    return RunConfig.from_dict(read_json(path))


def check_finite(cfg: RunConfig) -> None:
    """Reject NaN/inf anywhere in the numeric settings."""
    for name, section in cfg.to_dict().items():
        values = section.values() if isinstance(section, dict) else [section]
        for v in values:
            flat = v if isinstance(v, list) else [v]
            for x in flat:
                if isinstance(x, float) and not math.isfinite(x):
                    raise ConfigurationError(f"non-finite value in section {name!r}")
