"""Detection metrics (false alarms per day, latency, sensitivity) and value-error tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .recording import ClinicalTolerances, ConfigurationError
from .synth import GroundTruth

MATCH_WINDOW_S = 30.0
SECONDS_PER_DAY = 86400.0


def match_onsets(pred: Sequence[float], truth: Sequence[float],
                 window_s: float = MATCH_WINDOW_S) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of predicted to true onsets within ``window_s``.

    True events are visited in onset order and take the closest unused
    prediction (earlier one on ties). Returns ``(pred_index, true_index)`` pairs.
    """
    used = set()
    pairs = []
    for ti in sorted(range(len(truth)), key=lambda i: truth[i]):
        best = None
        for pi, p in enumerate(pred):
            if pi in used or abs(p - truth[ti]) > window_s:
                continue
            key = (abs(p - truth[ti]), p)
            if best is None or key < best[0]:
                best = (key, pi)
        if best is not None:
            used.add(best[1])
            pairs.append((best[1], ti))
    return pairs


@dataclass(frozen=True)
class DetectionMetrics:
    fa_per_24h: float
    mean_latency_s: float | None
    p95_latency_s: float | None
    sensitivity: float | None
    n_true: int
    n_predicted: int
    n_matched: int
    total_seconds: float
    events: tuple[dict, ...] = field(default=())

    def __post_init__(self):
        if self.fa_per_24h < 0:
            raise ConfigurationError("false-alarm rate cannot be negative")

    def to_dict(self) -> dict:
        return {
            "fa_per_24h": self.fa_per_24h,
            "mean_latency_s": self.mean_latency_s,
            "p95_latency_s": self.p95_latency_s,
            "sensitivity": self.sensitivity,
            "n_true": self.n_true,
            "n_predicted": self.n_predicted,
            "n_matched": self.n_matched,
            "total_seconds": self.total_seconds,
            "match_window_s": MATCH_WINDOW_S,
            "events": [dict(e) for e in self.events],
        }


def detection_metrics(runs: Sequence[tuple[Sequence[float], Sequence[float], float]],
                      window_s: float = MATCH_WINDOW_S, names: Sequence[str] | None = None
                      ) -> DetectionMetrics:
    """Pool ``(predicted_onsets, true_onsets, recorded_seconds)`` over recordings.

    FA/24h counts unmatched predictions per recorded day; latency is
    predicted minus true onset over matched events only; sensitivity is
    ``None`` when there are no true events.
    """
    total = float(sum(r[2] for r in runs))
    if total <= 0:
        raise ConfigurationError("total recorded time must be positive")
    latencies, events = [], []
    n_true = n_pred = n_fa = 0
    for k, (pred, truth, _) in enumerate(runs):
        name = names[k] if names is not None else str(k)
        pairs = match_onsets(pred, truth, window_s)
        matched_pred = {p for p, _ in pairs}
        for p, t in pairs:
            lat = float(pred[p] - truth[t])
            latencies.append(lat)
            events.append({"recording": name, "true_onset_s": float(truth[t]),
                           "predicted_onset_s": float(pred[p]), "latency_s": lat, "matched": True})
        matched_truth = {t for _, t in pairs}
        for t in range(len(truth)):
            if t not in matched_truth:
                events.append({"recording": name, "true_onset_s": float(truth[t]),
                               "predicted_onset_s": None, "latency_s": None, "matched": False})
        for p in range(len(pred)):
            if p not in matched_pred:
                n_fa += 1
                events.append({"recording": name, "true_onset_s": None,
                               "predicted_onset_s": float(pred[p]), "latency_s": None, "matched": False})
        n_true += len(truth)
        n_pred += len(pred)
    lat = np.asarray(latencies)
    return DetectionMetrics(
        fa_per_24h=n_fa * SECONDS_PER_DAY / total,
        mean_latency_s=float(lat.mean()) if lat.size else None,
        p95_latency_s=float(np.percentile(lat, 95)) if lat.size else None,
        sensitivity=len(latencies) / n_true if n_true else None,
        n_true=n_true, n_predicted=n_pred, n_matched=len(latencies), total_seconds=total,
        events=tuple(events),
    )


# -- value errors -----------------------------------------------------------------

VALUE_KINDS = {
    # report field -> (truth attribute, tolerance attribute)
    "dominant_frequency_hz": ("frequency_hz", "eps_f_hz"),
    "duration_s": ("duration_s", "eps_d_s"),
    "amplitude_uv": ("robust_amplitude_uv", "eps_a_uv"),
}


def _match_findings(findings: Sequence[Mapping], truth: GroundTruth, window_s: float) -> list[tuple[int, int]]:
    ids = [f["event_id"] for f in findings]
    truth_ids = {e.event_id: i for i, e in enumerate(truth.events)}
    if ids and all(i in truth_ids for i in ids):
        pairs = [(k, truth_ids[i]) for k, i in enumerate(ids)]
        if all(abs(findings[k]["onset_s"]["value"] - truth.events[t].onset_s) <= window_s for k, t in pairs):
            return pairs
    onsets = [f["onset_s"]["value"] for f in findings]
    return match_onsets(onsets, [e.onset_s for e in truth.events], window_s)


def value_errors(report: Mapping, truth: GroundTruth,
                 tolerances: ClinicalTolerances = ClinicalTolerances(),
                 window_s: float = MATCH_WINDOW_S) -> dict:
    """Per-kind mean absolute error of reported values against ground truth.

    Findings are paired by event id when every reported id exists in the
    truth with a nearby onset, otherwise by onset proximity. Abstained
    values are counted but excluded from the error.
    """
    findings = list(report.get("findings", []))
    pairs = _match_findings(findings, truth, window_s)
    table = {}
    rows = []
    errors = {k: [] for k in VALUE_KINDS}
    abstained = {k: 0 for k in VALUE_KINDS}
    for k, t in pairs:
        f, ev = findings[k], truth.events[t]
        row = {"event_id": f["event_id"], "truth_id": ev.event_id, "errors": {}, "exceeds": []}
        for name, (attr, tol) in VALUE_KINDS.items():
            m = f.get(name)
            if m is None:
                abstained[name] += 1
                continue
            err = abs(float(m["value"]) - float(getattr(ev, attr)))
            errors[name].append(err)
            row["errors"][name] = err
            if err > getattr(tolerances, tol) + 1e-9:
                row["exceeds"].append(name)
        rows.append(row)
    for name, (_, tol) in VALUE_KINDS.items():
        e = np.asarray(errors[name])
        limit = getattr(tolerances, tol)
        table[name] = {
            "mae": float(e.mean()) if e.size else None,
            "median": float(np.median(e)) if e.size else None,
            "n": int(e.size),
            "abstained": abstained[name],
            "tolerance": limit,
            "n_exceeding": int(np.sum(e > limit + 1e-9)),
            "within_tolerance_fraction": float(np.mean(e <= limit + 1e-9)) if e.size else None,
            "mae_exceeds_tolerance": bool(e.size and e.mean() > limit + 1e-9),
        }
    return {"kinds": table, "matched": len(pairs), "unmatched_findings": len(findings) - len(pairs),
            "unmatched_truth": len(truth.events) - len(pairs), "events": rows}
