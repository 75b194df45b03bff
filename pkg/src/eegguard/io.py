"""File formats: EEGR stream containers, CSV fixtures, minimal EDF, JSON documents.

EEGR stream file (one per sampling rate), little-endian::

    offset  size  field
    0       4     magic b"EEGR"
    4       2     format version (u16, currently 1)
    6       2     channel count C (u16)
    8       8     sampling rate in Hz (f64)
    16      8     samples per channel N (u64)
    24      4*C*N samples in microvolts, f32, channel-major

A recording is a JSON sidecar ``<name>.json`` naming its channels, montage,
start time and the stream files ``<name>.low.eegr`` / ``<name>.high.eegr``.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .recording import ConfigurationError, MontageGraph, Recording, standard_montage
from .synth import GroundTruth

MAGIC = b"EEGR"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHdQ")
SIDECAR_FORMAT = "eegr-recording"


class InputError(ValueError):
    """A file could not be read or does not follow its format."""


def write_stream(path, samples: np.ndarray, rate_hz: float) -> int:
    """Write one stream; returns the number of bytes written."""
    samples = np.atleast_2d(np.asarray(samples))
    c, n = samples.shape
    if c > 0xFFFF:
        raise ConfigurationError("too many channels for the container")
    data = np.ascontiguousarray(samples, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, c, float(rate_hz), n))
        data.tofile(fh)
    return HEADER.size + data.nbytes


def read_stream(path) -> tuple[np.ndarray, float]:
    """Read one stream file as ``(samples float64 C x N, rate_hz)``."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(HEADER.size)
            if len(head) < HEADER.size:
                raise InputError(f"{path}: truncated header")
            magic, version, c, rate, n = HEADER.unpack(head)
            if magic != MAGIC:
                raise InputError(f"{path}: bad magic {magic!r}")
            if version != FORMAT_VERSION:
                raise InputError(f"{path}: unsupported version {version}")
            data = np.fromfile(fh, dtype="<f4", count=c * n)
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if data.size != c * n:
        raise InputError(f"{path}: expected {c * n} samples, found {data.size}")
    return data.reshape(c, n).astype(np.float64), float(rate)


def stream_size_bytes(n_channels: int, n_samples: int) -> int:
    return HEADER.size + 4 * n_channels * n_samples


def write_recording(rec: Recording, path) -> Path:
    """Write ``rec`` as ``<stem>.json`` plus stream files next to it; returns the sidecar path."""
    path = Path(path)
    stem = path.name[:-5] if path.name.endswith(".json") else path.name
    folder = path.parent
    folder.mkdir(parents=True, exist_ok=True)
    low_name = f"{stem}.low.eegr"
    write_stream(folder / low_name, rec.samples_low, rec.low_rate_hz)
    high_name = None
    if rec.has_high:
        high_name = f"{stem}.high.eegr"
        write_stream(folder / high_name, rec.samples_high, rec.high_rate_hz)
    sidecar = {
        "format": SIDECAR_FORMAT,
        "version": FORMAT_VERSION,
        "channels": list(rec.channels),
        "start_time": rec.start_time,
        "montage": rec.montage.to_dict(rec.channels),
        "streams": {"low": low_name, "high": high_name},
        "notes": list(rec.notes),
    }
    out = folder / f"{stem}.json"
    write_json(out, sidecar)
    return out


def read_recording(path, montage: MontageGraph | Mapping | None = None) -> Recording:
    """Load a recording from a sidecar (``.json``), a bare stream (``.eegr``), CSV or EDF.

    ``montage`` overrides the one stored in the file (a MontageGraph or a
    montage document); formats without a montage fall back to
    :func:`standard_montage` of the channel names.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    suffix = path.suffix.lower()
    if suffix == ".json":
        rec = _read_sidecar(path)
    elif suffix == ".eegr":
        data, rate = read_stream(path)
        names = [f"Ch{i + 1}" for i in range(data.shape[0])]
        rec = _assemble(names, rate, data, None)
    elif suffix == ".csv":
        rec = read_csv(path)
    elif suffix in (".edf", ".bdf"):
        rec = read_edf(path)
    else:
        raise InputError(f"{path}: unknown recording format {suffix!r}")
    if montage is not None:
        graph = montage if isinstance(montage, MontageGraph) else MontageGraph.from_dict(montage, rec.channels)
        rec = rec.replace(montage=graph)
    return rec


def _assemble(names: Sequence[str], rate: float, data: np.ndarray, montage_doc, **extra) -> Recording:
    try:
        graph = (MontageGraph.from_dict(montage_doc, names) if montage_doc is not None
                 else standard_montage(names))
        return Recording(tuple(names), rate, data, graph, **extra)
    except (ConfigurationError, KeyError, TypeError) as exc:
        raise InputError(str(exc)) from exc


def _read_sidecar(path: Path) -> Recording:
    doc = read_json(path)
    if doc.get("format") != SIDECAR_FORMAT:
        raise InputError(f"{path}: not an {SIDECAR_FORMAT} sidecar")
    streams = doc.get("streams") or {}
    if not streams.get("low"):
        raise InputError(f"{path}: sidecar names no low-rate stream")
    low, low_rate = read_stream(path.parent / streams["low"])
    names = doc.get("channels") or [f"Ch{i + 1}" for i in range(low.shape[0])]
    extra = {"start_time": float(doc.get("start_time", 0.0)), "notes": tuple(doc.get("notes", ()))}
    if streams.get("high"):
        high, high_rate = read_stream(path.parent / streams["high"])
        extra.update(samples_high=high, high_rate_hz=high_rate)
    return _assemble(names, low_rate, low, doc.get("montage"), **extra)


def read_csv(path) -> Recording:
    """Headered CSV: a time column (seconds) then one column per channel (uV)."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh))
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, StopIteration, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    if len(header) < 2 or data.shape[1] != len(header):
        raise InputError(f"{path}: need a time column and at least one channel column")
    t = data[:, 0]
    if t.size < 2:
        raise InputError(f"{path}: need at least two samples")
    dt = np.diff(t)
    step = float(np.median(dt))
    if step <= 0 or np.max(np.abs(dt - step)) > 1e-6 * max(step, 1.0) + 1e-9:
        raise InputError(f"{path}: time column is not uniformly increasing")
    rate = 1.0 / step
    if abs(rate - round(rate)) < 1e-6 * rate:
        rate = float(round(rate))
    names = [h.strip() for h in header[1:]]
    return _assemble(names, rate, data[:, 1:].T, None, start_time=float(t[0]))


def write_csv(rec: Recording, path) -> None:
    t = rec.start_time + np.arange(rec.samples_low.shape[1]) / rec.low_rate_hz
    table = np.column_stack([t, rec.samples_low.T])
    header = ",".join(["time"] + list(rec.channels))
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.9g")


# -- minimal EDF ----------------------------------------------------------------

def read_edf(path) -> Recording:
    """Plain EDF (16-bit) reader: every signal must share one sampling rate.

    Annotation channels (``EDF Annotations``) are skipped.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from exc
    try:
        header_bytes = int(raw[184:192].decode("ascii").strip())
        n_records = int(raw[236:244].decode("ascii").strip())
        record_s = float(raw[244:252].decode("ascii").strip())
        ns = int(raw[252:256].decode("ascii").strip())

        def field(offset, width):
            start = 256 + offset * ns
            return [raw[start + i * width: start + (i + 1) * width].decode("ascii").strip() for i in range(ns)]

        labels = field(0, 16)
        phys_min = [float(v) for v in field(104, 8)]
        phys_max = [float(v) for v in field(112, 8)]
        dig_min = [float(v) for v in field(120, 8)]
        dig_max = [float(v) for v in field(128, 8)]
        per_record = [int(v) for v in field(216, 8)]
    except (ValueError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: malformed EDF header ({exc})") from exc
    keep = [i for i, lab in enumerate(labels) if lab != "EDF Annotations"]
    if not keep or len({per_record[i] for i in keep}) != 1:
        raise InputError(f"{path}: signals must share one sampling rate")
    total = sum(per_record)
    if len(raw) < header_bytes + 2 * n_records * total:
        raise InputError(f"{path}: truncated data records")
    body = np.frombuffer(raw, dtype="<i2", offset=header_bytes, count=n_records * total)
    body = body.reshape(n_records, total)
    offsets = np.concatenate(([0], np.cumsum(per_record)))
    rows = []
    for i in keep:
        d = body[:, offsets[i]:offsets[i + 1]].reshape(-1).astype(np.float64)
        gain = (phys_max[i] - phys_min[i]) / (dig_max[i] - dig_min[i])
        rows.append(phys_min[i] + (d - dig_min[i]) * gain)
    rate = per_record[keep[0]] / record_s
    return _assemble([labels[i] for i in keep], rate, np.vstack(rows), None)


def write_edf(path, channels: Sequence[str], samples: np.ndarray, rate_hz: float,
              physical_range: tuple[float, float] = (-3276.8, 3276.7)) -> None:
    """Write a one-second-record plain EDF file (for fixtures and interchange)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    ns, n = samples.shape
    per_record = int(round(rate_hz))
    if abs(per_record - rate_hz) > 1e-9 or n % per_record:
        raise ConfigurationError("EDF writer needs an integer rate and whole-second length")
    n_records = n // per_record
    lo, hi = physical_range
    dmin, dmax = -32768, 32767
    digital = np.clip(np.round((samples - lo) / (hi - lo) * (dmax - dmin) + dmin), dmin, dmax).astype("<i2")

    def pad(value, width):
        return str(value)[:width].ljust(width).encode("ascii")

    head = b"".join([pad(0, 8), pad("X X X X", 80), pad("Startdate X X X X", 80), pad("01.01.00", 8),
                     pad("00.00.00", 8), pad(256 * (ns + 1), 8), pad("", 44), pad(n_records, 8),
                     pad(1, 8), pad(ns, 4)])
    cols = [(16, list(channels)), (80, [""] * ns), (8, ["uV"] * ns), (8, [lo] * ns), (8, [hi] * ns),
            (8, [dmin] * ns), (8, [dmax] * ns), (80, [""] * ns), (8, [per_record] * ns), (32, [""] * ns)]
    head += b"".join(pad(v, w) for w, values in cols for v in values)
    body = digital.reshape(ns, n_records, per_record).transpose(1, 0, 2).tobytes()
    Path(path).write_bytes(head + body)


# -- JSON documents ------------------------------------------------------------

def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def read_montage(path, channels: Sequence[str] | None = None) -> MontageGraph:
    try:
        return MontageGraph.from_dict(read_json(path), channels)
    except (ConfigurationError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def read_ground_truth(path) -> GroundTruth:
    try:
        return GroundTruth.from_dict(read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc
