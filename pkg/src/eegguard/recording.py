"""Core containers: multi-channel dual-rate recordings and channel montages."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

HEMISPHERES = ("left", "right", "midline")

# Approximate 2-D scalp positions (x: left->right, y: back->front) of the
# 10-20 system, used for neighbour graphs and distances.
_POSITIONS_1020 = {
    "Fp1": (-1.0, 4.0), "Fp2": (1.0, 4.0),
    "F7": (-3.0, 2.5), "F3": (-1.5, 2.0), "Fz": (0.0, 2.0), "F4": (1.5, 2.0), "F8": (3.0, 2.5),
    "T3": (-4.0, 0.0), "C3": (-2.0, 0.0), "Cz": (0.0, 0.0), "C4": (2.0, 0.0), "T4": (4.0, 0.0),
    "T5": (-3.0, -2.5), "P3": (-1.5, -2.0), "Pz": (0.0, -2.0), "P4": (1.5, -2.0), "T6": (3.0, -2.5),
    "O1": (-1.0, -4.0), "O2": (1.0, -4.0),
}
STANDARD_1020 = tuple(_POSITIONS_1020)


class ConfigurationError(ValueError):
    """Raised for invalid parameters (cutoffs above Nyquist, bad shapes...)."""


@dataclass(frozen=True)
class ClinicalTolerances:
    """Diagnostic tolerances for frequency (Hz), duration (s), amplitude (uV)."""

    eps_f_hz: float = 0.1
    eps_d_s: float = 0.5
    eps_a_uv: float = 5.0

    def __post_init__(self):
        for name in ("eps_f_hz", "eps_d_s", "eps_a_uv"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class MontageGraph:
    """Undirected channel graph with a hemisphere assignment per node.

    Nodes are channel indices ``0..n_nodes-1``. ``distances`` is optional and,
    when given, holds one non-negative weight per edge (same order as ``edges``).
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    hemisphere_map: Mapping[int, str]
    distances: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ConfigurationError("montage needs at least one node")
        edges = []
        for a, b in self.edges:
            a, b = int(a), int(b)
            if not (0 <= a < self.n_nodes and 0 <= b < self.n_nodes):
                raise ConfigurationError(f"edge ({a}, {b}) references a missing node")
            if a == b:
                raise ConfigurationError(f"self-loop on node {a}")
            edges.append((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", tuple(edges))
        hemi = {int(k): str(v) for k, v in self.hemisphere_map.items()}
        missing = set(range(self.n_nodes)) - set(hemi)
        if missing:
            raise ConfigurationError(f"hemisphere_map misses nodes {sorted(missing)}")
        bad = {v for v in hemi.values() if v not in HEMISPHERES}
        if bad:
            raise ConfigurationError(f"unknown hemisphere labels {sorted(bad)}")
        object.__setattr__(self, "hemisphere_map", hemi)
        if self.distances is not None:
            dist = tuple(float(d) for d in self.distances)
            if len(dist) != len(edges) or any(not math.isfinite(d) or d < 0 for d in dist):
                raise ConfigurationError("distances must be one finite non-negative weight per edge")
            object.__setattr__(self, "distances", dist)

    def side(self, name: str) -> list[int]:
        return [i for i in range(self.n_nodes) if self.hemisphere_map[i] == name]

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes))
        for a, b in self.edges:
            adj[a, b] = adj[b, a] = 1.0
        return adj

    def distance_matrix(self) -> np.ndarray:
        """Edge distances as a symmetric matrix; non-edges are ``inf``, diagonal 0."""
        dist = np.full((self.n_nodes, self.n_nodes), np.inf)
        np.fill_diagonal(dist, 0.0)
        weights = self.distances or (1.0,) * len(self.edges)
        for (a, b), d in zip(self.edges, weights):
            dist[a, b] = dist[b, a] = d
        return dist

    def to_dict(self, channels: Sequence[str] | None = None) -> dict:
        out = {
            "n_nodes": self.n_nodes,
            "edges": [list(e) for e in self.edges],
            "hemisphere": {str(k): v for k, v in sorted(self.hemisphere_map.items())},
            "distances": list(self.distances) if self.distances is not None else None,
        }
        if channels is not None:
            out["channels"] = list(channels)
        return out

    @classmethod
    def from_dict(cls, doc: Mapping, channels: Sequence[str] | None = None) -> "MontageGraph":
        """Build from a JSON document.

        Hemisphere keys may be node indices or channel names; in the latter case
        ``channels`` (or a ``channels`` entry in the document) resolves them.
        Edges may likewise be given as index pairs or name pairs.
        """
        names = list(doc.get("channels") or channels or [])
        lookup = {n: i for i, n in enumerate(names)}

        def index(key):
            if isinstance(key, str) and not key.lstrip("-").isdigit():
                if key not in lookup:
                    raise ConfigurationError(f"montage references unknown channel {key!r}")
                return lookup[key]
            return int(key)

        n_nodes = int(doc.get("n_nodes", len(names)))
        if channels is not None and names and list(channels) != names:
            # montage written for a different channel order: remap by name
            remap = {i: list(channels).index(n) for i, n in enumerate(names) if n in channels}
            if len(remap) != len(channels):
                raise ConfigurationError("montage does not cover every recording channel")
            n_nodes = len(channels)
            hemi = {remap[index(k)]: v for k, v in doc["hemisphere"].items() if index(k) in remap}
            edges = [(remap[index(a)], remap[index(b)]) for a, b in doc.get("edges", [])
                     if index(a) in remap and index(b) in remap]
            return cls(n_nodes, tuple(edges), hemi, None)
        hemi = {index(k): v for k, v in doc["hemisphere"].items()}
        edges = tuple((index(a), index(b)) for a, b in doc.get("edges", []))
        dist = doc.get("distances")
        return cls(n_nodes, edges, hemi, tuple(dist) if dist is not None else None)


def hemisphere_of(name: str) -> str:
    """10-20 convention: odd suffix left, even suffix right, ``z`` midline."""
    tail = name.rstrip()[-1:].lower()
    if tail == "z":
        return "midline"
    if tail.isdigit():
        return "left" if int(tail) % 2 == 1 else "right"
    return "midline"


def standard_montage(channels: Sequence[str], neighbour_radius: float = 2.6) -> MontageGraph:
    """Neighbour graph for 10-20 channel names.

    Channels with known scalp positions are linked when closer than
    ``neighbour_radius``; unknown names get a hemisphere from their suffix and
    are left unconnected.
    """
    n = len(channels)
    hemi = {i: hemisphere_of(c) for i, c in enumerate(channels)}
    edges, dists = [], []
    for i in range(n):
        for j in range(i + 1, n):
            pi, pj = _POSITIONS_1020.get(channels[i]), _POSITIONS_1020.get(channels[j])
            if pi is None or pj is None:
                continue
            d = math.dist(pi, pj)
            if d < neighbour_radius:
                edges.append((i, j))
                dists.append(d)
    return MontageGraph(n, tuple(edges), hemi, tuple(dists))


def default_channel_names(n_channels: int) -> list[str]:
    """10-20 names for up to 19 channels, otherwise ``Ch1..ChN``."""
    if n_channels <= len(STANDARD_1020):
        # interleave so small montages still cover both hemispheres
        order = ["Fp1", "Fp2", "C3", "C4", "O1", "O2", "F3", "F4", "T3", "T4", "P3", "P4",
                 "F7", "F8", "T5", "T6", "Fz", "Cz", "Pz"]
        return order[:n_channels]
    return [f"Ch{i + 1}" for i in range(n_channels)]


def _as_samples(data, n_channels: int, label: str) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] != n_channels:
        raise ConfigurationError(f"{label} must have shape ({n_channels}, T), got {arr.shape}")
    if arr.shape[1] < 1:
        raise ConfigurationError(f"{label} is empty")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{label} contains NaN or Inf")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Recording:
    """Synchronized low-rate (and optional high-rate) multi-channel EEG in uV.

    Sample ``k`` of a stream sits at ``start_time + k / rate``. Arrays are
    copied on construction and made read-only.
    """

    channels: tuple[str, ...]
    low_rate_hz: float
    samples_low: np.ndarray
    montage: MontageGraph
    high_rate_hz: float | None = None
    samples_high: np.ndarray | None = None
    start_time: float = 0.0
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        channels = tuple(str(c) for c in self.channels)
        if not channels:
            raise ConfigurationError("a recording needs at least one channel")
        object.__setattr__(self, "channels", channels)
        if not (math.isfinite(self.low_rate_hz) and self.low_rate_hz > 0):
            raise ConfigurationError("low_rate_hz must be positive")
        object.__setattr__(self, "low_rate_hz", float(self.low_rate_hz))
        object.__setattr__(self, "samples_low", _as_samples(self.samples_low, len(channels), "samples_low"))
        if (self.samples_high is None) != (self.high_rate_hz is None):
            raise ConfigurationError("high_rate_hz and samples_high must be given together")
        if self.samples_high is not None:
            if not (math.isfinite(self.high_rate_hz) and self.high_rate_hz > self.low_rate_hz):
                raise ConfigurationError("high_rate_hz must exceed low_rate_hz")
            object.__setattr__(self, "high_rate_hz", float(self.high_rate_hz))
            object.__setattr__(self, "samples_high",
                               _as_samples(self.samples_high, len(channels), "samples_high"))
        if self.montage.n_nodes != len(channels):
            raise ConfigurationError("montage node count differs from channel count")
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "notes", tuple(self.notes))

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def duration_s(self) -> float:
        return self.samples_low.shape[1] / self.low_rate_hz

    @property
    def has_high(self) -> bool:
        return self.samples_high is not None

    def stream(self, which: str) -> tuple[np.ndarray, float]:
        """Return ``(samples, rate)`` for ``"low"`` or ``"high"``."""
        if which == "low":
            return self.samples_low, self.low_rate_hz
        if which == "high":
            if not self.has_high:
                raise ConfigurationError("recording has no high-rate stream")
            return self.samples_high, self.high_rate_hz
        raise ConfigurationError(f"unknown stream {which!r}")

    def crop(self, which: str, t_start_s: float, t_end_s: float,
             channels: Sequence[int] | None = None) -> np.ndarray:
        """Samples of one stream between two times (seconds from recording start).

        The first index is ``round(t_start_s * rate)`` and the length is
        ``round((t_end_s - t_start_s) * rate)``, both clamped to the stream.
        """
        data, rate = self.stream(which)
        n_total = data.shape[1]
        i0 = min(max(int(round(t_start_s * rate)), 0), n_total)
        n = max(int(round((t_end_s - t_start_s) * rate)), 0)
        i1 = min(i0 + n, n_total)
        rows = data if channels is None else data[list(channels)]
        return rows[:, i0:i1]

    def replace(self, **changes) -> "Recording":
        fields = dict(
            channels=self.channels, low_rate_hz=self.low_rate_hz, samples_low=self.samples_low,
            montage=self.montage, high_rate_hz=self.high_rate_hz, samples_high=self.samples_high,
            start_time=self.start_time, notes=self.notes,
        )
        fields.update(changes)
        return Recording(**fields)
