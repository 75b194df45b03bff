"""Desk-scale forward-pass stack and the training losses.

No training happens here: weights are seeded at random, hand-set, or loaded
from a weight file. The stack is patch embedding followed by alternating
graph-biased channel attention and diagonal linear state-space scans.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import signal

from .recording import ConfigurationError, MontageGraph

EPS_PROB = 1e-12


@dataclass(frozen=True)
class BackboneConfig:
    model_dim: int = 512
    heads: int = 8
    layers: int = 4
    coarse_patch: int = 64
    fine_patch: int = 256
    graph_bias_strength: float = 1.0
    state_dim: int = 16
    quantile_levels: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    horizon: int = 64
    stack: str = "alternating"

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ConfigurationError("model_dim must be divisible by heads")
        if min(self.coarse_patch, self.fine_patch, self.layers, self.horizon, self.state_dim) < 1:
            raise ConfigurationError("patch sizes, layers, horizon and state_dim must be positive")
        if self.stack not in ("alternating", "attention_first", "ssm_first"):
            raise ConfigurationError(f"unknown stack order {self.stack!r}")
        levels = tuple(float(a) for a in self.quantile_levels)
        if not all(0 < a < 1 for a in levels):
            raise ConfigurationError("quantile levels must lie in (0, 1)")
        object.__setattr__(self, "quantile_levels", levels)


# -- patching ----------------------------------------------------------------

def patchify(x, patch_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Split the last axis into non-overlapping patches.

    Returns ``(patches, mask)`` with shape ``(..., n_patches, patch_len)``; the
    final partial patch is zero-padded and ``mask`` is False on the padding.
    """
    if patch_len < 1:
        raise ConfigurationError("patch_len must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    n_patches = max(1, math.ceil(n / patch_len))
    pad = n_patches * patch_len - n
    widths = [(0, 0)] * (x.ndim - 1) + [(0, pad)]
    padded = np.pad(x, widths)
    valid = np.pad(np.ones(n, dtype=bool), (0, pad))
    shape = x.shape[:-1] + (n_patches, patch_len)
    mask = np.broadcast_to(valid.reshape(n_patches, patch_len), shape)
    return padded.reshape(shape), mask.copy()


def unpatchify(patches: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Inverse of :func:`patchify` for a single sequence."""
    return patches.reshape(-1)[mask.reshape(-1)]


# -- attention ---------------------------------------------------------------

def _ordered_sum(terms: np.ndarray, axis: int) -> np.ndarray:
    # summing sorted terms makes the result independent of input order
    return np.sum(np.sort(terms, axis=axis), axis=axis)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.expand_dims(_ordered_sum(e, axis), axis)


def graph_attention(Q, K, V, B, beta: float, return_weights: bool = False):
    """Scaled dot-product attention with an additive bias ``beta * B``.

    ``A = softmax(Q K^T / sqrt(d) + beta * B)`` row-wise; returns ``A V``
    (and ``A`` when ``return_weights``). Reductions over keys sum sorted
    terms, so permuting the tokens permutes the output bit for bit.
    """
    Q, K, V, B = (np.asarray(m, dtype=np.float64) for m in (Q, K, V, B))
    for name, m in (("Q", Q), ("K", K), ("V", V), ("B", B)):
        if np.isnan(m).any():
            raise ConfigurationError(f"NaN in {name}")
    n, d = Q.shape
    if K.shape != (n, d) or V.shape[0] != n or B.shape != (n, n):
        raise ConfigurationError("inconsistent attention shapes")
    logits = Q @ K.T / math.sqrt(d)
    if beta != 0:
        logits = logits + beta * B
    A = softmax(logits, axis=-1)
    out = _ordered_sum(A[:, :, None] * V[None, :, :], axis=1)
    return (out, A) if return_weights else out


def bias_matrix(montage: MontageGraph, kind: str = "adjacency") -> np.ndarray:
    """Channel bias: 1 for montage neighbours (``adjacency``) or ``-distance`` (``distance``)."""
    if kind == "adjacency":
        return montage.adjacency()
    if kind == "distance":
        dist = montage.distance_matrix()
        finite = np.isfinite(dist)
        far = dist[finite].max() * 2 if finite.any() else 1.0
        return -np.where(finite, dist, far)
    raise ConfigurationError(f"unknown bias kind {kind!r}")


# -- state space -------------------------------------------------------------

@dataclass(frozen=True)
class SSMParams:
    """Diagonal linear SSM ``x[k+1] = a * x[k] + B_in u[k]``, ``y[k] = C_out x[k] + D u[k]``."""

    a: np.ndarray
    B_in: np.ndarray
    C_out: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).ravel()
        if np.any(np.abs(a) > 1.0) or not np.all(np.isfinite(a)):
            raise ConfigurationError("unstable state matrix: need |a_i| <= 1")
        B_in = np.atleast_2d(np.asarray(self.B_in, dtype=np.float64))
        C_out = np.atleast_2d(np.asarray(self.C_out, dtype=np.float64))
        D = np.atleast_2d(np.asarray(self.D, dtype=np.float64))
        if B_in.shape[0] != a.size or C_out.shape[1] != a.size:
            raise ConfigurationError("B_in must be (n_state, d_in) and C_out (d_out, n_state)")
        if D.shape != (C_out.shape[0], B_in.shape[1]):
            raise ConfigurationError("D must be (d_out, d_in)")
        for name, v in (("a", a), ("B_in", B_in), ("C_out", C_out), ("D", D)):
            object.__setattr__(self, name, v)

    @classmethod
    def random(cls, d_in: int, d_out: int, n_state: int, rng: np.random.Generator) -> "SSMParams":
        a = rng.uniform(0.5, 0.99, n_state)
        return cls(a, rng.normal(0, 1 / math.sqrt(d_in), (n_state, d_in)),
                   rng.normal(0, 1 / math.sqrt(n_state), (d_out, n_state)),
                   rng.normal(0, 1 / math.sqrt(d_in), (d_out, d_in)))


def ssm_scan(u, params: SSMParams) -> np.ndarray:
    """Run the recurrence over ``u`` of shape ``(n, d_in)`` in one linear pass.

    Each diagonal state is a first-order recursive filter, evaluated with
    :func:`scipy.signal.lfilter`; the state starts at zero.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    # state-major layout keeps every filtered row contiguous in memory
    drive = np.ascontiguousarray(params.B_in @ u.T)  # (n_state, n)
    states = np.empty_like(drive)
    for i, a_i in enumerate(params.a):
        states[i] = signal.lfilter([0.0, 1.0], [1.0, -a_i], drive[i])
    return (params.C_out @ states).T + u @ params.D.T


# -- heads -------------------------------------------------------------------

def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


@dataclass(frozen=True)
class DetectionHead:
    """Mean-pool over patches, affine map, logistic squashing."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64).ravel())

    @property
    def n_features(self) -> int:
        return self.weights.size

    @classmethod
    def from_seed(cls, n_features: int, seed: int) -> "DetectionHead":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0, 1 / math.sqrt(n_features), n_features), float(rng.normal(0, 0.1)))

    @classmethod
    def trigger_default(cls) -> "DetectionHead":
        """Hand-set head over gate trigger features ``(energy_z, kurtosis, prominence_db)``."""
        return cls(np.array([0.25, 0.15, 0.2]), -3.0)

    def score(self, features) -> float | np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if f.shape[-1] != self.n_features:
            raise ConfigurationError(f"expected {self.n_features} features, got {f.shape[-1]}")
        if f.ndim >= 2:
            f = f.mean(axis=-2)
        f = np.clip(np.nan_to_num(f, nan=0.0, posinf=1e6, neginf=-1e6), -1e6, 1e6)
        p = sigmoid(f @ self.weights + self.bias)
        return float(p) if np.ndim(p) == 0 else p

    def to_weights(self, prefix: str = "head") -> dict[str, np.ndarray]:
        return {f"{prefix}.weights": self.weights, f"{prefix}.bias": np.array([self.bias])}

    @classmethod
    def from_weights(cls, tensors: Mapping[str, np.ndarray], prefix: str = "head") -> "DetectionHead":
        return cls(tensors[f"{prefix}.weights"], float(np.ravel(tensors[f"{prefix}.bias"])[0]))


def detect_score(features, head: DetectionHead) -> float | np.ndarray:
    """Seizure probability for window features (``(n_features,)`` or ``(n_patches, n_features)``)."""
    return head.score(features)


@dataclass(frozen=True)
class QuantileForecast:
    """``values[h, k]`` is the forecast of level ``quantile_levels[k]`` at step ``h``."""

    quantile_levels: tuple[float, ...]
    values: np.ndarray
    sorted_applied: bool = False

    @classmethod
    def from_raw(cls, levels: Sequence[float], values) -> "QuantileForecast":
        """Sort each horizon step across levels, recording whether any crossing was fixed."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(levels):
            raise ConfigurationError("values must be (horizon, n_levels)")
        order = np.argsort(levels)
        levels = tuple(float(levels[i]) for i in order)
        values = values[:, order]
        fixed = np.sort(values, axis=1)
        return cls(levels, fixed, bool(np.any(fixed != values)))

    @property
    def horizon(self) -> int:
        return self.values.shape[0]


class Backbone:
    """Patch embedding plus alternating graph-attention / SSM layers.

    Attention mixes channels at each patch position (group attention biased
    by the montage graph); SSM layers run along patch time per channel.
    """

    def __init__(self, config: BackboneConfig, n_channels: int, bias: np.ndarray | None = None,
                 seed: int = 42, tensors: Mapping[str, np.ndarray] | None = None):
        self.config = config
        self.n_channels = n_channels
        self.bias = np.zeros((n_channels, n_channels)) if bias is None else np.asarray(bias, dtype=np.float64)
        if self.bias.shape != (n_channels, n_channels):
            raise ConfigurationError("bias must be (n_channels, n_channels)")
        self.tensors = dict(tensors) if tensors is not None else self._init(seed)

    def layer_kinds(self) -> list[str]:
        cfg = self.config
        if cfg.stack == "alternating":
            return ["attention" if i % 2 == 0 else "ssm" for i in range(cfg.layers)]
        first, second = ("attention", "ssm") if cfg.stack == "attention_first" else ("ssm", "attention")
        half = cfg.layers // 2
        return [first] * (cfg.layers - half) + [second] * half

    def _init(self, seed: int) -> dict[str, np.ndarray]:
        cfg, rng = self.config, np.random.default_rng(seed)
        d, p = cfg.model_dim, cfg.coarse_patch
        t = {"embed.weight": rng.normal(0, 1 / math.sqrt(p), (p, d))}
        for i, kind in enumerate(self.layer_kinds()):
            if kind == "attention":
                for m in ("q", "k", "v", "o"):
                    t[f"layer{i}.{m}"] = rng.normal(0, 1 / math.sqrt(d), (d, d))
            else:
                ssm = SSMParams.random(d, d, cfg.state_dim, rng)
                t[f"layer{i}.a"], t[f"layer{i}.B"] = ssm.a, ssm.B_in
                t[f"layer{i}.C"], t[f"layer{i}.D"] = ssm.C_out, ssm.D
        t["detect.weights"] = rng.normal(0, 1 / math.sqrt(d), d)
        t["detect.bias"] = np.zeros(1)
        k = len(cfg.quantile_levels)
        t["quantile.weight"] = rng.normal(0, 1 / math.sqrt(d), (d, cfg.horizon * k))
        return t

    def embed(self, window) -> np.ndarray:
        """Encode a ``(n_channels, n_samples)`` window to ``(n_channels, n_patches, d)``."""
        cfg = self.config
        window = np.atleast_2d(np.asarray(window, dtype=np.float64))
        if window.shape[0] != self.n_channels:
            raise ConfigurationError("window channel count differs from backbone")
        patches, mask = patchify(window, cfg.coarse_patch)
        h = patches @ self.tensors["embed.weight"]
        heads, dh = cfg.heads, cfg.model_dim // cfg.heads
        for i, kind in enumerate(self.layer_kinds()):
            if kind == "attention":
                q, k, v = (h @ self.tensors[f"layer{i}.{m}"] for m in ("q", "k", "v"))
                mixed = np.empty_like(h)
                for t in range(h.shape[1]):
                    for hd in range(heads):
                        sl = slice(hd * dh, (hd + 1) * dh)
                        mixed[:, t, sl] = graph_attention(q[:, t, sl], k[:, t, sl], v[:, t, sl],
                                                          self.bias, cfg.graph_bias_strength)
                h = h + mixed @ self.tensors[f"layer{i}.o"]
            else:
                params = SSMParams(self.tensors[f"layer{i}.a"], self.tensors[f"layer{i}.B"],
                                   self.tensors[f"layer{i}.C"], self.tensors[f"layer{i}.D"])
                h = h + np.stack([ssm_scan(h[c], params) for c in range(h.shape[0])])
            h = h / (np.sqrt(np.mean(h ** 2, axis=-1, keepdims=True)) + 1e-6)
        return h

    def detect(self, window) -> float:
        h = self.embed(window)
        head = DetectionHead.from_weights(self.tensors, "detect")
        return head.score(h.reshape(-1, h.shape[-1]))

    def forecast(self, window) -> QuantileForecast:
        h = self.embed(window).mean(axis=(0, 1))
        cfg = self.config
        raw = (h @ self.tensors["quantile.weight"]).reshape(cfg.horizon, len(cfg.quantile_levels))
        return QuantileForecast.from_raw(cfg.quantile_levels, raw)


# -- losses ------------------------------------------------------------------

def pinball(u, alpha: float):
    """Quantile check function ``u * (alpha - 1[u < 0])``."""
    u = np.asarray(u, dtype=np.float64)
    return u * (alpha - (u < 0))


def pinball_loss(y, forecast: QuantileForecast) -> float:
    """Sum over horizon steps and quantile levels of the pinball loss."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != forecast.horizon:
        raise ConfigurationError("target length differs from forecast horizon")
    levels = np.asarray(forecast.quantile_levels)
    return float(np.sum(pinball(y[:, None] - forecast.values, levels[None, :])))


def emd_loss(p, target_bin: int) -> float:
    """Sum of absolute CDF differences between ``p`` and a one-hot at ``target_bin`` (1-based)."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-6:
        raise ConfigurationError("p must be a probability vector summing to 1")
    if not 1 <= target_bin <= p.size:
        raise ConfigurationError(f"target bin {target_bin} outside 1..{p.size}")
    cdf_p = np.cumsum(p)
    cdf_y = (np.arange(1, p.size + 1) >= target_bin).astype(np.float64)
    return float(np.sum(np.abs(cdf_p - cdf_y)))


def focal_loss(p_true, gamma: float = 2.0, alpha_w: float = 1.0):
    """``-alpha_w * (1 - p)^gamma * ln p``; ``p = 0`` is clamped to 1e-12 with a warning."""
    p = np.asarray(p_true, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise ConfigurationError("p_true must lie in [0, 1]")
    if np.any(p < EPS_PROB):
        warnings.warn("p_true clamped to 1e-12", RuntimeWarning, stacklevel=2)
        p = np.maximum(p, EPS_PROB)
    loss = -alpha_w * (1.0 - p) ** gamma * np.log(p)
    return float(loss) if loss.ndim == 0 else loss


# -- weight files ------------------------------------------------------------

WEIGHTS_MAGIC = "EEGW 1"
_NAME = re.compile(r"^[A-Za-z0-9_.]+$")


def save_weights(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write tensors as a text header followed by little-endian float32 data."""
    lines = [WEIGHTS_MAGIC]
    for name, arr in tensors.items():
        if not _NAME.match(name):
            raise ConfigurationError(f"invalid tensor name {name!r}")
        arr = np.asarray(arr)
        lines.append(" ".join(["tensor", name, str(arr.ndim)] + [str(s) for s in arr.shape]))
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_weights(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    header_end = raw.find(b"\nend\n")
    if header_end < 0:
        raise ConfigurationError("weight file lacks an 'end' header line")
    lines = raw[:header_end].decode("ascii").split("\n")
    if lines[0] != WEIGHTS_MAGIC:
        raise ConfigurationError(f"bad weight file magic {lines[0]!r}")
    offset = header_end + len(b"\nend\n")
    out: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        parts = line.split()
        if len(parts) < 3 or parts[0] != "tensor" or len(parts) != 3 + int(parts[2]):
            raise ConfigurationError(f"malformed header line {line!r}")
        shape = tuple(int(s) for s in parts[3:])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(raw):
            raise ConfigurationError("weight file truncated")
        out[parts[1]] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise ConfigurationError("trailing bytes after last tensor")
    return out
