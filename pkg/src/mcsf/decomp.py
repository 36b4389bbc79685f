"""Chunk/stride decomposition of a step sequence and difference attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DELTAS = (1, 2, 4)
BRANCHES = ("chunk", "stride")


@dataclass(frozen=True)
class Decomposition:
    n_steps: int
    m: int
    chunks: tuple[np.ndarray, ...]
    strides: tuple[np.ndarray, ...]

    def segments(self, branch: str) -> tuple[np.ndarray, ...]:
        if branch == "chunk":
            return self.chunks
        if branch == "stride":
            return self.strides
        raise ValueError(f"unknown branch {branch!r}")

    def index_map(self, branch: str) -> np.ndarray:
        """(n_steps, 2) array: for every step its (segment, offset) in ``branch``."""
        out = np.empty((self.n_steps, 2), dtype=np.int64)
        for k, seg in enumerate(self.segments(branch)):
            out[seg, 0] = k
            out[seg, 1] = np.arange(len(seg))
        return out

    def padded_indices(self, branch: str, reverse: bool = False) -> np.ndarray:
        """(m, L) step indices per segment, right-padded with ``n_steps``.

        ``L`` is the longest segment.  With ``reverse`` each segment is listed
        back to front before padding, so padding always trails the real steps
        and never reaches a recurrence's real outputs.
        """
        segs = self.segments(branch)
        L = max(len(seg) for seg in segs)
        out = np.full((len(segs), L), self.n_steps, dtype=np.int64)
        for k, seg in enumerate(segs):
            out[k, :len(seg)] = seg[::-1] if reverse else seg
        return out


def decompose(n_steps: int, m: int) -> Decomposition:
    """Split ``range(n_steps)`` into ``m`` chunks and ``m`` strides.

    The first ``n_steps % m`` chunks get one extra step; stride ``k`` is
    ``k, k+m, k+2m, ...``.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be positive, got {n_steps}")
    if not 1 <= m <= n_steps:
        raise ValueError(f"segment count m={m} out of range [1, {n_steps}]")
    base, extra = divmod(n_steps, m)
    chunks = []
    start = 0
    for k in range(m):
        size = base + (1 if k < extra else 0)
        chunks.append(np.arange(start, start + size))
        start += size
    strides = [np.arange(k, n_steps, m) for k in range(m)]
    return Decomposition(n_steps, m, tuple(chunks), tuple(strides))


def scatter(dec: Decomposition, values, branch: str) -> list[np.ndarray]:
    """Gather a temporal-order vector into per-segment lists."""
    values = np.asarray(values)
    if values.shape[0] != dec.n_steps:
        raise ValueError(f"expected {dec.n_steps} values, got {values.shape[0]}")
    return [values[seg] for seg in dec.segments(branch)]


def reassemble(dec: Decomposition, segment_values, branch: str) -> np.ndarray:
    """Inverse of :func:`scatter`: restore per-segment values to temporal order."""
    segs = dec.segments(branch)
    if len(segment_values) != len(segs):
        raise ValueError(f"expected {len(segs)} segments, got {len(segment_values)}")
    first = np.asarray(segment_values[0])
    out = np.empty((dec.n_steps,) + first.shape[1:], dtype=first.dtype)
    for k, (seg, vals) in enumerate(zip(segs, segment_values)):
        vals = np.asarray(vals)
        if vals.shape[0] != len(seg):
            raise ValueError(f"segment {k}: expected {len(seg)} values, got {vals.shape[0]}")
        out[seg] = vals
    return out


@dataclass(frozen=True)
class AttentionParams:
    weights: np.ndarray  # (len(deltas), dim)
    biases: np.ndarray   # (len(deltas),)
    deltas: tuple[int, ...] = DEFAULT_DELTAS

    @classmethod
    def zeros(cls, dim, deltas=DEFAULT_DELTAS):
        return cls(np.zeros((len(deltas), dim)), np.zeros(len(deltas)), tuple(deltas))


def lagged_abs_differences(x: np.ndarray, deltas) -> tuple[np.ndarray, np.ndarray]:
    """|x_t - x_max(t-delta, 0)| for every delta: returns (abs, signed), shape (..., K, T, dim)."""
    t = np.arange(x.shape[-2])
    diffs = np.stack([x - x[..., np.maximum(t - d, 0), :] for d in deltas], axis=-3)
    return np.abs(diffs), diffs


def attention_from_params(x, weights, biases, deltas) -> np.ndarray:
    absd, _ = lagged_abs_differences(x, deltas)
    return np.einsum("...ktd,...kd->...t", absd, weights) + biases.sum(axis=-1)[..., None]


def difference_attention(stream, params: AttentionParams) -> np.ndarray:
    """Per-step scalar sum over deltas of ``w_delta . |x_t - x_{t-delta}| + b_delta``."""
    x = getattr(stream, "values", stream)
    if params.weights.shape[1] != x.shape[1]:
        raise ValueError(f"attention dim {params.weights.shape[1]} != stream dim {x.shape[1]}")
    return attention_from_params(x, params.weights, params.biases, params.deltas)


def multi_source_attention(streams: dict, params: dict) -> np.ndarray:
    if set(streams) != set(params):
        raise ValueError(f"source mismatch: streams {sorted(streams)} vs params {sorted(params)}")
    total = None
    for tag in sorted(streams):
        d = difference_attention(streams[tag], params[tag])
        total = d if total is None else total + d
    return total
