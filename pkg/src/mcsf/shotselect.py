"""Per-step scores -> binary keyshot summary over original frames."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_BUDGET = 0.15
STEPS_PER_SHOT = 20


@dataclass(frozen=True)
class KnapsackResult:
    chosen: list[int]
    value: float
    weight: int


@dataclass
class MachineSummary:
    mask: np.ndarray
    selected_shots: list[int]
    budget_frames: int
    segments: list[tuple[int, int]] = field(default_factory=list)
    segmentation: str = "provided"


def upsample_scores(p, picks, n_frames) -> np.ndarray:
    """Step-function expansion of per-step scores onto original frames.

    Step ``i`` covers frames ``[picks[i], picks[i+1])``; the last step runs to
    the end of the video and frames before ``picks[0]`` take ``p[0]``.
    """
    p = np.asarray(p, dtype=np.float64)
    picks = np.asarray(picks, dtype=np.int64)
    if len(p) != len(picks):
        raise ValueError(f"{len(p)} scores for {len(picks)} picks")
    if len(picks) == 0 or picks[0] < 0 or picks[-1] >= n_frames or np.any(np.diff(picks) <= 0):
        raise ValueError("picks must be strictly increasing indices inside [0, n_frames)")
    step_of_frame = np.searchsorted(picks, np.arange(n_frames), side="right") - 1
    return p[np.maximum(step_of_frame, 0)]


def segment_cost_table(features) -> np.ndarray:
    """cost[i, j] = within-segment squared deviation of steps [i, j) (j > i)."""
    x = np.asarray(getattr(features, "values", features), dtype=np.float64)
    T = x.shape[0]
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    csq = np.concatenate([[0.0], np.cumsum(np.sum(x * x, axis=1))])
    i = np.arange(T + 1)[:, None]
    j = np.arange(T + 1)[None, :]
    n = np.maximum(j - i, 1)
    seg_sum = csum[None, :, :] - csum[:, None, :]
    cost = (csq[None, :] - csq[:, None]) - np.sum(seg_sum * seg_sum, axis=2) / n
    cost[j <= i] = np.inf
    return np.maximum(cost, 0.0)


def kts_step_segments(features, n_segments: int) -> tuple[list[tuple[int, int]], float]:
    """Optimal partition of the steps into ``n_segments`` contiguous segments.

    Minimises the total within-segment squared deviation from the segment
    means by dynamic programming over (segment count, end step).
    """
    x = np.asarray(getattr(features, "values", features), dtype=np.float64)
    T = x.shape[0]
    if not 1 <= n_segments <= T:
        raise ValueError(f"target_segments={n_segments} out of range [1, {T}]")
    cost = segment_cost_table(x)
    best = np.full((n_segments + 1, T + 1), np.inf)
    back = np.zeros((n_segments + 1, T + 1), dtype=np.int64)
    best[0, 0] = 0.0
    for k in range(1, n_segments + 1):
        for j in range(k, T + 1):
            cand = best[k - 1, :j] + cost[:j, j]
            # argmin picks the earliest start on ties
            i = int(np.argmin(cand))
            best[k, j] = cand[i]
            back[k, j] = i
    bounds = [T]
    for k in range(n_segments, 0, -1):
        bounds.append(int(back[k, bounds[-1]]))
    bounds.reverse()
    return list(zip(bounds[:-1], bounds[1:])), float(best[n_segments, T])


def auto_segment_count(n_steps: int) -> int:
    return max(1, int(math.floor(n_steps / STEPS_PER_SHOT + 0.5)))


def kts_segment(features, picks, n_frames, target_segments=None) -> list[tuple[int, int]]:
    """Shot boundaries over original frames from feature-based segmentation."""
    x = np.asarray(getattr(features, "values", features))
    n = target_segments if target_segments is not None else auto_segment_count(x.shape[0])
    steps, _ = kts_step_segments(x, n)
    starts = [0] + [int(picks[a]) for a, _ in steps[1:]]
    return list(zip(starts, starts[1:] + [n_frames]))


def shot_values(frame_scores, segments) -> tuple[np.ndarray, np.ndarray]:
    """(mean frame score, frame count) per shot."""
    frame_scores = np.asarray(frame_scores, dtype=np.float64)
    values = np.array([frame_scores[a:b].mean() for a, b in segments])
    weights = np.array([b - a for a, b in segments], dtype=np.int64)
    return values, weights


def knapsack_select(values, weights, capacity) -> KnapsackResult:
    """Exact 0/1 knapsack by DP over integer capacity.

    An item is taken only when it strictly improves the value, so among
    equal-value optima the solution without the higher-indexed item wins.
    """
    values = [float(v) for v in values]
    weights = [int(w) for w in weights]
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive integers")
    capacity = max(int(capacity), 0)
    n = len(values)
    table = np.zeros((n + 1, capacity + 1))
    take = np.zeros((n + 1, capacity + 1), dtype=bool)
    for i in range(1, n + 1):
        w, v = weights[i - 1], values[i - 1]
        prev = table[i - 1]
        table[i] = prev
        if w <= capacity:
            cand = prev[:capacity + 1 - w] + v
            better = cand > prev[w:]
            table[i, w:][better] = cand[better]
            take[i, w:] = better
    chosen = []
    c = capacity
    for i in range(n, 0, -1):
        if take[i, c]:
            chosen.append(i - 1)
            c -= weights[i - 1]
    chosen.reverse()
    return KnapsackResult(chosen, sum(values[i] for i in chosen), sum(weights[i] for i in chosen))


def budget_frames(n_frames, budget_fraction=DEFAULT_BUDGET) -> int:
    # tiny slack so e.g. 0.15 * 60 does not floor to 8
    return int(math.floor(budget_fraction * n_frames + 1e-9))


def summarize(record, p, budget_fraction=DEFAULT_BUDGET, segment_source="objects",
              target_segments=None) -> MachineSummary:
    """Upsample, segment, score shots and pick them under the frame budget."""
    frame_scores = upsample_scores(p, record.picks, record.n_frames)
    if record.change_points is not None:
        segments = [tuple(s) for s in record.change_points]
        how = "provided"
    else:
        tag = segment_source if segment_source in record.streams else sorted(record.streams)[0]
        segments = kts_segment(record.streams[tag], record.picks, record.n_frames, target_segments)
        how = f"kts:{tag}"
    values, weights = shot_values(frame_scores, segments)
    cap = budget_frames(record.n_frames, budget_fraction)
    result = knapsack_select(values, weights, cap)
    mask = np.zeros(record.n_frames, dtype=np.uint8)
    for k in result.chosen:
        a, b = segments[k]
        mask[a:b] = 1
    return MachineSummary(mask, result.chosen, cap, segments, how)


def write_summary(summary: MachineSummary, path, video_id, scores_path=None):
    """Raw 0/1 byte mask at ``<path>.mask`` plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary.mask.astype(np.uint8).tofile(path.with_suffix(".mask"))
    sidecar = {
        "video_id": video_id,
        "n_frames": int(len(summary.mask)),
        "budget_frames": summary.budget_frames,
        "selected_shots": [int(k) for k in summary.selected_shots],
        "segments": [[int(a), int(b)] for a, b in summary.segments],
        "segmentation": summary.segmentation,
        "scores_path": None if scores_path is None else str(scores_path),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n",
                                         encoding="utf-8")


def read_summary_mask(path, n_frames) -> np.ndarray:
    path = Path(path).with_suffix(".mask")
    if not path.is_file():
        raise FileNotFoundError(f"missing summary file {path}")
    mask = np.fromfile(path, dtype=np.uint8)
    if len(mask) != n_frames:
        raise ValueError(f"{path}: {len(mask)} bytes, expected {n_frames}")
    return mask
