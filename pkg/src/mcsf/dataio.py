"""Dataset container: manifest + raw feature / user-summary files.

Layout of a dataset directory::

    manifest.json
    features/<video_id>_<source>.f32   raw little-endian float32, n_steps x dim
    users/<video_id>.u8                raw bytes, n_users x n_frames, values 0/1

Shapes live only in the manifest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SOURCES = ("objects", "places")
FEATURE_DTYPE = np.dtype("<f4")
MANIFEST_NAME = "manifest.json"


class DatasetError(Exception):
    """Raised when a dataset on disk cannot be loaded."""


class ShapeMismatchError(DatasetError):
    pass


class ValidationError(DatasetError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class SourceStream:
    source_tag: str
    values: np.ndarray  # (n_steps, dim) float64

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ReferenceSummaries:
    masks: np.ndarray  # (n_users, n_frames) uint8

    @property
    def n_users(self) -> int:
        return self.masks.shape[0]


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    n_frames: int
    picks: np.ndarray
    streams: dict[str, SourceStream]
    references: ReferenceSummaries
    change_points: list[tuple[int, int]] | None = None

    @property
    def n_steps(self) -> int:
        return len(self.picks)


@dataclass
class Dataset:
    name: str
    videos: dict[str, VideoRecord] = field(default_factory=dict)
    root: Path | None = None

    @property
    def keys(self) -> list[str]:
        return list(self.videos)

    def __len__(self):
        return len(self.videos)

    def __getitem__(self, key) -> VideoRecord:
        return self.videos[key]


def validate_record(record: VideoRecord) -> list[str]:
    """Return every invariant violation of ``record`` (empty list when valid)."""
    vid = record.video_id
    out = []
    if record.n_frames < 1:
        out.append(f"{vid}: n_frames must be positive, got {record.n_frames}")

    picks = np.asarray(record.picks)
    if picks.ndim != 1 or len(picks) == 0:
        out.append(f"{vid}: picks must be a non-empty 1-D list")
    else:
        if picks[0] < 0:
            out.append(f"{vid}: picks[0] is negative")
        if np.any(np.diff(picks) <= 0):
            out.append(f"{vid}: picks not strictly increasing")
        if picks[-1] >= record.n_frames:
            out.append(f"{vid}: picks[last]={picks[-1]} >= n_frames={record.n_frames}")

    if not record.streams:
        out.append(f"{vid}: no feature streams")
    steps = {}
    for tag, stream in record.streams.items():
        if tag not in SOURCES:
            out.append(f"{vid}: unknown source tag {tag!r}")
        if stream.source_tag != tag:
            out.append(f"{vid}: stream under key {tag!r} is tagged {stream.source_tag!r}")
        vals = stream.values
        if vals.ndim != 2 or vals.shape[1] < 1:
            out.append(f"{vid}: stream {tag} must be a (n_steps, dim) matrix")
            continue
        steps[tag] = vals.shape[0]
        if vals.shape[0] < 2:
            out.append(f"{vid}: stream {tag} has n_steps={vals.shape[0]} < 2")
        if not np.all(np.isfinite(vals)):
            out.append(f"{vid}: stream {tag} contains non-finite values")
    if len(set(steps.values())) > 1:
        desc = ", ".join(f"{t}={n}" for t, n in steps.items())
        out.append(f"{vid}: streams disagree on n_steps ({desc})")
    elif steps and picks.ndim == 1:
        n = next(iter(steps.values()))
        if n != len(picks):
            out.append(f"{vid}: streams have n_steps={n} but len(picks)={len(picks)}")

    masks = record.references.masks
    if masks.ndim != 2 or masks.shape[0] < 1:
        out.append(f"{vid}: references need at least one user mask")
    else:
        if masks.shape[1] != record.n_frames:
            out.append(f"{vid}: user masks have length {masks.shape[1]} != n_frames={record.n_frames}")
        for u in range(masks.shape[0]):
            if np.any((masks[u] != 0) & (masks[u] != 1)):
                out.append(f"{vid}: user {u} mask has values outside {{0,1}}")

    if record.change_points is not None:
        out.extend(f"{vid}: change_points {msg}" for msg in
                   _partition_problems(record.change_points, record.n_frames))
    return out


def _partition_problems(segments, n_frames) -> list[str]:
    if len(segments) == 0:
        return ["empty"]
    problems = []
    expected = 0
    for i, (start, end) in enumerate(segments):
        if start != expected:
            problems.append(f"segment {i} starts at {start}, expected {expected}")
        if end <= start:
            problems.append(f"segment {i} is empty")
        expected = end
    if expected != n_frames:
        problems.append(f"last segment ends at {expected}, expected {n_frames}")
    return problems


def _read_raw(path: Path, dtype, shape, what):
    if not path.is_file():
        raise DatasetError(f"{what}: missing file {path}")
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    size = path.stat().st_size
    if size != expected:
        raise ShapeMismatchError(
            f"{what}: {path} has {size} bytes, expected {expected} for shape {tuple(shape)}")
    return np.fromfile(path, dtype=dtype).reshape(shape)


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetError(f"missing file {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest_path}: malformed JSON at line {exc.lineno} col {exc.colno}") from exc
    try:
        name = manifest["dataset_name"]
        entries = manifest["videos"]
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"{manifest_path}: missing key {exc}") from exc

    ds = Dataset(name=name, root=root)
    for entry in entries:
        vid = entry["id"]
        if vid in ds.videos:
            raise ValidationError([f"{vid}: duplicate video id"])
        n_frames = int(entry["n_frames"])
        picks = np.asarray(entry["picks"], dtype=np.int64)
        streams = {}
        for tag, spec in entry["streams"].items():
            vals = _read_raw(root / spec["path"], FEATURE_DTYPE, (len(picks), int(spec["dim"])),
                             f"{vid}.streams.{tag}")
            streams[tag] = SourceStream(tag, vals.astype(np.float64))
        users = entry["users"]
        masks = _read_raw(root / users["path"], np.uint8, (int(users["n_users"]), n_frames),
                          f"{vid}.users")
        cps = entry.get("change_points")
        if cps is not None:
            cps = [(int(a), int(b)) for a, b in cps]
        record = VideoRecord(vid, n_frames, picks, streams, ReferenceSummaries(masks), cps)
        problems = validate_record(record)
        if problems:
            raise ValidationError(problems)
        ds.videos[vid] = record
    return ds


def save_dataset(dataset: Dataset, root) -> Path:
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "users").mkdir(parents=True, exist_ok=True)
    entries = []
    for vid, rec in dataset.videos.items():
        streams = {}
        for tag, stream in rec.streams.items():
            rel = f"features/{vid}_{tag}.f32"
            stream.values.astype(FEATURE_DTYPE).tofile(root / rel)
            streams[tag] = {"path": rel, "dim": stream.dim}
        rel_users = f"users/{vid}.u8"
        rec.references.masks.astype(np.uint8).tofile(root / rel_users)
        entries.append({
            "id": vid,
            "n_frames": rec.n_frames,
            "picks": [int(p) for p in rec.picks],
            "streams": streams,
            "users": {"path": rel_users, "n_users": rec.references.n_users},
            "change_points": None if rec.change_points is None
            else [[int(a), int(b)] for a, b in rec.change_points],
        })
    manifest = {"dataset_name": dataset.name, "videos": entries}
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def subsample_picks(n_frames: int, stride: int = 15) -> np.ndarray:
    """Every ``stride``-th frame: 2 steps per second for 30 fps video."""
    return np.arange(0, n_frames, stride, dtype=np.int64)


def _plant_segments(rng, n_steps, n_segments):
    cuts = np.sort(rng.choice(np.arange(1, n_steps), size=n_segments - 1, replace=False))
    bounds = np.concatenate([[0], cuts, [n_steps]])
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def _user_mask(rng, n_frames, frame_segments, events):
    # Users mostly pick a window inside each event segment plus one random window.
    target = int(round(rng.uniform(0.12, 0.18) * n_frames))
    lengths = [int(0.4 * target), int(0.4 * target)]
    lengths.append(target - sum(lengths))
    mask = np.zeros(n_frames, dtype=np.uint8)
    anchors = [frame_segments[e] for e in events] + [(0, n_frames)]
    for (lo, hi), length in zip(anchors, lengths):
        start_max = max(lo, hi - length)
        start = int(rng.integers(lo, start_max + 1)) if start_max > lo else lo
        start = min(start, n_frames - length)
        mask[start:start + length] = 1
    # grow rightwards (wrapping) until the target is met, so overlap never shrinks the budget
    pos = int(np.flatnonzero(mask)[-1])
    while mask.sum() < target:
        pos = (pos + 1) % n_frames
        mask[pos] = 1
    return mask


def generate_synthetic_dataset(out_dir=None, n_videos=4, n_frames=300, dims=None, n_users=5,
                               seed=7, noise=0.1, with_change_points=True, name="synthetic"):
    """Write (if ``out_dir`` given) and return a seeded synthetic dataset.

    Features are piecewise constant per planted segment plus uniform noise in
    ``[-noise, noise]``.  Two segments per video are "events" that users favour.
    """
    dims = dict(dims or {"objects": 8, "places": 12})
    if n_videos < 1 or n_users < 1:
        raise ValueError("n_videos and n_users must be positive")
    if n_frames < 30:
        raise ValueError(f"n_frames must be >= 30, got {n_frames}")
    for tag, d in dims.items():
        if tag not in SOURCES:
            raise ValueError(f"unknown source {tag!r}")
        if d < 2:
            raise ValueError(f"dim for {tag} must be >= 2, got {d}")

    rng = np.random.default_rng(seed)
    ds = Dataset(name=name)
    picks = subsample_picks(n_frames)
    n_steps = len(picks)
    for v in range(n_videos):
        vid = f"video_{v + 1}"
        n_seg = int(rng.integers(min(3, n_steps), min(6, n_steps) + 1))
        step_segments = _plant_segments(rng, n_steps, n_seg)
        bounds = [int(picks[a]) for a, _ in step_segments] + [n_frames]
        frame_segments = list(zip(bounds[:-1], bounds[1:]))
        events = sorted(rng.choice(n_seg, size=2, replace=False).tolist())

        streams = {}
        for tag in SOURCES:
            if tag not in dims:
                continue
            means = rng.normal(0.0, 1.0, size=(n_seg, dims[tag]))
            vals = np.empty((n_steps, dims[tag]))
            for s, (a, b) in enumerate(step_segments):
                vals[a:b] = means[s]
            vals += rng.uniform(-noise, noise, size=vals.shape)
            streams[tag] = SourceStream(tag, vals.astype(FEATURE_DTYPE).astype(np.float64))

        masks = np.stack([_user_mask(rng, n_frames, frame_segments, events) for _ in range(n_users)])
        cps = frame_segments if with_change_points else None
        ds.videos[vid] = VideoRecord(vid, n_frames, picks.copy(), streams,
                                     ReferenceSummaries(masks), cps)
    if out_dir is not None:
        save_dataset(ds, out_dir)
        ds.root = Path(out_dir)
    return ds


def default_segment_count(n_steps: int) -> int:
    return max(1, math.ceil(math.sqrt(n_steps)))
