"""Keyshot F1 against multi-user references, k-fold aggregation, split audit and generation."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

MODES = ("avg", "max")


@dataclass(frozen=True)
class Fold:
    train_keys: list[str]
    test_keys: list[str]


@dataclass(frozen=True)
class SplitSet:
    folds: list[Fold]

    def __len__(self):
        return len(self.folds)

    def to_json(self) -> list[dict]:
        return [{"train_keys": list(f.train_keys), "test_keys": list(f.test_keys)} for f in self.folds]


class SplitFormatError(ValueError):
    pass


def parse_splits(obj) -> SplitSet:
    """Accept a bare list of ``{train_keys, test_keys}`` or a ``{"splits": [...]}`` wrapper."""
    if isinstance(obj, dict):
        if "splits" not in obj:
            raise SplitFormatError("top-level object has no 'splits' key")
        obj = obj["splits"]
    if not isinstance(obj, list):
        raise SplitFormatError("expected a list of folds")
    folds = []
    for i, entry in enumerate(obj):
        if not isinstance(entry, dict):
            raise SplitFormatError(f"fold {i}: expected an object")
        for key in ("train_keys", "test_keys"):
            if key not in entry or not isinstance(entry[key], list):
                raise SplitFormatError(f"fold {i}: missing or non-list '{key}'")
        folds.append(Fold([str(k) for k in entry["train_keys"]], [str(k) for k in entry["test_keys"]]))
    return SplitSet(folds)


def load_splits(path) -> SplitSet:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SplitFormatError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return parse_splits(obj)
    except SplitFormatError as exc:
        raise SplitFormatError(f"{path}: {exc}") from exc


def save_splits(splits: SplitSet, path, **meta):
    payload = {"splits": splits.to_json(), **meta}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def generate_splits(universe, k=5, seed=0) -> SplitSet:
    """Seeded shuffle cut into ``k`` test folds whose sizes differ by at most one."""
    keys = list(universe)
    if len(set(keys)) != len(keys):
        raise ValueError("universe contains duplicate keys")
    if not 1 <= k <= len(keys):
        raise ValueError(f"k={k} out of range [1, {len(keys)}]")
    order = np.random.default_rng(seed).permutation(len(keys))
    shuffled = [keys[i] for i in order]
    folds = []
    for part in np.array_split(np.arange(len(keys)), k):
        test = [shuffled[i] for i in part]
        test_set = set(test)
        folds.append(Fold([key for key in keys if key not in test_set], test))
    return SplitSet(folds)


@dataclass
class AuditReport:
    universe_size: int
    missing: list[str]
    duplicated: list[tuple[str, int]]
    unknown: list[str]
    overlapping_folds: list[int] = field(default_factory=list)

    @property
    def missing_fraction(self) -> Fraction:
        return Fraction(len(self.missing), self.universe_size) if self.universe_size else Fraction(0)

    @property
    def duplicated_fraction(self) -> Fraction:
        return Fraction(len(self.duplicated), self.universe_size) if self.universe_size else Fraction(0)

    @property
    def clean(self) -> bool:
        return not (self.missing or self.duplicated or self.unknown or self.overlapping_folds)

    def to_json(self) -> dict:
        return {
            "universe_size": self.universe_size,
            "missing": self.missing,
            "duplicated": [{"key": k, "count": c} for k, c in self.duplicated],
            "unknown": self.unknown,
            "overlapping_folds": self.overlapping_folds,
            "missing_fraction": float(self.missing_fraction),
            "duplicated_fraction": float(self.duplicated_fraction),
        }

    def table(self) -> str:
        rows = [
            "| quantity | value |",
            "|---|---|",
            f"| universe size | {self.universe_size} |",
            f"| missing from every test fold | {len(self.missing)} ({float(self.missing_fraction):.2%}) |",
            f"| tested more than once | {len(self.duplicated)} ({float(self.duplicated_fraction):.2%}) |",
            f"| unknown keys | {len(self.unknown)} |",
            f"| folds with train/test overlap | {len(self.overlapping_folds)} |",
        ]
        if self.missing:
            rows.append(f"| missing keys | {', '.join(self.missing)} |")
        if self.duplicated:
            rows.append("| duplicated keys | " + ", ".join(f"{k} x{c}" for k, c in self.duplicated) + " |")
        if self.unknown:
            rows.append(f"| unknown keys | {', '.join(self.unknown)} |")
        return "\n".join(rows)


def audit_splits(splits: SplitSet, universe) -> AuditReport:
    """Count each key's test multiplicity across folds."""
    universe = list(universe)
    known = set(universe)
    counts = Counter(key for fold in splits.folds for key in fold.test_keys)
    missing = sorted(k for k in known if counts[k] == 0)
    duplicated = sorted((k, counts[k]) for k in known if counts[k] >= 2)
    seen = {k for fold in splits.folds for k in fold.train_keys + fold.test_keys}
    unknown = sorted(seen - known)
    overlapping = [i for i, f in enumerate(splits.folds) if set(f.train_keys) & set(f.test_keys)]
    return AuditReport(len(known), missing, duplicated, unknown, overlapping)


# ---------------------------------------------------------------- F1

def f1_single(machine, user) -> float:
    machine = np.asarray(machine).astype(bool)
    user = np.asarray(user).astype(bool)
    if machine.shape != user.shape:
        raise ValueError(f"mask length mismatch: {machine.shape} vs {user.shape}")
    overlap = int(np.sum(machine & user))
    n_machine, n_user = int(machine.sum()), int(user.sum())
    precision = overlap / n_machine if n_machine else 0.0
    recall = overlap / n_user if n_user else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class VideoResult:
    video_id: str
    per_user_f1: list[float]
    aggregated: float
    mode: str


def aggregate(per_user, mode) -> float:
    if mode == "avg":
        return float(np.mean(per_user))
    if mode == "max":
        return float(np.max(per_user))
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def evaluate_video(machine, refs, mode="avg", video_id="") -> VideoResult:
    mask = getattr(machine, "mask", machine)
    masks = getattr(refs, "masks", refs)
    per_user = [f1_single(mask, masks[u]) for u in range(masks.shape[0])]
    return VideoResult(video_id, per_user, aggregate(per_user, mode), mode)


@dataclass
class EvalResult:
    mode: str
    folds: list[list[VideoResult]]

    @property
    def fold_means(self) -> list[float]:
        return [float(np.mean([v.aggregated for v in fold])) if fold else 0.0 for fold in self.folds]

    @property
    def overall(self) -> float:
        return float(np.mean(self.fold_means))

    def rows(self):
        for i, fold in enumerate(self.folds):
            for v in fold:
                yield v.video_id, i, float(np.mean(v.per_user_f1)), v.aggregated, v.mode


def cross_validate(dataset, splits: SplitSet, summary_provider, mode="avg") -> EvalResult:
    """Fold score = mean over its test videos (each occurrence counted once); overall = mean of folds.

    ``summary_provider(fold_index, record)`` returns the machine summary for a
    test video under that fold's model.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    videos = getattr(dataset, "videos", dataset)
    folds = []
    for i, fold in enumerate(splits.folds):
        results = []
        for key in fold.test_keys:
            if key not in videos:
                raise KeyError(f"fold {i}: test video {key!r} not in dataset")
            rec = videos[key]
            summary = summary_provider(i, rec)
            results.append(evaluate_video(summary, rec.references, mode, key))
        folds.append(results)
    return EvalResult(mode, folds)
