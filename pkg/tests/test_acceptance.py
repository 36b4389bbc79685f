"""Acceptance criteria, one test per criterion.

Criterion 6 has an optional external half: set ``MCSF_PRIOR_SPLITS_DIR`` to a
directory holding the published ``summe_splits.json`` and
``tvsum_splits.json`` to run it.
"""

import filecmp
import itertools
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from mcsf.dataio import SourceStream, generate_synthetic_dataset
from mcsf.decomp import AttentionParams, decompose, difference_attention, reassemble, scatter
from mcsf.evalsplit import (Fold, SplitSet, audit_splits, cross_validate, evaluate_video, f1_single,
                            generate_splits, load_splits)
from mcsf.model import forward, init_params
from mcsf.shotselect import knapsack_select, kts_step_segments
from mcsf.training import TrainConfig, gradient_check, train

from conftest import FUSION_CONFIGS, gradcheck_instances, make_record



# ---------------------------------------------------------------- 1

def test_criterion_1_gradient_oracle():
    start = time.perf_counter()
    failures = []
    for label, rec, scorer, decoder, config in gradcheck_instances():
        report = gradient_check(rec, scorer, decoder, config, epsilon=1e-5)
        if report.worst > 1e-4:
            failures.append((label, report.worst))
    elapsed = time.perf_counter() - start
    assert elapsed <= 120, f"{elapsed:.0f}s"
    assert not failures, f"{len(failures)}/100 instances above 1e-4: {failures}"


# ---------------------------------------------------------------- 2

def test_criterion_2_knapsack_vs_brute_force():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    for _ in range(200):
        n = int(rng.integers(0, 13))
        values = rng.uniform(0, 1, n).tolist()
        weights = rng.integers(1, 30, n).tolist()
        cap = int(rng.integers(0, 100))
        best = max((sum(values[i] for i in s) for r in range(n + 1)
                    for s in itertools.combinations(range(n), r) if sum(weights[i] for i in s) <= cap),
                   default=0.0)
        res = knapsack_select(values, weights, cap)
        assert res.weight <= cap
        assert sum(weights[i] for i in res.chosen) == res.weight
        assert abs(res.value - best) <= 1e-12
    assert time.perf_counter() - start <= 10


# ---------------------------------------------------------------- 3

def _brute_segment_cost(x, k):
    T = len(x)
    best = np.inf
    for cuts in itertools.combinations(range(1, T), k - 1):
        b = (0, *cuts, T)
        best = min(best, sum(((x[u:v] - x[u:v].mean(axis=0)) ** 2).sum() for u, v in zip(b[:-1], b[1:])))
    return best


def test_criterion_3_segmentation_vs_exhaustive():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    for _ in range(100):
        T = int(rng.integers(1, 17))
        x = rng.normal(size=(T, int(rng.integers(1, 5))))
        for k in range(1, min(3, T) + 1):
            _, cost = kts_step_segments(x, k)
            assert abs(cost - _brute_segment_cost(x, k)) <= 1e-9 * max(1.0, cost)
    assert time.perf_counter() - start <= 30


# ---------------------------------------------------------------- 4

def test_criterion_4_decomposition():
    rng = np.random.default_rng(4)
    for n in range(1, 65):
        v = rng.normal(size=n)
        for m in range(1, n + 1):
            dec = decompose(n, m)
            for branch in ("chunk", "stride"):
                idx = np.sort(np.concatenate(dec.segments(branch)))
                assert np.array_equal(idx, np.arange(n))
                assert np.array_equal(reassemble(dec, scatter(dec, v, branch), branch), v)


# ---------------------------------------------------------------- 5

def test_criterion_5_fusion_algebra():
    rng = np.random.default_rng(5)
    dims = {"objects": 6, "places": 8}
    rec = make_record({k: rng.normal(size=(14, d)) for k, d in dims.items()})

    late = init_params("late", dims, hidden=4, seed=1)
    late = late.copy({k: (np.zeros_like(v) if k.startswith("places.") else v) for k, v in late.tensors.items()})
    single = init_params("single", {"objects": 6}, hidden=4, seed=2)
    single = single.copy({k: late.tensors[k] for k in single.tensors})
    assert np.max(np.abs(forward(rec, late, 3) - forward(rec, single, 3))) <= 1e-12

    for strategy in ("single", "early", "intermediate", "late"):
        d = {"objects": 6} if strategy == "single" else dims
        params = init_params(strategy, d, hidden=4, seed=3)
        zero = params.copy({k: np.zeros_like(v) for k, v in params.tensors.items()})
        assert np.all(forward(rec, zero, 3) == 0.5), strategy

    const = np.tile(rng.normal(size=6), (11, 1))
    att = difference_attention(SourceStream("objects", const),
                               AttentionParams(rng.normal(size=(3, 6)), rng.normal(size=3)))
    assert np.all(att == att[0])


# ---------------------------------------------------------------- 6

def test_criterion_6_split_methodology():
    for n in (25, 50):
        keys = [f"video_{i}" for i in range(1, n + 1)]
        splits = generate_splits(keys, k=5, seed=0)
        rep = audit_splits(splits, keys)
        assert rep.missing == [] and rep.duplicated == [] and rep.clean
        assert [len(f.test_keys) for f in splits.folds] == [n // 5] * 5


PRIOR_DIR = os.environ.get("MCSF_PRIOR_SPLITS_DIR")


@pytest.mark.skipif(not PRIOR_DIR, reason="optional-external: set MCSF_PRIOR_SPLITS_DIR to the published split files")
def test_criterion_6_external_prior_splits():
    for fname, n, expected in (("summe_splits.json", 25, 0.28), ("tvsum_splits.json", 50, 0.32)):
        splits = load_splits(Path(PRIOR_DIR) / fname)
        rep = audit_splits(splits, [f"video_{i}" for i in range(1, n + 1)])
        assert float(rep.missing_fraction) == pytest.approx(expected, abs=1e-12), fname


# ---------------------------------------------------------------- 7

def test_criterion_7_evaluation_protocol():
    assert f1_single([1, 1, 0, 0], [1, 0, 1, 0]) == 0.5
    assert f1_single([1, 1, 1, 0], [1, 0, 0, 1]) == pytest.approx(0.4, abs=1e-15)
    assert f1_single([1, 0, 1, 0], [1, 0, 1, 0]) == 1.0
    assert f1_single([0, 0, 0, 0], [1, 0, 1, 0]) == 0.0

    rng = np.random.default_rng(7)
    for _ in range(200):
        refs = rng.integers(0, 2, size=(int(rng.integers(2, 8)), 40))
        mask = rng.integers(0, 2, 40)
        assert evaluate_video(mask, refs, "max").aggregated >= evaluate_video(mask, refs, "avg").aggregated

    # duplicated test video: each occurrence counts once inside its own fold
    masks = np.zeros((1, 30), dtype=np.uint8)
    masks[0, :6] = 1
    ds = {k: make_record({"objects": np.zeros((2, 2))}, n_frames=30, picks=np.array([0, 15]),
                         masks=masks, video_id=k) for k in ("a", "b", "c")}
    splits = SplitSet([Fold(["c"], ["a", "b"]), Fold(["b"], ["a", "c"])])
    res = cross_validate(ds, splits, lambda i, r: masks[0] if r.video_id == "a" else np.zeros(30), "avg")
    assert res.fold_means == [0.5, 0.5] and res.overall == 0.5


# ---------------------------------------------------------------- 8

def test_criterion_8_training_smoke():
    ds = generate_synthetic_dataset(n_videos=4, n_frames=300, seed=7)
    start = time.perf_counter()
    for strategy, space in FUSION_CONFIGS:
        config = TrainConfig(strategy=strategy, epochs=50, seed=0)
        first = train(ds, config, late_fusion_space=space)
        again = train(ds, config, late_fusion_space=space)
        assert first.history == again.history
        ratio = first.history[-1].total / first.history[0].total
        assert ratio <= 0.5, (strategy, space, ratio)
    assert time.perf_counter() - start <= 300


# ---------------------------------------------------------------- 9

VARIANTS = [
    ("o", ["--strategy", "single", "--sources", "objects"]),
    ("p", ["--strategy", "single", "--sources", "places"]),
    ("early", ["--strategy", "early"]),
    ("intermediate", ["--strategy", "intermediate"]),
    ("late", ["--strategy", "late"]),
]


def _pipeline(workdir: Path, jobs: int):
    workdir.mkdir()

    def run(*args):
        proc = subprocess.run([sys.executable, "-m", "mcsf", *args], cwd=workdir, capture_output=True, text=True)
        assert proc.returncode == 0, (args, proc.stderr)

    run("dataset", "synth", "--out", "data", "--videos", "10", "--frames", "300", "--seed", "7")
    run("splits", "generate", "--data", "data", "--k", "5", "--seed", "0", "--out", "splits.json")
    evals = []
    for name, flags in VARIANTS:
        out = f"runs/{name}"
        run("train", "--data", "data", "--splits", "splits.json", "--out", out, "--epochs", "10",
            "--jobs", str(jobs), *flags)
        run("score", "--run", out, "--data", "data")
        run("summarize", "--run", out, "--data", "data")
        run("evaluate", "--run", out, "--data", "data")
        evals.append(f"{out}/eval_avg.json")
    run("report", *evals, "--out", "report")


def _same_tree(a: Path, b: Path):
    cmp = filecmp.dircmp(a, b)
    assert not (cmp.left_only or cmp.right_only or cmp.funny_files), (a, cmp.left_only, cmp.right_only)
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    assert not mismatch and not errors, (a, mismatch, errors)
    for d in cmp.common_dirs:
        _same_tree(a / d, b / d)


def test_criterion_9_end_to_end(tmp_path):
    start = time.perf_counter()
    _pipeline(tmp_path / "run1", jobs=1)
    single_threaded = time.perf_counter() - start
    assert single_threaded <= 600
    _pipeline(tmp_path / "run2", jobs=1)
    _pipeline(tmp_path / "run4", jobs=4)
    _same_tree(tmp_path / "run1", tmp_path / "run2")
    _same_tree(tmp_path / "run1", tmp_path / "run4")

    rows = (tmp_path / "run1" / "report" / "ablation.csv").read_text().splitlines()
    assert len(rows) == 6
    assert [r.split(",")[1:3] for r in rows[1:]] == [["-", "O"], ["-", "P"], ["Early", "O + P"],
                                                     ["Intermediate", "O + P"], ["Late (logit)", "O + P"]]
