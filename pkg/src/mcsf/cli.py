"""Command line entry point: ``mcsf <group> <command> ...``.

Exit codes: 0 success, 1 I/O or runtime failure, 2 invalid data / config / parse error.
Every command validates all inputs before writing anything.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, evalsplit, model, report, shotselect, training

log = logging.getLogger("mcsf")

DEFAULTS = {
    "strategy": "late",
    "sources": None,
    "m": None,
    "deltas": [1, 2, 4],
    "hidden": 32,
    "decoder_hidden": 32,
    "common_dim": None,
    "budget_fraction": 0.15,
    "sigma_target": 0.15,
    "lambda_sparsity": 1.0,
    "lr": 1e-3,
    "epochs": 50,
    "clip_norm": 5.0,
    "seed": 0,
    "mode": None,
    "late_fusion_space": "logit",
    "share_branch_rnn": False,
    "primary_source": "objects",
    "split_kind": None,
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _fail(message, code=2):
    raise CliError(message, code)


# ---------------------------------------------------------------- config

def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            _fail(f"missing config file {path}", 1)
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            _fail(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            _fail(f"{path}: unknown config keys {unknown}")
        cfg.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if isinstance(cfg["sources"], str):
        cfg["sources"] = [s for s in cfg["sources"].split(",") if s]
    if isinstance(cfg["deltas"], str):
        cfg["deltas"] = [int(d) for d in cfg["deltas"].split(",") if d]
    _validate_config(cfg)
    return cfg


def _validate_config(cfg):
    problems = []
    if cfg["strategy"] not in model.STRATEGIES:
        problems.append(f"strategy must be one of {model.STRATEGIES}")
    if cfg["late_fusion_space"] not in model.LATE_SPACES:
        problems.append(f"late_fusion_space must be one of {model.LATE_SPACES}")
    if cfg["mode"] not in (None, *evalsplit.MODES):
        problems.append(f"mode must be one of {evalsplit.MODES}")
    if cfg["sources"] is not None:
        bad = [s for s in cfg["sources"] if s not in dataio.SOURCES]
        if bad:
            problems.append(f"unknown sources {bad}")
        arity = 1 if cfg["strategy"] == "single" else 2
        if len(cfg["sources"]) != arity:
            problems.append(f"strategy {cfg['strategy']} needs {arity} source(s)")
    if not cfg["deltas"] or min(cfg["deltas"]) < 1:
        problems.append("deltas must be positive integers")
    if cfg["hidden"] < 1 or cfg["decoder_hidden"] < 1:
        problems.append("hidden sizes must be >= 1")
    if cfg["m"] is not None and cfg["m"] < 1:
        problems.append("m must be >= 1")
    if not 0 < cfg["budget_fraction"] <= 1:
        problems.append("budget_fraction must lie in (0, 1]")
    if cfg["split_kind"] not in (None, "prior", "non-overlapping"):
        problems.append("split_kind must be 'prior' or 'non-overlapping'")
    try:
        train_config(cfg).validate()
    except ValueError as exc:
        problems.append(str(exc))
    if problems:
        _fail("invalid configuration: " + "; ".join(problems))


def train_config(cfg) -> training.TrainConfig:
    return training.TrainConfig(
        epochs=cfg["epochs"], learning_rate=cfg["lr"], clip_norm=cfg["clip_norm"],
        lambda_sparsity=cfg["lambda_sparsity"], sigma_target=cfg["sigma_target"], seed=cfg["seed"],
        m=cfg["m"], strategy=cfg["strategy"], primary_source=cfg["primary_source"],
        hidden=cfg["hidden"], decoder_hidden=cfg["decoder_hidden"])


def _sources(cfg, dataset):
    if cfg["sources"]:
        return list(cfg["sources"])
    if cfg["strategy"] == "single":
        return [cfg["primary_source"]]
    return sorted({tag for rec in dataset.videos.values() for tag in rec.streams})


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _echo_config(out_dir, cfg, command, **inputs):
    _write_json(Path(out_dir) / "run_config.json", {"command": command, "inputs": inputs, "config": cfg})


def _load_dataset(path):
    try:
        return dataio.load_dataset(path)
    except (dataio.ShapeMismatchError, dataio.ValidationError) as exc:
        _fail(str(exc), 2)
    except dataio.DatasetError as exc:
        _fail(str(exc), 1)


def _load_splits(path):
    if not Path(path).is_file():
        _fail(f"missing split file {path}", 1)
    try:
        return evalsplit.load_splits(path)
    except evalsplit.SplitFormatError as exc:
        _fail(str(exc), 2)


# ---------------------------------------------------------------- dataset

def _parse_dims(text):
    dims = {}
    for part in text.split(","):
        tag, _, value = part.partition("=")
        if not value.isdigit():
            _fail(f"bad --dims entry {part!r}; expected source=int")
        dims[tag] = int(value)
    return dims


def cmd_dataset_synth(args):
    dims = _parse_dims(args.dims)
    try:
        ds = dataio.generate_synthetic_dataset(None, args.videos, args.frames, dims, args.users,
                                               args.seed, with_change_points=not args.no_change_points,
                                               name=args.name)
    except ValueError as exc:
        _fail(str(exc))
    dataio.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} videos to {args.out}")


def cmd_dataset_validate(args):
    root = Path(args.path)
    manifest = root / dataio.MANIFEST_NAME
    if not manifest.is_file():
        _fail(f"missing file {manifest}", 1)
    try:
        ds = dataio.load_dataset(root)
    except (dataio.ShapeMismatchError, dataio.ValidationError) as exc:
        for line in getattr(exc, "violations", [str(exc)]):
            print(line)
        return 2
    except dataio.DatasetError as exc:
        print(exc)
        return 1
    print(f"{ds.name}: {len(ds)} videos, no violations")
    return 0


# ---------------------------------------------------------------- splits

def _universe(args):
    if args.data:
        return _load_dataset(args.data).keys
    if args.keys:
        return [k for k in args.keys.split(",") if k]
    _fail("give --data or --keys")


def cmd_splits_generate(args):
    keys = _universe(args)
    try:
        splits = evalsplit.generate_splits(keys, args.k, args.seed)
    except ValueError as exc:
        _fail(str(exc))
    evalsplit.save_splits(splits, args.out, kind="non-overlapping", seed=args.seed, k=args.k)
    print(f"wrote {args.k} folds over {len(keys)} keys to {args.out}")


def cmd_splits_audit(args):
    splits = _load_splits(args.splits)
    if args.data or args.keys:
        universe = _universe(args)
    else:
        universe = sorted({k for f in splits.folds for k in f.train_keys + f.test_keys})
    rep = evalsplit.audit_splits(splits, universe)
    print(rep.table())
    if args.out:
        _write_json(args.out, rep.to_json())


# ---------------------------------------------------------------- train / score / summarize / evaluate

def _fold_dir(run, i):
    return Path(run) / f"fold_{i}"


def _train_fold(job):
    i, data, run, cfg, keys = job
    ds = dataio.load_dataset(data)
    records = [ds[k] for k in keys]
    tc = train_config(cfg)
    sources = tuple(_sources(cfg, ds))
    scorer = model.init_params(cfg["strategy"], {s: records[0].streams[s].dim for s in sources},
                               hidden=cfg["hidden"], common_dim=cfg["common_dim"], seed=cfg["seed"],
                               sources=sources, deltas=tuple(cfg["deltas"]),
                               late_fusion_space=cfg["late_fusion_space"],
                               share_branch_rnn=cfg["share_branch_rnn"])
    res = training.train(records, tc, scorer=scorer)
    out = _fold_dir(run, i)
    model.save_checkpoint(res.scorer, out / "checkpoint", m=cfg["m"])
    training.write_history_csv(res.history, out / "history.csv")
    return i, res.history[0].total, res.history[-1].total


def cmd_train(args):
    cfg = resolve_config(args)
    ds = _load_dataset(args.data)
    splits = _load_splits(args.splits)
    rep = evalsplit.audit_splits(splits, ds.keys)
    if rep.unknown:
        _fail(f"split keys not in dataset: {rep.unknown}")
    if rep.overlapping_folds:
        _fail(f"folds {rep.overlapping_folds} share videos between train and test")
    sources = _sources(cfg, ds)
    for rec in ds.videos.values():
        missing = [s for s in sources if s not in rec.streams]
        if missing:
            _fail(f"{rec.video_id}: missing streams {missing}")
    if cfg["strategy"] != "single" and cfg["sources"] is None and len(sources) != 2:
        _fail(f"strategy {cfg['strategy']} needs two sources, dataset has {sources}")
    for i, fold in enumerate(splits.folds):
        if not fold.train_keys:
            _fail(f"fold {i} has no training videos")
    if cfg["split_kind"] is None:
        cfg["split_kind"] = "non-overlapping" if rep.clean else "prior"
    cfg["sources"] = sources

    run = Path(args.out)
    run.mkdir(parents=True, exist_ok=True)
    _echo_config(run, cfg, "train", data=str(args.data), splits=str(args.splits))
    evalsplit.save_splits(splits, run / "splits.json")
    _write_json(run / "audit.json", rep.to_json())
    jobs = [(i, args.data, str(run), cfg, f.train_keys) for i, f in enumerate(splits.folds)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_fold, jobs))
    else:
        results = [_train_fold(j) for j in jobs]
    for i, first, last in results:
        print(f"fold {i}: loss {first:.4f} -> {last:.4f}")


def _run_state(run):
    run = Path(run)
    cfg_path = run / "run_config.json"
    if not cfg_path.is_file():
        _fail(f"missing run config {cfg_path}", 1)
    cfg = json.loads(cfg_path.read_text(encoding="utf-8"))["config"]
    splits = _load_splits(run / "splits.json")
    return cfg, splits


def cmd_score(args):
    cfg, splits = _run_state(args.run)
    ds = _load_dataset(args.data)
    checkpoints = []
    for i in range(len(splits)):
        try:
            checkpoints.append(model.load_checkpoint(_fold_dir(args.run, i) / "checkpoint"))
        except FileNotFoundError as exc:
            _fail(str(exc), 1)
    for i, fold in enumerate(splits.folds):
        missing = [k for k in fold.test_keys if k not in ds.videos]
        if missing:
            _fail(f"fold {i}: test videos {missing} not in dataset")
    out = Path(args.run) / "scores"
    _echo_config(out, cfg, "score", data=str(args.data), run=str(args.run))
    for i, fold in enumerate(splits.folds):
        params, m = checkpoints[i]
        for key in fold.test_keys:
            p = model.forward(ds[key], params, m)
            path = out / f"fold_{i}" / f"{key}.f64"
            path.parent.mkdir(parents=True, exist_ok=True)
            p.astype("<f8").tofile(path)
    print(f"scored {sum(len(f.test_keys) for f in splits.folds)} test videos")


def cmd_summarize(args):
    cfg, splits = _run_state(args.run)
    ds = _load_dataset(args.data)
    scores = {}
    for i, fold in enumerate(splits.folds):
        for key in fold.test_keys:
            path = Path(args.run) / "scores" / f"fold_{i}" / f"{key}.f64"
            if not path.is_file():
                _fail(f"missing score file {path}", 1)
            if key not in ds.videos:
                _fail(f"fold {i}: test video {key!r} not in dataset")
            p = np.fromfile(path, dtype="<f8")
            if len(p) != ds[key].n_steps:
                _fail(f"{path}: {len(p)} scores for {ds[key].n_steps} steps")
            scores[i, key] = (p, path)
    out = Path(args.run) / "summaries"
    _echo_config(out, cfg, "summarize", data=str(args.data), run=str(args.run))
    for (i, key), (p, path) in scores.items():
        summ = shotselect.summarize(ds[key], p, cfg["budget_fraction"])
        rel = path.relative_to(Path(args.run))
        shotselect.write_summary(summ, out / f"fold_{i}" / key, key, scores_path=rel.as_posix())
    print(f"summarised {len(scores)} test videos")


def cmd_evaluate(args):
    cfg, splits = _run_state(args.run)
    ds = _load_dataset(args.data)
    mode = args.mode or cfg.get("mode") or report.protocol_mode(ds.name)
    masks = {}
    for i, fold in enumerate(splits.folds):
        for key in fold.test_keys:
            if key not in ds.videos:
                _fail(f"fold {i}: test video {key!r} not in dataset")
            try:
                masks[i, key] = shotselect.read_summary_mask(
                    Path(args.run) / "summaries" / f"fold_{i}" / key, ds[key].n_frames)
            except FileNotFoundError as exc:
                _fail(str(exc), 1)
            except ValueError as exc:
                _fail(str(exc))
    result = evalsplit.cross_validate(ds, splits, lambda i, rec: masks[i, rec.video_id], mode)

    run = Path(args.run)
    with open(run / f"eval_{mode}.csv", "w", encoding="utf-8") as fh:
        fh.write("video_id,fold,per_user_f1_mean,aggregated,mode\n")
        for vid, fold, mean_f1, agg, m in result.rows():
            fh.write(f"{vid},{fold},{mean_f1!r},{agg!r},{m}\n")
    summary = {
        "dataset": ds.name,
        "method": "MCSF",
        "strategy": cfg["strategy"],
        "sources": cfg["sources"],
        "late_fusion_space": cfg["late_fusion_space"],
        "split_kind": cfg["split_kind"],
        "mode": mode,
        "fold_means": result.fold_means,
        "overall": result.overall,
        "duplicate_weighting": "each test occurrence counted once within its fold",
    }
    _write_json(run / f"eval_{mode}.json", summary)
    print(f"{ds.name} {cfg['strategy']} {mode}: overall F1 {100 * result.overall:.1f}")


def cmd_report(args):
    for p in args.inputs:
        if not Path(p).is_file():
            _fail(f"missing evaluation file {p}", 1)
    try:
        entries = report.load_entries(args.inputs)
    except json.JSONDecodeError as exc:
        _fail(f"invalid evaluation JSON: {exc}")
    for e in entries:
        if "dataset" not in e or "overall" not in e:
            _fail("evaluation entries need 'dataset' and 'overall'")
    paths = report.write_report(entries, args.out)
    _write_json(Path(args.out) / "run_config.json",
                {"command": "report", "inputs": [str(p) for p in args.inputs]})
    print(paths["ablation.md"].read_text(encoding="utf-8"))
    print(paths["crossval.md"].read_text(encoding="utf-8"))


# ---------------------------------------------------------------- parser

def _add_model_flags(p):
    p.add_argument("--config", help="JSON file with config overrides")
    p.add_argument("--strategy", choices=model.STRATEGIES)
    p.add_argument("--sources", help="comma separated, e.g. objects,places")
    p.add_argument("--m", type=int, help="segment count (default ceil(sqrt(n_steps)))")
    p.add_argument("--deltas", help="difference distances, e.g. 1,2,4")
    p.add_argument("--hidden", type=int)
    p.add_argument("--decoder-hidden", dest="decoder_hidden", type=int)
    p.add_argument("--common-dim", dest="common_dim", type=int)
    p.add_argument("--budget-fraction", dest="budget_fraction", type=float)
    p.add_argument("--sigma-target", dest="sigma_target", type=float)
    p.add_argument("--lambda-sparsity", dest="lambda_sparsity", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--late-fusion-space", dest="late_fusion_space", choices=model.LATE_SPACES)
    p.add_argument("--share-branch-rnn", dest="share_branch_rnn", action="store_const", const=True)
    p.add_argument("--primary-source", dest="primary_source", choices=dataio.SOURCES)
    p.add_argument("--split-kind", dest="split_kind", choices=("prior", "non-overlapping"))


def build_parser():
    parser = argparse.ArgumentParser(prog="mcsf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="group", required=True)

    ds = sub.add_parser("dataset").add_subparsers(dest="command", required=True)
    p = ds.add_parser("synth", help="write a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=4)
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--users", type=int, default=5)
    p.add_argument("--dims", default="objects=8,places=12")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--no-change-points", action="store_true")
    p.set_defaults(func=cmd_dataset_synth)
    p = ds.add_parser("validate", help="check a dataset directory")
    p.add_argument("path")
    p.set_defaults(func=cmd_dataset_validate)

    sp = sub.add_parser("splits").add_subparsers(dest="command", required=True)
    p = sp.add_parser("generate", help="non-overlapping k-fold splits")
    p.add_argument("--data")
    p.add_argument("--keys", help="comma separated keys instead of --data")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_splits_generate)
    p = sp.add_parser("audit", help="coverage audit of a split file")
    p.add_argument("splits")
    p.add_argument("--data")
    p.add_argument("--keys")
    p.add_argument("--out", help="write the audit JSON here")
    p.set_defaults(func=cmd_splits_audit)

    p = sub.add_parser("train", help="train one scorer per fold")
    p.add_argument("--data", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("score", cmd_score, "per-step scores for every test video"),
                              ("summarize", cmd_summarize, "keyshot masks from scores")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--run", required=True)
        p.add_argument("--data", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="per-fold and overall F1")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=evalsplit.MODES)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="ablation and cross-validation tables")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except training.NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
