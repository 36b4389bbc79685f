"""Render evaluation summaries as the ablation table and the cross-validation table.

Each input is an evaluation JSON written by ``mcsf evaluate`` (or a
hand-written fixture with the same keys)::

    {"dataset": "SumMe", "strategy": "intermediate", "sources": ["objects", "places"],
     "late_fusion_space": "logit", "split_kind": "non-overlapping", "mode": "max",
     "overall": 0.433, "method": "MCSF"}

``split_kind`` is ``"prior"`` (F1'), ``"non-overlapping"`` (F1*) or
``"reported"`` (F1, numbers quoted from elsewhere).  Scores are fractions in
[0, 1] and are printed as percentages with one decimal.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

SOURCE_LETTER = {"objects": "O", "places": "P"}
SPLIT_KINDS = ("reported", "prior", "non-overlapping")
SPLIT_HEADER = {"reported": "F1", "prior": "F1'", "non-overlapping": "F1*"}
ABLATION_ROWS = (
    ("-", "O"),
    ("-", "P"),
    ("Early", "O + P"),
    ("Intermediate", "O + P"),
    ("Late", "O + P"),
)


def protocol_mode(dataset: str) -> str:
    """Max over users for SumMe-style datasets, average otherwise."""
    return "max" if dataset.lower().startswith("summe") else "avg"


def features_label(entry) -> str:
    return " + ".join(SOURCE_LETTER.get(s, s) for s in entry.get("sources", []))


def fusion_label(entry) -> str:
    strategy = entry.get("strategy", "single")
    if strategy == "single":
        return "-"
    label = strategy.capitalize()
    if strategy == "late":
        label += f" ({entry.get('late_fusion_space', 'logit')})"
    return label


def method_label(entry) -> str:
    base = entry.get("method", "MCSF")
    if base == "MCSF" and "strategy" in entry:
        fusion = fusion_label(entry)
        return f"MCSF [{features_label(entry)}]" if fusion == "-" else f"MCSF [{fusion}]"
    return base


def load_entries(paths) -> list[dict]:
    entries = []
    for path in paths:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        entries.extend(obj if isinstance(obj, list) else [obj])
    return entries


def _fmt(value) -> str:
    return "-" if value is None else f"{100 * value:.1f}"


def _pick(cands, dataset):
    if not cands:
        return None
    wanted = protocol_mode(dataset)
    for e in cands:
        if e.get("mode") == wanted:
            return e["overall"]
    return sorted(cands, key=lambda e: e.get("mode", ""))[0]["overall"]


def ablation_rows(entries) -> list[list[str]]:
    """[dataset, fusion, features, F1', F1*] per dataset x feature/fusion variant."""
    rows = []
    for dataset in sorted({e["dataset"] for e in entries}):
        mine = [e for e in entries if e["dataset"] == dataset]
        for fusion, feats in ABLATION_ROWS:
            match = [e for e in mine
                     if fusion_label(e).split(" (")[0] == fusion and features_label(e) == feats]
            if not match:
                continue
            label = sorted({fusion_label(e) for e in match})
            cells = [_fmt(_pick([e for e in match if e.get("split_kind") == kind], dataset))
                     for kind in ("prior", "non-overlapping")]
            rows.append([dataset, " / ".join(label), feats, *cells])
    return rows


def crossval_rows(entries) -> list[list[str]]:
    """[dataset, method, F1 avg, F1 max, F1' avg, F1' max, F1* avg, F1* max]."""
    rows = []
    for dataset in sorted({e["dataset"] for e in entries}):
        mine = [e for e in entries if e["dataset"] == dataset]
        methods = []
        for e in mine:
            if method_label(e) not in methods:
                methods.append(method_label(e))
        for method in methods:
            cells = []
            for kind in SPLIT_KINDS:
                for mode in ("avg", "max"):
                    hit = [e for e in mine if method_label(e) == method
                           and e.get("split_kind") == kind and e.get("mode") == mode]
                    cells.append(_fmt(hit[0]["overall"] if hit else None))
            rows.append([dataset, method, *cells])
    return rows


ABLATION_HEADER = ["Dataset", "Fusion", "Features", "F1'", "F1*"]
CROSSVAL_HEADER = ["Dataset", "Method"] + [f"{SPLIT_HEADER[k]} {m.capitalize()}"
                                           for k in SPLIT_KINDS for m in ("avg", "max")]


def markdown_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def csv_table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_report(entries, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    abl, cv = ablation_rows(entries), crossval_rows(entries)
    files = {
        "ablation.md": markdown_table(ABLATION_HEADER, abl),
        "ablation.csv": csv_table(ABLATION_HEADER, abl),
        "crossval.md": markdown_table(CROSSVAL_HEADER, cv),
        "crossval.csv": csv_table(CROSSVAL_HEADER, cv),
    }
    paths = {}
    for name, text in files.items():
        paths[name] = out_dir / name
        paths[name].write_text(text, encoding="utf-8")
    return paths
