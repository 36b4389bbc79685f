import json

from mcsf import report

SUMME_F1_STAR = [  # (strategy, sources, F1* as a fraction)
    ("single", ["objects"], 0.415),
    ("single", ["places"], 0.405),
    ("early", ["objects", "places"], 0.396),
    ("intermediate", ["objects", "places"], 0.433),
    ("late", ["objects", "places"], 0.403),
]


def fixture_entries():
    return [{"dataset": "SumMe", "strategy": s, "sources": src, "late_fusion_space": "logit",
             "split_kind": "non-overlapping", "mode": "max", "overall": v, "method": "MCSF"}
            for s, src, v in SUMME_F1_STAR]


def test_ablation_renders_values_verbatim():
    rows = report.ablation_rows(fixture_entries())
    assert [r[1:3] for r in rows] == [["-", "O"], ["-", "P"], ["Early", "O + P"],
                                      ["Intermediate", "O + P"], ["Late (logit)", "O + P"]]
    assert [r[4] for r in rows] == ["41.5", "40.5", "39.6", "43.3", "40.3"]
    assert all(r[3] == "-" for r in rows)


def test_write_report_markdown_and_csv(tmp_path):
    paths = report.write_report(fixture_entries(), tmp_path)
    md = paths["ablation.md"].read_text().splitlines()
    assert md[0] == "| Dataset | Fusion | Features | F1' | F1* |"
    assert md[5] == "| SumMe | Intermediate | O + P | - | 43.3 |"
    csv_lines = paths["ablation.csv"].read_text().splitlines()
    assert len(csv_lines) == 6
    assert csv_lines[1] == "SumMe,-,O,-,41.5"
    cv = paths["crossval.md"].read_text().splitlines()
    assert cv[0].startswith("| Dataset | Method | F1 Avg | F1 Max | F1' Avg | F1' Max | F1* Avg | F1* Max |")
    assert "| SumMe | MCSF [Intermediate] | - | - | - | - | - | 43.3 |" in cv


def test_protocol_mode_and_pick():
    assert report.protocol_mode("SumMe") == "max"
    assert report.protocol_mode("tvsum") == "avg"
    entries = [dict(e, mode="avg", overall=0.1) for e in fixture_entries()] + fixture_entries()
    assert [r[4] for r in report.ablation_rows(entries)] == ["41.5", "40.5", "39.6", "43.3", "40.3"]


def test_reported_and_prior_columns():
    base = {"dataset": "TVSum", "method": "SUM-GAN", "mode": "avg"}
    entries = [dict(base, split_kind="reported", overall=0.563),
               dict(base, split_kind="prior", overall=0.5),
               dict(base, split_kind="non-overlapping", overall=0.48)]
    rows = report.crossval_rows(entries)
    assert rows == [["TVSum", "SUM-GAN", "56.3", "-", "50.0", "-", "48.0", "-"]]


def test_late_fusion_space_is_labelled():
    e = {"strategy": "late", "late_fusion_space": "probability", "sources": ["objects", "places"]}
    assert report.fusion_label(e) == "Late (probability)"
    assert report.method_label(e) == "MCSF [Late (probability)]"


def test_load_entries_accepts_lists(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps(fixture_entries()[:2]))
    (tmp_path / "b.json").write_text(json.dumps(fixture_entries()[2]))
    assert len(report.load_entries([tmp_path / "a.json", tmp_path / "b.json"])) == 3
