import xml.etree.ElementTree as ET

import pytest

from rfslope import pipeline
from rfslope.cli import main
from rfslope.montecarlo import DataError
from rfslope.report import write_report

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def figures(bundle):
    _, out = bundle
    assert main(["report", "--out", str(out)]) == 0
    return out, {p.name: ET.parse(p).getroot() for p in (out / "figures").glob("*.svg")}


def test_expected_figures(figures):
    _, figs = figures
    for ds in ("U_0.3_1", "U_0.3_6"):
        for metric in ("acc", "f1", "auc"):
            assert f"box_{ds}_{metric}.svg" in figs
        assert f"roc_{ds}.svg" in figs
    assert {"roc_entire.svg", "trend_acc_cov0.3.svg", "trend_auc_cov0.3.svg", "pf_error.svg"} <= set(figs)
    for root in figs.values():
        assert root.tag == SVG + "svg" and root.get("version") == "1.1"


def test_boxplot_values_equal_csv(figures):
    out, figs = figures
    summary = pipeline.read_csv(out / "cv_summary.csv")
    root = figs["box_U_0.3_6_acc.svg"]
    boxes = root.findall(f".//{SVG}g[@class='box']")
    rows = [r for r in summary if r["dataset"] == "U_0.3_6" and r["metric"] == "acc"]
    assert len(boxes) == len(rows) == 4
    for g, r in zip(boxes, rows):
        for key in ("model", "mean", "median", "q1", "q3", "whisker_lo", "whisker_hi", "outliers"):
            assert g.get(f"data-{key.replace('_', '-')}") == r[key]
    assert root.findall(f".//{SVG}path[@class='mean']")
    assert root.findall(f".//{SVG}line[@class='median']")


def test_roc_has_diagonal_and_csv_auc(figures):
    out, figs = figures
    root = figs["roc_U_0.3_1.svg"]
    assert len(root.findall(f".//{SVG}line[@class='diagonal']")) == 1
    tests = {r["model"]: r["auc"] for r in pipeline.read_csv(out / "test_metrics.csv") if r["dataset"] == "U_0.3_1"}
    lines = root.findall(f".//{SVG}polyline")
    assert {p.get("data-model"): p.get("data-auc") for p in lines} == tests


def test_trend_values_equal_csv(figures):
    out, figs = figures
    means = {(r["dataset"], r["model"]): r["mean"] for r in pipeline.read_csv(out / "cv_summary.csv") if r["metric"] == "acc"}
    dots = figs["trend_acc_cov0.3.svg"].findall(f".//{SVG}circle")
    assert len(dots) == 8
    values = {d.get("data-value") for d in dots}
    assert values == {v for (ds, _), v in means.items() if ds != "entire"}


def test_report_is_deterministic(figures):
    out, _ = figures
    before = {p.name: p.read_bytes() for p in (out / "figures").glob("*.svg")}
    write_report(out)
    assert before == {p.name: p.read_bytes() for p in (out / "figures").glob("*.svg")}


def test_missing_table_names_file(tmp_path):
    (tmp_path / "cv_summary.csv").write_text("dataset\r\n")
    with pytest.raises(DataError, match="roc.csv"):
        write_report(tmp_path)
