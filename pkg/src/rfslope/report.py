"""SVG 1.1 figures drawn straight from the CSV tables of a train-eval run.

Each plotted mark carries its source numbers in ``data-*`` attributes, copied
verbatim from the CSV, so a figure can be checked against its table.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

from .montecarlo import DataError
from .pipeline import read_csv

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")

W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 64, 150, 40, 56


def _n(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


class Figure:
    def __init__(self, title: str, width: int = W, height: int = H):
        self.width, self.height = width, height
        self.parts = [f'<text x="{_n(width / 2)}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>']

    def add(self, tag: str, text: str | None = None, **attrs) -> None:
        a = " ".join(f"{k.rstrip('_').replace('_', '-')}={quoteattr(str(v))}" for k, v in attrs.items())
        self.parts.append(f"<{tag} {a}>{escape(text)}</{tag}>" if text is not None else f"<{tag} {a}/>")

    def svg(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="11">\n'
        )
        return head + "\n".join(self.parts) + "\n</svg>\n"

    def save(self, path: Path) -> Path:
        path.write_text(self.svg(), encoding="utf-8")
        return path


class Axes:
    """Linear data-to-pixel map for the plotting rectangle."""

    def __init__(self, fig: Figure, x0, x1, y0, y1):
        self.fig = fig
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1
        self.px0, self.px1 = LEFT, fig.width - RIGHT
        self.py0, self.py1 = fig.height - BOTTOM, TOP

    def x(self, v: float) -> float:
        span = self.x1 - self.x0 or 1.0
        return self.px0 + (v - self.x0) / span * (self.px1 - self.px0)

    def y(self, v: float) -> float:
        span = self.y1 - self.y0 or 1.0
        return self.py0 + (v - self.y0) / span * (self.py1 - self.py0)

    def frame(self, xlabel: str, ylabel: str, yticks, xticks=None, xticklabels=None) -> None:
        f = self.fig
        f.add("rect", x=_n(self.px0), y=_n(self.py1), width=_n(self.px1 - self.px0), height=_n(self.py0 - self.py1), fill="none", stroke="#000")
        for t in yticks:
            py = self.y(t)
            f.add("line", x1=_n(self.px0 - 4), y1=_n(py), x2=_n(self.px0), y2=_n(py), stroke="#000")
            f.add("text", f"{t:g}", x=_n(self.px0 - 6), y=_n(py + 4), text_anchor="end")
        for t, lab in zip(xticks or [], xticklabels or []):
            px = self.x(t)
            f.add("line", x1=_n(px), y1=_n(self.py0), x2=_n(px), y2=_n(self.py0 + 4), stroke="#000")
            f.add("text", lab, x=_n(px), y=_n(self.py0 + 16), text_anchor="middle")
        f.add("text", xlabel, x=_n((self.px0 + self.px1) / 2), y=_n(f.height - 14), text_anchor="middle")
        f.add("text", ylabel, x="16", y=_n((self.py0 + self.py1) / 2), text_anchor="middle", transform=f"rotate(-90 16 {_n((self.py0 + self.py1) / 2)})")

    def legend(self, entries) -> None:
        for i, (label, color) in enumerate(entries):
            y = self.py1 + 12 + 16 * i
            self.fig.add("line", x1=_n(self.px1 + 12), y1=_n(y), x2=_n(self.px1 + 32), y2=_n(y), stroke=color, stroke_width="2")
            self.fig.add("text", label, x=_n(self.px1 + 38), y=_n(y + 4))


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _safe(s: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in s)


def boxplot_figure(dataset: str, metric: str, rows: list[dict]) -> Figure:
    """One box per model: IQR box, median line, mean triangle, whiskers, outlier circles."""
    fig = Figure(f"{metric.upper()} over repeated CV folds, {dataset}")
    vals = [float(r["whisker_lo"]) for r in rows] + [float(r["whisker_hi"]) for r in rows]
    vals += [float(o) for r in rows for o in r["outliers"].split(";") if o]
    lo, hi = min(vals + [0.0]), max(vals + [1.0])
    ax = Axes(fig, -0.5, len(rows) - 0.5, lo, hi)
    ax.frame("model", metric, _ticks(lo, hi), list(range(len(rows))), [r["model"] for r in rows])
    half = 0.3 * (ax.x(1) - ax.x(0))
    for i, r in enumerate(rows):
        cx = ax.x(i)
        q1, q3, med, mean = (float(r[k]) for k in ("q1", "q3", "median", "mean"))
        wl, wh = float(r["whisker_lo"]), float(r["whisker_hi"])
        data = {f"data_{k}": r[k] for k in ("model", "mean", "median", "q1", "q3", "whisker_lo", "whisker_hi", "outliers")}
        fig.add("g", "", class_="box", **data)
        fig.add("line", x1=_n(cx), y1=_n(ax.y(wl)), x2=_n(cx), y2=_n(ax.y(q1)), stroke="#000")
        fig.add("line", x1=_n(cx), y1=_n(ax.y(q3)), x2=_n(cx), y2=_n(ax.y(wh)), stroke="#000")
        for w in (wl, wh):
            fig.add("line", x1=_n(cx - half / 2), y1=_n(ax.y(w)), x2=_n(cx + half / 2), y2=_n(ax.y(w)), stroke="#000")
        fig.add("rect", x=_n(cx - half), y=_n(ax.y(q3)), width=_n(2 * half), height=_n(max(ax.y(q1) - ax.y(q3), 0.5)), fill=PALETTE[i % len(PALETTE)], fill_opacity="0.35", stroke="#000")
        fig.add("line", x1=_n(cx - half), y1=_n(ax.y(med)), x2=_n(cx + half), y2=_n(ax.y(med)), stroke="#ff7f0e", stroke_width="2", class_="median")
        my = ax.y(mean)
        fig.add("path", d=f"M{_n(cx)},{_n(my - 5)} L{_n(cx - 5)},{_n(my + 4)} L{_n(cx + 5)},{_n(my + 4)} Z", fill="#2ca02c", class_="mean")
        for o in r["outliers"].split(";"):
            if o:
                fig.add("circle", cx=_n(cx), cy=_n(ax.y(float(o))), r="3", fill="none", stroke="#000", class_="outlier", data_value=o)
    return fig


def roc_figure(dataset: str, curves: dict[str, list[tuple[str, str]]], aucs: dict[str, str]) -> Figure:
    fig = Figure(f"ROC curves, {dataset}")
    ax = Axes(fig, 0.0, 1.0, 0.0, 1.0)
    ax.frame("false positive rate", "true positive rate", _ticks(0, 1), _ticks(0, 1), [f"{t:g}" for t in _ticks(0, 1)])
    fig.add("line", x1=_n(ax.x(0)), y1=_n(ax.y(0)), x2=_n(ax.x(1)), y2=_n(ax.y(1)), stroke="#999", stroke_dasharray="4 3", class_="diagonal")
    legend = []
    for i, (model, pts) in enumerate(curves.items()):
        color = PALETTE[i % len(PALETTE)]
        path = " ".join(f"{_n(ax.x(float(fx)))},{_n(ax.y(float(ty)))}" for fx, ty in pts)
        fig.add("polyline", points=path, fill="none", stroke=color, stroke_width="1.5", data_model=model, data_auc=aucs.get(model, ""))
        legend.append((f"{model} ({float(aucs[model]):.3f})" if aucs.get(model) not in (None, "", "nan") else model, color))
    ax.legend(legend)
    return fig


def trend_figure(cov: str, metric: str, series: dict[str, list[tuple[float, str]]]) -> Figure:
    fig = Figure(f"Mean CV {metric.upper()} versus anisotropy ratio, COV {cov}")
    xs = sorted({x for pts in series.values() for x, _ in pts})
    ys = [float(v) for pts in series.values() for _, v in pts]
    lo, hi = min(ys + [1.0]), max(ys + [0.0])
    lo = min(lo, hi - 0.05)
    ax = Axes(fig, xs[0] if xs else 0.0, xs[-1] if xs else 1.0, lo, hi)
    ax.frame("anisotropy ratio", metric, _ticks(lo, hi), xs, [f"{x:g}" for x in xs])
    legend = []
    for i, (model, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(pts)
        fig.add("polyline", points=" ".join(f"{_n(ax.x(x))},{_n(ax.y(float(v)))}" for x, v in pts), fill="none", stroke=color, stroke_width="1.5", data_model=model)
        for x, v in pts:
            fig.add("circle", cx=_n(ax.x(x)), cy=_n(ax.y(float(v))), r="3", fill=color, data_xi=f"{x:g}", data_value=v)
        legend.append((model, color))
    ax.legend(legend)
    return fig


def pf_figure(rows: list[dict], models: list[str]) -> Figure:
    """Per-dataset p_f error of every model, with the mean +/- one std band across models."""
    fig = Figure("Error of the predicted probability of failure")
    errs = {r["dataset"]: [abs(float(r[f"pf_{m}"]) - float(r["pf_mc"])) for m in models] for r in rows}
    top = max([e for v in errs.values() for e in v] + [float(r["pf_error_mean"]) + float(r["pf_error_std"]) for r in rows] + [0.01])
    ax = Axes(fig, -0.5, len(rows) - 0.5, 0.0, top)
    ax.frame("dataset", "|p_f error|", _ticks(0, top), list(range(len(rows))), [r["dataset"] for r in rows])
    band_hi = [(ax.x(i), ax.y(float(r["pf_error_mean"]) + float(r["pf_error_std"]))) for i, r in enumerate(rows)]
    band_lo = [(ax.x(i), ax.y(max(float(r["pf_error_mean"]) - float(r["pf_error_std"]), 0.0))) for i, r in enumerate(rows)]
    if rows:
        pts = band_hi + band_lo[::-1]
        fig.add("polygon", points=" ".join(f"{_n(x)},{_n(y)}" for x, y in pts), fill="#1f77b4", fill_opacity="0.2", stroke="none", class_="band")
        fig.add("polyline", points=" ".join(f"{_n(ax.x(i))},{_n(ax.y(float(r['pf_error_mean'])))}" for i, r in enumerate(rows)), fill="none", stroke="#1f77b4", stroke_width="2", class_="mean")
    legend = [("mean +/- std", "#1f77b4")]
    for j, m in enumerate(models):
        color = PALETTE[(j + 1) % len(PALETTE)]
        for i, r in enumerate(rows):
            e = errs[r["dataset"]][j]
            fig.add("circle", cx=_n(ax.x(i) + (j - len(models) / 2) * 3), cy=_n(ax.y(e)), r="2.5", fill=color, data_model=m, data_dataset=r["dataset"], data_value=repr(e))
        legend.append((m, color))
    ax.legend(legend)
    return fig


def write_report(out_dir) -> list[Path]:
    out = Path(out_dir)
    if not out.is_dir():
        raise DataError(f"bundle directory {out} does not exist")
    summary = read_csv(out / "cv_summary.csv")
    roc = read_csv(out / "roc.csv")
    test = read_csv(out / "test_metrics.csv")
    pf = read_csv(out / "pf.csv")
    figdir = out / "figures"
    figdir.mkdir(exist_ok=True)
    written = []

    by_ds_metric = defaultdict(list)
    for r in summary:
        by_ds_metric[(r["dataset"], r["metric"])].append(r)
    for (ds, metric), rows in by_ds_metric.items():
        if metric in ("acc", "auc", "f1"):
            written.append(boxplot_figure(ds, metric, rows).save(figdir / f"box_{_safe(ds)}_{metric}.svg"))

    curves = defaultdict(lambda: defaultdict(list))
    for r in roc:
        curves[r["dataset"]][r["model"]].append((r["fpr"], r["tpr"]))
    aucs = defaultdict(dict)
    for r in test:
        aucs[r["dataset"]][r["model"]] = r["auc"]
    for ds, per_model in curves.items():
        written.append(roc_figure(ds, per_model, aucs[ds]).save(figdir / f"roc_{_safe(ds)}.svg"))

    xi_of = {r["dataset"]: (r["cov"], float(r["xi"])) for r in pf}
    for metric in ("acc", "auc"):
        by_cov = defaultdict(lambda: defaultdict(list))
        for r in summary:
            if r["metric"] == metric and r["dataset"] in xi_of:
                cov, xi = xi_of[r["dataset"]]
                by_cov[cov][r["model"]].append((xi, r["mean"]))
        for cov, series in by_cov.items():
            written.append(trend_figure(cov, metric, series).save(figdir / f"trend_{metric}_cov{_safe(cov)}.svg"))

    if pf:
        models = [c[3:] for c in pf[0] if c.startswith("pf_") and c not in ("pf_mc", "pf_error_mean", "pf_error_std")]
        written.append(pf_figure(pf, models).save(figdir / "pf_error.svg"))
    return written
