"""Experiment orchestration behind the command line: generate, train-eval, timing.

All outputs live under the configured output directory:

    resolved_config.json, config.schema.json
    datasets/U_<cov>_<xi>_<digest>.rfmc        one per (COV, delta_h, delta_v)
    generate_manifest.csv                      dataset, file, sha256, p_f
    test_metrics.csv, roc.csv, pf.csv          test-split evaluation
    cv_metrics.csv, cv_summary.csv             repeated CV on the training pool
    timing_generate.csv, timing_train.csv      wall clock (not deterministic)
    table6.csv                                 timing comparison
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import time
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import CONFIG_SCHEMA, canonical_json, digest
from .montecarlo import CampaignSpec, DataError, Dataset, load_dataset, pf_error, probability_of_failure, run_campaign, save_dataset, split_train_test
from .slope_oracle import SearchSpec, SlopeGeometry, default_search
from .surrogates import train

FULL_SCALE_SIMULATIONS = 120_000

# per-run times of the reference elastoplastic solver, printed for context only
REFERENCE_SOLVER_SECONDS = (43.0, 220.0)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])


def read_csv(path: Path) -> list[dict]:
    if not path.is_file():
        raise DataError(f"missing table {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# plan


def geometry_of(cfg: dict) -> SlopeGeometry:
    return SlopeGeometry(**cfg["geometry"])


def search_of(cfg: dict, geometry: SlopeGeometry) -> SearchSpec:
    base = default_search(geometry).to_dict()
    base.update(cfg["search"])
    return SearchSpec(**base)


def campaign_specs(cfg: dict) -> list[CampaignSpec]:
    geometry = geometry_of(cfg)
    search = search_of(cfg, geometry)
    c = cfg["campaign"]
    return [
        CampaignSpec(tuple(c["mu_list"]), cov, dh, dv, c["n_per_mu"], c["seed"], geometry, search)
        for cov, dh, dv in itertools.product(c["cov"], c["delta_h"], c["delta_v"])
    ]


def dataset_name(spec: CampaignSpec) -> str:
    return f"U_{spec.cov:g}_{spec.xi:g}"


def dataset_file(spec: CampaignSpec) -> str:
    key = {"spec": spec.to_dict(), "geometry": spec.geometry.to_dict(), "search": spec.search_spec.to_dict()}
    return f"{dataset_name(spec)}_{digest(key)[:12]}.rfmc"


def prepare_output(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    try:
        (out / "datasets").mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.json").write_text(canonical_json(cfg), encoding="utf-8")
        (out / "config.schema.json").write_text(canonical_json(CONFIG_SCHEMA), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write to output directory {out}: {exc.strerror}") from exc
    return out


# --------------------------------------------------------------------------
# generate


def generate(cfg: dict, workers: int = 1, log=print) -> list[dict]:
    out = prepare_output(cfg)
    manifest, timing = [], []
    for spec in campaign_specs(cfg):
        t0 = time.perf_counter()
        ds = run_campaign(spec, workers=workers)
        elapsed = time.perf_counter() - t0
        fname = dataset_file(spec)
        sha = save_dataset(ds, out / "datasets" / fname)
        name = dataset_name(spec)
        manifest.append({"dataset": name, "file": fname, "cov": spec.cov, "xi": spec.xi, "n_records": spec.n_records, "p_f": ds.p_f, "sha256": sha})
        timing.append({"dataset": name, "n_records": spec.n_records, "seconds": elapsed, "per_sim_seconds": elapsed / spec.n_records, "workers": workers})
        log(f"{spec.label:>14s}  p_f = {ds.p_f:.4f}  ({spec.n_records} records, {elapsed:.1f} s)")
    write_csv(out / "generate_manifest.csv", ["dataset", "file", "cov", "xi", "n_records", "p_f", "sha256"], manifest)
    write_csv(out / "timing_generate.csv", ["dataset", "n_records", "seconds", "per_sim_seconds", "workers"], timing)
    return manifest


def load_datasets(cfg: dict) -> list[tuple[str, CampaignSpec, Dataset]]:
    out = Path(cfg["output_dir"])
    loaded = []
    for spec in campaign_specs(cfg):
        path = out / "datasets" / dataset_file(spec)
        if not path.is_file():
            raise DataError(f"dataset {path} not found; run 'generate' with the same config first")
        ds = load_dataset(path)
        if ds.header.get("geometry") != spec.geometry.to_dict() or ds.header.get("n_cells") != ds.n_cells:
            raise DataError(f"{path.name}: geometry does not match the configuration")
        if ds.header.get("spec") != spec.to_dict():
            raise DataError(f"{path.name}: campaign header does not match the configuration")
        loaded.append((dataset_name(spec), spec, ds))
    widths = {ds.n_cells for _, _, ds in loaded}
    if len(widths) > 1:
        raise DataError(f"datasets disagree on the number of cells: {sorted(widths)}")
    return loaded


# --------------------------------------------------------------------------
# train-eval

TEST_COLUMNS = (
    "dataset", "model", "n_train", "n_test", "tp", "fp", "tn", "fn",
    "acc", "f1", "auc", "sensitivity", "specificity", "fpr", "pf_mc", "pf_pred", "pf_error",
)
SUMMARY_COLUMNS = ("dataset", "model", "metric", "n", "mean", "median", "q1", "q3", "whisker_lo", "whisker_hi", "outliers")


def _split(cfg: dict, n: int, count: int | None = None):
    s = cfg["split"]
    if count is not None:
        return split_train_test(n, count=count, split_seed=s["seed"])
    if s["mode"] == "count":
        return split_train_test(n, count=s["count"], split_seed=s["seed"])
    return split_train_test(n, fraction=s["fraction"], split_seed=s["seed"])


def _evaluate_one(name, kind, hp, X, y, plan, timing, roc_rows, test_rows):
    Xtr, ytr = X[plan.train_indices], y[plan.train_indices]
    Xte, yte = X[plan.test_indices], y[plan.test_indices]
    t0 = time.perf_counter()
    model = train(kind, Xtr, ytr, hp)
    t1 = time.perf_counter()
    pred = model.predict(Xte)
    scores = model.predict_score(Xte)
    t2 = time.perf_counter()
    e = ev.evaluate(pred, scores, yte)
    row = {"dataset": name, "model": kind, "n_train": int(ytr.size), "n_test": int(yte.size)}
    row.update({"tp": e.cm.tp, "fp": e.cm.fp, "tn": e.cm.tn, "fn": e.cm.fn})
    row.update(e.metrics.as_row())
    row.update({"pf_mc": probability_of_failure(yte), "pf_pred": probability_of_failure(pred), "pf_error": pf_error(pred, yte)})
    test_rows.append(row)
    if e.roc is not None:
        for i, (fx, ty) in enumerate(zip(e.roc.fpr, e.roc.tpr)):
            roc_rows.append({"dataset": name, "model": kind, "point": i, "fpr": float(fx), "tpr": float(ty)})
    timing.append({"dataset": name, "model": kind, "n_train": int(ytr.size), "n_predict": int(yte.size), "train_seconds": t1 - t0, "predict_seconds": t2 - t1})
    return Xtr, ytr


def _summary_rows(name, kind, result: ev.CVResult):
    rows = []
    for metric in ev.METRIC_NAMES:
        scores = result.scores(metric)
        finite = scores[~np.isnan(scores)]
        if finite.size == 0:
            continue
        d = ev.boxplot_stats(finite)
        rows.append({
            "dataset": name, "model": kind, "metric": metric, "n": int(finite.size),
            "mean": d.mean, "median": d.median, "q1": d.q1, "q3": d.q3,
            "whisker_lo": d.whisker_lo, "whisker_hi": d.whisker_hi,
            "outliers": ";".join(repr(o) for o in d.outliers),
        })
    return rows


def train_eval(cfg: dict, log=print) -> dict:
    out = prepare_output(cfg)
    loaded = load_datasets(cfg)
    kinds = cfg["models"]["kinds"]
    hps = cfg["models"]["hyperparameters"]
    cvc = cfg["cv"]
    test_rows, roc_rows, cv_rows, summary, timing, pf_rows = [], [], [], [], [], []

    for name, spec, ds in loaded:
        X, y = ds.values, ds.labels.astype(np.int64)
        plan = _split(cfg, ds.labels.size)
        pf_row = {"dataset": name, "cov": spec.cov, "xi": spec.xi, "pf_mc": probability_of_failure(y[plan.test_indices])}
        for kind in kinds:
            Xtr, ytr = _evaluate_one(name, kind, hps.get(kind), X, y, plan, timing, roc_rows, test_rows)
            pf_row[f"pf_{kind}"] = test_rows[-1]["pf_pred"]
            result = ev.repeated_kfold(Xtr, ytr, cvc["k"], cvc["repeats"], kind, hps.get(kind), cvc["seed"])
            cv_rows.extend(ev.cv_rows(name, result))
            summary.extend(_summary_rows(name, kind, result))
            r = test_rows[-1]
            log(f"{name:>10s} {kind:>5s}  acc {r['acc']:.3f}  auc {r['auc']:.3f}  p_f err {r['pf_error']:.4f}  cv acc {result.mean('acc'):.3f}")
        errs = [abs(pf_row[f"pf_{k}"] - pf_row["pf_mc"]) for k in kinds]
        pf_row["pf_error_mean"] = float(np.mean(errs))
        pf_row["pf_error_std"] = float(np.std(errs))
        pf_rows.append(pf_row)

    if cfg["entire_data"]["enabled"] and loaded:
        X = np.concatenate([ds.values for _, _, ds in loaded])
        y = np.concatenate([ds.labels for _, _, ds in loaded]).astype(np.int64)
        count = cfg["entire_data"]["count"]
        if count >= y.size:
            raise DataError(f"entire-data training count {count} leaves no test rows out of {y.size}")
        plan = _split(cfg, y.size, count=count)
        for kind in kinds:
            _evaluate_one("entire", kind, hps.get(kind), X, y, plan, timing, roc_rows, test_rows)
            r = test_rows[-1]
            log(f"{'entire':>10s} {kind:>5s}  acc {r['acc']:.3f}  auc {r['auc']:.3f}  p_f err {r['pf_error']:.4f}")

    write_csv(out / "test_metrics.csv", TEST_COLUMNS, test_rows)
    write_csv(out / "roc.csv", ["dataset", "model", "point", "fpr", "tpr"], roc_rows)
    ev.write_metric_csv(out / "cv_metrics.csv", cv_rows)
    write_csv(out / "cv_summary.csv", SUMMARY_COLUMNS, summary)
    pf_cols = ["dataset", "cov", "xi", "pf_mc"] + [f"pf_{k}" for k in kinds] + ["pf_error_mean", "pf_error_std"]
    write_csv(out / "pf.csv", pf_cols, pf_rows)
    write_csv(out / "timing_train.csv", ["dataset", "model", "n_train", "n_predict", "train_seconds", "predict_seconds"], timing)
    return {"test": test_rows, "cv": cv_rows, "pf": pf_rows}


# --------------------------------------------------------------------------
# timing

TABLE6_COLUMNS = ("method", "mc_samples", "cpu_seconds", "acc", "f1", "auc", "pf_error")


def timing_table(cfg: dict) -> list[dict]:
    """Measured stage times and the full-scale extrapolation, one row per method."""
    out = Path(cfg["output_dir"])
    gen = read_csv(out / "timing_generate.csv")
    n_sim = sum(int(r["n_records"]) for r in gen)
    total = sum(float(r["seconds"]) for r in gen)
    per_sim = total / n_sim
    rows = [
        {"method": "Monte Carlo (extrapolated)", "mc_samples": FULL_SCALE_SIMULATIONS, "cpu_seconds": per_sim * FULL_SCALE_SIMULATIONS, "acc": "", "f1": "", "auc": "", "pf_error": ""},
        {"method": "Monte Carlo (this run)", "mc_samples": n_sim, "cpu_seconds": total, "acc": "", "f1": "", "auc": "", "pf_error": ""},
    ]
    train_path = out / "timing_train.csv"
    if train_path.is_file():
        times = read_csv(train_path)
        metrics = read_csv(out / "test_metrics.csv")
        pooled = [r for r in metrics if r["dataset"] == "entire"]
        source = pooled or metrics
        for kind in cfg["models"]["kinds"]:
            mrows = [r for r in source if r["model"] == kind]
            trows = [r for r in times if r["model"] == kind and (r["dataset"] == "entire") == bool(pooled)]
            if not mrows or not trows:
                continue
            n_train = int(np.mean([int(r["n_train"]) for r in mrows]))
            fit = float(np.mean([float(r["train_seconds"]) + float(r["predict_seconds"]) for r in trows]))
            rows.append({
                "method": f"Surrogate {kind}",
                "mc_samples": n_train,
                "cpu_seconds": n_train * per_sim + fit,
                "acc": float(np.mean([float(r["acc"]) for r in mrows])),
                "f1": float(np.mean([float(r["f1"]) for r in mrows])),
                "auc": float(np.nanmean([float(r["auc"]) for r in mrows])),
                "pf_error": float(np.mean([float(r["pf_error"]) for r in mrows])),
            })
    write_csv(out / "table6.csv", TABLE6_COLUMNS, rows)
    return rows


def format_duration(seconds: float) -> str:
    if seconds >= 86400:
        return f"{seconds / 86400:.1f} days"
    if seconds >= 3600:
        return f"{seconds / 3600:.1f} h"
    if seconds >= 60:
        return f"{seconds / 60:.1f} min"
    return f"{seconds:.2f} s"


def resolved_config_of(out_dir) -> dict:
    path = Path(out_dir) / "resolved_config.json"
    if not path.is_file():
        raise DataError(f"missing {path}")
    return json.loads(path.read_text(encoding="utf-8"))
