"""Confusion-matrix metrics, ROC/AUC, repeated k-fold CV and boxplot summaries.

Positive class throughout is 1 (failed).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .surrogates import DegenerateModelError, train
from .surrogates.base import rng_for

METRIC_NAMES = ("acc", "f1", "auc", "sensitivity", "specificity", "fpr")
CSV_COLUMNS = ("dataset", "model", "repeat", "fold") + METRIC_NAMES


class EvaluationError(ValueError):
    pass


class UndefinedAUCError(EvaluationError):
    """AUC needs at least one positive and one negative label."""


def _binary(a, what: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise EvaluationError(f"{what} must be 1-D")
    if not np.all((a == 0) | (a == 1)):
        raise EvaluationError(f"{what} must hold 0/1 labels")
    return a.astype(np.int64)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise EvaluationError(f"{name} must be non-negative")
        if self.n == 0:
            raise EvaluationError("confusion matrix is empty")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def predicted_failed(self) -> int:
        return self.tp + self.fp

    @property
    def actual_failed(self) -> int:
        return self.tp + self.fn


def confusion(pred_labels, actual_labels) -> ConfusionMatrix:
    pred = _binary(pred_labels, "predicted labels")
    actual = _binary(actual_labels, "actual labels")
    if pred.shape != actual.shape:
        raise EvaluationError(f"length mismatch: {pred.size} predictions vs {actual.size} labels")
    if pred.size == 0:
        raise EvaluationError("no labels given")
    tp = int(np.sum((pred == 1) & (actual == 1)))
    fp = int(np.sum((pred == 1) & (actual == 0)))
    tn = int(np.sum((pred == 0) & (actual == 0)))
    fn = int(np.sum((pred == 0) & (actual == 1)))
    return ConfusionMatrix(tp, fp, tn, fn)


@dataclass(frozen=True)
class MetricSet:
    acc: float
    f1: float
    sensitivity: float
    specificity: float
    fpr: float
    auc: float | None = None
    degenerate: tuple[str, ...] = ()

    def with_auc(self, auc: float | None) -> "MetricSet":
        return MetricSet(self.acc, self.f1, self.sensitivity, self.specificity, self.fpr, auc, self.degenerate)

    def as_row(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _ratio(num: int, den: int, name: str, flags: list) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics(cm: ConfusionMatrix) -> MetricSet:
    """ACC, F1, sensitivity, specificity and FPR; a zero denominator gives 0 and a flag."""
    flags: list[str] = []
    acc = (cm.tp + cm.tn) / cm.n
    sens = _ratio(cm.tp, cm.tp + cm.fn, "sensitivity", flags)
    spec = _ratio(cm.tn, cm.tn + cm.fp, "specificity", flags)
    fpr = _ratio(cm.fp, cm.fp + cm.tn, "fpr", flags)
    # F1 = 2TP / (2TP + FP + FN), the harmonic mean of precision and recall
    f1 = _ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn, "f1", flags)
    return MetricSet(acc, f1, sens, spec, fpr, None, tuple(flags))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def _roc_counts(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels, "labels")
    if s.shape != y.shape:
        raise EvaluationError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC is undefined when only one class is present")
    if np.isnan(s).any():
        raise EvaluationError("scores contain NaN")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # one vertex per distinct score: cut after the last element of each tie group
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tps = np.r_[0, tps]
    fps = np.r_[0, fps]
    return tps, fps, s[last], n_pos, n_neg


def auc_fraction(scores, labels) -> Fraction:
    """Trapezoidal AUC as an exact rational."""
    tps, fps, _, n_pos, n_neg = _roc_counts(scores, labels)
    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    return Fraction(twice_area, 2 * n_pos * n_neg)


def pairwise_auc(scores, labels) -> Fraction:
    """P(score_pos > score_neg) + 0.5 P(tie) by brute force over all pairs, exactly."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels, "labels")
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedAUCError("AUC is undefined when only one class is present")
    wins = int(np.sum(pos[:, None] > neg[None, :]))
    ties = int(np.sum(pos[:, None] == neg[None, :]))
    return Fraction(2 * wins + ties, 2 * pos.size * neg.size)


def roc_auc(scores, labels) -> tuple[RocCurve, float]:
    """ROC vertices from (0, 0) to (1, 1) and the trapezoidal area under them."""
    tps, fps, thr, n_pos, n_neg = _roc_counts(scores, labels)
    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    curve = RocCurve(fps / n_neg, tps / n_pos, np.r_[np.inf, thr])
    # int / int is correctly rounded, so this is the float nearest the exact rational
    return curve, twice_area / (2 * n_pos * n_neg)


@dataclass(frozen=True)
class Evaluation:
    cm: ConfusionMatrix
    metrics: MetricSet
    roc: RocCurve | None


def evaluate(pred_labels, scores, actual_labels) -> Evaluation:
    cm = confusion(pred_labels, actual_labels)
    m = metrics(cm)
    try:
        roc, auc = roc_auc(scores, actual_labels)
    except UndefinedAUCError:
        flagged = MetricSet(m.acc, m.f1, m.sensitivity, m.specificity, m.fpr, math.nan, m.degenerate + ("auc",))
        return Evaluation(cm, flagged, None)
    return Evaluation(cm, m.with_auc(auc), roc)


def evaluate_model(model, rows, actual_labels) -> Evaluation:
    return evaluate(model.predict(rows), model.predict_score(rows), actual_labels)


@dataclass(frozen=True)
class ScoreDistribution:
    scores: tuple[float, ...]
    mean: float
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def boxplot_stats(scores) -> ScoreDistribution:
    """Quartiles by linear interpolation between order statistics; 1.5 IQR whiskers.

    NaN scores are dropped before summarising.
    """
    raw = np.asarray(scores, dtype=np.float64).ravel()
    s = raw[~np.isnan(raw)]
    if s.size == 0:
        raise EvaluationError("boxplot needs at least one finite score")
    q1, med, q3 = (float(v) for v in np.percentile(s, [25, 50, 75], method="linear"))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = s[(s >= lo_fence) & (s <= hi_fence)]
    outliers = tuple(float(v) for v in np.sort(s[(s < lo_fence) | (s > hi_fence)]))
    return ScoreDistribution(
        tuple(float(v) for v in raw),
        float(np.mean(s)),
        med,
        q1,
        q3,
        float(inside.min()),
        float(inside.max()),
        outliers,
    )


def kfold_indices(n: int, k: int, seed: int, repeat: int) -> list[np.ndarray]:
    """Shuffled partition of range(n) into k folds; the first n % k folds hold one extra."""
    if k < 2:
        raise EvaluationError("k must be at least 2")
    if k > n:
        raise EvaluationError(f"k={k} folds exceed {n} samples")
    perm = rng_for(seed, 3, repeat).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


@dataclass(frozen=True)
class FoldRecord:
    repeat: int
    fold: int
    metrics: MetricSet
    flags: tuple[str, ...] = ()


@dataclass
class CVResult:
    model_kind: str
    k: int
    repeats: int
    records: list[FoldRecord] = field(default_factory=list)

    def scores(self, metric: str) -> np.ndarray:
        return np.array([getattr(r.metrics, metric) for r in self.records], dtype=np.float64)

    def distribution(self, metric: str) -> ScoreDistribution:
        return boxplot_stats(self.scores(metric))

    def distributions(self) -> dict[str, ScoreDistribution]:
        return {m: self.distribution(m) for m in METRIC_NAMES}

    def mean(self, metric: str) -> float:
        return float(np.nanmean(self.scores(metric)))


_ZERO = MetricSet(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, ("degenerate_training",))


def repeated_kfold(rows, labels, k: int, repeats: int, model_kind: str, hp: dict | None = None, seed: int = 0) -> CVResult:
    """Repeated (unstratified) k-fold CV of one model kind.

    A training fold the model cannot fit (e.g. a single class) is recorded with
    every metric 0 and a ``degenerate_training`` flag.  A test fold holding one
    class has AUC NaN, flagged and left out of the summaries.
    """
    X = np.asarray(rows, dtype=np.float64)
    y = _binary(labels, "labels")
    if X.shape[0] != y.size:
        raise EvaluationError("rows and labels differ in length")
    if repeats < 1:
        raise EvaluationError("repeats must be at least 1")
    if y.size == 0:
        raise EvaluationError("no samples")
    result = CVResult(model_kind, k, repeats)
    for r in range(repeats):
        folds = kfold_indices(y.size, k, seed, r)
        for f, test in enumerate(folds):
            train_mask = np.ones(y.size, dtype=bool)
            train_mask[test] = False
            try:
                model = train(model_kind, X[train_mask], y[train_mask], hp)
            except DegenerateModelError:
                result.records.append(FoldRecord(r, f, _ZERO, ("degenerate_training",)))
                continue
            ev = evaluate_model(model, X[test], y[test])
            result.records.append(FoldRecord(r, f, ev.metrics, ev.metrics.degenerate))
    return result


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_metric_csv(path, rows) -> None:
    """rows: iterables of dicts carrying the CSV_COLUMNS keys."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def cv_rows(dataset: str, result: CVResult) -> list[dict]:
    out = []
    for rec in result.records:
        row = {"dataset": dataset, "model": result.model_kind, "repeat": rec.repeat, "fold": rec.fold}
        row.update(rec.metrics.as_row())
        out.append(row)
    return out


def read_metric_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["repeat"] = int(row["repeat"])
        row["fold"] = int(row["fold"])
        for m in METRIC_NAMES:
            row[m] = float(row[m])
    return rows
