"""Confusion matrices and precision / recall / F1 reporting."""
from __future__ import annotations

import csv
import io
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    undefined: tuple[str, ...] = ()


@dataclass
class MetricsReport:
    per_class: list[ClassMetrics]
    precision: float
    recall: float
    f1: float
    accuracy: float
    average: str = "macro"


def confusion(preds: Sequence[int], labels: Sequence[int], num_classes: int) -> np.ndarray:
    """``cm[i, j]`` counts examples of true class ``i`` predicted as ``j``."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions for {labels.size} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} ids must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def _ratio(num: float, den: float) -> tuple[float, bool]:
    return (num / den, True) if den > 0 else (0.0, False)


def precision_recall_f1(cm: np.ndarray, average: str = "macro") -> MetricsReport:
    """Per-class and averaged scores.

    True positives are the diagonal, false positives the rest of a column and
    false negatives the rest of a row.  A 0/0 quotient is reported as 0 and
    named in that class's ``undefined`` tuple.  ``average='macro'`` takes the
    unweighted mean of per-class values; ``'micro'`` pools the counts.
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.size == 0 or cm.sum() == 0:
        raise ValueError("confusion matrix must be a non-empty square count matrix")
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    per = []
    for k in range(cm.shape[0]):
        p, p_ok = _ratio(tp[k], tp[k] + fp[k])
        r, r_ok = _ratio(tp[k], tp[k] + fn[k])
        f, f_ok = _ratio(2 * p * r, p + r)
        undefined = tuple(n for n, ok in (("precision", p_ok), ("recall", r_ok), ("f1", f_ok)) if not ok)
        per.append(ClassMetrics(p, r, f, int(cm[k].sum()), undefined))
    accuracy = float(tp.sum() / cm.sum())
    if average == "macro":
        P = float(np.mean([c.precision for c in per]))
        R = float(np.mean([c.recall for c in per]))
        F = float(np.mean([c.f1 for c in per]))
    elif average == "micro":
        P, _ = _ratio(tp.sum(), tp.sum() + fp.sum())
        R, _ = _ratio(tp.sum(), tp.sum() + fn.sum())
        F, _ = _ratio(2 * P * R, P + R)
    else:
        raise ValueError(f"average must be 'macro' or 'micro', got {average!r}")
    return MetricsReport(per, P, R, F, accuracy, average)


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


Reports = Mapping[str, MetricsReport] | Sequence[tuple[str, MetricsReport]]


def _items(reports: Reports) -> list[tuple[str, MetricsReport]]:
    items = list(reports.items()) if isinstance(reports, Mapping) else list(reports)
    if not items:
        raise ValueError("no reports to format")
    return items


def format_table(reports: Reports) -> str:
    items = _items(reports)
    width = max(5, *(len(n) for n, _ in items))
    lines = [f"{'Model':<{width}}  Precision  Recall  F1"]
    for name, r in items:
        lines.append(f"{name:<{width}}  {r.precision:>9.3f}  {r.recall:>6.3f}  {r.f1:.3f}")
    return "\n".join(lines) + "\n"


def format_csv(reports: Reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "precision", "recall", "f1", "accuracy"])
    for name, r in _items(reports):
        w.writerow([name, *(repr(float(x)) for x in (r.precision, r.recall, r.f1, r.accuracy))])
    return buf.getvalue()


def report(reports: Reports) -> tuple[str, str]:
    """Aligned 3-decimal table and full-precision CSV for named reports.

    Accepts a mapping or a sequence of ``(name, report)`` pairs; the latter
    allows repeated names.
    """
    return format_table(reports), format_csv(reports)
