"""Macro-averaged classification metrics and the confusion matrix."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, LengthMismatch


def _ratio(num, den):
    return num / den if den else 0.0


@dataclass
class MetricsReport:
    classes: tuple
    confusion: np.ndarray  # rows: true class, columns: predicted class
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "precision_macro": self.precision,
            "recall_macro": self.recall,
            "f1_macro": self.f1,
            "classes": list(self.classes),
            "per_class": {
                c: {"tp": int(self.tp[i]), "fp": int(self.fp[i]), "fn": int(self.fn[i])}
                for i, c in enumerate(self.classes)
            },
            "confusion": self.confusion.astype(int).tolist(),
        }


def evaluate(y_true, y_pred, classes, literal_accuracy=False):
    """Per-class tp/fp/fn, macro precision and recall, and macro F1 as the
    harmonic mean of the two macro aggregates. Zero denominators give 0.

    ``literal_accuracy`` divides total true positives by sum(tp + fp + fn)
    instead of by the number of samples.
    """
    y_true = list(y_true)
    y_pred = list(y_pred)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    if not y_true:
        raise EmptyInput("nothing to evaluate")
    classes = tuple(classes)
    pos = {c: i for i, c in enumerate(classes)}
    unknown = (set(y_true) | set(y_pred)) - set(pos)
    if unknown:
        raise LengthMismatch(f"labels outside the class set: {sorted(map(str, unknown))}")
    k = len(classes)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, ([pos[t] for t in y_true], [pos[p] for p in y_pred]), 1)
    tp = np.diag(cm).astype(np.int64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    precision = sum(_ratio(tp[i], tp[i] + fp[i]) for i in range(k)) / k
    recall = sum(_ratio(tp[i], tp[i] + fn[i]) for i in range(k)) / k
    f1 = _ratio(2 * precision * recall, precision + recall)
    if literal_accuracy:
        accuracy = _ratio(tp.sum(), (tp + fp + fn).sum())
    else:
        accuracy = tp.sum() / len(y_true)
    return MetricsReport(classes, cm, float(accuracy), float(precision), float(recall), float(f1), tp, fp, fn)


def write_confusion(path, report, comment=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["true\\pred", *report.classes])
        for c, row in zip(report.classes, report.confusion):
            w.writerow([c, *map(int, row)])


def render_text(report, title=None):
    lines = []
    if title:
        lines.append(title)
    lines += [
        f"accuracy         {report.accuracy:.4f}",
        f"precision_macro  {report.precision:.4f}",
        f"recall_macro     {report.recall:.4f}",
        f"f1_macro         {report.f1:.4f}",
        "",
        "confusion (rows = true, columns = predicted)",
    ]
    width = max(6, *(len(c) for c in report.classes)) + 2
    lines.append(" " * width + "".join(c.rjust(width) for c in report.classes))
    for c, row in zip(report.classes, report.confusion):
        lines.append(c.ljust(width) + "".join(str(int(v)).rjust(width) for v in row))
    return "\n".join(lines) + "\n"
