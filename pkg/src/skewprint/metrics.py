"""Confusion matrices, per-class TPR (recall) and F1."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """``counts[i, j]``: vectors of true class ``labels[i]`` predicted as ``labels[j]``."""

    labels: list
    counts: np.ndarray

    def index(self, label) -> int:
        return self.labels.index(label)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\predicted"] + [str(x) for x in self.labels])
            for lab, row in zip(self.labels, self.counts):
                w.writerow([str(lab)] + [int(c) for c in row])


@dataclass
class MetricsReport:
    """Per-class TPR and F1; NaN marks an undefined value (no support)."""

    labels: list
    tpr: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_tpr: float
    macro_f1: float
    matrix: ConfusionMatrix

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "support", "tpr", "f1"])
            for lab, s, t, f in zip(self.labels, self.support, self.tpr, self.f1):
                w.writerow([str(lab), int(s), repr(float(t)), repr(float(f))])
            w.writerow(["macro", int(self.support.sum()), repr(self.macro_tpr), repr(self.macro_f1)])


def confusion_matrix(
    predictions: Sequence[Hashable],
    truths: Sequence[Hashable],
    labels: Sequence[Hashable] | None = None,
) -> ConfusionMatrix:
    """Count (truth, prediction) pairs.

    ``labels`` fixes the class order; by default the sorted union of both
    sequences is used.
    """
    predictions, truths = list(predictions), list(truths)
    if len(predictions) != len(truths):
        raise MetricsError(f"length mismatch: {len(predictions)} predictions vs {len(truths)} truths")
    if not truths:
        raise MetricsError("empty input")
    if labels is None:
        labels = sorted(set(truths) | set(predictions))
    labels = list(labels)
    pos = {lab: i for i, lab in enumerate(labels)}
    missing = (set(truths) | set(predictions)) - set(pos)
    if missing:
        raise MetricsError(f"labels not in label list: {sorted(map(str, missing))}")
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    np.add.at(counts, ([pos[t] for t in truths], [pos[p] for p in predictions]), 1)
    return ConfusionMatrix(labels, counts)


def class_metrics(matrix: ConfusionMatrix) -> MetricsReport:
    """TPR = TP/(TP+FN) and F1 = TP/(TP + (FP+FN)/2) per class.

    Classes without support have undefined TPR and are left out of the macro
    TPR; F1 is undefined only when TP+FP+FN is zero.
    """
    c = matrix.counts.astype(float)
    tp = np.diag(c)
    fn = c.sum(axis=1) - tp
    fp = c.sum(axis=0) - tp
    support = matrix.counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        tpr = np.where(support > 0, tp / (tp + fn), np.nan)
        denom = tp + 0.5 * (fp + fn)
        f1 = np.where(denom > 0, tp / denom, np.nan)
    macro_tpr = float(np.nanmean(tpr)) if np.any(support > 0) else float("nan")
    macro_f1 = float(np.nanmean(f1)) if np.any(~np.isnan(f1)) else float("nan")
    return MetricsReport(list(matrix.labels), tpr, f1, support, macro_tpr, macro_f1, matrix)
