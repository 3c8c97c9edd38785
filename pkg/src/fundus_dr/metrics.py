"""Confusion matrix, threshold metrics and rank-based ROC AUC.

Cell ``(i, j)`` of a confusion matrix counts samples of actual class ``i``
predicted as class ``j``.  For binary problems class 1 is the positive class:
``TP = cm[1, 1]``, ``TN = cm[0, 0]``, ``FP = cm[0, 1]``, ``FN = cm[1, 0]``.

Rates whose denominator is zero are reported as 0 and listed in ``flags``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def confusion(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.intp).ravel()
    y_pred = np.asarray(y_pred, dtype=np.intp).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} true vs {y_pred.size} predicted")
    for name, y in (("y_true", y_true), ("y_pred", y_pred)):
        if y.size and (y.min() < 0 or y.max() >= num_classes):
            raise ValueError(f"{name} has labels outside 0..{num_classes - 1}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


@dataclass
class BinaryRates:
    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1: float
    flags: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "specificity": self.specificity,
            "f1": self.f1,
            "flags": list(self.flags),
        }


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def rates_from_counts(tp: int, tn: int, fp: int, fn: int) -> BinaryRates:
    flags: list[str] = []
    tp, tn, fp, fn = int(tp), int(tn), int(fp), int(fn)
    accuracy = _ratio(tp + tn, tp + tn + fp + fn, "accuracy", flags)
    precision = _ratio(tp, tp + fp, "precision", flags)
    recall = _ratio(tp, tp + fn, "recall", flags)
    specificity = _ratio(tn, tn + fp, "specificity", flags)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", flags)
    return BinaryRates(accuracy, precision, recall, specificity, f1, flags)


def binary_rates(cm) -> BinaryRates:
    cm = np.asarray(cm)
    if cm.shape != (2, 2):
        raise ValueError(f"binary_rates needs a 2x2 matrix, got {cm.shape}")
    return rates_from_counts(tp=cm[1, 1], tn=cm[0, 0], fp=cm[0, 1], fn=cm[1, 0])


def one_vs_rest(cm, k: int) -> np.ndarray:
    """Collapse ``cm`` to a 2x2 matrix with class ``k`` as the positive class."""
    cm = np.asarray(cm)
    tp = cm[k, k]
    fn = cm[k].sum() - tp
    fp = cm[:, k].sum() - tp
    tn = cm.sum() - tp - fn - fp
    return np.array([[tn, fp], [fn, tp]], dtype=np.int64)


@dataclass
class MetricsReport:
    accuracy: float
    per_class: list[BinaryRates]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray
    auc: float | None = None
    class_names: list[str] | None = None

    def as_dict(self) -> dict:
        names = self.class_names or [str(k) for k in range(len(self.per_class))]
        return {
            "accuracy": self.accuracy,
            "per_class": {
                name: {
                    "precision": r.precision,
                    "recall": r.recall,
                    "specificity": r.specificity,
                    "f1": r.f1,
                    "flags": list(r.flags),
                }
                for name, r in zip(names, self.per_class)
            },
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "auc": self.auc,
            "confusion": self.confusion.tolist(),
            "class_names": names,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def multiclass_report(cm, auc: float | None = None, class_names=None) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    k = cm.shape[0]
    if cm.ndim != 2 or cm.shape != (k, k) or k < 2:
        raise ValueError(f"need a square KxK matrix with K >= 2, got {cm.shape}")
    per_class = [binary_rates(one_vs_rest(cm, c)) for c in range(k)]
    total = int(cm.sum())
    return MetricsReport(
        accuracy=float(np.trace(cm)) / total if total else 0.0,
        per_class=per_class,
        macro_precision=float(np.mean([r.precision for r in per_class])),
        macro_recall=float(np.mean([r.recall for r in per_class])),
        macro_f1=float(np.mean([r.f1 for r in per_class])),
        confusion=cm,
        auc=auc,
        class_names=list(class_names) if class_names is not None else None,
    )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    # start index of each run of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], sorted_vals.size]
    mean_rank = (starts + ends + 1) / 2.0  # 1-based average rank of each run
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def roc_auc(scores, y_true) -> float:
    """Mann-Whitney AUC: ``P(s_pos > s_neg) + 0.5 * P(s_pos == s_neg)``."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(y_true).ravel().astype(bool)
    if scores.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative sample")
    ranks = _average_ranks(scores)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc_ovr(score_matrix, y_true) -> float:
    scores = np.asarray(score_matrix, dtype=np.float64)
    y = np.asarray(y_true, dtype=np.intp).ravel()
    k = scores.shape[1]
    missing = [c for c in range(k) if not np.any(y == c)]
    if missing:
        raise ValueError(f"classes {missing} absent from y_true; one-vs-rest AUC undefined")
    return float(np.mean([roc_auc(scores[:, c], y == c) for c in range(k)]))


def evaluate_scores(score_matrix, y_true, class_names=None) -> MetricsReport:
    """Full report from an ``n x K`` score matrix (argmax gives the prediction)."""
    scores = np.asarray(score_matrix, dtype=np.float64)
    y = np.asarray(y_true, dtype=np.intp)
    k = scores.shape[1]
    cm = confusion(y, scores.argmax(axis=1), k)
    try:
        auc = roc_auc(scores[:, 1], y == 1) if k == 2 else macro_auc_ovr(scores, y)
    except ValueError:
        auc = None
    return multiclass_report(cm, auc=auc, class_names=class_names)
