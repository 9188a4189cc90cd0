"""Evaluation metrics: R², macro F1 with per-class precision/recall, Spearman's rho."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def r2_score(y_true, y_pred) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot.

    With zero target variance the score is 1.0 for exact predictions and
    0.0 otherwise (declared convention).
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("empty inputs")
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


@dataclass
class ClassificationReport:
    classes: list
    precision: dict
    recall: dict
    f1: dict
    macro_f1: float
    # classes that never occurred in truth or prediction but were declared,
    # or were never predicted; their zero scores are conventions, not data
    flagged_classes: list = field(default_factory=list)


def classification_report(y_true, y_pred, classes=None) -> ClassificationReport:
    """Per-class precision/recall/F1 and their unweighted (macro) mean.

    A declared class absent from both truth and prediction contributes
    F1 = 0 and is flagged; likewise precision of a never-predicted class.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("empty inputs")
    if y_true.shape != y_pred.shape:
        raise ValueError("length mismatch")
    if classes is None:
        classes = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    classes = list(classes)
    precision, recall, f1 = {}, {}, {}
    flagged = []
    for c in classes:
        tp = int(np.sum((y_true == c) & (y_pred == c)))
        fp = int(np.sum((y_true != c) & (y_pred == c)))
        fn = int(np.sum((y_true == c) & (y_pred != c)))
        if tp + fp == 0:
            precision[c] = 0.0
            flagged.append(c)
        else:
            precision[c] = tp / (tp + fp)
        recall[c] = tp / (tp + fn) if tp + fn > 0 else 0.0
        p, r = precision[c], recall[c]
        f1[c] = 2 * p * r / (p + r) if p + r > 0 else 0.0
    macro = float(np.mean([f1[c] for c in classes]))
    return ClassificationReport(classes, precision, recall, f1, macro, flagged)


def macro_f1(y_true, y_pred, classes=None) -> float:
    return classification_report(y_true, y_pred, classes).macro_f1


def rank_average_ties(values) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank range."""
    a = np.asarray(values, dtype=np.float64)
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(a.size, dtype=np.float64)
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(a, b) -> float | None:
    """Pearson correlation of average-tie ranks; None when a rank variance is 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    if a.size < 2:
        raise ValueError("need at least 2 values")
    ra = rank_average_ties(a)
    rb = rank_average_ties(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = float(np.sqrt(np.sum(ra * ra) * np.sum(rb * rb)))
    if denom == 0.0:
        return None
    return float(np.sum(ra * rb) / denom)
