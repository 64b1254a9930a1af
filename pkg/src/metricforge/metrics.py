"""Binary classification metrics: accuracy, precision/recall/F1, ROC-AUC, and EER.

Fake (label 1) is the positive class. AUC is the Mann-Whitney rank statistic
with half credit for tied pairs; EER is found by sweeping score thresholds and
linearly interpolating where the false-acceptance and false-rejection rates
cross.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .util import atomic_write, fmt_float


def _check_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores and labels must be equal-length vectors, got {scores.shape} vs {labels.shape}")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    if not ((labels == 0) | (labels == 1)).all():
        raise ValueError("labels must be 0 or 1")
    if labels.min() == labels.max():
        raise DataError("metric requires both classes to be present")
    return scores, labels


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean of their rank range."""
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [scores.size]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    return ranks


def roc_auc(scores, labels) -> float:
    """P(random positive outscores a random negative), ties counting half."""
    scores, labels = _check_scores(scores, labels)
    ranks = _average_ranks(scores)
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = labels.size - n_pos
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def eer(scores, labels) -> float:
    """Equal error rate: the common value where FAR(t) meets FRR(t).

    FAR(t) is the fraction of negatives scored >= t, FRR(t) the fraction of
    positives scored < t. Candidate thresholds sit at every distinct score and
    every midpoint between neighbours; the crossing is linearly interpolated.
    """
    scores, labels = _check_scores(scores, labels)
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    thresholds = np.sort(np.concatenate([distinct, mids, [distinct[-1] + 1.0]]))
    far = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    frr = np.searchsorted(pos, thresholds, side="left") / pos.size
    diff = far - frr
    i = int(np.argmax(diff <= 0.0))
    if diff[i] == 0.0:
        return float(far[i])
    a1, b1 = far[i - 1], frr[i - 1]
    a2, b2 = far[i], frr[i]
    s = (a1 - b1) / ((a1 - b1) - (a2 - b2))
    return float(a1 + (a2 - a1) * s)


def confusion(pred_labels, true_labels) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) with fake as positive."""
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(true_labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError("predictions and labels must be equal-length non-empty vectors")
    tp = int(np.count_nonzero((pred == 1) & (true == 1)))
    fp = int(np.count_nonzero((pred == 1) & (true == 0)))
    tn = int(np.count_nonzero((pred == 0) & (true == 0)))
    fn = int(np.count_nonzero((pred == 0) & (true == 1)))
    return tp, fp, tn, fn


def prf1(pred_labels, true_labels) -> tuple[float, float, float]:
    """Precision, recall, F1 for the fake class; zero denominators give zero."""
    tp, fp, _, fn = confusion(pred_labels, true_labels)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class RocCurve:
    """Operating points ordered by descending threshold, from (0,0) to (1,1)."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray


def roc_curve(scores, labels) -> RocCurve:
    scores, labels = _check_scores(scores, labels)
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    distinct = np.unique(scores)[::-1]
    thresholds = np.concatenate([[np.inf], distinct])
    fpr = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    tpr = (pos.size - np.searchsorted(pos, thresholds, side="left")) / pos.size
    return RocCurve(thresholds, fpr, tpr)


def auc_trapezoid(curve: RocCurve) -> float:
    """Area under the ROC polyline; matches roc_auc to numerical precision."""
    return float(np.trapezoid(curve.tpr, curve.fpr))


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    eer: float
    tp: int
    fp: int
    tn: int
    fn: int


def full_report(scores, pred_labels, true_labels) -> MetricsReport:
    """Assemble the whole metric battery from scores and thresholded labels."""
    tp, fp, tn, fn = confusion(pred_labels, true_labels)
    precision, recall, f1 = prf1(pred_labels, true_labels)
    return MetricsReport(
        accuracy=(tp + tn) / (tp + fp + tn + fn),
        precision=precision,
        recall=recall,
        f1=f1,
        auc=roc_auc(scores, true_labels),
        eer=eer(scores, true_labels),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


_CSV_COLUMNS = ["accuracy", "precision", "recall", "f1", "auc", "eer", "tp", "fp", "tn", "fn"]


def report_csv(reports: list[tuple[str, MetricsReport]]) -> str:
    """Machine-readable CSV, one row per named report, fixed column order."""
    lines = ["name," + ",".join(_CSV_COLUMNS)]
    for name, r in reports:
        vals = [fmt_float(getattr(r, c)) for c in _CSV_COLUMNS[:6]]
        vals += [str(getattr(r, c)) for c in _CSV_COLUMNS[6:]]
        lines.append(name + "," + ",".join(vals))
    return "\n".join(lines) + "\n"


def report_table(reports: list[tuple[str, MetricsReport]]) -> str:
    """Aligned human-readable table of the same content as report_csv."""
    header = ["name"] + _CSV_COLUMNS
    rows = [header]
    for name, r in reports:
        row = [name]
        row += [f"{getattr(r, c):.4f}" for c in _CSV_COLUMNS[:6]]
        row += [str(getattr(r, c)) for c in _CSV_COLUMNS[6:]]
        rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


def write_roc_csv(curve: RocCurve, path) -> None:
    lines = ["threshold,fpr,tpr"]
    for t, f, tp in zip(curve.thresholds, curve.fpr, curve.tpr):
        lines.append(f"{fmt_float(t)},{fmt_float(f)},{fmt_float(tp)}")
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with atomic_write(path) as fh:
            fh.write(text)
