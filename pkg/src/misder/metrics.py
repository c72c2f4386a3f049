"""Binary classification metrics: accuracy, per-class F1, macro F1, AUC and
standardized partial AUC. Scores are probabilities of the fake class; the
decision threshold is fixed at 0.5.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

METRIC_FIELDS = ("macro_f1", "accuracy", "auc", "sp_auc", "f1_real", "f1_fake")


@dataclass
class MetricReport:
    macro_f1: float
    accuracy: float
    auc: float
    sp_auc: float
    f1_real: float
    f1_fake: float
    n_test: int
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    def to_text(self) -> str:
        rows = [("macro F1", self.macro_f1), ("accuracy", self.accuracy),
                ("AUC", self.auc), ("spAUC", self.sp_auc),
                ("F1 real", self.f1_real), ("F1 fake", self.f1_fake)]
        lines = [f"{name:<10} {value:.4f}" for name, value in rows]
        lines.append(f"{'n':<10} {self.n_test}")
        lines.append(f"{'seed':<10} {self.seed}")
        return "\n".join(lines)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ValueError("empty input")
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    return scores, labels.astype(np.int64)


def _f1(tp: int, fp: int, fn: int) -> float:
    # 0/0 convention: a class with no predicted and no true positives scores 0
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def confusion_metrics(scores, labels, threshold: float = 0.5):
    """accuracy, f1_real, f1_fake, macro_f1 at the fixed threshold."""
    scores, labels = _validate(scores, labels)
    preds = (scores >= threshold).astype(np.int64)
    accuracy = float((preds == labels).mean())
    f1_fake = _f1(tp=int(((preds == 1) & (labels == 1)).sum()),
                  fp=int(((preds == 1) & (labels == 0)).sum()),
                  fn=int(((preds == 0) & (labels == 1)).sum()))
    f1_real = _f1(tp=int(((preds == 0) & (labels == 0)).sum()),
                  fp=int(((preds == 0) & (labels == 1)).sum()),
                  fn=int(((preds == 1) & (labels == 0)).sum()))
    return accuracy, f1_real, f1_fake, (f1_real + f1_fake) / 2


def auc(scores, labels) -> float:
    """Mann-Whitney statistic by the rank method: the probability that a
    random fake article outranks a random real one, ties counted half."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined for single-class labels")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1  # average rank, 1-based
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def _roc_points(scores, labels):
    """Staircase (fpr, tpr) with tied scores merged into single vertices,
    from (0,0) to (1,1)."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    fpr = [0.0]
    tpr = [0.0]
    tp = fp = 0
    i = 0
    while i < y.size:
        j = i
        while j + 1 < y.size and s[j + 1] == s[i]:
            j += 1
        tp += int(y[i:j + 1].sum())
        fp += (j - i + 1) - int(y[i:j + 1].sum())
        fpr.append(fp / n_neg)
        tpr.append(tp / n_pos)
        i = j + 1
    return np.array(fpr), np.array(tpr)


def sp_auc(scores, labels, max_fpr: float = 0.1) -> float:
    """Partial AUC over FPR in [0, max_fpr], standardized to [0, 1] by the
    McClish map. max_fpr = 1 recovers the full AUC."""
    if not 0 < max_fpr <= 1:
        raise ValueError("max_fpr must lie in (0, 1]")
    scores, labels = _validate(scores, labels)
    if labels.sum() in (0, labels.size):
        raise ValueError("AUC undefined for single-class labels")
    fpr, tpr = _roc_points(scores, labels)
    area = 0.0
    for a in range(1, len(fpr)):
        x0, x1 = fpr[a - 1], fpr[a]
        y0, y1 = tpr[a - 1], tpr[a]
        if x0 >= max_fpr:
            break
        if x1 > max_fpr:
            # cut the segment vertically at the ceiling
            y1 = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0)
            x1 = max_fpr
        area += (x1 - x0) * (y0 + y1) / 2
    min_area = max_fpr ** 2 / 2
    max_area = max_fpr
    return 0.5 * (1 + (area - min_area) / (max_area - min_area))


def metric_report(scores, labels, seed: int) -> MetricReport:
    accuracy, f1_real, f1_fake, macro = confusion_metrics(scores, labels)
    scores_arr, labels_arr = _validate(scores, labels)
    return MetricReport(macro_f1=macro, accuracy=accuracy,
                        auc=auc(scores_arr, labels_arr),
                        sp_auc=sp_auc(scores_arr, labels_arr),
                        f1_real=f1_real, f1_fake=f1_fake,
                        n_test=int(scores_arr.size), seed=seed)
