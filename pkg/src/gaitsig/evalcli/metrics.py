"""Rank-k accuracy and confusion matrices."""

from dataclasses import dataclass

import numpy as np

from ..errors import DataError


def rank_k_accuracy(preds, truth, k):
    """Percentage of predictions whose true label is among their first ``k`` entries."""
    preds = list(preds)
    truth = list(truth)
    if len(preds) != len(truth):
        raise DataError("%d predictions but %d truth labels" % (len(preds), len(truth)))
    if k < 1:
        raise ValueError("k must be >= 1")
    if not preds:
        raise DataError("no predictions")
    hits = sum(1 for p, t in zip(preds, truth) if t in list(p.labels[:k]))
    return 100.0 * hits / len(preds)


@dataclass
class ConfusionMatrix:
    classes: list
    counts: np.ndarray  # counts[i, j]: truth i predicted j

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def accuracy(self):
        return 100.0 * np.trace(self.counts) / self.total if self.total else float("nan")

    @property
    def row_percentages(self):
        rows = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, 100.0 * self.counts / np.where(rows == 0, 1, rows), 0.0)

    def to_dict(self):
        return {"classes": list(self.classes), "counts": self.counts.tolist(),
                "row_percentages": [[round(float(v), 6) for v in r] for r in self.row_percentages],
                "accuracy": round(float(self.accuracy), 6)}


def confusion_matrix(preds, truth, classes):
    classes = list(classes)
    pos = {c: i for i, c in enumerate(classes)}
    preds, truth = list(preds), list(truth)
    if len(preds) != len(truth):
        raise DataError("%d predictions but %d truth labels" % (len(preds), len(truth)))
    M = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(preds, truth):
        if p not in pos or t not in pos:
            raise DataError("label %r not in class set %s" % (p if p not in pos else t, classes))
        M[pos[t], pos[p]] += 1
    return ConfusionMatrix(classes, M)
