"""Classification metrics and the tree-agreement diagnostic."""

from dataclasses import dataclass

import numpy as np

from .ordinal import CLASS_NAMES


def confusion_matrix(truths, preds, n_classes):
    """``K x K`` counts; rows are ground truth ranks, columns predictions."""
    truths = np.asarray(truths, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truths - 1, preds - 1), 1)
    return cm


@dataclass
class ClassificationReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    no_predictions: np.ndarray   # classes never predicted; their precision is reported as 0
    confusion: np.ndarray

    def as_rows(self, extra=None):
        """Flat ``(key, value)`` pairs in the column order of the usual results table."""
        K = len(self.precision)
        rows = [("accuracy", self.accuracy)]
        for k in range(K):
            name = CLASS_NAMES.get(k + 1, f"class{k + 1}") if K == 3 else f"class{k + 1}"
            rows += [
                (f"{name}_precision", self.precision[k]),
                (f"{name}_recall", self.recall[k]),
                (f"{name}_f1", self.f1[k]),
            ]
        rows += list((extra or {}).items())
        return rows


def classification_report(preds, truths, n_classes):
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if preds.shape != truths.shape:
        raise ValueError(f"length mismatch: {preds.shape[0]} predictions vs {truths.shape[0]} labels")
    if preds.size == 0:
        raise ValueError("cannot score an empty prediction set")
    cm = confusion_matrix(truths, preds, n_classes)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return ClassificationReport(
        accuracy=float(tp.sum() / cm.sum()),
        precision=precision,
        recall=recall,
        f1=f1,
        no_predictions=predicted == 0,
        confusion=cm,
    )


def tree_variance(tree_ranks, final_rank=None):
    """Mean squared deviation of per-tree predictions from the forest prediction.

    ``tree_ranks`` has trees on the last axis. ``final_rank`` defaults to the
    mean over trees.
    """
    tree_ranks = np.asarray(tree_ranks, dtype=np.float64)
    if final_rank is None:
        final_rank = tree_ranks.mean(axis=-1)
    return np.mean((tree_ranks - np.asarray(final_rank)[..., None]) ** 2, axis=-1)
