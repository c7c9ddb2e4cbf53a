"""Binary classification metrics: BCE, macro / weighted F1 and confusion matrices."""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix, f1_score, log_loss

from utils.errors import EmptyInputError, ShapeError

PROB_EPS = 1e-7
BINARY_LABELS = [0, 1]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> Dict[str, int]:
        return {'tp': self.tp, 'fp': self.fp, 'tn': self.tn, 'fn': self.fn}


@dataclass(frozen=True)
class MetricReport:
    bce: Optional[float]
    f1_macro: float
    f1_weighted: float
    confusion: ConfusionMatrix
    confusion_normalized: np.ndarray

    def as_dict(self) -> dict:
        return {
            'bce': self.bce,
            'f1_macro': self.f1_macro,
            'f1_weighted': self.f1_weighted,
            'confusion': self.confusion.as_dict(),
            'confusion_normalized': self.confusion_normalized.tolist(),
        }


def _paired(y: np.ndarray, other: np.ndarray, what: str) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y)
    other = np.asarray(other)
    if y.size == 0:
        raise EmptyInputError(f"Cannot compute {what} of an empty input")
    if y.shape != other.shape:
        raise ShapeError(f"{what}: lengths differ ({y.shape} vs {other.shape})")
    return y, other


def bce(y: np.ndarray, p: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clipped to [1e-7, 1 - 1e-7]"""
    y, p = _paired(y, p, "BCE")
    p = np.clip(p.astype(float), PROB_EPS, 1.0 - PROB_EPS)
    return float(log_loss(y.astype(int), p, labels=BINARY_LABELS))


def confusion_counts(y_true: np.ndarray, y_pred: np.ndarray) -> ConfusionMatrix:
    y_true, y_pred = _paired(y_true, y_pred, "confusion matrix")
    tn, fp, fn, tp = confusion_matrix(y_true.astype(int), y_pred.astype(int),
                                      labels=BINARY_LABELS).ravel()
    return ConfusionMatrix(tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn))


def _class_f1(tp, fp, fn):
    """Per-class F1 = 2tp / (2tp + fp + fn), 0 when the denominator is 0"""
    numerator = np.asarray(2.0 * np.asarray(tp, dtype=float), dtype=float)
    denominator = np.asarray(numerator + fp + fn, dtype=float)
    return np.divide(numerator, denominator, out=np.zeros(denominator.shape),
                     where=denominator > 0)


def f1_scores(y_true: np.ndarray, y_pred: np.ndarray) -> Tuple[float, float, ConfusionMatrix]:
    """
    Macro and support-weighted F1 over the classes {0, 1}

    A class with no true or predicted samples scores 0.

    Args:
        y_true: Binary labels
        y_pred: Binary predictions

    Returns:
        (f1_macro, f1_weighted, ConfusionMatrix)
    """
    c = confusion_counts(y_true, y_pred)
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    macro = f1_score(y_true, y_pred, labels=BINARY_LABELS, average='macro', zero_division=0)
    weighted = f1_score(y_true, y_pred, labels=BINARY_LABELS, average='weighted',
                        zero_division=0)
    return float(macro), float(weighted), c


def batch_f1_macro(predictions: np.ndarray, y_true: np.ndarray) -> np.ndarray:
    """
    Macro F1 of many prediction rows against one label vector

    Args:
        predictions: (rows x n) binary matrix
        y_true: (n,) binary labels

    Returns:
        (rows,) macro F1 values
    """
    predictions = np.atleast_2d(np.asarray(predictions)).astype(bool)
    y_true = np.asarray(y_true).astype(bool)
    if y_true.size == 0:
        raise EmptyInputError("Cannot compute F1 of an empty input")
    if predictions.shape[1] != y_true.shape[0]:
        raise ShapeError(f"Predictions have {predictions.shape[1]} columns, "
                         f"labels have {y_true.shape[0]}")
    positives = int(y_true.sum())
    negatives = y_true.shape[0] - positives
    tp = (predictions & y_true).sum(axis=1)
    predicted_pos = predictions.sum(axis=1)
    fp = predicted_pos - tp
    fn = positives - tp
    tn = negatives - fp
    return (_class_f1(tp, fp, fn) + _class_f1(tn, fn, fp)) / 2.0


def normalize_confusion(c: ConfusionMatrix) -> np.ndarray:
    """
    Row-normalize by true class: rows [tn, fp] / negatives and [fn, tp] / positives

    A class with no samples gives a zero row.
    """
    counts = np.array([[c.tn, c.fp], [c.fn, c.tp]], dtype=float)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def metric_report(y_true: np.ndarray, y_pred: np.ndarray,
                  p: Optional[np.ndarray] = None) -> MetricReport:
    """Full report for one split; BCE is only filled when probabilities are given"""
    macro, weighted, confusion = f1_scores(y_true, y_pred)
    return MetricReport(
        bce=bce(y_true, p) if p is not None else None,
        f1_macro=macro,
        f1_weighted=weighted,
        confusion=confusion,
        confusion_normalized=normalize_confusion(confusion),
    )
