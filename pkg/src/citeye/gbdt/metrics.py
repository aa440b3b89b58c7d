import numpy as np

from ..errors import LengthMismatch

EPS = 1e-15


def accuracy(pred, true) -> float:
    """Fraction of matching labels. ``pred`` may be labels or an (n, k) probability matrix;
    argmax ties go to the lowest class index."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1)
    if pred.shape[0] != true.shape[0]:
        raise LengthMismatch(f"{pred.shape[0]} predictions vs {true.shape[0]} labels")
    if true.size == 0:
        return float("nan")
    return float(np.mean(pred == true))


def logloss(proba, true) -> float:
    """Mean negative log-likelihood. A 1-D ``proba`` is P(class 1) of a binary task."""
    proba = np.asarray(proba, dtype=float)
    true = np.asarray(true, dtype=np.int64)
    if proba.shape[0] != true.shape[0]:
        raise LengthMismatch(f"{proba.shape[0]} probability rows vs {true.shape[0]} labels")
    if true.size == 0:
        return float("nan")
    if proba.ndim == 1:
        p_true = np.where(true == 1, proba, 1.0 - proba)
    else:
        p_true = proba[np.arange(true.size), true]
    p_true = np.clip(p_true, EPS, 1.0 - EPS)
    return float(-np.mean(np.log(p_true)))
