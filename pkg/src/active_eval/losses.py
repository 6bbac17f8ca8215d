"""Loss functions shared by the evaluated model and the estimators.

Classification losses read a probability vector per point; regression losses
read a predictive mean (and, for the Gaussian negative log-likelihood, a
predictive variance). Probabilities are floored at ``PROB_FLOOR`` before any
log so that hard 0/1 classifiers (e.g. vote-fraction forests) produce large
but finite losses.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

__all__ = [
    "LossKind",
    "PROB_FLOOR",
    "squared_error_loss",
    "gaussian_nll_loss",
    "cross_entropy_loss",
    "accuracy_loss",
    "REGRESSION_LOSSES",
    "CLASSIFICATION_LOSSES",
]

PROB_FLOOR = 1e-12


class LossKind(str, Enum):
    SQUARED_ERROR = "squared_error"
    GAUSSIAN_NLL = "gaussian_nll"
    CROSS_ENTROPY = "cross_entropy"
    ACCURACY = "accuracy"


REGRESSION_LOSSES = frozenset({LossKind.SQUARED_ERROR, LossKind.GAUSSIAN_NLL})
CLASSIFICATION_LOSSES = frozenset({LossKind.CROSS_ENTROPY, LossKind.ACCURACY})


def squared_error_loss(pred_mean, y) -> np.ndarray:
    pred_mean = np.asarray(pred_mean, dtype=float)
    y = np.asarray(y, dtype=float)
    return (pred_mean - y) ** 2


def gaussian_nll_loss(pred_mean, pred_var, y) -> np.ndarray:
    """Negative log density of y under a Gaussian predictive N(mean, var)."""
    mean = np.asarray(pred_mean, dtype=float)
    var = np.maximum(np.asarray(pred_var, dtype=float), PROB_FLOOR)
    y = np.asarray(y, dtype=float)
    return 0.5 * (np.log(2.0 * np.pi * var) + (y - mean) ** 2 / var)


def cross_entropy_loss(probs, y) -> np.ndarray:
    """-log p(true class); probabilities floored to keep losses finite."""
    p = np.asarray(probs, dtype=float)
    y = np.asarray(y)
    if p.ndim == 1:
        return -np.log(max(float(p[int(y)]), PROB_FLOOR))
    picked = p[np.arange(p.shape[0]), y.astype(int)]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def accuracy_loss(probs, y) -> np.ndarray:
    """One minus accuracy; the predicted class is the argmax (lowest index wins ties)."""
    p = np.asarray(probs, dtype=float)
    y = np.asarray(y)
    if p.ndim == 1:
        return np.asarray(0.0 if int(np.argmax(p)) == int(y) else 1.0)
    return (np.argmax(p, axis=1) != y.astype(int)).astype(float)
