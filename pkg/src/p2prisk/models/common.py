"""Input checks and small numeric helpers shared by the learners."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import ValidationError


def sigmoid(z):
    return expit(z)


def logit(p, eps=1e-15):
    p = np.clip(p, eps, 1 - eps)
    return np.log(p) - np.log1p(-p)


def check_xy(X, y=None):
    """Validate a training (or prediction) matrix and binary target."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("X must be a 2-d matrix")
    if not np.all(np.isfinite(X)):
        raise ValidationError("X contains non-finite values")
    if y is None:
        return X
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise ValidationError("y must have one entry per row of X")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("y must be binary")
    y = y.astype(np.float64)
    if y.min() == y.max():
        raise ValidationError("y has a single class; need both classes to train")
    return X, y


def check_predict(X, n_features):
    X = check_xy(X)
    if X.shape[1] != n_features:
        raise ValidationError(f"expected {n_features} columns, got {X.shape[1]}")
    return X


def class_weights(y, class_weight="balanced", sample_weight=None) -> np.ndarray:
    """Per-row weights: ``n / (2 n_c)`` for "balanced", ones for ``None``.

    A mapping ``{0: w0, 1: w1}`` is also accepted.
    """
    y = np.asarray(y)
    n = len(y)
    if class_weight is None:
        w = np.ones(n)
    elif class_weight == "balanced":
        n1 = float(np.sum(y == 1))
        n0 = n - n1
        w = np.where(y == 1, n / (2.0 * n1), n / (2.0 * n0))
    elif isinstance(class_weight, dict):
        w = np.where(y == 1, float(class_weight.get(1, 1.0)), float(class_weight.get(0, 1.0)))
    else:
        raise ValidationError(f"unknown class_weight {class_weight!r}")
    if sample_weight is not None:
        w = w * np.asarray(sample_weight, dtype=np.float64)
    return w


def weighted_logloss(y, p, w=None, eps=1e-15):
    p = np.clip(p, eps, 1 - eps)
    ll = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    if w is None:
        return float(ll.mean())
    return float(np.sum(w * ll) / np.sum(w))
