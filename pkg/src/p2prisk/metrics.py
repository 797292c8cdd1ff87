"""Imbalance-aware metrics, Platt calibration and cost-optimal thresholds.

Decisions use ``p >= tau`` (ties are predicted positive).  AUPRC is the
step-wise average precision ``sum_k (R_k - R_{k-1}) P_k`` over distinct
score thresholds, without interpolation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValidationError("confusion counts must be nonnegative")
        if self.n == 0:
            raise ValidationError("confusion counts are all zero")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CostModel:
    c_fp: float = 1.0
    c_fn: float = 10.0

    def __post_init__(self):
        if not (self.c_fp > 0 and self.c_fn > 0):
            raise ValidationError("costs must be positive")

    @property
    def tau(self) -> float:
        return optimal_threshold(self)

    def to_dict(self):
        return {"c_fp": self.c_fp, "c_fn": self.c_fn, "tau": self.tau}


def _check(y, p):
    y = np.asarray(y)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1:
        raise ValidationError("labels and scores must be 1-d of equal length")
    if len(y) == 0:
        raise ValidationError("empty input")
    return y.astype(np.int64), p


def confusion(y, p, tau: float = 0.5) -> ConfusionCounts:
    """Counts for the rule "predict 1 iff p >= tau"."""
    y, p = _check(y, p)
    if not 0 <= tau <= 1:
        raise ValidationError("threshold must lie in [0, 1]")
    pred = p >= tau
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; 0 when any marginal is empty."""
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if den == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(den)


def _ratio(a, b):
    return a / b if b else 0.0


def balanced_accuracy(c: ConfusionCounts) -> float:
    return 0.5 * (_ratio(c.tp, c.tp + c.fn) + _ratio(c.tn, c.tn + c.fp))


def f1_prec_rec(c: ConfusionCounts):
    """(F1, precision, recall) for the positive class, 0/0 -> 0."""
    prec = _ratio(c.tp, c.tp + c.fp)
    rec = _ratio(c.tp, c.tp + c.fn)
    f1 = _ratio(2 * prec * rec, prec + rec)
    return f1, prec, rec


def auprc(y, scores) -> float:
    """Step-wise average precision with tied scores grouped."""
    y, s = _check(y, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValidationError("AUPRC is undefined without positives")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    tps = np.cumsum(y_sorted)
    # last index of every tie block
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s_sorted) - 1]
    tp = tps[last].astype(np.float64)
    k = (last + 1).astype(np.float64)
    precision = tp / k
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def roc_auc(y, scores) -> float:
    """Area under the ROC curve via midranks (auxiliary only)."""
    from scipy.stats import rankdata

    y, s = _check(y, scores)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise ValidationError("ROC AUC needs both classes")
    r = rankdata(s)
    return float((r[y == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def expected_cost(c: ConfusionCounts, cost: CostModel) -> float:
    """Average misclassification cost per case."""
    return (cost.c_fp * c.fp + cost.c_fn * c.fn) / c.n


def optimal_threshold(cost: CostModel) -> float:
    return cost.c_fp / (cost.c_fp + cost.c_fn)


# calibration -----------------------------------------------------------------


@dataclass(frozen=True)
class PlattScaler:
    a: float
    b: float

    def apply(self, scores) -> np.ndarray:
        return platt_apply(self.a, self.b, scores)

    def to_dict(self):
        return {"A": self.a, "B": self.b}


def platt_fit(scores, y, tol: float = 1e-8, max_iter: int = 100):
    """Fit ``sigmoid(A s + B)`` with smoothed targets by damped Newton steps.

    Targets are ``(N+ + 1)/(N+ + 2)`` for positives and ``1/(N- + 2)`` for
    negatives.

    Returns:
        (A, B)
    """
    y, s = _check(y, scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("calibration set must contain both classes")
    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def objective(a, b):
        z = a * s + b
        return float(np.sum(np.logaddexp(0.0, z) - t * z))

    a, b = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0)) * -1.0
    f = objective(a, b)
    for _ in range(max_iter):
        z = a * s + b
        p = 0.5 * (1 + np.tanh(0.5 * z))
        d = p - t
        g = np.array([np.dot(d, s), d.sum()])
        w = np.maximum(p * (1 - p), 1e-12)
        H = np.array([[np.dot(w, s * s), np.dot(w, s)], [np.dot(w, s), w.sum()]]) + 1e-12 * np.eye(2)
        step = np.linalg.solve(H, g)
        lam = 1.0
        while lam > 1e-10:
            na, nb = a - lam * step[0], b - lam * step[1]
            nf = objective(na, nb)
            if nf <= f + 1e-4 * lam * float(g @ (-step)) + 1e-15:
                break
            lam *= 0.5
        a, b, f_prev, f = na, nb, f, nf
        if np.max(np.abs(lam * step)) < tol or abs(f_prev - f) < tol * max(1.0, abs(f)):
            break
    return float(a), float(b)


def platt_apply(a: float, b: float, scores) -> np.ndarray:
    z = a * np.asarray(scores, dtype=np.float64) + b
    return 0.5 * (1 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class CalibrationReport:
    edges: tuple
    mean_pred: tuple
    frac_pos: tuple
    counts: tuple
    ece: float

    def to_dict(self):
        return asdict(self)


def reliability(y, p, n_bins: int = 10) -> CalibrationReport:
    """Equal-width reliability bins on [0, 1] and the expected calibration error.

    Empty bins report NaN means and do not contribute to the ECE.
    """
    y, p = _check(y, p)
    if np.any((p < 0) | (p > 1)):
        raise ValidationError("probabilities must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sum_p = np.bincount(idx, weights=p, minlength=n_bins)
    sum_y = np.bincount(idx, weights=y, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_pred = sum_p / counts
        frac_pos = sum_y / counts
    nz = counts > 0
    ece = float(np.sum(counts[nz] / len(y) * np.abs(mean_pred[nz] - frac_pos[nz])))
    return CalibrationReport(
        tuple(edges.tolist()),
        tuple(float(v) for v in mean_pred),
        tuple(float(v) for v in frac_pos),
        tuple(int(c) for c in counts),
        ece,
    )


def metric_bundle(y, p, tau: float, cost: CostModel) -> dict:
    """All headline metrics for one evaluation partition."""
    c = confusion(y, p, tau)
    f1, prec, rec = f1_prec_rec(c)
    out = {
        "mcc": mcc(c),
        "balanced_accuracy": balanced_accuracy(c),
        "auprc": auprc(y, p) if np.any(np.asarray(y) == 1) else float("nan"),
        "precision": prec,
        "recall": rec,
        "f1": f1,
        "expected_cost": expected_cost(c, cost),
        "threshold": tau,
        "confusion": c.to_dict(),
    }
    try:
        out["roc_auc"] = roc_auc(y, p)
    except ValidationError:
        out["roc_auc"] = float("nan")
    return out
