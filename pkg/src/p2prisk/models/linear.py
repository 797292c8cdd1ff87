"""Class-weighted logistic regression with L1 or L2 penalty.

Objective (``s`` = per-row weights, ``S = sum(s)``)::

    J(w, b) = sum_i s_i * CE(y_i, sigmoid(x_i w + b)) / S + R(w) / (C * n)

with ``R = ||w||_1`` (L1) or ``||w||^2 / 2`` (L2).  L2 problems are solved
with L-BFGS; L1 problems with accelerated proximal gradient (FISTA with
backtracking and adaptive restart).  Both stop on a gradient-norm (or
proximal-gradient-mapping) tolerance or an iteration cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..errors import ValidationError
from .common import check_predict, check_xy, class_weights, sigmoid


def _smooth_parts(theta, X, y, s, S):
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    # stable cross-entropy: log(1 + e^z) - y z
    ce = np.logaddexp(0.0, z) - y * z
    r = (sigmoid(z) - y) * s / S
    return float(np.dot(s, ce) / S), np.append(X.T @ r, r.sum())


def loss_and_grad(theta, X, y, s, C, penalty="l2"):
    """Objective and (sub)gradient at ``theta = [w..., b]``.

    For L1 the returned gradient covers only the smooth part.
    """
    n = X.shape[0]
    S = float(np.sum(s))
    f, g = _smooth_parts(theta, X, y, s, S)
    w = theta[:-1]
    if penalty == "l2":
        f += float(w @ w) / (2.0 * C * n)
        g[:-1] += w / (C * n)
    else:
        f += float(np.abs(w).sum()) / (C * n)
    return f, g


@dataclass(frozen=True, eq=False)
class LogRegModel:
    coef: np.ndarray
    intercept: float
    params: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    family: str = "LogReg"

    @property
    def n_features(self) -> int:
        return len(self.coef)

    def margin(self, X):
        X = check_predict(X, self.n_features)
        return X @ self.coef + self.intercept

    def predict_proba(self, X):
        return sigmoid(self.margin(X))

    def feature_importance(self):
        return np.abs(self.coef)

    def to_dict(self):
        return {
            "family": self.family,
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "params": self.params,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["coef"], dtype=np.float64), float(d["intercept"]), d.get("params", {}), d.get("meta", {}))


def _fista_l1(X, y, s, C, tol, max_iter, theta0):
    n, d = X.shape
    S = float(np.sum(s))
    lam = 1.0 / (C * n)

    def smooth(t):
        return _smooth_parts(t, X, y, s, S)

    def prox(t, step):
        out = t.copy()
        out[:-1] = np.sign(t[:-1]) * np.maximum(np.abs(t[:-1]) - step * lam, 0.0)
        return out

    x = theta0.copy()
    v = x.copy()
    tk = 1.0
    # Lipschitz estimate for the weighted logistic loss: ||[X 1]||_2^2 max(s) / (4 S)
    L = max(1e-8, 0.25 * float(np.max(s)) / S * (np.linalg.norm(X, 2) ** 2 + n))
    fx = smooth(x)[0] + lam * np.abs(x[:-1]).sum()
    it = 0
    gmap = np.inf
    for it in range(1, max_iter + 1):
        fv, gv = smooth(v)
        while True:
            x_new = prox(v - gv / L, 1.0 / L)
            diff = x_new - v
            f_new = smooth(x_new)[0]
            if f_new <= fv + gv @ diff + 0.5 * L * (diff @ diff) + 1e-15:
                break
            L *= 2.0
        gmap = L * np.linalg.norm(diff)
        F_new = f_new + lam * np.abs(x_new[:-1]).sum()
        if F_new > fx:
            # adaptive restart
            tk = 1.0
            v = x.copy()
            continue
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        v = x_new + ((tk - 1) / t_next) * (x_new - x)
        x, fx, tk = x_new, F_new, t_next
        if gmap < tol:
            break
    return x, it, gmap


def fit_logreg(
    X,
    y,
    C: float = 1.0,
    penalty: str = "l2",
    class_weight="balanced",
    sample_weight=None,
    tol: float = 1e-6,
    max_iter: int = 10_000,
) -> LogRegModel:
    """Fit penalized, class-weighted logistic regression.

    Args:
        C: inverse regularization strength.
        penalty: "l1" or "l2".
        class_weight: "balanced", ``None`` or ``{0: w0, 1: w1}``.
    """
    X, y = check_xy(X, y)
    if C <= 0:
        raise ValidationError("C must be positive")
    if penalty not in ("l1", "l2"):
        raise ValidationError(f"unknown penalty {penalty!r}")
    s = class_weights(y, class_weight, sample_weight)
    n, d = X.shape
    theta0 = np.zeros(d + 1)
    if penalty == "l2":
        res = minimize(
            loss_and_grad,
            theta0,
            args=(X, y, s, C, "l2"),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15, "maxcor": 20},
        )
        theta, n_iter = res.x, int(res.nit)
        gnorm = float(np.abs(res.jac).max())
    else:
        theta, n_iter, gnorm = _fista_l1(X, y, s, C, tol, max_iter, theta0)
    params = {"C": C, "penalty": penalty, "class_weight": class_weight}
    return LogRegModel(theta[:-1].copy(), float(theta[-1]), params, {"n_iter": n_iter, "grad_norm": gnorm})
