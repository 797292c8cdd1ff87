"""Stacked generalization over tree-ensemble base learners.

Base learners produce out-of-fold (OOF) probabilities on the training rows;
a logistic meta-learner is fit on those OOF columns only, and the base
learners are then refit on all rows for prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..rng import Rng
from .common import check_predict, check_xy
from .linear import LogRegModel, fit_logreg


@dataclass(frozen=True, eq=False)
class StackingModel:
    bases: tuple
    base_names: tuple
    meta_model: LogRegModel
    n_features: int
    oof: np.ndarray = field(repr=False, default=None)
    oof_fold: np.ndarray = field(repr=False, default=None)
    params: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    family: str = "Stacking"

    def base_matrix(self, X) -> np.ndarray:
        X = check_predict(X, self.n_features)
        return np.column_stack([b.predict_proba(X) for b in self.bases])

    def margin(self, X):
        return self.meta_model.margin(self.base_matrix(X))

    def predict_proba(self, X):
        return self.meta_model.predict_proba(self.base_matrix(X))

    def feature_importance(self):
        """Meta-weighted sum of each base's normalized importances."""
        out = np.zeros(self.n_features)
        for coef, base in zip(self.meta_model.coef, self.bases):
            imp = base.feature_importance()
            total = imp.sum()
            if total > 0:
                out += abs(coef) * imp / total
        return out

    def to_dict(self):
        return {
            "family": self.family,
            "base_names": list(self.base_names),
            "bases": [b.to_dict() for b in self.bases],
            "meta_model": self.meta_model.to_dict(),
            "n_features": self.n_features,
            "oof_fold": None if self.oof_fold is None else self.oof_fold.tolist(),
            "params": self.params,
        }


def oof_folds(y, n_folds, rng: Rng, groups=None) -> np.ndarray:
    """Fold id per row, stratified by class and (optionally) group-pure.

    With ``groups``, whole groups are dealt to folds: groups containing
    positives first, each to the fold with the fewest positives so far,
    then the rest to the smallest fold.
    """
    y = np.asarray(y)
    n = len(y)
    fold = np.empty(n, dtype=np.int64)
    if groups is None:
        start = 0
        for cls in (1, 0):
            idx = np.flatnonzero(y == cls)
            idx = idx[rng.derive(f"class{cls}").permutation(len(idx))]
            fold[idx] = (start + np.arange(len(idx))) % n_folds
            start = (start + len(idx)) % n_folds
        return fold
    _, gid = np.unique(np.asarray(groups), return_inverse=True)
    ng = gid.max() + 1
    size = np.bincount(gid, minlength=ng)
    pos = np.bincount(gid, weights=y, minlength=ng)
    perm = rng.derive("groups").permutation(ng)
    order = sorted(perm, key=lambda g: (-float(pos[g]), -int(size[g])))
    fpos = np.zeros(n_folds)
    fsize = np.zeros(n_folds)
    gfold = np.empty(ng, dtype=np.int64)
    for g in order:
        if pos[g] > 0:
            f = min(range(n_folds), key=lambda j: (fpos[j], fsize[j], j))
        else:
            f = min(range(n_folds), key=lambda j: (fsize[j], j))
        gfold[g] = f
        fpos[f] += pos[g]
        fsize[f] += size[g]
    return gfold[gid]


def fit_stacking(X, y, bases, n_folds: int = 5, groups=None, meta_C: float = 1.0, rng: Rng | None = None, train_fn=None) -> StackingModel:
    """Fit base learners out-of-fold, then the logistic meta-learner.

    Args:
        bases: sequence of :class:`~p2prisk.models.registry.ModelSpec`.
        groups: optional group label per row; rows sharing a group (e.g. a
            synthetic row and its source row) never straddle OOF folds.
        train_fn: training dispatcher ``(spec, X, y, rng) -> model``.
    """
    X, y = check_xy(X, y)
    if train_fn is None:
        from .registry import train as train_fn
    if len(bases) < 1:
        raise ValidationError("stacking needs at least one base learner")
    rng = rng or Rng(0, "stacking")
    fold = oof_folds(y, n_folds, rng.derive("oof"), groups)
    oof = np.full((len(y), len(bases)), np.nan)
    for f in range(n_folds):
        test = fold == f
        train = ~test
        if not test.any():
            continue
        if y[train].min() == y[train].max():
            raise ValidationError(f"OOF fold {f}: training part has a single class")
        for b, spec in enumerate(bases):
            model = train_fn(spec, X[train], y[train], rng.derive(f"oof/{f}/{b}"))
            oof[test, b] = model.predict_proba(X[test])
    if np.isnan(oof).any():
        raise ValidationError("OOF matrix incomplete: some rows were never held out")
    meta_model = fit_logreg(oof, y, C=meta_C, penalty="l2", class_weight=None)
    fitted = tuple(train_fn(spec, X, y, rng.derive(f"full/{b}")) for b, spec in enumerate(bases))
    names = tuple(getattr(s, "name", None) or s.family for s in bases)
    params = {"n_folds": n_folds, "meta_C": meta_C, "bases": [s.to_dict() for s in bases]}
    return StackingModel(fitted, names, meta_model, X.shape[1], oof, fold, params)
