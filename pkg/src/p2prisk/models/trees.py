"""Decision tree, random forest and gradient-boosted trees.

All three grow histogram trees with :func:`._kernels.build_tree`.  Split
thresholds are midpoints between sorted unique training values, rows with
``x <= threshold`` go left, and ties in split gain resolve to the lowest
feature index and then the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..rng import Rng
from . import _kernels as K
from .binning import BinMapper
from .common import check_predict, check_xy, class_weights, logit, sigmoid, weighted_logloss

_NO_LIMIT = 1 << 30


@dataclass(frozen=True, eq=False)
class Tree:
    """Array-encoded binary tree; node 0 is the root, leaves have ``left == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray

    def __post_init__(self):
        for name in ("feature", "left", "right"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int32))
        for name in ("threshold", "value", "cover", "gain"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left == -1

    def validate(self, n_features: int | None = None):
        """Raise if arrays do not describe a proper binary tree."""
        n = self.n_nodes
        arrays = (self.threshold, self.left, self.right, self.value, self.cover, self.gain)
        if n == 0 or any(len(a) != n for a in arrays):
            raise ValidationError("tree arrays must be nonempty and of equal length")
        seen = np.zeros(n, dtype=np.int64)
        stack = [0]
        while stack:
            j = stack.pop()
            seen[j] += 1
            if seen[j] > 1:
                raise ValidationError("tree node reachable twice")
            lj, rj = self.left[j], self.right[j]
            if (lj == -1) != (rj == -1):
                raise ValidationError(f"node {j} has exactly one child")
            if lj != -1:
                if not (0 < lj < n and 0 < rj < n):
                    raise ValidationError(f"node {j} child index out of range")
                if self.feature[j] < 0 or (n_features is not None and self.feature[j] >= n_features):
                    raise ValidationError(f"node {j} splits on an invalid feature")
                stack.extend((rj, lj))
        if not np.all(seen == 1):
            raise ValidationError("tree has unreachable nodes")
        if not np.all(np.isfinite(self.value[self.is_leaf])):
            raise ValidationError("leaf values must be finite")

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return K.predict_forest(
            X, self.feature, self.threshold, self.left, self.right, self.value,
            np.array([0, self.n_nodes], dtype=np.int64), np.ones(1),
        )

    def scaled(self, factor: float) -> "Tree":
        return Tree(self.feature, self.threshold, self.left, self.right, self.value * factor, self.cover, self.gain)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "cover", "gain")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(v) for k, v in d.items()})


def _tree_from_kernel(out, mapper: BinMapper) -> Tree:
    feature, split_bin, left, right, value, cover, gain = out
    thr = np.zeros(len(feature))
    for j in np.flatnonzero(left != -1):
        thr[j] = mapper.threshold(int(feature[j]), int(split_bin[j]))
    return Tree(feature, thr, left, right, value, cover, gain)


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    """Weighted sum of trees plus an offset on the margin scale.

    ``link == "identity"`` (tree/forest probabilities) or ``"logit"``
    (boosting margins).
    """

    family: str
    trees: tuple
    weights: np.ndarray
    base_score: float
    link: str
    n_features: int
    params: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    _packed: tuple = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        offs = np.zeros(len(self.trees) + 1, dtype=np.int64)
        offs[1:] = np.cumsum([t.n_nodes for t in self.trees])
        cat = lambda name, dt: (  # noqa: E731
            np.concatenate([getattr(t, name) for t in self.trees]).astype(dt) if self.trees else np.zeros(0, dt)
        )
        packed = (
            cat("feature", np.int32),
            cat("threshold", np.float64),
            cat("left", np.int32),
            cat("right", np.int32),
            cat("value", np.float64),
            offs,
        )
        object.__setattr__(self, "_packed", packed)

    def margin(self, X) -> np.ndarray:
        X = check_predict(X, self.n_features)
        f, thr, lft, rgt, val, offs = self._packed
        if not self.trees:
            return np.full(X.shape[0], self.base_score)
        return self.base_score + K.predict_forest(np.ascontiguousarray(X), f, thr, lft, rgt, val, offs, self.weights)

    def predict_proba(self, X) -> np.ndarray:
        m = self.margin(X)
        if self.link == "logit":
            return sigmoid(m)
        return np.clip(m, 0.0, 1.0)

    def tree_outputs(self, X) -> np.ndarray:
        """(n_trees, n) unweighted per-tree predictions."""
        X = check_predict(X, self.n_features)
        return np.vstack([t.predict(X) for t in self.trees])

    def feature_importance(self) -> np.ndarray:
        """Total split gain per feature (weighted by tree weight)."""
        imp = np.zeros(self.n_features)
        for t, w in zip(self.trees, self.weights):
            internal = ~t.is_leaf
            np.add.at(imp, t.feature[internal], w * t.gain[internal])
        return imp

    def to_dict(self):
        return {
            "family": self.family,
            "link": self.link,
            "base_score": self.base_score,
            "n_features": self.n_features,
            "weights": self.weights.tolist(),
            "trees": [t.to_dict() for t in self.trees],
            "params": self.params,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["family"],
            tuple(Tree.from_dict(t) for t in d["trees"]),
            np.asarray(d["weights"]),
            float(d["base_score"]),
            d["link"],
            int(d["n_features"]),
            d.get("params", {}),
            d.get("meta", {}),
        )


def _depth(max_depth):
    return _NO_LIMIT if max_depth is None or max_depth <= 0 else int(max_depth)


def _n_max_features(max_features, d):
    if max_features is None:
        return d
    if max_features == "sqrt":
        return max(1, int(np.floor(np.sqrt(d))))
    if isinstance(max_features, float):
        return max(1, int(round(max_features * d)))
    return max(1, min(int(max_features), d))


def _grow_gini(Xb, mapper, y, w, counts, max_depth, min_samples_leaf, max_features, key):
    rows = np.flatnonzero(counts > 0).astype(np.int64)
    out = K.build_tree(
        Xb, w * y * counts, w * counts, counts.astype(np.float64), rows, mapper.n_bins,
        0, 0.0, _depth(max_depth), _NO_LIMIT, float(min_samples_leaf), 0.0, 1e-12,
        max_features, np.uint64(key),
    )
    return _tree_from_kernel(out, mapper)


def fit_decision_tree(
    X,
    y,
    max_depth=None,
    min_samples_leaf: int = 1,
    class_weight="balanced",
    max_bins: int = 255,
    sample_weight=None,
    rng: Rng | None = None,
) -> TreeEnsemble:
    """Greedy Gini tree; leaves hold the weighted class-1 fraction."""
    X, y = check_xy(X, y)
    mapper = BinMapper.fit(X, max_bins)
    Xb = mapper.transform(X)
    w = class_weights(y, class_weight, sample_weight)
    tree = _grow_gini(Xb, mapper, y, w, np.ones(len(y)), max_depth, min_samples_leaf, X.shape[1], 0)
    params = {"max_depth": max_depth, "min_samples_leaf": min_samples_leaf, "class_weight": class_weight, "max_bins": max_bins}
    return TreeEnsemble("DecisionTree", (tree,), np.ones(1), 0.0, "identity", X.shape[1], params)


def fit_random_forest(
    X,
    y,
    n_estimators: int = 200,
    max_depth=None,
    min_samples_leaf: int = 1,
    max_features="sqrt",
    class_weight="balanced",
    bootstrap: bool = True,
    max_bins: int = 255,
    rng: Rng | None = None,
) -> TreeEnsemble:
    """Bagged Gini trees with per-node feature subsampling."""
    X, y = check_xy(X, y)
    if n_estimators < 1:
        raise ValidationError("n_estimators must be at least 1")
    rng = rng or Rng(0, "random_forest")
    n, d = X.shape
    mapper = BinMapper.fit(X, max_bins)
    Xb = mapper.transform(X)
    w = class_weights(y, class_weight)
    mf = _n_max_features(max_features, d)
    trees = []
    for t in range(n_estimators):
        tr = rng.derive(f"tree/{t}")
        counts = np.bincount(tr.derive("bootstrap").integers(0, n, n), minlength=n).astype(np.float64) if bootstrap else np.ones(n)
        key = tr.derive("features").next_u64()
        trees.append(_grow_gini(Xb, mapper, y, w, counts, max_depth, min_samples_leaf, mf, key))
    params = {
        "n_estimators": n_estimators,
        "max_depth": max_depth,
        "min_samples_leaf": min_samples_leaf,
        "max_features": max_features,
        "class_weight": class_weight,
        "bootstrap": bootstrap,
        "max_bins": max_bins,
    }
    return TreeEnsemble("RandomForest", tuple(trees), np.full(n_estimators, 1.0 / n_estimators), 0.0, "identity", d, params)


GBT_PRESETS = {
    # level-wise growth limited by depth
    "depthwise": {"max_depth": 6, "max_leaves": None, "l2": 1.0, "min_samples_leaf": 1},
    # best-first growth limited by a leaf budget
    "leafwise": {"max_depth": None, "max_leaves": 31, "l2": 0.0, "min_samples_leaf": 20},
    # depth-limited trees with heavier leaf shrinkage
    "l2": {"max_depth": 6, "max_leaves": None, "l2": 3.0, "min_samples_leaf": 1},
}


def _stratified_holdout(y, fraction, rng):
    val = np.zeros(len(y), dtype=bool)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        k = int(round(fraction * len(idx)))
        if len(idx) - k < 1:
            k = len(idx) - 1
        if k > 0:
            val[idx[rng.derive(f"class{cls}").permutation(len(idx))[:k]]] = True
    return val


def fit_gbt(
    X,
    y,
    n_estimators: int = 300,
    learning_rate: float = 0.1,
    max_depth=6,
    max_leaves=None,
    min_samples_leaf: int = 1,
    l2: float = 1.0,
    subsample: float = 1.0,
    min_child_weight: float = 1e-3,
    class_weight=None,
    max_bins: int = 255,
    early_stopping: bool = False,
    patience: int = 50,
    validation=None,
    validation_fraction: float = 0.1,
    growth: str | None = None,
    rng: Rng | None = None,
) -> TreeEnsemble:
    """Newton boosting of histogram trees on the logistic loss.

    Args:
        max_leaves: leaf budget for best-first (leaf-wise) growth; ``None``
            grows until ``max_depth``.
        growth: name of a preset in :data:`GBT_PRESETS`; explicit arguments
            that differ from the defaults are not overridden.
        early_stopping: stop when validation logloss has not improved for
            ``patience`` rounds and keep the best prefix.  Uses
            ``validation=(X_val, y_val)`` if given, otherwise a stratified
            ``validation_fraction`` carved out of the training rows.
    """
    if growth is not None:
        if growth not in GBT_PRESETS:
            raise ValidationError(f"unknown growth preset {growth!r}")
        p = GBT_PRESETS[growth]
        if max_depth == 6:
            max_depth = p["max_depth"]
        if max_leaves is None:
            max_leaves = p["max_leaves"]
        if l2 == 1.0:
            l2 = p["l2"]
        if min_samples_leaf == 1:
            min_samples_leaf = p["min_samples_leaf"]
    X, y = check_xy(X, y)
    if not 0 < subsample <= 1:
        raise ValidationError("subsample must lie in (0, 1]")
    if learning_rate <= 0:
        raise ValidationError("learning_rate must be positive")
    rng = rng or Rng(0, "gbt")
    Xv = yv = None
    if early_stopping:
        if validation is not None:
            Xv, yv = check_xy(*validation)
        else:
            hold = _stratified_holdout(y, validation_fraction, rng.derive("early_stop"))
            Xv, yv = X[hold], y[hold]
            X, y = X[~hold], y[~hold]
    n, d = X.shape
    w = class_weights(y, class_weight)
    mapper = BinMapper.fit(X, max_bins)
    Xb = mapper.transform(X)
    prior = float(np.sum(w * y) / np.sum(w))
    base = float(logit(prior))
    F = np.full(n, base)
    Fv = None if Xv is None else np.full(len(yv), base)
    wv = None if Xv is None else class_weights(yv, class_weight)
    leaves = _NO_LIMIT if max_leaves is None else int(max_leaves)
    trees, train_loss, val_loss = [], [], []
    best_iter, best_val, since = 0, np.inf, 0
    n_sub = max(1, int(round(subsample * n)))
    for m in range(n_estimators):
        p = sigmoid(F)
        g = w * (p - y)
        h = np.maximum(w * p * (1 - p), 1e-16)
        if subsample < 1:
            rows = np.sort(rng.derive(f"round/{m}").choice(n, n_sub, replace=False))
        else:
            rows = np.arange(n, dtype=np.int64)
        out = K.build_tree(
            Xb, g, h, np.ones(n), rows, mapper.n_bins, 1, float(l2), _depth(max_depth), leaves,
            float(min_samples_leaf), float(min_child_weight), 1e-12, d, np.uint64(0),
        )
        tree = _tree_from_kernel(out, mapper).scaled(learning_rate)
        trees.append(tree)
        F = F + tree.predict(X)
        train_loss.append(weighted_logloss(y, sigmoid(F), w))
        if Fv is not None:
            Fv = Fv + tree.predict(Xv)
            vl = weighted_logloss(yv, sigmoid(Fv), wv)
            val_loss.append(vl)
            if vl < best_val - 1e-12:
                best_val, best_iter, since = vl, m + 1, 0
            else:
                since += 1
                if since >= patience:
                    break
    if Fv is not None:
        trees = trees[: max(best_iter, 1)]
    params = {
        "n_estimators": n_estimators,
        "learning_rate": learning_rate,
        "max_depth": max_depth,
        "max_leaves": max_leaves,
        "min_samples_leaf": min_samples_leaf,
        "l2": l2,
        "subsample": subsample,
        "class_weight": class_weight,
        "max_bins": max_bins,
        "early_stopping": early_stopping,
        "growth": growth,
    }
    meta = {"rounds_run": len(train_loss), "n_trees": len(trees), "train_logloss": train_loss}
    if Fv is not None:
        meta.update(best_iteration=best_iter, val_logloss=val_loss)
    return TreeEnsemble("GBT", tuple(trees), np.ones(len(trees)), base, "logit", d, params, meta)
