"""Explainable boosting machine: additive per-feature shapes plus pair terms.

Training cycles over features; each visit fits one Newton regression stump on
that feature's bins against the current logistic-loss gradients and adds the
shrunken stump to the feature's shape.  Optional pair terms on an explicit
list of feature pairs are boosted afterwards on a coarser 2-d grid.

The logit is exactly ``intercept + sum_j shape_j[bin_j(x_j)] +
sum_(j,k) pair_jk[bin_j(x_j), bin_k(x_k)]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numba as nb
import numpy as np

from ..errors import ValidationError
from ..rng import Rng
from .binning import BinMapper
from .common import check_predict, check_xy, class_weights, logit, sigmoid


@nb.njit(cache=True)
def _cyclic_round(Xb, n_bins, F, y, w, shapes, lr, lam, min_leaf):
    d, n = Xb.shape
    g = np.empty(n)
    h = np.empty(n)
    hist = np.zeros((shapes.shape[1], 3))
    for j in range(d):
        nb_ = n_bins[j]
        if nb_ < 2:
            continue
        for i in range(n):
            p = 1.0 / (1.0 + np.exp(-F[i]))
            g[i] = w[i] * (p - y[i])
            h[i] = max(w[i] * p * (1.0 - p), 1e-16)
        for b in range(nb_):
            hist[b, 0] = 0.0
            hist[b, 1] = 0.0
            hist[b, 2] = 0.0
        for i in range(n):
            b = Xb[j, i]
            hist[b, 0] += g[i]
            hist[b, 1] += h[i]
            hist[b, 2] += 1.0
        G = 0.0
        H = 0.0
        C = 0.0
        for b in range(nb_):
            G += hist[b, 0]
            H += hist[b, 1]
            C += hist[b, 2]
        parent = G * G / (H + lam)
        best = -1
        bestg = 1e-12
        GL = 0.0
        HL = 0.0
        CL = 0.0
        vl = 0.0
        vr = 0.0
        for b in range(nb_ - 1):
            GL += hist[b, 0]
            HL += hist[b, 1]
            CL += hist[b, 2]
            if CL < min_leaf:
                continue
            if C - CL < min_leaf:
                break
            GR = G - GL
            HR = H - HL
            gn = GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent
            if gn > bestg:
                bestg = gn
                best = b
                vl = -GL / (HL + lam)
                vr = -GR / (HR + lam)
        if best < 0:
            continue
        vl *= lr
        vr *= lr
        for b in range(nb_):
            shapes[j, b] += vl if b <= best else vr
        for i in range(n):
            F[i] += vl if Xb[j, i] <= best else vr


@nb.njit(cache=True)
def _pair_round(bj, bk, nbj, nbk, F, y, w, grid, lr, lam, min_leaf):
    n = bj.shape[0]
    G = np.zeros((nbj, nbk))
    H = np.zeros((nbj, nbk))
    C = np.zeros((nbj, nbk))
    for i in range(n):
        p = 1.0 / (1.0 + np.exp(-F[i]))
        G[bj[i], bk[i]] += w[i] * (p - y[i])
        H[bj[i], bk[i]] += max(w[i] * p * (1.0 - p), 1e-16)
        C[bj[i], bk[i]] += 1.0
    step = np.zeros((nbj, nbk))
    for a in range(nbj):
        for b in range(nbk):
            if C[a, b] >= min_leaf:
                step[a, b] = -lr * G[a, b] / (H[a, b] + lam)
                grid[a, b] += step[a, b]
    for i in range(n):
        F[i] += step[bj[i], bk[i]]


@dataclass(frozen=True, eq=False)
class EBMModel:
    intercept: float
    mapper: BinMapper
    shapes: tuple
    pairs: tuple = ()
    pair_mappers: tuple = ()
    pair_grids: tuple = ()
    params: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    family: str = "EBM"

    @property
    def n_features(self) -> int:
        return len(self.shapes)

    def term_contributions(self, X):
        """(n, d) univariate contributions and (n, n_pairs) pair contributions."""
        X = check_predict(X, self.n_features)
        Xb = self.mapper.transform(X)
        uni = np.column_stack([self.shapes[j][Xb[j]] for j in range(self.n_features)]) if self.n_features else np.zeros((len(X), 0))
        pair = np.zeros((len(X), len(self.pairs)))
        for p, ((j, k), pm, grid) in enumerate(zip(self.pairs, self.pair_mappers, self.pair_grids)):
            pb = pm.transform(X[:, [j, k]])
            pair[:, p] = grid[pb[0], pb[1]]
        return uni, pair

    def margin(self, X):
        uni, pair = self.term_contributions(X)
        return self.intercept + uni.sum(axis=1) + pair.sum(axis=1)

    def predict_proba(self, X):
        return sigmoid(self.margin(X))

    def shape_function(self, j: int):
        """``(thresholds, values)``: value ``values[b]`` applies to bin ``b``."""
        return self.mapper.thresholds[j].copy(), self.shapes[j].copy()

    def shape_at(self, j: int, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return self.shapes[j][np.searchsorted(self.mapper.thresholds[j], x, side="left")]

    def feature_importance(self):
        return np.asarray(self.meta.get("importance", np.zeros(self.n_features)), dtype=np.float64)

    def to_dict(self):
        return {
            "family": self.family,
            "intercept": self.intercept,
            "bins": self.mapper.to_dict(),
            "shapes": [s.tolist() for s in self.shapes],
            "pairs": [list(p) for p in self.pairs],
            "pair_bins": [m.to_dict() for m in self.pair_mappers],
            "pair_grids": [g.tolist() for g in self.pair_grids],
            "params": self.params,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["intercept"]),
            BinMapper.from_dict(d["bins"]),
            tuple(np.asarray(s, dtype=np.float64) for s in d["shapes"]),
            tuple(tuple(p) for p in d["pairs"]),
            tuple(BinMapper.from_dict(m) for m in d["pair_bins"]),
            tuple(np.asarray(g, dtype=np.float64) for g in d["pair_grids"]),
            d.get("params", {}),
            d.get("meta", {}),
        )


def default_pairs(importance: np.ndarray, n_interactions: int) -> list:
    """Pairs among the most important features, strongest first.

    Candidate pairs are ranked by the sum of their members' importance ranks;
    ``n_interactions=10`` gives exactly the 10 pairs of the top-5 features.
    """
    if n_interactions <= 0 or len(importance) < 2:
        return []
    order = np.argsort(-importance, kind="stable")
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    m = 2
    while m * (m - 1) // 2 < n_interactions and m < len(order):
        m += 1
    cand = sorted(combinations(sorted(order[:m].tolist()), 2), key=lambda p: (max(rank[p[0]], rank[p[1]]), rank[p[0]] + rank[p[1]], p))
    return cand[:n_interactions]


def fit_ebm(
    X,
    y,
    max_bins: int = 256,
    learning_rate: float = 0.05,
    n_rounds: int = 300,
    n_interactions: int = 10,
    pairs=None,
    pair_bins: int = 16,
    pair_rounds: int = 50,
    min_samples_leaf: int = 2,
    l2: float = 0.0,
    class_weight=None,
    rng: Rng | None = None,
) -> EBMModel:
    """Cyclic stump boosting on equal-frequency bins.

    Args:
        pairs: explicit feature pairs; when ``None`` the top
            ``n_interactions`` pairs from :func:`default_pairs` are used.
    """
    X, y = check_xy(X, y)
    if max_bins < 2 or n_rounds < 1 or learning_rate <= 0:
        raise ValidationError("invalid EBM settings")
    n, d = X.shape
    w = class_weights(y, class_weight)
    mapper = BinMapper.fit(X, max_bins)
    Xb = mapper.transform(X)
    nbins = mapper.n_bins
    shapes = np.zeros((d, int(nbins.max()) if d else 1))
    base = float(logit(np.sum(w * y) / np.sum(w)))
    F = np.full(n, base)
    for _ in range(n_rounds):
        _cyclic_round(Xb, nbins, F, y, w, shapes, float(learning_rate), float(l2) + 1e-12, float(min_samples_leaf))
    shape_list = [shapes[j, : nbins[j]].copy() for j in range(d)]

    # center each shape on the training data; the intercept absorbs the mean
    intercept = base
    for j in range(d):
        mean = float(np.mean(shape_list[j][Xb[j]]))
        shape_list[j] -= mean
        intercept += mean
    importance = np.array([np.mean(np.abs(shape_list[j][Xb[j]])) for j in range(d)])

    if pairs is None:
        pairs = default_pairs(importance, n_interactions)
    pairs = tuple((int(a), int(b)) for a, b in pairs)
    for a, b in pairs:
        if not (0 <= a < d and 0 <= b < d) or a == b:
            raise ValidationError(f"invalid feature pair {(a, b)}")
    pair_mappers, grids = [], []
    for a, b in pairs:
        pm = BinMapper.fit(X[:, [a, b]], pair_bins)
        pb = pm.transform(X[:, [a, b]])
        nb_ = pm.n_bins
        grid = np.zeros((int(nb_[0]), int(nb_[1])))
        for _ in range(pair_rounds):
            _pair_round(pb[0], pb[1], int(nb_[0]), int(nb_[1]), F, y, w, grid, float(learning_rate), 1.0, float(min_samples_leaf))
        mean = float(np.mean(grid[pb[0], pb[1]]))
        grid -= mean
        intercept += mean
        pair_mappers.append(pm)
        grids.append(grid)
        contrib = np.abs(grid[pb[0], pb[1]]).mean()
        importance[a] += contrib / 2
        importance[b] += contrib / 2

    params = {
        "max_bins": max_bins,
        "learning_rate": learning_rate,
        "n_rounds": n_rounds,
        "n_interactions": n_interactions,
        "pair_bins": pair_bins,
        "pair_rounds": pair_rounds,
        "min_samples_leaf": min_samples_leaf,
        "l2": l2,
        "class_weight": class_weight,
    }
    return EBMModel(
        intercept, mapper, tuple(shape_list), pairs, tuple(pair_mappers), tuple(grids), params,
        {"importance": importance.tolist()},
    )
