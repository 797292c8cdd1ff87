"""Exact attributions for the native models and fold-to-fold rank stability.

* linear models: ``phi_j = w_j (x_j - mean_j)`` on the logit scale;
* tree ensembles: path-dependent TreeSHAP (cover-weighted conditional
  expectations), summed over trees on the margin scale;
* EBM: the additive shape contributions themselves (pair terms split evenly
  between their two features);
* stacking: base attributions composed through a linearized meta-learner,
  with the linearization residual reported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError
from .models.common import sigmoid
from .models.ebm import EBMModel
from .models.linear import LogRegModel
from .models.stacking import StackingModel
from .models.trees import Tree, TreeEnsemble
from .rng import Rng


@dataclass(frozen=True, eq=False)
class Attribution:
    """Per-row attributions: ``base_value + phi.sum(1) + residual == output``."""

    phi: np.ndarray  # (n, d)
    base_value: float
    output: np.ndarray  # (n,) model output on ``scale``
    scale: str  # "logit" | "margin" | "probability"
    residual: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "phi", np.atleast_2d(np.asarray(self.phi, dtype=np.float64)))
        object.__setattr__(self, "output", np.atleast_1d(np.asarray(self.output, dtype=np.float64)))
        if self.residual is None:
            object.__setattr__(self, "residual", self.output - self.base_value - self.phi.sum(axis=1))

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    def local_accuracy_gap(self) -> np.ndarray:
        return np.abs(self.base_value + self.phi.sum(axis=1) - self.output)

    def global_importance(self) -> np.ndarray:
        return np.abs(self.phi).mean(axis=0)

    def to_rows(self, names=None) -> list:
        names = list(names) if names is not None else [f"x{j}" for j in range(self.phi.shape[1])]
        return [
            {
                "base_value": self.base_value,
                "output": float(self.output[i]),
                "scale": self.scale,
                "residual": float(self.residual[i]),
                "phi": dict(zip(names, self.phi[i].tolist())),
            }
            for i in range(self.n)
        ]

    def to_json_lines(self, names=None) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.to_rows(names)) + "\n"


def _rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValidationError("rows must be a vector or a matrix")
    return np.ascontiguousarray(X)


# linear -----------------------------------------------------------------------


def shap_linear(model: LogRegModel, X, background) -> Attribution:
    """Exact SHAP for a linear logit under feature independence."""
    bg = np.asarray(background, dtype=np.float64)
    if bg.ndim != 2 or bg.shape[0] == 0:
        raise ValidationError("background must be a nonempty matrix")
    X = _rows(X)
    w = np.asarray(model.coef, dtype=np.float64)
    if X.shape[1] != len(w) or bg.shape[1] != len(w):
        raise ValidationError("feature count mismatch")
    mu = bg.mean(axis=0)
    phi = w * (X - mu)
    base = float(model.intercept + w @ mu)
    return Attribution(phi, base, model.margin(X), "logit")


# trees ------------------------------------------------------------------------


@nb.njit(cache=True)
def _extend(fi, zf, of, pw, base, ud, zero, one, feat):
    fi[base + ud] = feat
    zf[base + ud] = zero
    of[base + ud] = one
    pw[base + ud] = 1.0 if ud == 0 else 0.0
    for i in range(ud - 1, -1, -1):
        pw[base + i + 1] += one * pw[base + i] * (i + 1) / (ud + 1)
        pw[base + i] = zero * pw[base + i] * (ud - i) / (ud + 1)


@nb.njit(cache=True)
def _unwind(fi, zf, of, pw, base, ud, k):
    one = of[base + k]
    zero = zf[base + k]
    nxt = pw[base + ud]
    for i in range(ud - 1, -1, -1):
        if one != 0.0:
            tmp = pw[base + i]
            pw[base + i] = nxt * (ud + 1) / ((i + 1) * one)
            nxt = tmp - pw[base + i] * zero * (ud - i) / (ud + 1)
        else:
            pw[base + i] = pw[base + i] * (ud + 1) / (zero * (ud - i))
    for i in range(k, ud):
        fi[base + i] = fi[base + i + 1]
        zf[base + i] = zf[base + i + 1]
        of[base + i] = of[base + i + 1]


@nb.njit(cache=True)
def _unwound_sum(zf, of, pw, base, ud, k):
    one = of[base + k]
    zero = zf[base + k]
    nxt = pw[base + ud]
    total = 0.0
    for i in range(ud - 1, -1, -1):
        if one != 0.0:
            tmp = nxt * (ud + 1) / ((i + 1) * one)
            total += tmp
            nxt = pw[base + i] - tmp * zero * (ud - i) / (ud + 1)
        elif zero != 0.0:
            total += pw[base + i] / zero / ((ud - i) / (ud + 1))
    return total


@nb.njit(cache=True)
def _tree_shap_row(x, feature, threshold, left, right, value, cover, start, max_depth, scale, phi):
    seg = max_depth + 2
    levels = max_depth + 2
    fi = np.empty(seg * levels, dtype=np.int64)
    zf = np.empty(seg * levels)
    of = np.empty(seg * levels)
    pw = np.empty(seg * levels)
    # stack frame: node, level, unique depth, zero fraction, one fraction, feature
    s_node = np.empty(2 * levels + 2, dtype=np.int64)
    s_level = np.empty(2 * levels + 2, dtype=np.int64)
    s_ud = np.empty(2 * levels + 2, dtype=np.int64)
    s_zero = np.empty(2 * levels + 2)
    s_one = np.empty(2 * levels + 2)
    s_feat = np.empty(2 * levels + 2, dtype=np.int64)
    top = 0
    s_node[0] = 0
    s_level[0] = 0
    s_ud[0] = 0
    s_zero[0] = 1.0
    s_one[0] = 1.0
    s_feat[0] = -1
    top = 1
    while top > 0:
        top -= 1
        node = s_node[top]
        level = s_level[top]
        ud = s_ud[top]
        base = level * seg
        if level > 0:
            pbase = (level - 1) * seg
            for i in range(ud):
                fi[base + i] = fi[pbase + i]
                zf[base + i] = zf[pbase + i]
                of[base + i] = of[pbase + i]
                pw[base + i] = pw[pbase + i]
        _extend(fi, zf, of, pw, base, ud, s_zero[top], s_one[top], s_feat[top])
        j = start + node
        if left[j] == -1:
            for i in range(1, ud + 1):
                w = _unwound_sum(zf, of, pw, base, ud, i)
                phi[fi[base + i]] += scale * w * (of[base + i] - zf[base + i]) * value[j]
            continue
        f = feature[j]
        if x[f] <= threshold[j]:
            hot, cold = left[j], right[j]
        else:
            hot, cold = right[j], left[j]
        c = cover[j]
        hot_zero = cover[start + hot] / c
        cold_zero = cover[start + cold] / c
        in_zero = 1.0
        in_one = 1.0
        k = 0
        while k <= ud:
            if fi[base + k] == f:
                break
            k += 1
        if k != ud + 1:
            in_zero = zf[base + k]
            in_one = of[base + k]
            _unwind(fi, zf, of, pw, base, ud, k)
            ud -= 1
        # cold pushed first so the hot branch is explored first (order is irrelevant)
        s_node[top] = cold
        s_level[top] = level + 1
        s_ud[top] = ud + 1
        s_zero[top] = cold_zero * in_zero
        s_one[top] = 0.0
        s_feat[top] = f
        top += 1
        s_node[top] = hot
        s_level[top] = level + 1
        s_ud[top] = ud + 1
        s_zero[top] = hot_zero * in_zero
        s_one[top] = in_one
        s_feat[top] = f
        top += 1


@nb.njit(cache=True)
def _forest_shap(X, feature, threshold, left, right, value, cover, offsets, depths, weights, n_features):
    n = X.shape[0]
    phi = np.zeros((n, n_features))
    for i in range(n):
        for t in range(offsets.shape[0] - 1):
            _tree_shap_row(X[i], feature, threshold, left, right, value, cover, offsets[t], depths[t], weights[t], phi[i])
    return phi


def tree_depth(tree: Tree) -> int:
    depth = np.zeros(tree.n_nodes, dtype=np.int64)
    for j in range(tree.n_nodes):  # children always have larger indices than parents
        if tree.left[j] != -1:
            depth[tree.left[j]] = depth[j] + 1
            depth[tree.right[j]] = depth[j] + 1
    return int(depth.max())


def tree_expected_value(tree: Tree) -> float:
    """Cover-weighted mean leaf value (the path-dependent baseline)."""
    leaves = tree.is_leaf
    return float(np.sum(tree.cover[leaves] * tree.value[leaves]) / tree.cover[0])


def _check_tree(tree: Tree, n_features: int):
    tree.validate(n_features)
    if np.any(tree.cover <= 0):
        raise ValidationError("tree nodes need positive training cover")
    internal = np.flatnonzero(~tree.is_leaf)
    if internal.size and (np.any(tree.left[internal] <= internal) or np.any(tree.right[internal] <= internal)):
        raise ValidationError("children must follow their parent in node order")
    csum = tree.cover[tree.left[internal]] + tree.cover[tree.right[internal]]
    if not np.allclose(csum, tree.cover[internal], rtol=1e-9, atol=1e-12):
        raise ValidationError("child covers do not add up to the parent cover")


def shap_tree(model: TreeEnsemble, X) -> Attribution:
    """Path-dependent TreeSHAP on the ensemble margin (``base_score + sum w_t f_t``)."""
    X = _rows(X)
    d = model.n_features
    if X.shape[1] != d:
        raise ValidationError("feature count mismatch")
    for t in model.trees:
        _check_tree(t, d)
    if not model.trees:
        return Attribution(np.zeros((len(X), d)), float(model.base_score), model.margin(X), "margin")
    offs = np.zeros(len(model.trees) + 1, dtype=np.int64)
    offs[1:] = np.cumsum([t.n_nodes for t in model.trees])
    cat = lambda name, dt: np.concatenate([getattr(t, name) for t in model.trees]).astype(dt)  # noqa: E731
    depths = np.array([tree_depth(t) for t in model.trees], dtype=np.int64)
    phi = _forest_shap(
        X, cat("feature", np.int64), cat("threshold", np.float64), cat("left", np.int64), cat("right", np.int64),
        cat("value", np.float64), cat("cover", np.float64), offs, depths, model.weights.astype(np.float64), d,
    )
    base = float(model.base_score + sum(w * tree_expected_value(t) for t, w in zip(model.trees, model.weights)))
    return Attribution(phi, base, model.margin(X), "margin")


# EBM --------------------------------------------------------------------------


def ebm_contributions(model: EBMModel, X) -> Attribution:
    """Shape contributions as exact attributions on the logit scale.

    Each pair term is credited half to each of its two features.
    """
    X = _rows(X)
    uni, pair = model.term_contributions(X)
    phi = uni.copy()
    for p, (j, k) in enumerate(model.pairs):
        phi[:, j] += 0.5 * pair[:, p]
        phi[:, k] += 0.5 * pair[:, p]
    return Attribution(phi, float(model.intercept), model.margin(X), "logit")


def shape_function_points(model: EBMModel, j: int, name: str | None = None) -> dict:
    """JSON-ready shape function: ``values[b]`` applies on ``(edges[b-1], edges[b]]``."""
    edges, values = model.shape_function(j)
    return {
        "feature": name if name is not None else j,
        "edges": edges.tolist(),
        "values": values.tolist(),
        "points": [[None, float(values[0])]] + [[float(e), float(v)] for e, v in zip(edges, values[1:])],
    }


# stacking ---------------------------------------------------------------------


def _prob_attribution(model, X, background, slope: str):
    """Attribution of a base model on its probability scale."""
    att = explain(model, X, background)
    if att.scale == "probability" or getattr(model, "link", "logit") == "identity":
        return att.phi, att.base_value
    m = att.output
    m0 = att.base_value
    p = sigmoid(m)
    p0 = float(sigmoid(np.array([m0]))[0])
    s = _slope(m, m0, p, p0, slope)
    return att.phi * s[:, None], p0


def _slope(z, z0, p, p0, slope):
    tangent = p * (1 - p)
    if slope == "tangent":
        return tangent
    dz = z - z0
    safe = np.abs(dz) > 1e-12
    return np.where(safe, (p - p0) / np.where(safe, dz, 1.0), tangent)


def shap_stacking(model: StackingModel, X, background, slope: str = "secant") -> Attribution:
    """Compose base attributions through the logistic meta-learner.

    ``phi_j = A * sum_b m_b * phi_{b,j}`` where ``m_b`` is the meta
    coefficient of base ``b``, ``phi_b`` the base attribution on its
    probability scale and ``A`` the local slope of the meta sigmoid.  With
    ``slope="secant"`` the slopes are chords from the reference point to the
    explained row; ``"tangent"`` uses derivatives at the row.  Whatever the
    linearization misses is reported as ``residual`` (probability scale).
    """
    if slope not in ("secant", "tangent"):
        raise ValidationError("slope must be 'secant' or 'tangent'")
    X = _rows(X)
    phis, bases = [], []
    for b in model.bases:
        phi_b, p0_b = _prob_attribution(b, X, background, slope)
        phis.append(phi_b)
        bases.append(p0_b)
    m = np.asarray(model.meta_model.coef, dtype=np.float64)
    z0 = float(model.meta_model.intercept + m @ np.asarray(bases))
    z = model.margin(X)
    p = sigmoid(z)
    p0 = float(sigmoid(np.array([z0]))[0])
    A = _slope(z, z0, p, p0, slope)
    phi = A[:, None] * sum(mb * pb for mb, pb in zip(m, phis))
    return Attribution(phi, p0, p, "probability")


# dispatch and global importance ----------------------------------------------


def explain(model, X, background=None) -> Attribution:
    if isinstance(model, LogRegModel):
        if background is None:
            raise ValidationError("linear attributions need a background sample")
        return shap_linear(model, X, background)
    if isinstance(model, TreeEnsemble):
        return shap_tree(model, X)
    if isinstance(model, EBMModel):
        return ebm_contributions(model, X)
    if isinstance(model, StackingModel):
        return shap_stacking(model, X, background)
    raise ValidationError(f"no attribution method for {type(model).__name__}")


def explanation_sample(n_rows: int, size: int = 1000, rng: Rng | None = None) -> np.ndarray:
    """Sorted row indices of a seeded explanation sample."""
    rng = rng or Rng(0, "explain")
    if n_rows <= size:
        return np.arange(n_rows)
    return np.sort(rng.permutation(n_rows)[:size])


def global_importance(model, X, background=None, size: int = 1000, rng: Rng | None = None) -> np.ndarray:
    """Mean |phi| over a seeded sample of at most ``size`` rows."""
    X = _rows(X)
    rows = explanation_sample(len(X), size, rng)
    return explain(model, X[rows], background).global_importance()


# stability --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StabilityReport:
    k: int
    top_k: list  # per fold, feature indices in rank order
    rho: np.ndarray  # (F, F)
    mean_rho: float

    def to_dict(self, names=None):
        label = (lambda j: names[j]) if names is not None else (lambda j: int(j))
        return {
            "k": self.k,
            "top_k": [[label(j) for j in t] for t in self.top_k],
            "rho": self.rho.tolist(),
            "mean_rho": self.mean_rho,
        }

    def to_csv(self) -> str:
        F = self.rho.shape[0]
        lines = ["fold," + ",".join(f"fold{j}" for j in range(F))]
        for i in range(F):
            lines.append(f"fold{i}," + ",".join(f"{v:.6f}" for v in self.rho[i]))
        return "\n".join(lines) + "\n"


def _pair_ranks(imp, top, union):
    """Ranks over ``union``: midranked order inside the top-k, shared midrank after it."""
    k = len(top)
    inside = np.isin(union, top)
    r = np.empty(len(union))
    r[inside] = rankdata(-imp[union[inside]])
    n_out = int((~inside).sum())
    r[~inside] = k + (n_out + 1) / 2.0
    return r


def spearman(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.array_equal(a, b):
        return 1.0
    da, db = a - a.mean(), b - b.mean()
    den = np.sqrt(np.sum(da * da) * np.sum(db * db))
    if den == 0:
        return 0.0
    return float(np.clip(np.sum(da * db) / den, -1.0, 1.0))


def stability(importances, k: int = 20) -> StabilityReport:
    """Pairwise Spearman correlation of per-fold top-``k`` importance rankings.

    For each pair of folds the union of their top-``k`` sets is ranked in
    both folds; features missing from a fold's list share the midrank of the
    positions after ``k``.
    """
    imp = np.asarray(importances, dtype=np.float64)
    if imp.ndim != 2 or imp.shape[0] < 2:
        raise ValidationError("stability needs importance vectors from at least two folds")
    F, d = imp.shape
    k = max(1, min(int(k), d))
    tops = [np.argsort(-imp[f], kind="stable")[:k] for f in range(F)]
    rho = np.eye(F)
    for a in range(F):
        for b in range(a + 1, F):
            union = np.union1d(tops[a], tops[b])
            ra = _pair_ranks(imp[a], tops[a], union)
            rb = _pair_ranks(imp[b], tops[b], union)
            rho[a, b] = rho[b, a] = spearman(ra, rb)
    iu = np.triu_indices(F, 1)
    return StabilityReport(k, [t.tolist() for t in tops], rho, float(rho[iu].mean()))
