import numpy as np
import pytest

from p2prisk.errors import OutOfScopeError, ValidationError
from p2prisk.metrics import auprc
from p2prisk.models.binning import BinMapper
from p2prisk.models.common import sigmoid
from p2prisk.models.ebm import fit_ebm
from p2prisk.models.linear import LogRegModel, fit_logreg, loss_and_grad
from p2prisk.models.registry import ModelSpec, feature_importance, model_from_json, model_to_json, train
from p2prisk.models.stacking import fit_stacking
from p2prisk.models.trees import Tree, TreeEnsemble, fit_decision_tree, fit_gbt, fit_random_forest
from p2prisk.rng import Rng


def blobs(n=400, d=5, seed=0, shift=1.5):
    r = Rng(seed)
    y = (r.random(n) < 0.3).astype(int)
    X = r.normal(0, 1, n * d).reshape(n, d)
    X[:, 0] += shift * y
    X[:, 1] += 0.5 * shift * y * (X[:, 2] > 0)
    return X, y


# -- logistic regression -----------------------------------------------------------

def test_logreg_separable_pair():
    X = np.array([[-1.0], [1.0]])
    y = np.array([0, 1])
    m = fit_logreg(X, y, C=1e6)
    p = m.predict_proba(X)
    assert ((p > 0.5) == y).all()
    assert -np.mean(np.log(np.where(y == 1, p, 1 - p))) < 0.01


def test_logreg_zero_coef_half():
    m = LogRegModel(np.zeros(3), 0.0)
    assert np.all(m.predict_proba(np.ones((4, 3))) == 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_logreg_gradient_finite_differences(seed):
    r = Rng(seed)
    X = r.normal(0, 1, 30 * 4).reshape(30, 4)
    y = (r.random(30) < 0.4).astype(float)
    s = 0.5 + r.random(30)
    theta = r.normal(0, 1, 5)
    _, g = loss_and_grad(theta, X, y, s, 0.7, "l2")
    eps = 1e-6
    for i in range(5):
        e = np.zeros(5)
        e[i] = eps
        num = (loss_and_grad(theta + e, X, y, s, 0.7)[0] - loss_and_grad(theta - e, X, y, s, 0.7)[0]) / (2 * eps)
        assert abs(num - g[i]) <= 1e-5 * max(1.0, abs(num))


def _newton_oracle(X, y, s, C):
    # independent IRLS on the same objective
    n, d = X.shape
    A = np.column_stack([X, np.ones(n)])
    S = s.sum()
    reg = np.append(np.full(d, 1.0 / (C * n)), 0.0)
    th = np.zeros(d + 1)
    for _ in range(100):
        p = 1 / (1 + np.exp(-A @ th))
        g = A.T @ ((p - y) * s) / S + reg * th
        H = (A * (s * p * (1 - p))[:, None]).T @ A / S + np.diag(reg)
        step = np.linalg.solve(H, g)
        th -= step
        if np.abs(step).max() < 1e-13:
            break
    return th


def test_logreg_l2_matches_newton():
    X, y = blobs(300, 4, seed=3)
    m = fit_logreg(X, y, C=0.5)
    n1 = y.sum()
    s = np.where(y == 1, len(y) / (2 * n1), len(y) / (2 * (len(y) - n1)))
    th = _newton_oracle(X, y.astype(float), s, 0.5)
    assert np.allclose(m.coef, th[:-1], atol=1e-5)
    assert m.intercept == pytest.approx(th[-1], abs=1e-5)


def test_logreg_l1_sparsity_and_kkt():
    X, y = blobs(400, 6, seed=4)
    m = fit_logreg(X, y, C=0.02, penalty="l1")
    assert (m.coef == 0).any() and m.coef[0] != 0
    # KKT: |smooth gradient| <= lambda on zero coordinates
    n1 = y.sum()
    s = np.where(y == 1, len(y) / (2 * n1), len(y) / (2 * (len(y) - n1)))
    _, g = loss_and_grad(np.append(m.coef, m.intercept), X, y.astype(float), s, 0.02, "l1")
    lam = 1 / (0.02 * len(y))
    zero = m.coef == 0
    assert np.all(np.abs(g[:-1][zero]) <= lam * (1 + 1e-3))
    assert np.allclose(g[:-1][~zero], -lam * np.sign(m.coef[~zero]), atol=1e-4)


def test_training_errors():
    X, y = blobs(50)
    with pytest.raises(ValidationError):
        fit_logreg(X, np.zeros(50))
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValidationError):
        fit_gbt(bad, y, n_estimators=2)
    m = fit_logreg(X, y)
    with pytest.raises(ValidationError):
        m.predict_proba(X[:, :3])


def test_out_of_scope_family():
    with pytest.raises(OutOfScopeError):
        ModelSpec("XGBoost")
    with pytest.raises(ValidationError):
        ModelSpec("Perceptron")


# -- trees ---------------------------------------------------------------------------

def stump(feature, thr, lo, hi, d=5):
    t = Tree([feature, -1, -1], [thr, 0, 0], [1, -1, -1], [2, -1, -1], [0, lo, hi], [10, 6, 4], [1.0, 0, 0])
    return TreeEnsemble("DecisionTree", (t,), np.ones(1), 0.0, "identity", d)


def test_stump_prediction_and_importance():
    m = stump(3, 0.5, 0.2, 0.9)
    X = np.zeros((2, 5))
    X[1, 3] = 1.0
    assert m.predict_proba(X).tolist() == [0.2, 0.9]
    imp = feature_importance(m)
    assert imp[3] == pytest.approx(1.0) and imp.sum() == pytest.approx(1.0, abs=1e-12)


def test_constant_feature_never_used():
    X, y = blobs(300)
    X[:, 4] = 2.0
    m = fit_decision_tree(X, y, max_depth=4)
    assert m.feature_importance()[4] == 0
    assert feature_importance(fit_random_forest(X, y, 20, rng=Rng(1)))[4] == 0


def _ref_newton_tree(Xb, g, h, rows, depth, lam, min_leaf, lr):
    """Brute-force depth-limited Newton tree; returns a predict(xb) closure."""
    G, H = g[rows].sum(), h[rows].sum()
    leaf = -G / (H + lam) * lr
    if depth == 0 or len(rows) < 2 * min_leaf:
        return lambda xb: leaf
    best = (1e-12, None)
    parent = G * G / (H + lam)
    for f in range(Xb.shape[0]):
        codes = Xb[f, rows]
        for b in np.unique(codes)[:-1]:
            left = codes <= b
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            GL, HL = g[rows][left].sum(), h[rows][left].sum()
            gain = 0.5 * (GL**2 / (HL + lam) + (G - GL) ** 2 / (H - HL + lam) - parent)
            if gain > best[0] + 1e-9:
                best = (gain, (f, b))
    if best[1] is None:
        return lambda xb: leaf
    f, b = best[1]
    lt = _ref_newton_tree(Xb, g, h, rows[Xb[f, rows] <= b], depth - 1, lam, min_leaf, lr)
    rt = _ref_newton_tree(Xb, g, h, rows[Xb[f, rows] > b], depth - 1, lam, min_leaf, lr)
    return lambda xb: lt(xb) if xb[f] <= b else rt(xb)


@pytest.mark.parametrize("depth,lam,min_leaf", [(1, 1.0, 1), (3, 1.0, 1), (4, 0.5, 5)])
def test_gbt_first_tree_matches_brute_force(depth, lam, min_leaf):
    X, y = blobs(250, 4, seed=depth)
    m = fit_gbt(X, y, n_estimators=1, max_depth=depth, l2=lam, min_samples_leaf=min_leaf, learning_rate=0.3, max_bins=32)
    mapper = BinMapper.fit(X, 32)
    Xb = mapper.transform(X).astype(np.int64)
    p = np.full(len(y), y.mean())
    g, h = p - y, p * (1 - p)
    ref = _ref_newton_tree(Xb, g, h, np.arange(len(y)), depth, lam, min_leaf, 0.3)
    expect = np.array([ref(Xb[:, i]) for i in range(len(y))])
    assert np.allclose(m.margin(X) - m.base_score, expect, atol=1e-10)


def test_gbt_training_loss_nonincreasing():
    X, y = blobs(500, 5, seed=2)
    m = fit_gbt(X, y, n_estimators=40, max_depth=3, learning_rate=0.1)
    loss = np.array(m.meta["train_logloss"])
    assert np.all(np.diff(loss) <= 1e-12)


def test_gbt_growth_presets_respect_explicit_args():
    X, y = blobs(300)
    leaf = fit_gbt(X, y, n_estimators=3, growth="leafwise", max_leaves=4)
    assert leaf.params["max_leaves"] == 4
    assert all(int(t.is_leaf.sum()) <= 4 for t in leaf.trees)
    assert fit_gbt(X, y, n_estimators=2, growth="l2").params["l2"] == 3.0


def test_gbt_early_stopping_keeps_best_prefix():
    X, y = blobs(600, 5, seed=8)
    m = fit_gbt(X, y, n_estimators=400, learning_rate=0.3, max_depth=6, early_stopping=True, patience=10, rng=Rng(2))
    assert m.meta["n_trees"] == m.meta["best_iteration"] <= m.meta["rounds_run"] < 400


def test_forest_variance_property():
    X, y = blobs(2000, 6, seed=1)
    Xt, yt = blobs(1000, 6, seed=2)
    a = fit_random_forest(X, y, 60, min_samples_leaf=2, rng=Rng(1))
    b = fit_random_forest(X, y, 60, min_samples_leaf=2, rng=Rng(2))
    assert any(not np.array_equal(s.feature, t.feature) for s, t in zip(a.trees, b.trees))
    assert abs(auprc(yt, a.predict_proba(Xt)) - auprc(yt, b.predict_proba(Xt))) < 0.05


def test_tree_probabilities_in_unit_interval():
    X, y = blobs(300)
    p = fit_decision_tree(X, y, max_depth=None).predict_proba(X)
    assert p.min() >= 0 and p.max() <= 1


# -- EBM and stacking ------------------------------------------------------------------

def test_ebm_additivity():
    X, y = blobs(600, 4, seed=5)
    m = fit_ebm(X, y, n_rounds=60, n_interactions=2, pair_rounds=10, rng=Rng(0))
    uni, pair = m.term_contributions(X)
    assert len(m.pairs) == 2
    for j in range(4):
        assert np.array_equal(uni[:, j], m.shape_at(j, X[:, j]))
    logit = np.log(m.predict_proba(X) / (1 - m.predict_proba(X)))
    assert np.allclose(logit, m.intercept + uni.sum(1) + pair.sum(1), atol=1e-9)


def test_ebm_learns_monotone_signal():
    X, y = blobs(1500, 3, seed=6, shift=2.0)
    m = fit_ebm(X, y, n_rounds=100, n_interactions=0, rng=Rng(0))
    lo, hi = m.shape_at(0, [-1.5, 2.5])
    assert hi - lo > 1.0


def test_stacking_oof_never_sees_own_rows():
    X, y = blobs(300, 3, seed=7)
    X = np.column_stack([np.arange(300.0), X])  # row id in column 0
    seen = []

    def spy(spec, Xtr, ytr, rng=None):
        seen.append(set(Xtr[:, 0].astype(int).tolist()))
        return train(spec, Xtr[:, 1:] * 0 + Xtr[:, 1:], ytr, rng)

    class Wrap:
        def __init__(self, m):
            self.m = m

        def predict_proba(self, Z):
            return self.m.predict_proba(Z[:, 1:])

    bases = [ModelSpec("LogReg"), ModelSpec("DecisionTree", {"max_depth": 3})]
    m = fit_stacking(X, y, bases, n_folds=4, rng=Rng(0), train_fn=lambda s, a, b, r: Wrap(spy(s, a, b, r)))
    for f in range(4):
        held = set(np.flatnonzero(m.oof_fold == f).tolist())
        for b in range(len(bases)):
            assert not held & seen[f * len(bases) + b]
    assert not np.isnan(m.oof).any()


def test_stacking_groups_stay_together():
    X, y = blobs(200, 3, seed=9)
    groups = np.arange(200) // 2
    m = fit_stacking(X, y, [ModelSpec("LogReg")], n_folds=3, groups=groups, rng=Rng(0))
    assert all(m.oof_fold[2 * i] == m.oof_fold[2 * i + 1] for i in range(100))


@pytest.mark.parametrize("spec", [
    ModelSpec("LogReg", {"C": 0.3}),
    ModelSpec("DecisionTree", {"max_depth": 4}),
    ModelSpec("RandomForest", {"n_estimators": 10}),
    ModelSpec("GBT", {"n_estimators": 10, "growth": "leafwise"}),
    ModelSpec("EBM", {"n_rounds": 20, "n_interactions": 1, "pair_rounds": 5}),
    ModelSpec("Stacking", {"bases": [ModelSpec("LogReg"), ModelSpec("GBT", {"n_estimators": 5})], "n_folds": 3}),
])
def test_json_roundtrip_predictions(spec):
    X, y = blobs(300, 4, seed=1)
    m = train(spec, X, y, Rng(3))
    back = model_from_json(model_to_json(m))
    assert np.array_equal(back.predict_proba(X), m.predict_proba(X))
    imp = feature_importance(m)
    assert (imp >= 0).all() and imp.sum() == pytest.approx(1.0, abs=1e-12)
    assert sigmoid(0.0) == 0.5
