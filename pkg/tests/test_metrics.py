import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p2prisk.errors import ValidationError
from p2prisk.metrics import (
    ConfusionCounts,
    CostModel,
    auprc,
    balanced_accuracy,
    confusion,
    expected_cost,
    f1_prec_rec,
    mcc,
    metric_bundle,
    optimal_threshold,
    platt_apply,
    platt_fit,
    reliability,
    roc_auc,
)
from p2prisk.rng import Rng

EX = ConfusionCounts(tp=2, fp=1, tn=6, fn=1)


def naive_ap(y, s):
    # step-wise average precision, one threshold per unique score
    y, s = np.asarray(y), np.asarray(s, dtype=float)
    P = y.sum()
    ap, prev_r = 0.0, 0.0
    for t in sorted(set(s.tolist()), reverse=True):
        pred = s >= t
        tp = np.sum(pred & (y == 1))
        r = tp / P
        ap += (r - prev_r) * tp / pred.sum()
        prev_r = r
    return ap


def test_confusion_examples():
    assert confusion([1, 0], [0.9, 0.1], 0.5) == ConfusionCounts(1, 0, 1, 0)
    c = confusion([1, 0, 0, 1], [0.1, 0.2, 0.3, 0.0], 0.0)
    assert c.fp == 2 and c.fn == 0
    y = [1, 1, 0, 0, 0, 0, 0, 0, 0, 0]
    p = np.array([0.95, 0.85, 0.75, 0.49, 0.45, 0.35, 0.25, 0.15, 0.1, 0.05])
    assert confusion(y, p, 0.5) == ConfusionCounts(tp=2, fp=1, tn=7, fn=0)
    assert confusion([1], [0.5], 0.5).tp == 1  # ties go positive
    with pytest.raises(ValidationError):
        confusion([], [], 0.5)


def test_mcc_examples():
    assert mcc(EX) == pytest.approx(11 / 21)
    assert mcc(ConfusionCounts(3, 0, 7, 0)) == 1.0
    assert mcc(ConfusionCounts(3, 7, 0, 0)) == 0.0


def test_balanced_accuracy_and_f1():
    assert balanced_accuracy(EX) == pytest.approx(16 / 21)
    assert f1_prec_rec(ConfusionCounts(3, 0, 7, 0)) == (1.0, 1.0, 1.0)
    f1, prec, rec = f1_prec_rec(ConfusionCounts(0, 0, 7, 3))
    assert prec == 0.0 and rec == 0.0 and f1 == 0.0


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_mcc_swap_symmetry(tp, fp, tn, fn):
    if tp + fp + tn + fn == 0:
        return
    a = mcc(ConfusionCounts(tp, fp, tn, fn))
    b = mcc(ConfusionCounts(tn, fn, tp, fp))
    assert a == pytest.approx(b, abs=1e-12)
    assert -1 <= a <= 1


def test_auprc_examples():
    assert auprc([1, 0, 1], [0.9, 0.8, 0.1]) == pytest.approx(0.5 + 0.5 * 2 / 3)
    assert auprc([0, 1, 1], [0.1, 0.5, 0.9]) == 1.0
    with pytest.raises(ValidationError):
        auprc([0, 0], [0.1, 0.2])


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 8)), min_size=2, max_size=40))
@settings(max_examples=80)
def test_auprc_matches_naive_with_ties(pairs):
    y = np.array([a for a, _ in pairs])
    s = np.array([b for _, b in pairs], dtype=float)
    if y.sum() == 0:
        return
    assert auprc(y, s) == pytest.approx(naive_ap(y, s), abs=1e-12)
    # strictly monotone transform leaves it unchanged
    assert auprc(y, np.exp(3 * s) - 7) == pytest.approx(auprc(y, s), abs=1e-12)


def test_auprc_random_scores_near_prevalence():
    r = Rng(3)
    y = (r.random(10_000) < 0.2).astype(int)
    assert abs(auprc(y, r.random(10_000)) - y.mean()) < 0.02


def test_roc_auc_rank_oracle():
    r = Rng(4)
    y = (r.random(300) < 0.3).astype(int)
    s = np.round(r.random(300), 1)
    pos, neg = s[y == 1], s[y == 0]
    pairs = (pos[:, None] > neg[None, :]).mean() + 0.5 * (pos[:, None] == neg[None, :]).mean()
    assert roc_auc(y, s) == pytest.approx(pairs, abs=1e-12)


def test_expected_cost_and_threshold():
    cm = CostModel(1.0, 10.0)
    assert expected_cost(ConfusionCounts(0, 2, 7, 1), cm) == pytest.approx(1.2)
    assert expected_cost(ConfusionCounts(3, 0, 7, 0), cm) == 0.0
    assert optimal_threshold(cm) == pytest.approx(1 / 11)
    assert CostModel(2.0, 2.0).tau == 0.5
    assert optimal_threshold(CostModel(1.0, 1e12)) < 1e-11
    with pytest.raises(ValidationError):
        CostModel(0.0, 1.0)


def test_tau_star_minimizes_cost_on_grid():
    r = Rng(5)
    p = r.random(20_000) ** 2
    y = (r.random(20_000) < p).astype(int)
    cm = CostModel(1.0, 10.0)
    grid = np.linspace(0.01, 0.99, 99)
    costs = [expected_cost(confusion(y, p, t), cm) for t in grid]
    best = grid[int(np.argmin(costs))]
    assert abs(best - cm.tau) <= 0.03


def test_cost_optimal_beats_half_statistically():
    cm = CostModel(1.0, 10.0)
    wins = 0
    for seed in range(20):
        r = Rng(seed, "cost")
        p = r.random(10_000) ** 3
        y = (r.random(10_000) < p).astype(int)
        wins += expected_cost(confusion(y, p, cm.tau), cm) <= expected_cost(confusion(y, p, 0.5), cm)
    assert wins >= 18


def test_platt_recovers_identity_on_calibrated_logits():
    r = Rng(6)
    z = r.normal(0, 2, 5000)
    y = (r.random(5000) < 1 / (1 + np.exp(-z))).astype(int)
    a, b = platt_fit(z, y)
    assert abs(a - 1) < 0.05 and abs(b) < 0.05


def test_platt_constant_scores():
    y = np.array([1] * 10 + [0] * 90)
    a, b = platt_fit(np.full(100, 0.3), y)
    p = platt_apply(a, b, [0.3])[0]
    target = (10 * 11 / 12 + 90 * 1 / 92) / 100
    assert p == pytest.approx(target, abs=1e-6)


def _platt_oracle(s, y):
    # independent: Newton on (A, B) without line search, from the smoothed prior
    npos, nneg = y.sum(), len(y) - y.sum()
    t = np.where(y == 1, (npos + 1) / (npos + 2), 1 / (nneg + 2))
    th = np.zeros(2)
    X = np.column_stack([s, np.ones_like(s)])
    for _ in range(200):
        p = 1 / (1 + np.exp(-X @ th))
        g = X.T @ (p - t)
        H = (X * (p * (1 - p))[:, None]).T @ X
        th -= np.linalg.solve(H, g)
    return th


def test_platt_matches_newton_oracle():
    r = Rng(7)
    s = r.random(800)
    y = (r.random(800) < s**2).astype(int)
    a, b = platt_fit(s, y)
    assert np.allclose([a, b], _platt_oracle(s, y), atol=1e-5)


def test_platt_single_class_and_monotone():
    with pytest.raises(ValidationError):
        platt_fit([0.1, 0.2], [1, 1])
    s = np.linspace(-3, 3, 50)
    assert np.all(np.diff(platt_apply(1.3, -0.2, s)) > 0)


def test_reliability_examples():
    y = np.array([1] * 10 + [0] * 90)
    assert reliability(y, np.full(100, 0.5)).ece == pytest.approx(0.4)
    assert reliability(y, y.astype(float)).ece == 0.0
    rep = reliability(y, np.full(100, 0.5))
    assert sum(rep.counts) == 100 and sum(c > 0 for c in rep.counts) == 1
    assert math.isnan(rep.mean_pred[0])


def test_metric_bundle_keys():
    y = np.array([1, 0, 1, 0, 0])
    out = metric_bundle(y, np.array([0.9, 0.2, 0.4, 0.6, 0.1]), 0.5, CostModel())
    assert {"mcc", "balanced_accuracy", "auprc", "expected_cost"} <= set(out)
