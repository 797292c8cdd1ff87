import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p2prisk.errors import LeakageAcknowledgementError, OutOfScopeError, ValidationError
from p2prisk.features import FeatureFrame, build_features
from p2prisk.models.registry import ModelSpec
from p2prisk.pipeline import (
    ResamplerSpec,
    SelectorSpec,
    StageSpec,
    fit_transform_train,
    minority_neighbors,
    mutual_information,
    run_leaky_variant,
    run_safe_variant,
    smote,
    transform_eval,
)
from p2prisk.rng import Rng
from p2prisk.splits import make_cv_plan


def frame(num=None, cat=None):
    names, kinds, data = [], [], []
    for k, v in (num or {}).items():
        names.append(k), kinds.append("num"), data.append(np.asarray(v, dtype=float))
    for k, v in (cat or {}).items():
        names.append(k), kinds.append("cat"), data.append(np.array(v, dtype=object))
    return FeatureFrame(tuple(names), tuple(kinds), tuple(data))


# -- mutual information --------------------------------------------------------

def test_mi_perfect_dependence():
    y = np.array([0, 1] * 50)
    assert mutual_information(y.astype(float), y) == pytest.approx(math.log(2), abs=1e-12)


def test_mi_constant_zero():
    y = np.array([0, 1, 1, 0, 1])
    assert mutual_information(np.ones(5), y) == 0.0


def test_mi_four_cell_table():
    x = np.array([0] * 400 + [1] * 400 + [0] * 100 + [1] * 100, dtype=float)
    y = np.array([0] * 400 + [1] * 400 + [1] * 100 + [0] * 100)
    hand = 0.8 * math.log(0.4 / 0.25) + 0.2 * math.log(0.1 / 0.25)
    assert mutual_information(x, y) == pytest.approx(hand, abs=1e-12)
    assert hand == pytest.approx(0.1927, abs=1e-4)


def test_mi_categorical_and_length_check():
    y = np.array([0, 1, 0, 1])
    assert mutual_information(np.array(["a", "b", "a", "b"], dtype=object), y) == pytest.approx(math.log(2))
    with pytest.raises(ValidationError):
        mutual_information(np.zeros(3), y)


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=60), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_mi_bounded_by_label_entropy(xs, seed):
    x = np.array(xs)
    y = (Rng(seed).random(len(x)) < 0.3).astype(int)
    p = y.mean()
    h = 0.0 if p in (0, 1) else -(p * math.log(p) + (1 - p) * math.log(1 - p))
    assert -1e-12 <= mutual_information(x, y) <= h + 1e-12


# -- SMOTE -----------------------------------------------------------------------

def _imbalanced(m=10, M=90, d=3, seed=0):
    r = Rng(seed)
    X = np.vstack([r.normal(0, 1, m * d).reshape(m, d) + 3, r.normal(0, 1, M * d).reshape(M, d)])
    y = np.array([1] * m + [0] * M)
    return X, y


def test_smote_count_arithmetic():
    X, y = _imbalanced()
    Xs, ys, audit = smote(X, y, 5, 0.2, Rng(1))
    assert len(Xs) == audit["n_synthetic"] == 8
    assert (ys == 1).all() and audit["partition"] == "train"


def test_smote_points_on_segments():
    X, y = _imbalanced(30, 300)
    Xs, _, audit = smote(X, y, 5, 0.5, Rng(2))
    a, b, lam = np.array(audit["a"]), np.array(audit["b"]), np.array(audit["lam"])
    assert np.allclose(Xs, X[a] + lam[:, None] * (X[b] - X[a]), atol=1e-12)
    assert ((lam >= 0) & (lam < 1)).all()
    assert (y[a] == 1).all() and (y[b] == 1).all() and (a != b).all()


def test_smote_identical_endpoints():
    X = np.vstack([np.tile([1.0, 2.0], (6, 1)), np.arange(60.0).reshape(30, 2)])
    y = np.array([1] * 6 + [0] * 30)
    Xs, _, _ = smote(X, y, 3, 0.5, Rng(0))
    assert np.all(Xs == [1.0, 2.0])


def test_smote_neighbors_match_brute_force():
    X, _ = _imbalanced(40, 0, d=4, seed=5)
    nb = minority_neighbors(X, 5, chunk=7)
    for i in range(len(X)):
        d = [(float(np.sum((X[i] - X[j]) ** 2)), j) for j in range(len(X)) if j != i]
        assert nb[i].tolist() == [j for _, j in sorted(d)[:5]]


def test_smote_too_small_minority():
    X, y = _imbalanced(4, 90)
    with pytest.raises(ValidationError, match="smaller k_neighbors"):
        smote(X, y, 5, 0.2, Rng(0))


def test_ctgan_out_of_scope():
    with pytest.raises(OutOfScopeError):
        ResamplerSpec("ctgan")


# -- fitted stages ----------------------------------------------------------------

def _toy(n=60, seed=0):
    r = Rng(seed)
    x = r.normal(0, 1, n)
    y = (x + r.normal(0, 0.5, n) > 0.8).astype(int)
    x[3] = np.nan
    geo = np.array([["EU", "US", "APAC"][i % 3] for i in range(n)], dtype=object)
    geo[5] = None
    return frame({"x": x, "noise": r.normal(0, 1, n), "const": np.ones(n)}, {"geo": geo}), y


def test_imputation_and_constant_drop():
    f, y = _toy()
    pipe, X, _, _ = fit_transform_train(StageSpec(), f, Rng(0), y)
    assert pipe.medians["x"] == pytest.approx(np.nanmedian(f.data[0]))
    assert pipe.modes["geo"] == "EU"  # EU/US tie at 20 (row 5 is missing APAC), smallest string wins
    assert pipe.audit["dropped_constant"] == ["const"]
    assert np.isfinite(X).all()
    assert np.allclose(X.mean(axis=0), 0, atol=1e-12)


def test_unseen_category_zero_block():
    f, y = _toy()
    pipe, _, _, _ = fit_transform_train(StageSpec(), f, Rng(0), y)
    ev = frame({"x": [0.1], "noise": [0.0], "const": [1.0]}, {"geo": ["LATAM"]})
    raw = transform_eval(pipe, ev)[0]
    block = [i for i, n in enumerate(pipe.feature_names) if n.startswith("geo")]
    # standardized zero: (0 - mean) / std for each one-hot column
    expect = -pipe.means[block] / pipe.stds[block]
    assert np.allclose(raw[block], expect)


def test_eval_equals_train_matrix():
    f, y = _toy()
    spec = StageSpec(selector=SelectorSpec("mi", top_q=0.5), resampler=ResamplerSpec(k_neighbors=2, target_ratio=0.9))
    pipe, X, y_out, origin = fit_transform_train(spec, f, Rng(0), y)
    assert np.allclose(transform_eval(pipe, f), X[: f.n])
    assert len(X) == len(y_out) == len(origin) > f.n


def test_mi_top_q_one_keeps_all():
    f, y = _toy()
    pipe, X, _, _ = fit_transform_train(StageSpec(selector=SelectorSpec("mi", top_q=1.0)), f, Rng(0), y)
    assert X.shape[1] == len(pipe.kept)


def test_selector_deterministic():
    f, y = _toy(200, 3)
    spec = StageSpec(selector=SelectorSpec("mi", top_q=0.4))
    a = fit_transform_train(spec, f, Rng(9), y)[0]
    b = fit_transform_train(spec, f, Rng(9), y)[0]
    assert a.feature_names == b.feature_names and a.fingerprint() == b.fingerprint()


def test_rfe_removes_exact_count():
    f, y = _toy(200, 4)
    spec = StageSpec(selector=SelectorSpec("rfe", target_k=2, step=1))
    pipe, X, _, _ = fit_transform_train(spec, f, Rng(0), y)
    d = len(pipe.kept)
    assert X.shape[1] == 2
    assert sum(len(s) for s in pipe.audit["selector"]["rfe_dropped"]) == d - 2
    assert all(len(s) == 1 for s in pipe.audit["selector"]["rfe_dropped"])


def test_l1_selector_keeps_signal():
    f, y = _toy(300, 6)
    pipe, _, _, _ = fit_transform_train(StageSpec(selector=SelectorSpec("l1", C=0.05)), f, Rng(0), y)
    assert "x" in pipe.feature_names


def test_signature_mismatch():
    f, y = _toy()
    pipe, _, _, _ = fit_transform_train(StageSpec(), f, Rng(0), y)
    with pytest.raises(ValidationError):
        transform_eval(pipe, frame({"x": [1.0]}))


def test_single_class_rejected():
    f, _ = _toy()
    with pytest.raises(ValidationError):
        fit_transform_train(StageSpec(), f, Rng(0), np.zeros(f.n, dtype=int))


def test_eval_rows_never_reach_fit():
    f, y = _toy(120, 2)
    spec = StageSpec(selector=SelectorSpec("mi", top_q=0.5), resampler=ResamplerSpec(k_neighbors=3))
    tr = np.arange(80)
    clean = fit_transform_train(spec, f.take(tr), Rng(1), y[tr])[0]
    poisoned = [c.copy() for c in f.data]
    for c, k in zip(poisoned, f.kinds):
        c[80:] = 1e9 if k == "num" else "__SENTINEL__"
    g = FeatureFrame(f.names, f.kinds, tuple(poisoned))
    dirty = fit_transform_train(spec, g.take(tr), Rng(1), y[tr])[0]
    assert clean.fingerprint() == dirty.fingerprint()


def test_stage_spec_roundtrip():
    spec = StageSpec(selector=SelectorSpec("rfe", target_k=5), resampler=ResamplerSpec(k_neighbors=3))
    assert StageSpec.from_dict(spec.to_dict()) == spec
    assert spec.without_resampler().resampler is None


# -- leaky vs safe ----------------------------------------------------------------

@pytest.fixture(scope="module")
def small_plan(small_data):
    t, _ = small_data
    return t, make_cv_plan(t, "RandomStratified", 3, 2, Rng(4))


def test_leaky_requires_acknowledgement(small_plan):
    t, plan = small_plan
    with pytest.raises(LeakageAcknowledgementError):
        run_leaky_variant(StageSpec(resampler=ResamplerSpec()), t, plan, ModelSpec("LogReg"), Rng(0))


def test_leaky_equals_safe_without_resampler(small_plan):
    t, plan = small_plan
    spec = StageSpec(selector=SelectorSpec("mi", top_q=0.5), include_ids=False)
    m = ModelSpec("LogReg", {"C": 0.5})
    leaky = run_leaky_variant(spec, t, plan, m, Rng(3), acknowledge_leaky=True)
    safe = run_safe_variant(spec, t, plan, m, Rng(3))
    assert leaky["leaky"] is True and safe["leaky"] is False
    assert leaky["mean"] == safe["mean"]
    assert leaky["n_synthetic"] == 0


def test_build_features_has_no_label_columns(small_data):
    t, _ = small_data
    f = build_features(t)
    assert not {"y_risk", "risk_type", "scenario_id", "case_id", "doc_id"} & set(f.names)
    assert "vendor_id" in f.names and "vendor_id" not in build_features(t, include_ids=False).names
