"""Fold-confined preprocessing: impute -> encode -> scale -> select -> resample.

Every statistic is fitted by :func:`fit_transform_train` on the training
partition alone; :func:`transform_eval` only replays those statistics and
never resamples.  :func:`run_leaky_variant` reproduces the classic mistake of
oversampling the whole dataset before the folds are drawn and refuses to run
without an explicit acknowledgement.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import LeakageAcknowledgementError, OutOfScopeError, ValidationError
from .features import FeatureFrame, build_features
from .metrics import CostModel, metric_bundle
from .models.linear import fit_logreg
from .rng import Rng
from .splits import CvPlan, fold_pairs
from .table import CaseTable

# stage specifications ---------------------------------------------------------


@dataclass(frozen=True)
class SelectorSpec:
    """``kind``: "mi" (keep top ``top_q`` fraction by mutual information),
    "rfe" (drop ``step`` features per round down to ``target_k``) or "l1"
    (keep nonzero coefficients of an L1 logistic fit at ``C``)."""

    kind: str = "mi"
    top_q: float = 0.5
    target_k: int = 20
    step: float = 1
    C: float = 0.1

    def __post_init__(self):
        if self.kind not in ("mi", "rfe", "l1"):
            raise ValidationError(f"unknown selector {self.kind!r}")
        if not 0 < self.top_q <= 1:
            raise ValidationError("top_q must lie in (0, 1]")
        if self.target_k < 1 or self.step <= 0 or self.C <= 0:
            raise ValidationError("invalid selector settings")


@dataclass(frozen=True)
class ResamplerSpec:
    kind: str = "smote"
    k_neighbors: int = 5
    target_ratio: float = 0.2

    def __post_init__(self):
        if self.kind.lower() == "ctgan":
            raise OutOfScopeError("CTGAN resampling is out of scope; use kind='smote'")
        if self.kind != "smote":
            raise ValidationError(f"unknown resampler {self.kind!r}")
        if self.k_neighbors < 1:
            raise ValidationError("k_neighbors must be at least 1")
        if not 0 < self.target_ratio <= 1:
            raise ValidationError("target_ratio must lie in (0, 1]")


@dataclass(frozen=True)
class StageSpec:
    """Preprocessing chain.  Imputation is always median (numeric) / mode
    (categorical); the stage order is fixed."""

    encoder: str = "onehot"
    scaler: str = "standard"
    selector: SelectorSpec | None = None
    resampler: ResamplerSpec | None = None
    include_ids: bool = True

    def __post_init__(self):
        if self.encoder not in ("onehot", "ordinal"):
            raise ValidationError(f"unknown encoder {self.encoder!r}")
        if self.scaler not in ("standard", "none"):
            raise ValidationError(f"unknown scaler {self.scaler!r}")
        if isinstance(self.selector, dict):
            object.__setattr__(self, "selector", SelectorSpec(**self.selector))
        if isinstance(self.resampler, dict):
            object.__setattr__(self, "resampler", ResamplerSpec(**self.resampler))

    def without_resampler(self) -> "StageSpec":
        return replace(self, resampler=None)

    def to_dict(self):
        return {
            "encoder": self.encoder,
            "scaler": self.scaler,
            "selector": None if self.selector is None else asdict(self.selector),
            "resampler": None if self.resampler is None else asdict(self.resampler),
            "include_ids": self.include_ids,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# fitted pipeline --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FittedPipeline:
    spec: StageSpec
    signature: tuple
    medians: dict
    modes: dict
    categories: dict
    encoded_names: tuple
    kept: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    selected: np.ndarray
    feature_names: tuple
    audit: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("kept", "means", "stds", "selected"):
            arr = np.array(getattr(self, name), copy=True)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def transform(self, frame: FeatureFrame) -> np.ndarray:
        return transform_eval(self, frame)

    def stats_dict(self) -> dict:
        return {
            "signature": [list(s) for s in self.signature],
            "medians": self.medians,
            "modes": self.modes,
            "categories": {k: list(v) for k, v in self.categories.items()},
            "encoded_names": list(self.encoded_names),
            "kept": self.kept.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "selected": self.selected.tolist(),
            "feature_names": list(self.feature_names),
        }

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "stats": self.stats_dict(), "audit": self.audit, "provenance": self.provenance}

    def fingerprint(self) -> str:
        """Hash of every fitted statistic (selection and resampling included)."""
        payload = {"stats": self.stats_dict(), "resample": self.audit.get("resample", {})}
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=_json_default).encode()).hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


# mutual information -----------------------------------------------------------


def equal_frequency_edges(x: np.ndarray, n_bins: int = 10) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        return np.zeros(0)
    return np.unique(np.quantile(x, np.arange(1, n_bins) / n_bins))


def discretize(x, edges) -> np.ndarray:
    """Bin ``j`` holds ``edges[j-1] < x <= edges[j]``."""
    return np.searchsorted(edges, np.asarray(x, dtype=np.float64), side="left")


def _plugin_mi(a_codes, y) -> float:
    _, a = np.unique(a_codes, return_inverse=True)
    _, b = np.unique(y, return_inverse=True)
    n = len(a)
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1.0)
    joint /= n
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(max(0.0, np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz]))))


def mutual_information(feature, y, n_bins: int = 10, edges=None) -> float:
    """Plug-in mutual information (nats) between a feature and a binary target.

    Numeric features are cut into ``n_bins`` equal-frequency bins (or the
    supplied ``edges``); object arrays are treated as categorical.
    """
    feature = np.asarray(feature)
    y = np.asarray(y)
    if feature.shape != y.shape:
        raise ValidationError("feature and target lengths differ")
    if len(y) == 0:
        return 0.0
    if feature.dtype == object:
        codes = np.array(["\x00missing" if v is None else str(v) for v in feature], dtype=object)
    else:
        e = equal_frequency_edges(feature, n_bins) if edges is None else edges
        codes = discretize(feature, e)
    return _plugin_mi(codes, y)


# SMOTE ------------------------------------------------------------------------


def minority_neighbors(Xm: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """Indices of the ``k`` nearest other minority rows (Euclidean, ties by index)."""
    m = len(Xm)
    sq = np.einsum("ij,ij->i", Xm, Xm)
    out = np.empty((m, k), dtype=np.int64)
    for s in range(0, m, chunk):
        e = min(m, s + chunk)
        d2 = sq[s:e, None] + sq[None, :] - 2.0 * Xm[s:e] @ Xm.T
        d2 = np.maximum(d2, 0.0)
        d2[np.arange(e - s), np.arange(s, e)] = np.inf
        out[s:e] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def smote(X: np.ndarray, y: np.ndarray, k_neighbors: int = 5, target_ratio: float = 0.2, rng: Rng | None = None):
    """Synthesize minority rows until minority/majority reaches ``target_ratio``.

    Each synthetic row is ``X[a] + lam * (X[b] - X[a])`` with ``a`` a minority
    row, ``b`` one of its ``k_neighbors`` nearest minority rows and
    ``lam ~ U(0, 1)``.

    Returns:
        ``(X_syn, y_syn, audit)`` where the audit holds the ``a``/``b`` row
        indices into ``X`` and the ``lam`` values.
    """
    rng = rng or Rng(0, "smote")
    y = np.asarray(y)
    n1 = int(np.sum(y == 1))
    n0 = len(y) - n1
    minority = 1 if n1 <= n0 else 0
    m, M = min(n1, n0), max(n1, n0)
    n_syn = int(round(target_ratio * M)) - m
    empty = {"n_synthetic": 0, "minority_class": minority, "a": [], "b": [], "lam": [], "partition": "train"}
    if n_syn <= 0:
        return np.zeros((0, X.shape[1])), np.zeros(0, dtype=y.dtype), empty
    if m < k_neighbors + 1:
        raise ValidationError(
            f"minority class has {m} rows; SMOTE with k_neighbors={k_neighbors} needs at least "
            f"{k_neighbors + 1}. Use a smaller k_neighbors."
        )
    idx = np.flatnonzero(y == minority)
    Xm = X[idx]
    nbrs = minority_neighbors(Xm, k_neighbors)
    reps = int(math.ceil(n_syn / m))
    base = np.concatenate([rng.derive(f"base/{r}").permutation(m) for r in range(reps)])[:n_syn]
    pick = rng.derive("neighbor").integers(0, k_neighbors, n_syn)
    lam = rng.derive("lambda").random(n_syn)
    a = base
    b = nbrs[a, pick]
    X_syn = Xm[a] + lam[:, None] * (Xm[b] - Xm[a])
    audit = {
        "n_synthetic": int(n_syn),
        "minority_class": minority,
        "a": idx[a].tolist(),
        "b": idx[b].tolist(),
        "lam": lam.tolist(),
        "partition": "train",
    }
    return X_syn, np.full(n_syn, minority, dtype=y.dtype), audit


# fit / transform --------------------------------------------------------------


def _as_frame(data, spec: StageSpec):
    if isinstance(data, CaseTable):
        return build_features(data, include_ids=spec.include_ids), (data.label if data.has_label else None)
    if isinstance(data, FeatureFrame):
        return data, None
    raise ValidationError("expected a CaseTable or FeatureFrame")


def _impute(frame: FeatureFrame, medians, modes):
    out = []
    for name, kind, col in zip(frame.names, frame.kinds, frame.data):
        if kind == "num":
            v = col.astype(np.float64).copy()
            v[np.isnan(v)] = medians[name]
            out.append(v)
        else:
            v = col.copy()
            miss = np.array([x is None for x in v], dtype=bool)
            v[miss] = modes[name]
            out.append(v)
    return out


def _encode(frame: FeatureFrame, imputed, categories, encoder):
    blocks = []
    for name, kind, col in zip(frame.names, frame.kinds, imputed):
        if kind == "num":
            blocks.append(col[:, None])
            continue
        cats = categories[name]
        lookup = {c: i for i, c in enumerate(cats)}
        codes = np.array([lookup.get(v, -1) for v in col], dtype=np.int64)
        if encoder == "ordinal":
            blocks.append(codes.astype(np.float64)[:, None])
        else:
            oh = np.zeros((len(col), len(cats)))
            hit = codes >= 0
            oh[np.flatnonzero(hit), codes[hit]] = 1.0
            blocks.append(oh)
    return np.hstack(blocks) if blocks else np.zeros((frame.n, 0))


def _encoded_names(frame, categories, encoder):
    names = []
    for name, kind in zip(frame.names, frame.kinds):
        if kind == "num" or encoder == "ordinal":
            names.append(name)
        else:
            names.extend(f"{name}={c}" for c in categories[name])
    return names


def _select(sel: SelectorSpec, X, y, names, rng):
    d = X.shape[1]
    note = {}
    if sel.kind == "mi":
        scores = np.array([mutual_information(X[:, j], y) for j in range(d)])
        k = max(1, math.ceil(sel.top_q * d - 1e-9))
        order = np.argsort(-scores, kind="stable")
        keep = np.sort(order[:k])
        note["mi"] = scores.tolist()
        return keep, note
    Z = X
    if sel.kind in ("rfe", "l1"):
        sd = X.std(axis=0)
        Z = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    if sel.kind == "rfe":
        active = list(range(d))
        target = min(sel.target_k, d)
        dropped = []
        while len(active) > target:
            model = fit_logreg(Z[:, active], y, C=1.0, penalty="l2", class_weight="balanced")
            imp = np.abs(model.coef)
            step = int(sel.step) if sel.step >= 1 else max(1, int(sel.step * len(active)))
            n_drop = min(step, len(active) - target)
            worst = np.argsort(imp, kind="stable")[:n_drop]
            gone = sorted((active[i] for i in worst), reverse=True)
            dropped.append([names[g] for g in gone])
            active = [a for a in active if a not in set(gone)]
        note["rfe_dropped"] = dropped
        return np.array(sorted(active), dtype=np.int64), note
    model = fit_logreg(Z, y, C=sel.C, penalty="l1", class_weight="balanced")
    keep = np.flatnonzero(model.coef != 0)
    if keep.size == 0:
        mi = np.array([mutual_information(X[:, j], y) for j in range(d)])
        keep = np.array([int(np.argmax(mi))])
        note["l1_fallback"] = "no nonzero coefficient; kept the highest-MI feature"
    return keep.astype(np.int64), note


def fit_transform_train(spec: StageSpec, train, rng: Rng | None = None, y=None, provenance=None):
    """Fit every stage on the training partition and transform it.

    Args:
        train: CaseTable (labels taken from ``y_risk``) or FeatureFrame with ``y``.

    Returns:
        ``(pipeline, X, y_out, origin)``; ``origin[i]`` is the training row a
        synthetic row was interpolated from (identity for real rows).
    """
    rng = rng or Rng(0, "pipeline")
    frame, y_tab = _as_frame(train, spec)
    y = y_tab if y is None else np.asarray(y)
    if y is None:
        raise ValidationError("training labels are required")
    y = np.asarray(y).astype(np.int64)
    if len(y) != frame.n:
        raise ValidationError("label length does not match training rows")
    if len(np.unique(y)) < 2:
        raise ValidationError("training partition must contain both classes")

    medians, modes, categories = {}, {}, {}
    for name, kind, col in zip(frame.names, frame.kinds, frame.data):
        if kind == "num":
            obs = col[~np.isnan(col)]
            medians[name] = float(np.median(obs)) if obs.size else 0.0
        else:
            obs = [v for v in col if v is not None]
            if obs:
                vals, counts = np.unique(np.array(obs, dtype=object).astype(str), return_counts=True)
                modes[name] = str(vals[np.argmax(counts)])
            else:
                modes[name] = None
    imputed = _impute(frame, medians, modes)
    for name, kind, col in zip(frame.names, frame.kinds, imputed):
        if kind == "cat":
            categories[name] = tuple(sorted({v for v in col if v is not None}))
    X = _encode(frame, imputed, categories, spec.encoder)
    enc_names = _encoded_names(frame, categories, spec.encoder)

    means = X.mean(axis=0) if len(X) else np.zeros(X.shape[1])
    stds = X.std(axis=0) if len(X) else np.zeros(X.shape[1])
    kept = np.flatnonzero(stds > 0)
    audit = {"dropped_constant": [enc_names[j] for j in np.flatnonzero(stds == 0)]}
    X = X[:, kept]
    means, stds = means[kept], stds[kept]
    if spec.scaler == "standard":
        X = (X - means) / stds
    else:
        means, stds = np.zeros(len(kept)), np.ones(len(kept))
    kept_names = [enc_names[j] for j in kept]

    if spec.selector is not None and X.shape[1] > 0:
        selected, note = _select(spec.selector, X, y, kept_names, rng.derive("select"))
        audit["selector"] = {"kind": spec.selector.kind, **{k: v for k, v in note.items() if k != "mi"}}
    else:
        selected = np.arange(X.shape[1])
    X = X[:, selected]
    final_names = tuple(kept_names[j] for j in selected)

    origin = np.arange(len(y))
    if spec.resampler is not None:
        r = spec.resampler
        X_syn, y_syn, res_audit = smote(X, y, r.k_neighbors, r.target_ratio, rng.derive("smote"))
        X = np.vstack([X, X_syn])
        y = np.concatenate([y, y_syn])
        origin = np.concatenate([origin, np.asarray(res_audit["a"], dtype=np.int64)])
        audit["resample"] = res_audit
    pipe = FittedPipeline(
        spec=spec,
        signature=frame.signature(),
        medians=medians,
        modes=modes,
        categories=categories,
        encoded_names=tuple(enc_names),
        kept=kept,
        means=means,
        stds=stds,
        selected=selected,
        feature_names=final_names,
        audit=audit,
        provenance=dict(provenance or {}),
    )
    return pipe, X, y, origin


def transform_eval(pipe: FittedPipeline, data) -> np.ndarray:
    """Apply train-fitted statistics; no fitting and no resampling."""
    frame, _ = _as_frame(data, pipe.spec)
    if frame.signature() != pipe.signature:
        raise ValidationError("evaluation features do not match the fitted schema")
    imputed = _impute(frame, pipe.medians, pipe.modes)
    X = _encode(frame, imputed, pipe.categories, pipe.spec.encoder)
    X = X[:, pipe.kept]
    X = (X - pipe.means) / pipe.stds
    return X[:, pipe.selected]


# safe and leaky CV runners ----------------------------------------------------


def fit_and_score(spec, model_spec, train_frame, y_train, eval_frame, y_eval, rng, tau=0.5, cost=CostModel()):
    """Fit pipeline + model on one partition and score another."""
    from .models.registry import train as train_model

    pipe, X, y, origin = fit_transform_train(spec, train_frame, rng.derive("pipeline"), y=y_train)
    model = train_model(model_spec, X, y, rng.derive("model"), groups=origin)
    p = model.predict_proba(transform_eval(pipe, eval_frame))
    return metric_bundle(y_eval, p, tau, cost), pipe, model


def _synthesize_raw(spec: StageSpec, frame: FeatureFrame, y, rng):
    """Oversample a whole frame in raw feature space.

    Neighbors are found in the globally preprocessed space; numeric features
    are interpolated on imputed raw values and categoricals are copied from
    the nearer endpoint.
    """
    r = spec.resampler
    gpipe, Xg, _, _ = fit_transform_train(replace(spec.without_resampler(), selector=None), frame, rng.derive("global"), y=y)
    _, _, audit = smote(Xg, y, r.k_neighbors, r.target_ratio, rng.derive("smote"))
    a = np.asarray(audit["a"], dtype=np.int64)
    b = np.asarray(audit["b"], dtype=np.int64)
    lam = np.asarray(audit["lam"])
    imputed = _impute(frame, gpipe.medians, gpipe.modes)
    cols = []
    for kind, col in zip(frame.kinds, imputed):
        if kind == "num":
            cols.append(col[a] + lam * (col[b] - col[a]))
        else:
            cols.append(np.where(lam < 0.5, col[a], col[b]))
    syn = FeatureFrame(frame.names, frame.kinds, tuple(cols))
    return syn, np.full(len(a), audit["minority_class"], dtype=np.int64), audit


def run_leaky_variant(spec: StageSpec, table: CaseTable, plan: CvPlan, model_spec, rng: Rng | None = None,
                      acknowledge_leaky: bool = False, tau: float = 0.5, cost: CostModel = CostModel()) -> dict:
    """CV scores when oversampling happens before fold assignment.

    Synthetic rows are created from the whole planning universe and dealt to
    the outer folds at random; each fold then runs the ordinary pipeline
    without in-fold resampling, so synthetic neighbors of training rows land
    in evaluation folds.  Without a resampler this equals the safe path.

    Raises:
        LeakageAcknowledgementError: ``acknowledge_leaky`` is not set.
    """
    if not acknowledge_leaky:
        raise LeakageAcknowledgementError("the leaky variant only runs with an explicit acknowledge-leaky flag")
    rng = rng or Rng(0, "leaky")
    frame_all = build_features(table, include_ids=spec.include_ids)
    y_all = table.label.astype(np.int64)
    U = plan.universe
    fold_of = np.full(table.n, -1, dtype=np.int64)
    for f, rows in enumerate(plan.outer_folds):
        fold_of[rows] = f
    k = len(plan.outer_folds)
    inner_spec = spec.without_resampler()
    audit = None
    if spec.resampler is not None:
        syn, y_syn, audit = _synthesize_raw(spec, frame_all.take(U), y_all[U], rng.derive("synth"))
        syn_fold = np.empty(syn.n, dtype=np.int64)
        syn_fold[rng.derive("deal").permutation(syn.n)] = np.arange(syn.n) % k
    folds = []
    for i, (tr, ev) in enumerate(fold_pairs(plan.outer_folds, plan.kind)):
        f_eval = int(fold_of[ev[0]])
        f_train = np.unique(fold_of[tr])
        tr_frame, tr_y = frame_all.take(tr), y_all[tr]
        ev_frame, ev_y = frame_all.take(ev), y_all[ev]
        if audit is not None:
            s_tr = np.flatnonzero(np.isin(syn_fold, f_train))
            s_ev = np.flatnonzero(syn_fold == f_eval)
            tr_frame, tr_y = tr_frame.append(syn.take(s_tr)), np.concatenate([tr_y, y_syn[s_tr]])
            ev_frame, ev_y = ev_frame.append(syn.take(s_ev)), np.concatenate([ev_y, y_syn[s_ev]])
        scores, _, _ = fit_and_score(inner_spec, model_spec, tr_frame, tr_y, ev_frame, ev_y, rng.derive(f"fold/{i}"), tau, cost)
        folds.append(scores)
    return {
        "leaky": True,
        "folds": folds,
        "mean": {m: float(np.mean([f[m] for f in folds])) for m in ("mcc", "auprc", "balanced_accuracy", "expected_cost")},
        "n_synthetic": 0 if audit is None else audit["n_synthetic"],
    }


def run_safe_variant(spec: StageSpec, table: CaseTable, plan: CvPlan, model_spec, rng: Rng | None = None,
                     tau: float = 0.5, cost: CostModel = CostModel()) -> dict:
    """Leakage-safe counterpart of :func:`run_leaky_variant` (same folds and streams)."""
    rng = rng or Rng(0, "leaky")
    frame_all = build_features(table, include_ids=spec.include_ids)
    y_all = table.label.astype(np.int64)
    folds = []
    for i, (tr, ev) in enumerate(fold_pairs(plan.outer_folds, plan.kind)):
        scores, _, _ = fit_and_score(spec, model_spec, frame_all.take(tr), y_all[tr], frame_all.take(ev), y_all[ev],
                                     rng.derive(f"fold/{i}"), tau, cost)
        folds.append(scores)
    return {
        "leaky": False,
        "folds": folds,
        "mean": {m: float(np.mean([f[m] for f in folds])) for m in ("mcc", "auprc", "balanced_accuracy", "expected_cost")},
    }


def leaky_final_fit(spec: StageSpec, table: CaseTable, train_rows, eval_rows, model_spec, rng: Rng | None = None,
                    acknowledge_leaky: bool = False, tau: float = 0.5, cost: CostModel = CostModel()) -> dict:
    """Train on real + globally synthesized rows and score real held-out rows."""
    if not acknowledge_leaky:
        raise LeakageAcknowledgementError("the leaky variant only runs with an explicit acknowledge-leaky flag")
    rng = rng or Rng(0, "leaky")
    frame_all = build_features(table, include_ids=spec.include_ids)
    y_all = table.label.astype(np.int64)
    tr_frame, tr_y = frame_all.take(train_rows), y_all[train_rows]
    if spec.resampler is not None:
        syn, y_syn, _ = _synthesize_raw(spec, tr_frame, tr_y, rng.derive("synth"))
        tr_frame, tr_y = tr_frame.append(syn), np.concatenate([tr_y, y_syn])
    scores, _, _ = fit_and_score(spec.without_resampler(), model_spec, tr_frame, tr_y, frame_all.take(eval_rows),
                                 y_all[eval_rows], rng.derive("final"), tau, cost)
    return scores
