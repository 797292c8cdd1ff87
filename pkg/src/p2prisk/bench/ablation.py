"""The A0-A8 ablation matrix and the per-fold evaluation engine.

Every outer fold goes through the same steps:

1. optional random search over the model's space, scored by mean inner MCC;
2. the chosen pipeline + model refit on the outer-train rows;
3. optional Platt scaling fitted on the pooled inner out-of-fold predictions;
4. a decision threshold (0.5 or the cost-optimal one) and the metric bundle
   on the outer evaluation rows.

All randomness comes from streams derived from the config seed and the
(condition, model, fold) coordinates, so reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from ..errors import P2PRiskError
from ..explain import explain, explanation_sample, stability
from ..features import FeatureFrame, build_features
from ..metrics import confusion, mcc, metric_bundle, platt_apply, platt_fit, reliability
from ..models.common import logit
from ..models.registry import ModelSpec, model_to_json, train
from ..pipeline import ResamplerSpec, SelectorSpec, StageSpec, fit_transform_train, transform_eval
from ..rng import Rng
from ..splits import SplitKind, make_cv_plan, make_phts
from ..stats import compare_models
from .config import ExperimentConfig, load_dataset
from .hpo import apply_params, random_search, space_for

TIME_GROUP = SplitKind.TIME_PLUS_GROUP
HEADLINE = ("mcc", "balanced_accuracy", "auprc", "precision", "recall", "f1", "expected_cost")


@dataclass(frozen=True)
class Condition:
    """One row of the ablation matrix."""

    id: str
    strategy: SplitKind
    selector: bool
    resampler: str | None  # None | "smote" | "ctgan"
    calibrate: bool
    threshold: str  # "default" (0.5) | "cost"
    insight: str = ""

    def factors(self) -> dict:
        return {
            "split": self.strategy.value,
            "feature_selection": "mi_filter" if self.selector else "none",
            "resampling": self.resampler or "none",
            "augmentation": "none",
            "calibration": "platt" if self.calibrate else "none",
            "threshold": "cost_optimal" if self.threshold == "cost" else "0.5",
        }


# "Best" resampling/augmentation resolves to SMOTE, the only implemented resampler.
ABLATION_MATRIX = {
    "A0": Condition("A0", TIME_GROUP, False, None, False, "default", "baseline realism"),
    "A1": Condition("A1", TIME_GROUP, True, None, False, "default", "feature selection impact"),
    "A2": Condition("A2", TIME_GROUP, True, "smote", False, "default", "resampling effect"),
    "A3": Condition("A3", TIME_GROUP, True, "ctgan", False, "default", "deep augmentation effect"),
    "A4": Condition("A4", TIME_GROUP, True, "smote", True, "default", "probability quality"),
    "A5": Condition("A5", TIME_GROUP, True, "smote", True, "cost", "operational cost tradeoff"),
    "A6": Condition("A6", SplitKind.RANDOM_STRATIFIED, True, "smote", True, "cost", "optimism from random split"),
    "A7": Condition("A7", SplitKind.GROUP_ONLY, True, "smote", True, "cost", "entity leakage sensitivity"),
    "A8": Condition("A8", SplitKind.TIME_FORWARD, True, "smote", True, "cost", "temporal drift robustness"),
}


def run_condition_from_config(config: ExperimentConfig) -> Condition:
    """The single condition evaluated by ``run``: the configured pipeline as is."""
    return Condition(
        "RUN",
        config.strategy,
        config.stages.selector is not None,
        "smote" if config.stages.resampler is not None else None,
        config.calibrate,
        config.threshold,
        "configured pipeline",
    )


def stage_for(condition: Condition, base: StageSpec) -> StageSpec:
    selector = (base.selector or SelectorSpec("mi")) if condition.selector else None
    resampler = (base.resampler or ResamplerSpec()) if condition.resampler else None
    return replace(base, selector=selector, resampler=resampler)


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _clean(v):
    """JSON-safe copy: NaN/inf -> None, numpy scalars -> Python."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


@dataclass
class FoldOutcome:
    metrics: dict
    reliability: dict
    platt: tuple | None
    params: dict
    hpo: dict | None
    fingerprint: str
    proba: np.ndarray
    pipe: object
    model: object
    X_train: np.ndarray
    X_eval: np.ndarray


class Experiment:
    """A dataset, its holdout and split plans, bound to one config."""

    def __init__(self, config: ExperimentConfig, table=None, dataset_manifest=None):
        self.config = config
        if table is None:
            table, dataset_manifest = load_dataset(config)
        self.table = table
        self.dataset_manifest = dataset_manifest or {"content_hash": table.content_hash(), "n_rows": table.n}
        self.frame = build_features(table, include_ids=config.stages.include_ids)
        self.y = table.label.astype(np.int64)
        self.train_rows, self.phts_rows = make_phts(table, config.phts_fraction)
        self.root = Rng(config.seed)
        self._plans = {}

    def plan(self, kind: SplitKind):
        kind = SplitKind(kind)
        if kind not in self._plans:
            self._plans[kind] = make_cv_plan(
                self.table, kind, self.config.k_outer, self.config.k_inner,
                self.root.derive(f"plan/{kind.value}"), rows=self.train_rows, phts=self.phts_rows,
            )
        return self._plans[kind]

    # one fold -----------------------------------------------------------

    def _inner_cv(self, spec, stage, plan, outer, rng, frame, y):
        scores, oof_p, oof_y = [], [], []
        for j, (itr, iev) in enumerate(plan.inner_pairs(outer)):
            pipe, X, yy, origin = fit_transform_train(stage, frame.take(itr), rng.derive(f"inner/{j}/pipeline"), y=y[itr])
            model = train(spec, X, yy, rng.derive(f"inner/{j}/model"), groups=origin)
            p = model.predict_proba(transform_eval(pipe, frame.take(iev)))
            scores.append(mcc(confusion(y[iev], p, 0.5)))
            oof_p.append(p)
            oof_y.append(y[iev])
        return float(np.mean(scores)), (np.concatenate(oof_p), np.concatenate(oof_y))

    def fit_fold(self, condition: Condition, spec: ModelSpec, outer: int, rng: Rng,
                 frame: FeatureFrame | None = None, y=None) -> FoldOutcome:
        """Tune, fit, calibrate and score one outer fold.

        ``frame``/``y`` default to the experiment's data; the leak probe passes
        copies whose evaluation rows are poisoned.
        """
        cfg = self.config
        frame = self.frame if frame is None else frame
        y = self.y if y is None else y
        plan = self.plan(condition.strategy)
        tr, ev = plan.outer_pairs()[outer]
        stage = stage_for(condition, cfg.stages)
        hpo_log = None
        oof = None
        params = {}
        if cfg.hpo.enabled:
            space = space_for(spec, cfg.hpo.profile, stage)
            if space:
                def evaluate(p):
                    s, st = apply_params(spec, stage, p)
                    return self._inner_cv(s, st, plan, outer, rng.derive(f"hpo/{_sha(p)[:16]}"), frame, y)

                result = random_search(space, cfg.hpo.budget, evaluate, rng.derive("hpo"))
                params = result.best_params
                oof = result.best_extra
                hpo_log = result.log()
        spec_f, stage_f = apply_params(spec, stage, params)
        if condition.calibrate and oof is None:
            _, oof = self._inner_cv(spec_f, stage_f, plan, outer, rng.derive("calibration"), frame, y)
        pipe, X, yy, origin = fit_transform_train(stage_f, frame.take(tr), rng.derive("pipeline"), y=y[tr],
                                                  provenance={"fold": outer, "condition": condition.id})
        model = train(spec_f, X, yy, rng.derive("model"), groups=origin)
        X_eval = transform_eval(pipe, frame.take(ev))
        p = model.predict_proba(X_eval)
        ab = None
        if condition.calibrate:
            ab = platt_fit(logit(np.clip(oof[0], 1e-12, 1 - 1e-12)), oof[1])
            p = platt_apply(ab[0], ab[1], logit(np.clip(p, 1e-12, 1 - 1e-12)))
        tau = cfg.cost.tau if condition.threshold == "cost" else 0.5
        metrics = metric_bundle(y[ev], p, tau, cfg.cost)
        fingerprint = _sha({
            "pipeline": pipe.fingerprint(),
            "model": hashlib.sha256(model_to_json(model).encode()).hexdigest(),
            "platt": ab,
            "params": params,
            "hpo_scores": None if hpo_log is None else [t["score"] for t in hpo_log["trials"]],
        })
        return FoldOutcome(metrics, reliability(y[ev], p).to_dict(), ab, params, hpo_log, fingerprint, p, pipe, model,
                           X[: len(tr)], X_eval)

    # leak probe ----------------------------------------------------------

    def poisoned(self, rows):
        """Copy of the features/labels with ``rows`` overwritten by sentinels."""
        rows = np.asarray(rows, dtype=np.int64)
        data = []
        for kind, col in zip(self.frame.kinds, self.frame.data):
            c = col.copy()
            if kind == "num":
                c[rows] = 1e9 + rows.astype(np.float64)
            else:
                c[rows] = "__SENTINEL__"
            data.append(c)
        y = self.y.copy()
        y[rows] = 1 - y[rows]
        return FeatureFrame(self.frame.names, self.frame.kinds, tuple(data)), y

    def leak_probe(self, condition: Condition, spec: ModelSpec, outer: int = 0) -> dict:
        """Refit one fold with poisoned evaluation rows; every fitted statistic must match."""
        plan = self.plan(condition.strategy)
        _, ev = plan.outer_pairs()[outer]
        rng = self._fold_rng(condition, spec, outer)
        clean = self.fit_fold(condition, spec, outer, rng)
        frame, y = self.poisoned(ev)
        dirty = self.fit_fold(condition, spec, outer, rng, frame, y)
        return {
            "fold": outer,
            "n_poisoned": int(len(ev)),
            "fingerprint_clean": clean.fingerprint,
            "fingerprint_poisoned": dirty.fingerprint,
            "passed": clean.fingerprint == dirty.fingerprint,
        }

    # conditions -----------------------------------------------------------

    def _fold_rng(self, condition, spec, outer):
        return self.root.derive(f"cond/{condition.id}/model/{spec.label}/fold/{outer}")

    def _importance(self, outcome: FoldOutcome, rng: Rng) -> dict:
        rows = explanation_sample(len(outcome.X_eval), self.config.explain_rows, rng)
        att = explain(outcome.model, outcome.X_eval[rows], outcome.X_train)
        return dict(zip(outcome.pipe.feature_names, att.global_importance().tolist()))

    def run_condition(self, condition: Condition, with_stability: bool = False) -> dict:
        cfg = self.config
        out = {
            "id": condition.id,
            "insight": condition.insight,
            "factors": condition.factors(),
            "leaky": False,
            "status": "ok",
            "note": "",
        }
        if condition.resampler == "ctgan":
            if cfg.a3_policy == "skip":
                out.update(status="skipped", note="CTGAN augmentation is out of scope; condition skipped")
                return out
            condition = replace(condition, resampler="smote")
            out["note"] = "CTGAN augmentation is out of scope; SMOTE substituted"
            out["factors"] = {**condition.factors(), "substituted": "smote"}
        try:
            plan = self.plan(condition.strategy)
        except P2PRiskError as exc:
            out.update(status="failed", note=f"split planning failed: {exc}")
            return out
        out["plan_hash"] = plan.plan_hash()
        models = []
        per_fold_mcc = {}
        importances = {}
        for spec in cfg.models:
            entry = {"name": spec.label, "spec": spec.to_dict(), "folds": []}
            try:
                outcomes = []
                for o in range(plan.n_outer_pairs):
                    oc = self.fit_fold(condition, spec, o, self._fold_rng(condition, spec, o))
                    outcomes.append(oc)
                    ev = plan.outer_pairs()[o][1]
                    entry["folds"].append({
                        "fold": o,
                        "n_eval": int(len(ev)),
                        "n_eval_positive": int(self.y[ev].sum()),
                        "metrics": oc.metrics,
                        "calibration": None if oc.platt is None else {"A": oc.platt[0], "B": oc.platt[1]},
                        "reliability": oc.reliability,
                        "params": oc.params,
                        "hpo": oc.hpo,
                        "fingerprint": oc.fingerprint,
                    })
                if with_stability:
                    importances[spec.label] = [
                        self._importance(oc, self.root.derive(f"explain/{condition.id}/{spec.label}/{i}"))
                        for i, oc in enumerate(outcomes)
                    ]
            except (P2PRiskError, np.linalg.LinAlgError) as exc:
                entry["error"] = str(exc)
                out["status"] = "failed"
                out["note"] = (out["note"] + "; " if out["note"] else "") + f"{spec.label}: {exc}"
                models.append(entry)
                continue
            entry["summary"] = summarize(entry["folds"])
            per_fold_mcc[spec.label] = [f["metrics"]["mcc"] for f in entry["folds"]]
            models.append(entry)
        out["models"] = models
        out["comparisons"] = compare_models(per_fold_mcc, metric="mcc") if len(per_fold_mcc) > 1 else []
        if cfg.leak_probe:
            probes = []
            for spec in cfg.models:
                try:
                    probes.append({"model": spec.label, **self.leak_probe(condition, spec)})
                except (P2PRiskError, np.linalg.LinAlgError) as exc:
                    probes.append({"model": spec.label, "passed": None, "error": str(exc)})
            out["leak_probe"] = probes
            if any(p["passed"] is False for p in probes):
                msg = "leak probe detected a dependency on evaluation rows"
            elif any(p["passed"] is None for p in probes):
                msg = "leak probe could not fit the fold"
            else:
                msg = None
            if msg:
                out["status"] = "failed"
                out["note"] = (out["note"] + "; " if out["note"] else "") + msg
        if importances:
            out["stability"] = {name: stability_block(imps, cfg.stability_k) for name, imps in importances.items()}
        return out


def summarize(folds: list) -> dict:
    """Mean and sample standard deviation per headline metric."""
    out = {}
    for m in HEADLINE:
        vals = np.array([f["metrics"][m] for f in folds], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        if len(vals) == 0:
            out[m] = {"mean": None, "std": None}
            continue
        out[m] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    return out


def stability_block(fold_importances: list, k: int) -> dict:
    """Stability over the union of feature names seen in any fold."""
    names = sorted(set().union(*[set(d) for d in fold_importances]))
    M = np.array([[d.get(n, 0.0) for n in names] for d in fold_importances])
    if len(M) < 2:
        return {"k": k, "note": "fewer than two folds"}
    rep = stability(M, k)
    return rep.to_dict(names)


def run_ablation(config: ExperimentConfig, experiment: Experiment | None = None, ids=None) -> dict:
    """Run the configured conditions; SHAP stability is computed for the last one that runs."""
    exp = experiment or Experiment(config)
    ids = list(ids or config.ablations)
    runnable = [i for i in ids if not (i == "A3" and config.a3_policy == "skip")]
    final = runnable[-1] if runnable else None
    conditions = [exp.run_condition(ABLATION_MATRIX[i], with_stability=(i == final)) for i in ids]
    return assemble(exp, conditions, kind="ablation")


def run_single(config: ExperimentConfig, experiment: Experiment | None = None) -> dict:
    exp = experiment or Experiment(config)
    cond = exp.run_condition(run_condition_from_config(config), with_stability=True)
    return assemble(exp, [cond], kind="run")


def assemble(exp: Experiment, conditions: list, kind: str) -> dict:
    from .report import build_manifest

    manifest = build_manifest(exp)
    return _clean({
        "format": "p2prisk.report/1",
        "kind": kind,
        "manifest_hash": manifest["manifest_hash"],
        "manifest": manifest,
        "dataset": exp.dataset_manifest,
        "config": exp.config.to_dict(),
        "phts": {"n_rows": int(len(exp.phts_rows)), "n_positive": int(exp.y[exp.phts_rows].sum())},
        "conditions": conditions,
    })


def all_succeeded(report: dict) -> bool:
    return all(c["status"] in ("ok", "skipped") for c in report["conditions"])
