"""Side-by-side demonstration of resampling before vs inside the folds."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..errors import LeakageAcknowledgementError
from ..features import build_features
from ..pipeline import ResamplerSpec, fit_and_score, leaky_final_fit, run_leaky_variant, run_safe_variant
from .ablation import Experiment, _clean
from .config import ExperimentConfig
from .report import build_manifest


def leak_demo(config: ExperimentConfig, acknowledge_leaky: bool = False, experiment: Experiment | None = None,
              model_index: int = 0) -> dict:
    """CV and holdout AUPRC of the leaky and the leakage-safe path.

    Both paths share the plan, the model spec and the rng streams; only the
    point at which SMOTE runs differs.  The holdout (PHTS) is scored by a
    final fit on all planning rows, so the gap between CV and holdout shows
    how optimistic each CV estimate is.
    """
    if not acknowledge_leaky:
        raise LeakageAcknowledgementError("leak-demo runs the leaky variant; pass --acknowledge-leaky")
    exp = experiment or Experiment(config)
    stage = config.stages if config.stages.resampler is not None else replace(config.stages, resampler=ResamplerSpec())
    spec = config.models[model_index]
    plan = exp.plan(config.strategy)
    rng = exp.root.derive("leak-demo")
    tau = 0.5
    leaky = run_leaky_variant(stage, exp.table, plan, spec, rng.derive("cv"), acknowledge_leaky=True, tau=tau, cost=config.cost)
    safe = run_safe_variant(stage, exp.table, plan, spec, rng.derive("cv"), tau=tau, cost=config.cost)
    frame = build_features(exp.table, include_ids=stage.include_ids)
    y = exp.y
    tr, ph = exp.train_rows, exp.phts_rows
    safe_phts, _, _ = fit_and_score(stage, spec, frame.take(tr), y[tr], frame.take(ph), y[ph], rng.derive("final"), tau, config.cost)
    leaky_phts = leaky_final_fit(stage, exp.table, tr, ph, spec, rng.derive("final"), acknowledge_leaky=True, tau=tau, cost=config.cost)
    leaky["phts"] = leaky_phts
    safe["phts"] = safe_phts
    gap_leaky = leaky["mean"]["auprc"] - leaky_phts["auprc"]
    gap_safe = safe["mean"]["auprc"] - safe_phts["auprc"]
    manifest = build_manifest(exp, leaky=True)
    return _clean({
        "format": "p2prisk.leakdemo/1",
        "manifest_hash": manifest["manifest_hash"],
        "manifest": manifest,
        "leaky": True,
        "model": spec.to_dict(),
        "stages": stage.to_dict(),
        "strategy": plan.kind.value,
        "results": {"leaky": leaky, "safe": safe},
        "inflation": {
            "cv_auprc": float(leaky["mean"]["auprc"] - safe["mean"]["auprc"]),
            "cv_minus_phts_leaky": float(gap_leaky),
            "cv_minus_phts_safe": float(gap_safe),
            "optimism_excess": float(gap_leaky - gap_safe),
        },
        "dataset": exp.dataset_manifest,
        "n_phts_positive": int(np.sum(y[ph])),
    })
