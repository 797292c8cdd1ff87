"""Random-search hyperparameter optimization.

A space maps parameter names to distributions::

    {"C": {"kind": "loguniform", "low": 1e-4, "high": 1e2},
     "penalty": {"kind": "choice", "values": ["l1", "l2"]}}

Kinds: ``loguniform``, ``uniform``, ``int`` (inclusive bounds) and ``choice``.
Names prefixed with ``stage.`` tune the preprocessing chain (``stage.top_q``
sets the mutual-information filter's retained fraction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import P2PRiskError, ValidationError
from ..models.registry import ModelSpec
from ..pipeline import StageSpec
from ..rng import Rng


def loguniform(low, high):
    return {"kind": "loguniform", "low": float(low), "high": float(high)}


def uniform(low, high):
    return {"kind": "uniform", "low": float(low), "high": float(high)}


def integer(low, high):
    return {"kind": "int", "low": int(low), "high": int(high)}


def choice(values):
    return {"kind": "choice", "values": list(values)}


def fixed(value):
    return choice([value])


FULL_SPACES = {
    "LogReg": {"C": loguniform(1e-4, 1e2), "penalty": choice(["l1", "l2"])},
    "DecisionTree": {"max_depth": choice([None] + list(range(3, 31))), "min_samples_leaf": integer(1, 50)},
    "RandomForest": {
        "n_estimators": integer(200, 2000),
        "max_depth": choice([None] + list(range(3, 31))),
        "min_samples_leaf": integer(1, 20),
    },
    "GBT-depthwise": {
        "n_estimators": integer(200, 4000),
        "max_depth": integer(3, 12),
        "learning_rate": loguniform(1e-3, 0.3),
        "subsample": uniform(0.5, 1.0),
        "early_stopping": fixed(True),
    },
    "GBT-leafwise": {
        "max_leaves": integer(31, 1024),
        "learning_rate": loguniform(1e-3, 0.2),
        "min_samples_leaf": integer(5, 100),
        "n_estimators": fixed(2000),
        "early_stopping": fixed(True),
    },
    "GBT-l2": {
        "max_depth": integer(4, 12),
        "learning_rate": loguniform(1e-3, 0.3),
        "l2": uniform(1.0, 10.0),
        "n_estimators": fixed(2000),
        "early_stopping": fixed(True),
    },
    "EBM": {"max_bins": choice([64, 128, 256]), "n_interactions": integer(0, 50), "learning_rate": loguniform(1e-3, 0.1)},
    "Stacking": {},
}

# desk-scale profile: same families, narrower and cheaper ranges
DESK_SPACES = {
    "LogReg": {"C": loguniform(1e-3, 1e2), "penalty": fixed("l2")},
    "DecisionTree": {"max_depth": integer(3, 12), "min_samples_leaf": integer(1, 20)},
    "RandomForest": {"n_estimators": integer(50, 200), "max_depth": choice([None, 6, 10, 16]), "min_samples_leaf": integer(1, 10)},
    "GBT-depthwise": {"n_estimators": integer(50, 300), "max_depth": integer(3, 6), "learning_rate": loguniform(0.03, 0.3)},
    "GBT-leafwise": {"max_leaves": integer(15, 63), "learning_rate": loguniform(0.03, 0.2), "n_estimators": integer(50, 300)},
    "GBT-l2": {"max_depth": integer(3, 6), "learning_rate": loguniform(0.03, 0.3), "l2": uniform(1.0, 10.0), "n_estimators": integer(50, 300)},
    "EBM": {"max_bins": choice([64, 128, 256]), "n_interactions": integer(0, 10), "learning_rate": loguniform(0.01, 0.1)},
    "Stacking": {},
}

STAGE_SPACE = {"stage.top_q": uniform(0.2, 1.0)}


def space_key(spec: ModelSpec) -> str:
    if spec.family == "GBT":
        return "GBT-" + spec.params.get("growth", "depthwise")
    return spec.family


def space_for(spec: ModelSpec, profile: str = "full", stage: StageSpec | None = None) -> dict:
    spaces = FULL_SPACES if profile == "full" else DESK_SPACES
    space = dict(spaces.get(space_key(spec), {}))
    if stage is not None and stage.selector is not None and stage.selector.kind == "mi":
        space.update(STAGE_SPACE)
    return space


def validate_space(space: dict):
    for name, dist in space.items():
        kind = dist.get("kind")
        if kind in ("loguniform", "uniform", "int"):
            lo, hi = dist["low"], dist["high"]
            if not lo <= hi or (kind == "loguniform" and lo <= 0):
                raise ValidationError(f"invalid bounds for {name}: [{lo}, {hi}]")
        elif kind == "choice":
            if not dist.get("values"):
                raise ValidationError(f"empty choice for {name}")
        else:
            raise ValidationError(f"unknown distribution {kind!r} for {name}")


def sample_value(dist: dict, rng: Rng):
    kind = dist["kind"]
    if kind == "loguniform":
        lo, hi = math.log(dist["low"]), math.log(dist["high"])
        return float(math.exp(lo + (hi - lo) * float(rng.random())))
    if kind == "uniform":
        return float(dist["low"] + (dist["high"] - dist["low"]) * float(rng.random()))
    if kind == "int":
        return int(rng.integers(dist["low"], dist["high"] + 1))
    values = dist["values"]
    return values[int(rng.integers(0, len(values)))]


def sample_params(space: dict, rng: Rng) -> dict:
    """One draw; every parameter uses its own derived stream (order-free)."""
    return {name: sample_value(space[name], rng.derive(name)) for name in sorted(space)}


def apply_params(spec: ModelSpec, stage: StageSpec | None, params: dict):
    model_params = {k: v for k, v in params.items() if not k.startswith("stage.")}
    spec = spec.with_params(**model_params) if model_params else spec
    if stage is not None and "stage.top_q" in params and stage.selector is not None:
        stage = replace(stage, selector=replace(stage.selector, top_q=float(params["stage.top_q"])))
    return spec, stage


@dataclass
class SearchResult:
    best_params: dict
    best_score: float
    best_index: int
    best_extra: object = None
    trials: list = field(default_factory=list)
    aborted: list = field(default_factory=list)

    def log(self) -> dict:
        return {
            "best_params": self.best_params,
            "best_score": self.best_score,
            "best_trial": self.best_index,
            "n_trials": len(self.trials),
            "n_aborted": len(self.aborted),
            "trials": self.trials,
            "aborted": self.aborted,
        }


def random_search(space: dict, budget: int, evaluate, rng: Rng) -> SearchResult:
    """Evaluate ``budget`` random draws; keep the best mean score.

    Args:
        evaluate: ``params -> (score, extra)``; raising a library error marks
            the trial as aborted.

    Ties keep the earlier trial.  Raises ValidationError (quoting the first error)
    when every trial aborted.
    """
    validate_space(space)
    if budget < 1:
        raise ValidationError("budget must be at least 1")
    best = None
    trials, aborted = [], []
    for t in range(budget):
        params = sample_params(space, rng.derive(f"trial/{t}"))
        try:
            score, extra = evaluate(params)
        except (P2PRiskError, np.linalg.LinAlgError) as exc:
            aborted.append({"trial": t, "params": params, "error": str(exc)})
            continue
        score = float(score)
        trials.append({"trial": t, "params": params, "score": score})
        if best is None or score > best[0]:
            best = (score, t, params, extra)
    if best is None:
        raise ValidationError(f"all {budget} HPO trials failed; first error: {aborted[0]['error']}")
    return SearchResult(best[2], best[0], best[1], best[3], trials, aborted)
