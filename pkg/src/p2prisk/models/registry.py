"""Model specifications, training dispatch and JSON serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import OutOfScopeError, ValidationError
from ..rng import Rng
from .ebm import EBMModel, fit_ebm
from .linear import LogRegModel, fit_logreg
from .stacking import StackingModel, fit_stacking
from .trees import TreeEnsemble, fit_decision_tree, fit_gbt, fit_random_forest

FAMILIES = ("LogReg", "DecisionTree", "RandomForest", "GBT", "EBM", "Stacking")
FORMAT = "p2prisk.model/1"

_OUT_OF_SCOPE = {"SVM", "TabNet", "FT-Transformer", "XGBoost", "LightGBM", "CatBoost"}


@dataclass(frozen=True)
class ModelSpec:
    """Model family plus hyperparameters.

    ``name`` labels the spec in reports (e.g. "GBT-leafwise").
    """

    family: str
    params: dict = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        if self.family in _OUT_OF_SCOPE:
            raise OutOfScopeError(f"model family {self.family!r} is not implemented; use GBT growth presets or the listed families")
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown model family {self.family!r}")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def label(self) -> str:
        return self.name or self.family

    def with_params(self, **kw) -> "ModelSpec":
        return ModelSpec(self.family, {**self.params, **kw}, self.name)

    def to_dict(self):
        d = {"family": self.family, "params": _jsonable(self.params)}
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        params = dict(d.get("params", {}))
        if d["family"] == "Stacking" and "bases" in params:
            params["bases"] = [b if isinstance(b, ModelSpec) else ModelSpec.from_dict(b) for b in params["bases"]]
        return cls(d["family"], params, d.get("name"))


def _jsonable(v):
    if isinstance(v, ModelSpec):
        return v.to_dict()
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def default_stacking_bases(n_estimators: int = 150) -> list:
    """Random forest plus three boosting growth policies."""
    return [
        ModelSpec("RandomForest", {"n_estimators": n_estimators, "min_samples_leaf": 2}, "RF"),
        ModelSpec("GBT", {"growth": "depthwise", "n_estimators": n_estimators, "learning_rate": 0.1}, "GBT-depthwise"),
        ModelSpec("GBT", {"growth": "leafwise", "n_estimators": n_estimators, "learning_rate": 0.1}, "GBT-leafwise"),
        ModelSpec("GBT", {"growth": "l2", "n_estimators": n_estimators, "learning_rate": 0.1}, "GBT-l2"),
    ]


def train(spec: ModelSpec, X, y, rng: Rng | None = None, groups=None):
    """Train the model described by ``spec``.

    Args:
        groups: only used by stacking to keep related rows in one OOF fold.
    """
    rng = rng or Rng(0, spec.label)
    p = dict(spec.params)
    fam = spec.family
    if fam == "LogReg":
        return fit_logreg(X, y, **p)
    if fam == "DecisionTree":
        return fit_decision_tree(X, y, rng=rng, **p)
    if fam == "RandomForest":
        return fit_random_forest(X, y, rng=rng, **p)
    if fam == "GBT":
        return fit_gbt(X, y, rng=rng, **p)
    if fam == "EBM":
        return fit_ebm(X, y, rng=rng, **p)
    bases = p.pop("bases", None) or default_stacking_bases()
    bases = [b if isinstance(b, ModelSpec) else ModelSpec.from_dict(b) for b in bases]
    return fit_stacking(X, y, bases, groups=groups, rng=rng, train_fn=train, **p)


def predict_proba(model, X) -> np.ndarray:
    return model.predict_proba(X)


def feature_importance(model, normalize: bool = True) -> np.ndarray:
    """Nonnegative per-feature scores, summing to 1 when ``normalize``."""
    imp = np.abs(np.asarray(model.feature_importance(), dtype=np.float64))
    if normalize:
        s = imp.sum()
        imp = imp / s if s > 0 else imp
    return imp


def model_to_dict(model) -> dict:
    return {"format": FORMAT, "model": model.to_dict()}


def model_to_json(model) -> str:
    return json.dumps(_jsonable(model_to_dict(model)), sort_keys=True)


def model_from_dict(d: dict):
    if d.get("format") != FORMAT:
        raise ValidationError(f"unsupported model document format {d.get('format')!r}")
    m = d["model"]
    fam = m["family"]
    if fam == "LogReg":
        return LogRegModel.from_dict(m)
    if fam in ("DecisionTree", "RandomForest", "GBT"):
        return TreeEnsemble.from_dict(m)
    if fam == "EBM":
        return EBMModel.from_dict(m)
    if fam == "Stacking":
        bases = tuple(model_from_dict({"format": FORMAT, "model": b}) for b in m["bases"])
        meta = LogRegModel.from_dict(m["meta_model"])
        fold = None if m.get("oof_fold") is None else np.asarray(m["oof_fold"])
        return StackingModel(bases, tuple(m["base_names"]), meta, int(m["n_features"]), None, fold, m.get("params", {}))
    raise ValidationError(f"unknown family {fam!r}")


def model_from_json(text: str):
    return model_from_dict(json.loads(text))
