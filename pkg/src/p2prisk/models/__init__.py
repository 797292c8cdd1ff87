"""Native model suite: logistic regression, trees, boosting, EBM, stacking."""

from .ebm import EBMModel, fit_ebm
from .linear import LogRegModel, fit_logreg
from .registry import (
    FAMILIES,
    ModelSpec,
    default_stacking_bases,
    feature_importance,
    model_from_json,
    model_to_json,
    predict_proba,
    train,
)
from .stacking import StackingModel, fit_stacking
from .trees import GBT_PRESETS, Tree, TreeEnsemble, fit_decision_tree, fit_gbt, fit_random_forest

__all__ = [
    "EBMModel",
    "FAMILIES",
    "GBT_PRESETS",
    "LogRegModel",
    "ModelSpec",
    "StackingModel",
    "Tree",
    "TreeEnsemble",
    "default_stacking_bases",
    "feature_importance",
    "fit_decision_tree",
    "fit_ebm",
    "fit_gbt",
    "fit_logreg",
    "fit_random_forest",
    "fit_stacking",
    "model_from_json",
    "model_to_json",
    "predict_proba",
    "train",
]
