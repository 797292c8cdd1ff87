"""Experiment configuration and dataset loading."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

from ..errors import ValidationError
from ..labels import ComplianceConfig, label_table
from ..metrics import CostModel
from ..models.registry import ModelSpec
from ..pipeline import ResamplerSpec, SelectorSpec, StageSpec
from ..splits import SplitKind
from ..synth import GenConfig, StressConfig, canonical_schema, generate_dataset
from ..table import load_schema, read_csv

ABLATION_IDS = ("A0", "A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8")
DEFAULT_SEED = 20260301


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass(frozen=True)
class HpoConfig:
    """Random-search settings; ``profile`` picks the search spaces ("full" or "desk")."""

    enabled: bool = True
    budget: int = 100
    patience: int = 50
    profile: str = "full"

    def __post_init__(self):
        if self.budget < 1:
            raise ValidationError("HPO budget must be at least 1")
        if self.profile not in ("full", "desk"):
            raise ValidationError("HPO profile must be 'full' or 'desk'")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a benchmark run depends on.

    ``dataset`` is either ``{"source": "generate", "generator": {...},
    "drift": {...}|None, "drift_start": 0.5}`` or ``{"source": "csv",
    "path": ..., "schema": ...|None, "relabel": false}``.
    """

    dataset: dict = field(default_factory=lambda: {"source": "generate", "generator": {}})
    strategy: SplitKind = SplitKind.TIME_PLUS_GROUP
    k_outer: int = 5
    k_inner: int = 3
    phts_fraction: float = 0.2
    stages: StageSpec = field(
        default_factory=lambda: StageSpec(selector=SelectorSpec("mi"), resampler=ResamplerSpec())
    )
    models: tuple = ()
    hpo: HpoConfig = HpoConfig()
    cost: CostModel = CostModel()
    calibrate: bool = True
    threshold: str = "cost"
    ablations: tuple = ABLATION_IDS
    a3_policy: str = "skip"
    leak_probe: bool = False
    explain_rows: int = 1000
    stability_k: int = 20
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        object.__setattr__(self, "strategy", SplitKind(self.strategy))
        object.__setattr__(self, "models", tuple(m if isinstance(m, ModelSpec) else ModelSpec.from_dict(m) for m in self.models))
        object.__setattr__(self, "ablations", tuple(self.ablations))
        self.validate()

    def validate(self):
        bad = [a for a in self.ablations if a not in ABLATION_IDS]
        if bad:
            raise ValidationError(f"unknown ablation ids {bad}")
        if self.k_outer < 2 or self.k_inner < 2:
            raise ValidationError("fold counts must be at least 2")
        if self.threshold not in ("default", "cost"):
            raise ValidationError("threshold must be 'default' (0.5) or 'cost'")
        if self.a3_policy not in ("skip", "substitute"):
            raise ValidationError("a3_policy must be 'skip' or 'substitute'")
        if self.dataset.get("source") not in ("generate", "csv"):
            raise ValidationError("dataset source must be 'generate' or 'csv'")
        if not self.models:
            raise ValidationError("at least one model is required")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "stages" in d and isinstance(d["stages"], dict):
            d["stages"] = StageSpec.from_dict(d["stages"])
        if "hpo" in d and isinstance(d["hpo"], dict):
            d["hpo"] = HpoConfig(**d["hpo"])
        if "cost" in d and isinstance(d["cost"], dict):
            d["cost"] = CostModel(d["cost"].get("c_fp", 1.0), d["cost"].get("c_fn", 10.0))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "strategy": self.strategy.value,
            "k_outer": self.k_outer,
            "k_inner": self.k_inner,
            "phts_fraction": self.phts_fraction,
            "stages": self.stages.to_dict(),
            "models": [m.to_dict() for m in self.models],
            "hpo": {"enabled": self.hpo.enabled, "budget": self.hpo.budget, "patience": self.hpo.patience, "profile": self.hpo.profile},
            "cost": {"c_fp": self.cost.c_fp, "c_fn": self.cost.c_fn},
            "calibrate": self.calibrate,
            "threshold": self.threshold,
            "ablations": list(self.ablations),
            "a3_policy": self.a3_policy,
            "leak_probe": self.leak_probe,
            "explain_rows": self.explain_rows,
            "stability_k": self.stability_k,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        return _hash(self.to_dict())

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))


def load_dataset(config: ExperimentConfig):
    """Materialize the configured dataset.

    Returns:
        ``(table, manifest)``; the manifest carries the content hash.
    """
    ds = config.dataset
    if ds["source"] == "generate":
        gen = GenConfig.from_dict(ds.get("generator", {}))
        drift = ds.get("drift")
        drift = StressConfig.from_dict(drift) if drift else None
        table, manifest = generate_dataset(gen, drift, ds.get("drift_start", 0.5))
        return table, {"source": "generate", **manifest}
    schema = load_schema(ds["schema"]) if ds.get("schema") else canonical_schema()
    table = read_csv(ds["path"], schema)
    if ds.get("relabel"):
        table, _ = label_table(table, ComplianceConfig.from_dict(ds.get("compliance", {})))
    if not table.has_label:
        raise ValidationError("dataset has no label column; set relabel=true to derive compliance labels")
    return table, {"source": "csv", "path": str(ds["path"]), "n_rows": table.n, "content_hash": table.content_hash()}
