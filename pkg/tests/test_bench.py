import json

import numpy as np
import pytest

from p2prisk.bench.ablation import ABLATION_MATRIX, Experiment, all_succeeded, run_ablation, run_single, summarize
from p2prisk.bench.config import ExperimentConfig, HpoConfig
from p2prisk.bench.leak import leak_demo
from p2prisk.bench.report import emit_reports, folds_csv, report_json
from p2prisk.errors import LeakageAcknowledgementError, ValidationError
from p2prisk.splits import SplitKind

TINY = {
    "dataset": {"source": "generate", "generator": {"n_cases": 1500, "seed": 7}},
    "k_outer": 3,
    "k_inner": 2,
    "models": [{"family": "LogReg", "params": {"C": 1.0}}],
    "hpo": {"enabled": False},
    "leak_probe": True,
    "explain_rows": 100,
    "stability_k": 10,
    "seed": 3,
}


@pytest.fixture(scope="module")
def tiny_cfg():
    return ExperimentConfig.from_dict(TINY)


@pytest.fixture(scope="module")
def tiny_exp(tiny_cfg):
    return Experiment(tiny_cfg)


@pytest.fixture(scope="module")
def tiny_report(tiny_cfg, tiny_exp):
    return run_ablation(tiny_cfg, tiny_exp, ["A0", "A3", "A5", "A6"])


def test_config_roundtrip_and_hash(tiny_cfg):
    back = ExperimentConfig.from_dict(json.loads(json.dumps(tiny_cfg.to_dict())))
    assert back.config_hash() == tiny_cfg.config_hash()
    assert tiny_cfg.with_seed(4).config_hash() != tiny_cfg.config_hash()


@pytest.mark.parametrize("bad", [
    {"ablations": ["A9"]},
    {"k_outer": 1},
    {"threshold": "median"},
    {"a3_policy": "maybe"},
    {"models": []},
    {"dataset": {"source": "s3"}},
    {"colour": "blue"},
])
def test_config_errors(bad):
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({**TINY, **bad})
    with pytest.raises(ValidationError):
        HpoConfig(budget=0)


def test_ablation_matrix_factors():
    a0, a5, a6 = ABLATION_MATRIX["A0"].factors(), ABLATION_MATRIX["A5"].factors(), ABLATION_MATRIX["A6"].factors()
    assert a0 == {"split": "TimePlusGroup", "feature_selection": "none", "resampling": "none",
                  "augmentation": "none", "calibration": "none", "threshold": "0.5"}
    assert a5["calibration"] == "platt" and a5["threshold"] == "cost_optimal"
    assert a6["split"] == "RandomStratified"
    assert ABLATION_MATRIX["A8"].strategy is SplitKind.TIME_FORWARD


def test_ablation_statuses_and_probe(tiny_report):
    byid = {c["id"]: c for c in tiny_report["conditions"]}
    assert byid["A3"]["status"] == "skipped"
    for cid in ("A0", "A5", "A6"):
        assert byid[cid]["status"] == "ok", byid[cid]["note"]
        assert all(p["passed"] for p in byid[cid]["leak_probe"])
        assert len(byid[cid]["models"][0]["folds"]) == 3
    assert all_succeeded(tiny_report)
    assert "stability" in byid["A6"] and "stability" not in byid["A0"]
    assert byid["A5"]["models"][0]["folds"][0]["metrics"]["threshold"] == pytest.approx(1 / 11)
    assert byid["A0"]["models"][0]["folds"][0]["calibration"] is None


def test_ablation_deterministic(tiny_cfg, tiny_report):
    again = run_ablation(tiny_cfg, None, ["A0", "A3", "A5", "A6"])
    assert report_json(again) == report_json(tiny_report)


def test_report_files_carry_manifest_hash(tiny_report, tmp_path):
    paths = emit_reports(tiny_report, tmp_path)
    names = {p.name for p in paths}
    assert names == {"report.json", "folds.csv", "reliability.csv", "stability.csv", "summary.md", "manifest.json"}
    h = tiny_report["manifest_hash"]
    for name in ("folds.csv", "reliability.csv", "stability.csv", "summary.md"):
        assert h in (tmp_path / name).read_text().splitlines()[0]
    rows = folds_csv(tiny_report).strip().splitlines()[2:]
    assert len(rows) == 3 * 3  # three run conditions x three folds
    assert json.loads((tmp_path / "report.json").read_text())["manifest_hash"] == h


def test_a3_substitute_policy(tiny_cfg, tiny_exp):
    from dataclasses import replace

    cfg = replace(tiny_cfg, a3_policy="substitute", leak_probe=False)
    exp = Experiment(cfg, tiny_exp.table, tiny_exp.dataset_manifest)
    c = exp.run_condition(ABLATION_MATRIX["A3"])
    assert c["status"] == "ok" and c["factors"]["substituted"] == "smote"
    assert "substituted" in c["note"]


def test_failed_condition_does_not_stop_run(tiny_cfg, tiny_exp):
    from dataclasses import replace

    cfg = replace(tiny_cfg, k_outer=40, leak_probe=False)
    exp = Experiment(cfg, tiny_exp.table, tiny_exp.dataset_manifest)
    rep = run_ablation(cfg, exp, ["A8", "A3"])
    assert rep["conditions"][0]["status"] == "failed"
    assert rep["conditions"][1]["status"] == "skipped"
    assert not all_succeeded(rep)


def test_run_single_uses_configured_pipeline(tiny_cfg, tiny_exp):
    from dataclasses import replace

    cfg = replace(tiny_cfg, leak_probe=False, calibrate=False, threshold="default")
    rep = run_single(cfg, Experiment(cfg, tiny_exp.table, tiny_exp.dataset_manifest))
    (c,) = rep["conditions"]
    assert c["id"] == "RUN" and c["factors"]["resampling"] == "smote"
    assert rep["kind"] == "run"


def test_summarize_sample_std():
    folds = [{"metrics": {m: v for m in ("mcc", "balanced_accuracy", "auprc", "precision", "recall", "f1", "expected_cost")}}
             for v in (0.2, 0.4, 0.9)]
    s = summarize(folds)["mcc"]
    assert s["mean"] == pytest.approx(0.5) and s["std"] == pytest.approx(np.std([0.2, 0.4, 0.9], ddof=1))


def test_leak_demo_requires_ack_and_inflates(tiny_cfg, tiny_exp):
    with pytest.raises(LeakageAcknowledgementError):
        leak_demo(tiny_cfg)
    out = leak_demo(tiny_cfg, acknowledge_leaky=True, experiment=tiny_exp)
    assert out["leaky"] is True and out["manifest"]["leaky"] is True
    assert out["results"]["leaky"]["n_synthetic"] > 0
    assert out["inflation"]["cv_auprc"] > 0
