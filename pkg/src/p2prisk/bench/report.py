"""Run manifests and report files (JSON, CSV, markdown).

The JSON report is a pure function of (config, data); wall-clock timings live
only in ``manifest.json`` and are excluded from the manifest hash.
"""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import scipy

from .. import __version__

FOLD_COLUMNS = ("mcc", "balanced_accuracy", "auprc", "precision", "recall", "f1", "expected_cost", "threshold", "roc_auc")
SUMMARY_COLUMNS = (("mcc", "MCC"), ("balanced_accuracy", "Bal. Acc."), ("auprc", "AUPRC"), ("f1", "F1"), ("expected_cost", "Exp. Cost"))


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()).hexdigest()


def software() -> dict:
    import numba

    return {
        "p2prisk": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def build_manifest(exp, leaky: bool = False, timings: dict | None = None) -> dict:
    """Reproducibility manifest; ``manifest_hash`` covers everything except timings."""
    cfg = exp.config
    body = {
        "format": "p2prisk.manifest/1",
        "config_hash": cfg.config_hash(),
        "dataset_hash": exp.dataset_manifest.get("content_hash"),
        "seeds": {
            "global": cfg.seed,
            "generator": exp.dataset_manifest.get("seeds"),
            "plans": {k.value: p.seed for k, p in sorted(exp._plans.items(), key=lambda kv: kv[0].value)},
        },
        "plans": {k.value: p.plan_hash() for k, p in sorted(exp._plans.items(), key=lambda kv: kv[0].value)},
        "software": software(),
        "leaky": leaky,
    }
    out = {**body, "manifest_hash": _sha(body)}
    if timings is not None:
        out["timings"] = timings
    return out


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _fmt(v, digits=6):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def folds_csv(report: dict) -> str:
    """One row per (dataset, model, condition, fold)."""
    dataset = report["dataset"].get("content_hash", "")[:16]
    lines = [f"# manifest_hash={report['manifest_hash']}", "dataset,condition,model,fold," + ",".join(FOLD_COLUMNS)]
    for c in report["conditions"]:
        for m in c.get("models", []):
            for f in m["folds"]:
                vals = [_fmt(f["metrics"].get(k)) for k in FOLD_COLUMNS]
                lines.append(",".join([dataset, c["id"], m["name"], str(f["fold"])] + vals))
    return "\n".join(lines) + "\n"


def reliability_csv(report: dict) -> str:
    lines = [f"# manifest_hash={report['manifest_hash']}", "condition,model,fold,bin,lower,upper,mean_pred,frac_pos,count"]
    for c in report["conditions"]:
        for m in c.get("models", []):
            for f in m["folds"]:
                r = f["reliability"]
                for b in range(len(r["counts"])):
                    lines.append(",".join([
                        c["id"], m["name"], str(f["fold"]), str(b),
                        _fmt(r["edges"][b], 2), _fmt(r["edges"][b + 1], 2),
                        _fmt(r["mean_pred"][b]), _fmt(r["frac_pos"][b]), str(r["counts"][b]),
                    ]))
    return "\n".join(lines) + "\n"


def stability_csv(report: dict) -> str:
    lines = [f"# manifest_hash={report['manifest_hash']}", "condition,model,fold_a,fold_b,rho"]
    for c in report["conditions"]:
        for name, block in sorted(c.get("stability", {}).items()):
            rho = block.get("rho")
            if rho is None:
                continue
            for a in range(len(rho)):
                for b in range(len(rho)):
                    lines.append(f"{c['id']},{name},{a},{b},{rho[a][b]:.6f}")
    return "\n".join(lines) + "\n"


def mean_std(stat) -> str:
    if not stat or stat.get("mean") is None:
        return "n/a"
    return f"{stat['mean']:.3f} ± {stat['std']:.3f}"


def summary_markdown(report: dict) -> str:
    out = [f"<!-- manifest_hash={report['manifest_hash']} -->", f"# Benchmark report ({report['kind']})", ""]
    ds = report["dataset"]
    out.append(f"Dataset content hash `{ds.get('content_hash', '')[:16]}`, {ds.get('n_rows', '?')} rows; "
               f"holdout {report['phts']['n_rows']} rows ({report['phts']['n_positive']} positive).")
    out.append("")
    for c in report["conditions"]:
        f = c["factors"]
        out.append(f"## {c['id']}: {c['insight']}")
        out.append("")
        out.append(f"Split `{f['split']}`, selection `{f['feature_selection']}`, resampling `{f['resampling']}`, "
                   f"calibration `{f['calibration']}`, threshold `{f['threshold']}`. Status: **{c['status']}**"
                   + (f" ({c['note']})" if c.get("note") else ""))
        out.append("")
        models = [m for m in c.get("models", []) if "summary" in m]
        if models:
            out.append("| Model | " + " | ".join(h for _, h in SUMMARY_COLUMNS) + " |")
            out.append("|---|" + "---|" * len(SUMMARY_COLUMNS))
            for m in models:
                out.append(f"| {m['name']} | " + " | ".join(mean_std(m["summary"].get(k)) for k, _ in SUMMARY_COLUMNS) + " |")
            out.append("")
        if c.get("comparisons"):
            out.append("| Model A | Model B | Wilcoxon p | Holm adj. p | Cliff's δ |")
            out.append("|---|---|---|---|---|")
            for r in c["comparisons"]:
                out.append(f"| {r['model_a']} | {r['model_b']} | {r['p_one_sided']:.3f} | {r['p_holm']:.3f} | "
                           f"{r['cliffs_delta']:.2f} ({r['magnitude']}) |")
            out.append("")
        for name, block in sorted(c.get("stability", {}).items()):
            if "mean_rho" in block:
                out.append(f"SHAP stability for {name}: mean Spearman ρ (top-{block['k']}) = {block['mean_rho']:.3f}")
                out.append("")
    return "\n".join(out).rstrip() + "\n"


def emit_reports(report: dict, out_dir, manifest: dict | None = None) -> list:
    """Write every report artifact; returns the written paths."""
    if not report.get("conditions"):
        raise ValueError("report has no conditions")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.json": report_json(report),
        "folds.csv": folds_csv(report),
        "reliability.csv": reliability_csv(report),
        "stability.csv": stability_csv(report),
        "summary.md": summary_markdown(report),
        "manifest.json": json.dumps(manifest or report["manifest"], sort_keys=True, indent=2) + "\n",
    }
    written = []
    for name, text in files.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
