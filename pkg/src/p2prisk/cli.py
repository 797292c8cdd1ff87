"""Command line entry point: ``p2prisk <command>``."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from . import __version__
from .errors import P2PRiskError


def _load_json(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(obj, path):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path is None:
        click.echo(text, nl=False)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _fail(exc: Exception):
    click.echo(f"error: {exc}", err=True)
    sys.exit(2)


@click.group()
@click.version_option(__version__, prog_name="p2prisk")
def main():
    """Leakage-safe benchmark engine for procure-to-pay risk detection."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Generator config JSON.")
@click.option("--seed", type=int, default=None, help="Override the generator seed.")
@click.option("--n-cases", type=int, default=None, help="Override the number of cases.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True, help="Output CSV path.")
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), default=None, help="Manifest JSON path.")
def generate(config_path, seed, n_cases, out_path, manifest_path):
    """Generate a synthetic case table with injected typologies."""
    from .synth import GenConfig, StressConfig, generate_dataset
    from .table import write_csv

    try:
        raw = _load_json(config_path)
        drift = raw.pop("drift", None)
        drift_start = raw.pop("drift_start", 0.5)
        if seed is not None:
            raw["seed"] = seed
        if n_cases is not None:
            raw["n_cases"] = n_cases
        table, manifest = generate_dataset(GenConfig.from_dict(raw), StressConfig.from_dict(drift) if drift else None, drift_start)
        write_csv(table, out_path)
    except (P2PRiskError, TypeError) as exc:
        _fail(exc)
    _write_json(manifest, manifest_path or str(Path(out_path).with_suffix(".manifest.json")))
    click.echo(f"wrote {table.n} rows ({manifest['n_positive']} positive) to {out_path}; content hash {manifest['content_hash'][:16]}")


@main.command()
@click.option("--input", "in_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Compliance rule config JSON.")
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False), default=None)
def label(in_path, out_path, config_path, schema_path):
    """Derive y_risk from the compliance rules."""
    from .labels import ComplianceConfig, label_table
    from .synth import canonical_schema
    from .table import load_schema, read_csv, write_csv

    try:
        schema = load_schema(schema_path) if schema_path else canonical_schema()
        table = read_csv(in_path, schema)
        labeled, summary = label_table(table, ComplianceConfig.from_dict(_load_json(config_path)))
        write_csv(labeled, out_path)
    except P2PRiskError as exc:
        _fail(exc)
    click.echo(json.dumps(summary, sort_keys=True))


@main.command()
@click.option("--input", "in_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--strategy", type=click.Choice(["RandomStratified", "TimeForward", "TimePlusGroup", "GroupOnly"]), default="TimePlusGroup")
@click.option("--k-outer", type=int, default=5)
@click.option("--k-inner", type=int, default=3)
@click.option("--phts-fraction", type=float, default=0.2)
@click.option("--seed", type=int, default=20260301)
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def split(in_path, strategy, k_outer, k_inner, phts_fraction, seed, schema_path, out_path):
    """Carve the holdout and write a nested CV plan."""
    from .rng import Rng
    from .splits import make_cv_plan, make_phts
    from .synth import canonical_schema
    from .table import load_schema, read_csv

    try:
        table = read_csv(in_path, load_schema(schema_path) if schema_path else canonical_schema())
        tr, ph = make_phts(table, phts_fraction)
        plan = make_cv_plan(table, strategy, k_outer, k_inner, Rng(seed).derive(f"plan/{strategy}"), rows=tr, phts=ph)
        problems = plan.validate(table)
    except P2PRiskError as exc:
        _fail(exc)
    Path(out_path).write_text(plan.to_json() + "\n", encoding="utf-8")
    click.echo(f"plan {plan.plan_hash()[:16]}: {len(plan.outer_folds)} outer folds, holdout {len(ph)} rows")
    if problems:
        for p in problems:
            click.echo(f"problem: {p}", err=True)
        sys.exit(1)


def _experiment_config(config_path, seed):
    from .bench.config import ExperimentConfig

    cfg = ExperimentConfig.load(config_path)
    return cfg.with_seed(seed) if seed is not None else cfg


def _emit(report, out_dir, exp, started):
    from .bench.report import build_manifest, emit_reports

    manifest = build_manifest(exp, timings={"total_seconds": round(time.perf_counter() - started, 3)})
    paths = emit_reports(report, out_dir, manifest)
    click.echo(f"wrote {len(paths)} files to {out_dir}; manifest {report['manifest_hash'][:16]}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override the global seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def run(config_path, seed, out_dir):
    """Evaluate the configured pipeline and models once."""
    from .bench.ablation import Experiment, all_succeeded, run_single

    started = time.perf_counter()
    try:
        cfg = _experiment_config(config_path, seed)
        exp = Experiment(cfg)
        report = run_single(cfg, exp)
    except P2PRiskError as exc:
        _fail(exc)
    _emit(report, out_dir, exp, started)
    sys.exit(0 if all_succeeded(report) else 1)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override the global seed.")
@click.option("--only", default=None, help="Comma-separated subset of ablation ids.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def ablate(config_path, seed, only, out_dir):
    """Run the A0-A8 ablation matrix."""
    from .bench.ablation import Experiment, all_succeeded, run_ablation

    started = time.perf_counter()
    try:
        cfg = _experiment_config(config_path, seed)
        ids = [s.strip() for s in only.split(",")] if only else None
        exp = Experiment(cfg)
        report = run_ablation(cfg, exp, ids)
    except (P2PRiskError, KeyError) as exc:
        _fail(exc)
    _emit(report, out_dir, exp, started)
    for c in report["conditions"]:
        click.echo(f"{c['id']}: {c['status']}" + (f" ({c['note']})" if c.get("note") else ""))
    sys.exit(0 if all_succeeded(report) else 1)


@main.command()
@click.option("--input", "in_path", type=click.Path(exists=True, dir_okay=False), required=True, help="report.json")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def report(in_path, out_dir):
    """Re-emit CSV and markdown tables from a JSON report."""
    from .bench.report import emit_reports, load_report

    rep = load_report(in_path)
    paths = emit_reports(rep, out_dir)
    click.echo(f"wrote {len(paths)} files to {out_dir}")


@main.command("leak-demo")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--acknowledge-leaky", is_flag=True, default=False, help="Required: this command runs a leaky pipeline.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def leak_demo_cmd(config_path, seed, acknowledge_leaky, out_path):
    """Compare SMOTE before splitting (leaky) with SMOTE inside folds."""
    from .bench.leak import leak_demo

    if not acknowledge_leaky:
        _fail("leak-demo runs a deliberately leaky pipeline; pass --acknowledge-leaky")
    try:
        cfg = _experiment_config(config_path, seed)
        result = leak_demo(cfg, acknowledge_leaky=True)
    except P2PRiskError as exc:
        _fail(exc)
    _write_json(result, out_path)
    inf = result["inflation"]
    click.echo(f"leaky - safe CV AUPRC = {inf['cv_auprc']:.3f}; optimism excess = {inf['optimism_excess']:.3f}", err=out_path is None)


if __name__ == "__main__":
    main()
