import numpy as np
import pytest

from p2prisk.errors import ValidationError
from p2prisk.rng import Rng
from p2prisk.synth import (
    RULE_RELEVANT,
    GenConfig,
    StressConfig,
    Typology,
    apply_stress,
    apply_stress_after,
    canonical_schema,
    generate_dataset,
    generate_master,
    injection_count,
    inject_typologies,
    simulate_cases,
)
from p2prisk.table import read_csv, write_csv

from conftest import golden


def _clean(n, seed=3, **kw):
    cfg = GenConfig(n_cases=n, seed=seed, **kw)
    rng = Rng(cfg.seed)
    master = generate_master(cfg, rng.derive("master"))
    return cfg, rng, simulate_cases(cfg, master, rng.derive("cases"))


def test_master_golden_single_vendor():
    cfg = GenConfig(n_vendors=1, seed=20260302)
    m = generate_master(cfg, Rng(cfg.seed).derive("master"))
    g = golden("master_one_vendor.json")
    assert list(m.vendor_id) == g["vendor_id"]
    assert m.vendor_age.tolist() == g["vendor_age"]
    assert list(m.vendor_geo) == g["vendor_geo"]
    assert m.bank_change_recent.tolist() == g["bank_change_recent"]


def test_master_seeds_differ():
    a = generate_master(GenConfig(n_vendors=100), Rng(1).derive("master"))
    b = generate_master(GenConfig(n_vendors=100), Rng(2).derive("master"))
    assert sorted(a.vendor_age.tolist()) != sorted(b.vendor_age.tolist())
    again = generate_master(GenConfig(n_vendors=100), Rng(1).derive("master"))
    assert np.array_equal(a.vendor_age, again.vendor_age)


def test_clean_cases_match():
    _, _, t = _clean(10)
    assert t.n == 10
    gr_flow = t["requires_gr"] & (t.strings("flow_type") != "consignment")
    assert np.allclose(t["po_amount"][gr_flow], t["gr_amount"][gr_flow])
    assert np.allclose(t["gr_amount"][gr_flow], t["invoice_amount"][gr_flow])
    assert not t.label.any()


def test_injection_count_rounding():
    assert injection_count(1000, 0.02) == 20
    assert injection_count(250, 0.01) == 2  # 2.5 -> 2 (half to even)
    assert injection_count(350, 0.01) == 4  # 3.5 -> 4
    with pytest.raises(ValidationError):
        injection_count(40, 0.02)


def test_injection_exact_and_local():
    cfg, rng, clean = _clean(1000, risk_rate=0.02)
    inj = inject_typologies(clean, cfg, rng.derive("inject"))
    y = inj.label.astype(bool)
    assert y.sum() == 20
    untouched = ~y
    a, b = clean.row_hashes(), inj.row_hashes()
    # rows not selected are byte-identical
    assert all(a[i] == b[i] for i in np.flatnonzero(untouched))
    assert all(a[i] != b[i] for i in np.flatnonzero(y))


def test_typology_counts_rerun_oracle():
    cfg, rng, clean = _clean(3000)
    first = inject_typologies(clean, cfg, rng.derive("inject"))
    second = inject_typologies(clean, cfg, Rng(cfg.seed).derive("inject"))
    assert first.content_hash() == second.content_hash()
    rt = first.strings("risk_type")
    counts = {t.value: int(np.sum(rt == t.value)) for t in Typology}
    assert sum(counts.values()) == 60


def test_label_field_consistency(small_data):
    t, _ = small_data
    y = t.label.astype(bool)
    rt, sid = t.missing("risk_type"), t.missing("scenario_id")
    assert not rt[y].any() and not sid[y].any()
    assert rt[~y].all() and sid[~y].all()


def test_dataset_golden_hash():
    hashes = golden("content_hashes.json")
    _, manifest = generate_dataset(GenConfig(n_cases=2000))
    assert manifest["content_hash"] == hashes["n_cases_2000"]


def test_manifest_fields(small_data):
    t, m = small_data
    assert m["n_rows"] == t.n == 2000
    assert m["n_positive"] == 40
    assert sum(m["typology_counts"].values()) == 40
    assert m["content_hash"] == t.content_hash()


def test_csv_roundtrip_generated(small_data, tmp_path):
    t, _ = small_data
    write_csv(t, tmp_path / "d.csv")
    back = read_csv(tmp_path / "d.csv", canonical_schema())
    assert back.content_hash() == t.content_hash()


def test_missing_rate_interval():
    cfg, rng, clean = _clean(10_000)
    t = inject_typologies(clean, cfg, rng.derive("inject"))
    s = apply_stress(t, StressConfig("DataQuality", missing_rate=0.15), Rng(9))
    names = [c.name for c in s.columns if c.group not in ("identifiers", "labels") and c.name != s.time_column][:10]
    assert len(names) == 10
    before = np.concatenate([t.missing(n) for n in names])
    after = np.concatenate([s.missing(n) for n in names])
    assert np.all(after[before])
    frac = np.sum(after & ~before) / np.sum(~before)
    assert 0.141 <= frac <= 0.159
    assert np.array_equal(s.label, t.label)


def test_drift_identity_and_scaling(small_data):
    t, _ = small_data
    same = apply_stress(t, StressConfig("TemporalDrift", inflation=1.0), Rng(1))
    assert same.content_hash() == t.content_hash()
    up = apply_stress(t, StressConfig("TemporalDrift", inflation=1.2), Rng(1))
    assert np.isclose(np.nanmean(up["po_amount"]), 1.2 * np.nanmean(t["po_amount"]), rtol=1e-12)
    assert np.array_equal(up.label, t.label)


def test_drift_after_only_late_rows(small_data):
    t, _ = small_data
    d = apply_stress_after(t, StressConfig("TemporalDrift", inflation=1.5), Rng(1), 0.5)
    cut = np.sort(t.times)[int(np.floor(0.5 * (t.n - 1)))]
    early = t.times < cut
    assert np.array_equal(d["po_amount"][early], t["po_amount"][early])
    assert np.allclose(d["po_amount"][~early], 1.5 * t["po_amount"][~early])


def test_typology_shift_keeps_held_out():
    held = (Typology.DUPLICATE_INVOICE.value,)
    with pytest.raises(ValidationError):
        StressConfig("TypologyShift")
    t, _ = generate_dataset(GenConfig(n_cases=2000, seed=11))
    s = apply_stress(t, StressConfig("TypologyShift", held_out_typologies=held), Rng(1))
    pos = s.label.astype(bool)
    assert set(s.strings("risk_type")[pos]) <= set(held)
    assert (~pos).sum() == (t.label == 0).sum()


def test_config_validation():
    with pytest.raises(ValidationError):
        GenConfig(risk_rate=0.0)
    with pytest.raises(ValidationError):
        GenConfig(flow_mix=(0.5, 0.5, 0.5))
    with pytest.raises(ValidationError):
        StressConfig("DataQuality", missing_rate=0.5)
    assert GenConfig.from_dict(GenConfig(n_cases=50).to_dict()) == GenConfig(n_cases=50)


def test_rule_relevant_scope():
    assert Typology.INVOICE_BEFORE_GR in RULE_RELEVANT
    assert Typology.ROUND_AMOUNT not in RULE_RELEVANT
