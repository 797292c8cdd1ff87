"""Synthetic procure-to-pay cases with injected risk typologies.

Generation runs in three stages, each driven by its own derived random
stream so that changing one stage never perturbs another:

1. :func:`generate_master` samples vendors, users and company codes.
2. :func:`simulate_cases` produces clean P2P cases in the canonical schema.
3. :func:`inject_typologies` rewrites a controlled fraction of cases into one
   of six risk patterns and labels them.

:func:`apply_stress` builds the stress scenarios (typology shift, data
quality, temporal drift) that are only ever used for testing.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone

import numpy as np

from .errors import ValidationError
from .rng import Rng
from .table import LABEL_COLUMN, CaseTable, Column, ColumnKind, concat

DAY = 86400

REGIONS = ("EMEA-North", "EMEA-South", "NA-East", "NA-West", "LATAM", "APAC-North", "APAC-South", "MEA")
ROLES = ("buyer", "requisitioner", "approver", "ap_clerk", "controller")
_ROLE_WEIGHTS = (0.35, 0.25, 0.15, 0.15, 0.10)
_ROLE_OVERRIDE = (0.02, 0.01, 0.05, 0.03, 0.04)
FLOW_TYPES = ("three_way", "two_way", "consignment")

MONETARY = ("po_amount", "gr_amount", "invoice_amount", "paid_amount")


class Typology(str, enum.Enum):
    DUPLICATE_INVOICE = "DuplicateInvoice"
    SPLIT_PURCHASE = "SplitPurchase"
    VENDOR_BANK_CHANGE = "VendorBankChange"
    INVOICE_BEFORE_GR = "InvoiceBeforeGR"
    ROUND_AMOUNT = "RoundAmount"
    EXCESSIVE_REWORK = "ExcessiveRework"


TYPOLOGIES = tuple(Typology)

# Typologies whose footprint violates a compliance matching rule.
RULE_RELEVANT = frozenset({Typology.DUPLICATE_INVOICE, Typology.INVOICE_BEFORE_GR})

# (name, kind, field group) in canonical order
CANONICAL_FIELDS = (
    ("case_id", ColumnKind.IDENTIFIER, "identifiers"),
    ("doc_id", ColumnKind.IDENTIFIER, "identifiers"),
    ("vendor_id", ColumnKind.CATEGORICAL, "identifiers"),
    ("company_id", ColumnKind.CATEGORICAL, "identifiers"),
    ("user_id", ColumnKind.CATEGORICAL, "identifiers"),
    ("po_amount", ColumnKind.NUMERIC, "monetary"),
    ("gr_amount", ColumnKind.NUMERIC, "monetary"),
    ("invoice_amount", ColumnKind.NUMERIC, "monetary"),
    ("paid_amount", ColumnKind.NUMERIC, "monetary"),
    ("doc_date", ColumnKind.DATETIME, "dates"),
    ("gr_date", ColumnKind.DATETIME, "dates"),
    ("invoice_date", ColumnKind.DATETIME, "dates"),
    ("payment_date", ColumnKind.DATETIME, "dates"),
    ("flow_type", ColumnKind.CATEGORICAL, "matching_flags"),
    ("requires_gr", ColumnKind.BOOLEAN, "matching_flags"),
    ("gr_based_iv", ColumnKind.BOOLEAN, "matching_flags"),
    ("invoice_blocked", ColumnKind.BOOLEAN, "matching_flags"),
    ("n_goods_receipts", ColumnKind.NUMERIC, "process"),
    ("n_rework", ColumnKind.NUMERIC, "process"),
    ("cycle_time_days", ColumnKind.NUMERIC, "process"),
    ("n_invoices", ColumnKind.NUMERIC, "process"),
    ("invoice_gap_days", ColumnKind.NUMERIC, "process"),
    ("split_count", ColumnKind.NUMERIC, "process"),
    ("max_subamount", ColumnKind.NUMERIC, "process"),
    ("vendor_age", ColumnKind.NUMERIC, "counterparty"),
    ("vendor_geo", ColumnKind.CATEGORICAL, "counterparty"),
    ("bank_change_recent", ColumnKind.BOOLEAN, "counterparty"),
    ("actor_role", ColumnKind.CATEGORICAL, "user"),
    ("actor_tenure", ColumnKind.NUMERIC, "user"),
    ("override_rate", ColumnKind.NUMERIC, "user"),
    (LABEL_COLUMN, ColumnKind.BOOLEAN, "labels"),
    ("risk_type", ColumnKind.CATEGORICAL, "labels"),
    ("scenario_id", ColumnKind.CATEGORICAL, "labels"),
)
GROUP_KEYS = ("vendor_id", "doc_id")
TIME_COLUMN = "doc_date"


def canonical_schema() -> dict:
    return {
        "fields": [{"name": n, "kind": k.value, "group": g} for n, k, g in CANONICAL_FIELDS],
        "group_keys": list(GROUP_KEYS),
        "time_column": TIME_COLUMN,
    }


@dataclass(frozen=True)
class GenConfig:
    """Generator configuration.

    ``dup_rate`` is the share of duplicate-invoice injections that are exact
    copies (same amount, same day); the rest are near duplicates.
    ``vendor_risk_concentration`` is the share of injection weight placed on
    a small set of risky vendors (0 = uniform over cases).
    """

    n_cases: int = 20_000
    risk_rate: float = 0.02
    n_vendors: int = 400
    n_users: int = 120
    n_company_codes: int = 4
    amount_mu: float = 7.5
    amount_sigma: float = 1.2
    approval_threshold: float = 10_000.0
    dup_rate: float = 0.5
    typology_mix: tuple = (1 / 6,) * 6
    flow_mix: tuple = (0.70, 0.25, 0.05)
    start: str = "2019-01-01"
    span_days: int = 365
    vendor_risk_concentration: float = 0.0
    risky_vendor_fraction: float = 0.05
    legit_bank_change_rate: float = 0.015
    legit_multi_invoice_rate: float = 0.03
    legit_split_rate: float = 0.05
    legit_round_rate: float = 0.03
    rework_rate: float = 0.15
    seed: int = 20260302

    def __post_init__(self):
        object.__setattr__(self, "typology_mix", tuple(float(x) for x in self.typology_mix))
        object.__setattr__(self, "flow_mix", tuple(float(x) for x in self.flow_mix))
        self.validate()

    def validate(self):
        if min(self.n_cases, self.n_vendors, self.n_users, self.n_company_codes) <= 0:
            raise ValidationError("counts must be positive")
        if not 0 < self.risk_rate < 0.5:
            raise ValidationError("risk_rate must lie in (0, 0.5)")
        if self.approval_threshold <= 0:
            raise ValidationError("approval threshold must be positive")
        for name, mix, size in (("typology_mix", self.typology_mix, 6), ("flow_mix", self.flow_mix, 3)):
            if len(mix) != size or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
                raise ValidationError(f"{name} must be {size} nonnegative weights summing to 1")
        if not 0 <= self.vendor_risk_concentration <= 1 or not 0 < self.risky_vendor_fraction <= 1:
            raise ValidationError("vendor risk clustering parameters out of range")
        if not 0 <= self.dup_rate <= 1:
            raise ValidationError("dup_rate must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        mix = d.get("typology_mix")
        if isinstance(mix, dict):
            d["typology_mix"] = tuple(float(mix.get(t.value, 0.0)) for t in TYPOLOGIES)
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["typology_mix"] = {t.value: w for t, w in zip(TYPOLOGIES, self.typology_mix)}
        d["flow_mix"] = list(self.flow_mix)
        return d

    def config_hash(self) -> str:
        return _hash_json(self.to_dict())

    @property
    def start_epoch(self) -> int:
        return int(datetime.fromisoformat(self.start).replace(tzinfo=timezone.utc).timestamp())


class StressKind(str, enum.Enum):
    TYPOLOGY_SHIFT = "TypologyShift"
    DATA_QUALITY = "DataQuality"
    TEMPORAL_DRIFT = "TemporalDrift"


@dataclass(frozen=True)
class StressConfig:
    kind: StressKind
    held_out_typologies: tuple = ()
    missing_rate: float = 0.15
    unseen_vendor_rate: float = 0.0
    inflation: float = 1.0
    churn: float = 0.0
    seed: int = 20260303

    def __post_init__(self):
        object.__setattr__(self, "kind", StressKind(self.kind))
        object.__setattr__(self, "held_out_typologies", tuple(Typology(t) for t in self.held_out_typologies))
        if self.kind is StressKind.TYPOLOGY_SHIFT and not self.held_out_typologies:
            raise ValidationError("typology shift needs at least one held-out typology")
        if self.kind is StressKind.DATA_QUALITY and not 0.05 <= self.missing_rate <= 0.30:
            raise ValidationError("missing rate must lie in [0.05, 0.30]")
        if not 0 <= self.unseen_vendor_rate <= 1:
            raise ValidationError("unseen_vendor_rate must lie in [0, 1]")
        if self.inflation <= 0:
            raise ValidationError("inflation must be positive")
        if not 0 <= self.churn <= 1:
            raise ValidationError("churn must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "StressConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "held_out_typologies": [t.value for t in self.held_out_typologies],
            "missing_rate": self.missing_rate,
            "unseen_vendor_rate": self.unseen_vendor_rate,
            "inflation": self.inflation,
            "churn": self.churn,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class MasterData:
    vendor_id: np.ndarray
    vendor_age: np.ndarray
    vendor_geo: np.ndarray
    bank_change_recent: np.ndarray
    vendor_weight: np.ndarray
    user_id: np.ndarray
    actor_role: np.ndarray
    actor_tenure: np.ndarray
    override_rate: np.ndarray
    user_weight: np.ndarray
    company_id: np.ndarray


def _hash_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _strings(values) -> np.ndarray:
    values = list(values)
    out = np.empty(len(values), dtype=object)
    out[:] = values
    return out


def generate_master(config: GenConfig, rng: Rng) -> MasterData:
    """Sample vendor, user and org-unit master data."""
    nv, nu = config.n_vendors, config.n_users
    vr = rng.derive("vendors")
    vendor_age = np.round(vr.derive("age").uniform(0.0, 30.0, nv), 2)
    geo = vr.derive("geo").choice(len(REGIONS), nv)
    vendor_weight = np.round(vr.derive("activity").lognormal(0.0, 0.8, nv), 6)
    ur = rng.derive("users")
    role = ur.derive("role").choice(len(ROLES), nu, p=np.array(_ROLE_WEIGHTS))
    tenure = np.round(np.minimum(ur.derive("tenure").exponential(6.0, nu), 40.0), 2)
    base = np.array(_ROLE_OVERRIDE)[role]
    override = np.round(np.clip(base * ur.derive("override").lognormal(0.0, 0.5, nu), 0.0, 1.0), 4)
    user_weight = np.round(ur.derive("activity").lognormal(0.0, 0.5, nu), 6)
    return MasterData(
        vendor_id=_strings(f"V{i + 1:05d}" for i in range(nv)),
        vendor_age=vendor_age,
        vendor_geo=_strings(REGIONS[g] for g in geo),
        bank_change_recent=np.zeros(nv, dtype=bool),
        vendor_weight=vendor_weight,
        user_id=_strings(f"U{i + 1:04d}" for i in range(nu)),
        actor_role=_strings(ROLES[r] for r in role),
        actor_tenure=tenure,
        override_rate=override,
        user_weight=user_weight,
        company_id=_strings(f"C{i + 1:02d}" for i in range(config.n_company_codes)),
    )


def _build_table(data: dict) -> CaseTable:
    cols = []
    for name, kind, group in CANONICAL_FIELDS:
        spec = data[name]
        if isinstance(spec, Column):
            cols.append(spec)
            continue
        vals, mask = spec if isinstance(spec, tuple) else (spec, None)
        cols.append(Column.build(name, kind, vals, mask=mask, group=group))
    return CaseTable(tuple(cols), GROUP_KEYS, TIME_COLUMN)


def simulate_cases(config: GenConfig, master: MasterData, rng: Rng) -> CaseTable:
    """Simulate clean P2P cases; every label is 0."""
    n = config.n_cases
    if len(master.vendor_id) == 0 or len(master.user_id) == 0:
        raise ValidationError("master tables must be nonempty")
    start = config.start_epoch
    doc = start + np.floor(rng.derive("doc_date").uniform(0.0, config.span_days * DAY, n)).astype(np.int64)
    doc = np.sort(doc, kind="stable")

    v = rng.derive("vendor").choice(len(master.vendor_id), n, p=master.vendor_weight)
    u = rng.derive("user").choice(len(master.user_id), n, p=master.user_weight)
    c = rng.derive("company").choice(len(master.company_id), n)

    po = np.maximum(np.round(rng.derive("amount").lognormal(config.amount_mu, config.amount_sigma, n), 2), 1.0)
    round_legit = (po >= 5000) & rng.derive("legit_round").bernoulli(config.legit_round_rate, n)
    po = np.where(round_legit, np.round(po / 1000.0) * 1000.0, po)

    flow = rng.derive("flow").choice(3, n, p=np.array(config.flow_mix))
    three, consign = flow == 0, flow == 2
    requires_gr = three | consign
    gr_based_iv = three & rng.derive("gr_based_iv").bernoulli(0.8, n)
    blocked = ~consign & rng.derive("blocked").bernoulli(0.08, n)

    lag_gr = np.floor((1.0 + rng.derive("lag_gr").exponential(6.0, n)) * DAY).astype(np.int64)
    lag_inv = np.floor((0.5 + rng.derive("lag_inv").exponential(4.0, n)) * DAY).astype(np.int64)
    terms = np.array([14, 30, 45, 60])[rng.derive("terms").choice(4, n)]
    jitter = rng.derive("pay_jitter").uniform(-3.0, 3.0, n)
    block_delay = np.where(blocked, rng.derive("block_delay").exponential(10.0, n), 0.0)
    lag_pay = np.floor(np.maximum(terms + jitter + block_delay, 1.0) * DAY).astype(np.int64)
    gr = doc + lag_gr
    inv_date = gr + lag_inv
    pay = inv_date + lag_pay

    inv = np.where(consign, 0.0, po)
    n_gr = np.array([1.0, 2.0, 3.0])[rng.derive("n_gr").choice(3, n, p=np.array([0.85, 0.12, 0.03]))]
    n_rework = rng.derive("rework").bernoulli(config.rework_rate, n).astype(np.float64)

    multi_inv = ~consign & rng.derive("multi_invoice").bernoulli(config.legit_multi_invoice_rate, n)
    n_inv = np.where(multi_inv, 2.0, 1.0)
    inv_gap = np.where(multi_inv, np.round(rng.derive("invoice_gap").uniform(10.0, 40.0, n), 2), 0.0)

    split_legit = rng.derive("legit_split").bernoulli(config.legit_split_rate, n)
    k = rng.derive("legit_split_k").integers(2, 5, n)
    share = rng.derive("legit_split_share").exponential(1.0, (n * 4))
    share = share.reshape(n, 4)
    share = np.where(np.arange(4)[None, :] < k[:, None], share, 0.0)
    max_share = share.max(axis=1) / share.sum(axis=1)
    split_count = np.where(split_legit, k, 1).astype(np.float64)
    max_sub = np.where(split_legit, np.round(po * max_share, 2), po)

    bank = rng.derive("legit_bank_change").bernoulli(config.legit_bank_change_rate, n)
    cycle = (pay - doc) / DAY

    ids = np.arange(n)
    data = {
        "case_id": _strings(f"CASE{i:07d}" for i in ids),
        "doc_id": _strings(f"PO{4500000000 + i}" for i in ids),
        "vendor_id": master.vendor_id[v],
        "company_id": master.company_id[c],
        "user_id": master.user_id[u],
        "po_amount": po,
        "gr_amount": po.copy(),
        "invoice_amount": inv,
        "paid_amount": inv.copy(),
        "doc_date": doc,
        "gr_date": gr,
        "invoice_date": inv_date,
        "payment_date": pay,
        "flow_type": _strings(FLOW_TYPES[f] for f in flow),
        "requires_gr": requires_gr,
        "gr_based_iv": gr_based_iv,
        "invoice_blocked": blocked,
        "n_goods_receipts": n_gr,
        "n_rework": n_rework,
        "cycle_time_days": cycle,
        "n_invoices": n_inv,
        "invoice_gap_days": inv_gap,
        "split_count": split_count,
        "max_subamount": max_sub,
        "vendor_age": master.vendor_age[v],
        "vendor_geo": master.vendor_geo[v],
        "bank_change_recent": bank | master.bank_change_recent[v],
        "actor_role": master.actor_role[u],
        "actor_tenure": master.actor_tenure[u],
        "override_rate": master.override_rate[u],
        LABEL_COLUMN: np.zeros(n, dtype=bool),
        "risk_type": (np.full(n, None, dtype=object), np.ones(n, dtype=bool)),
        "scenario_id": (np.full(n, None, dtype=object), np.ones(n, dtype=bool)),
    }
    return _build_table(data)


def injection_count(n_cases: int, risk_rate: float) -> int:
    """Round-half-to-even of ``n_cases * risk_rate``."""
    budget = n_cases * risk_rate
    if budget < 1:
        raise ValidationError(f"risk_rate * n_cases = {budget:.3g} < 1: no injectable budget")
    return int(np.round(budget))


def risky_vendors(table: CaseTable, config: GenConfig, rng: Rng) -> np.ndarray:
    """Vendor codes that attract clustered risk (sorted)."""
    col = table.col("vendor_id")
    n_v = len(col.categories)
    k = max(1, int(round(config.risky_vendor_fraction * n_v)))
    order = sorted(range(n_v), key=lambda i: col.categories[i])
    picked = rng.derive("risky_vendors").choice(n_v, k, replace=False)
    return np.sort(np.array([order[i] for i in picked], dtype=np.int64))


def inject_typologies(table: CaseTable, config: GenConfig, rng: Rng) -> CaseTable:
    """Rewrite a controlled set of clean cases into risk typologies.

    Exactly ``round(n * risk_rate)`` rows (half-to-even) are selected without
    replacement; every other row is left untouched.
    """
    n = table.n
    if table.label.any():
        raise ValidationError("inject_typologies expects an all-clean table")
    n_inject = injection_count(n, config.risk_rate)

    weights = np.full(n, 1.0 / n)
    if config.vendor_risk_concentration > 0:
        risky = np.isin(table["vendor_id"], risky_vendors(table, config, rng))
        if risky.any():
            c = config.vendor_risk_concentration
            weights = (1 - c) / n + c * risky / risky.sum()
    rows = np.sort(rng.derive("select").choice(n, n_inject, p=weights, replace=False))
    typ = rng.derive("typology").choice(6, n_inject, p=np.array(config.typology_mix))

    po = table["po_amount"].copy()
    gr_amt = table["gr_amount"].copy()
    inv = table["invoice_amount"].copy()
    paid = table["paid_amount"].copy()
    gr_date = table["gr_date"].copy()
    pay = table["payment_date"]
    flow = table.strings("flow_type").copy()
    requires_gr = table["requires_gr"].copy()
    gr_based_iv = table["gr_based_iv"].copy()
    n_inv = table["n_invoices"].copy()
    inv_gap = table["invoice_gap_days"].copy()
    split_count = table["split_count"].copy()
    max_sub = table["max_subamount"].copy()
    bank = table["bank_change_recent"].copy()
    n_rework = table["n_rework"].copy()
    consign = flow == "consignment"

    def pick(t: Typology):
        return rows[typ == TYPOLOGIES.index(t)]

    # duplicate invoice: a second invoice of (nearly) the same amount
    r = pick(Typology.DUPLICATE_INVOICE)
    sub = rng.derive(Typology.DUPLICATE_INVOICE.value)
    exact = sub.derive("exact").bernoulli(config.dup_rate, len(r))
    delta = np.where(exact, 0.0, sub.derive("delta").uniform(-0.0049, 0.0049, len(r)))
    gap = np.where(exact, 0.0, np.round(sub.derive("gap").uniform(0.0, 3.0, len(r)), 2))
    first = np.where(consign[r], po[r], inv[r])
    inv[r] = np.round(first + first * (1.0 + delta), 2)
    paid[r] = inv[r]
    n_inv[r] = 2.0
    inv_gap[r] = gap

    # split purchase: k sub-orders each below the approval threshold
    r = pick(Typology.SPLIT_PURCHASE)
    sub = rng.derive(Typology.SPLIT_PURCHASE.value)
    T = config.approval_threshold
    k = sub.derive("k").integers(2, 5, len(r))
    total = np.round(1.05 * T + sub.derive("total").random(len(r)) * (0.9 * k * T - 1.05 * T), 2)
    noise = 1.0 + sub.derive("share").uniform(-0.02, 0.02, (len(r) * 3)).reshape(len(r), 3)
    subs = np.zeros((len(r), 4))
    for i in range(len(r)):
        ki = k[i]
        parts = np.round(total[i] / ki * noise[i, : ki - 1], 2)
        subs[i, : ki - 1] = parts
        subs[i, ki - 1] = np.round(total[i] - parts.sum(), 2)
    po[r] = total
    gr_amt[r] = total
    inv[r] = np.where(consign[r], 0.0, total)
    paid[r] = inv[r]
    split_count[r] = k
    max_sub[r] = subs.max(axis=1)

    # suspicious bank change shortly before payment
    r = pick(Typology.VENDOR_BANK_CHANGE)
    bank[r] = True

    # goods receipt recorded only after invoice and clearance
    r = pick(Typology.INVOICE_BEFORE_GR)
    sub = rng.derive(Typology.INVOICE_BEFORE_GR.value)
    late = np.floor(sub.derive("late").uniform(1.0, 10.0, len(r)) * DAY).astype(np.int64)
    gr_date[r] = pay[r] + late
    inv[r] = np.where(consign[r], po[r], inv[r])
    paid[r] = inv[r]
    flow[r] = "three_way"
    requires_gr[r] = True
    gr_based_iv[r] = True

    # round amounts
    r = pick(Typology.ROUND_AMOUNT)
    rounded = np.maximum(np.round(po[r] / 1000.0) * 1000.0, 1000.0)
    po[r] = rounded
    gr_amt[r] = rounded
    inv[r] = np.where(consign[r], 0.0, rounded)
    paid[r] = inv[r]
    max_sub[r] = np.where(split_count[r] > 1, max_sub[r], rounded)

    # excessive rework
    r = pick(Typology.EXCESSIVE_REWORK)
    n_rework[r] = rng.derive(Typology.EXCESSIVE_REWORK.value).integers(3, 9, len(r))

    y = table[LABEL_COLUMN].copy()
    y[rows] = True
    risk_type = table.strings("risk_type").copy()
    scen = table.strings("scenario_id").copy()
    for i, t in zip(rows, typ):
        risk_type[i] = TYPOLOGIES[t].value
        scen[i] = f"SYN-{config.seed}-{TYPOLOGIES[t].value}"
    lab_mask = ~y

    def cat(name, vals, mask=None):
        c = table.col(name)
        return Column.build(name, c.kind, vals, mask=mask, group=c.group)

    return table.with_columns(
        table.col("po_amount").replace(po),
        table.col("gr_amount").replace(gr_amt),
        table.col("invoice_amount").replace(inv),
        table.col("paid_amount").replace(paid),
        table.col("gr_date").replace(gr_date),
        cat("flow_type", flow),
        table.col("requires_gr").replace(requires_gr),
        table.col("gr_based_iv").replace(gr_based_iv),
        table.col("n_invoices").replace(n_inv),
        table.col("invoice_gap_days").replace(inv_gap),
        table.col("split_count").replace(split_count),
        table.col("max_subamount").replace(max_sub),
        table.col("bank_change_recent").replace(bank),
        table.col("n_rework").replace(n_rework),
        table.col(LABEL_COLUMN).replace(y),
        cat("risk_type", risk_type, lab_mask),
        cat("scenario_id", scen, lab_mask),
    )


def _stress_columns(table: CaseTable) -> list:
    skip = {table.time_column}
    return [
        c.name
        for c in table.columns
        if c.kind is not ColumnKind.IDENTIFIER and c.group not in ("identifiers", "labels") and c.name not in skip
    ]


def apply_stress(table: CaseTable, stress: StressConfig, rng: Rng) -> CaseTable:
    """Build one stress-test variant of a labeled table."""
    if not table.has_label:
        raise ValidationError("apply_stress expects a labeled table")
    kind = stress.kind
    if kind is StressKind.TYPOLOGY_SHIFT:
        held = {t.value for t in stress.held_out_typologies}
        rtype = table.strings("risk_type")
        keep = np.array([(not y) or (rt in held) for y, rt in zip(table[LABEL_COLUMN], rtype)])
        return table.take(np.flatnonzero(keep))

    if kind is StressKind.DATA_QUALITY:
        out = []
        base = rng.derive("missing")
        for name in _stress_columns(table):
            c = table.col(name)
            hit = base.derive(name).bernoulli(stress.missing_rate, table.n)
            out.append(c.replace(mask=c.mask | hit))
        table = table.with_columns(*out)
        if stress.unseen_vendor_rate > 0 and "vendor_id" in table:
            rows = np.flatnonzero(rng.derive("unseen_vendor").bernoulli(stress.unseen_vendor_rate, table.n))
            vid = table.strings("vendor_id").copy()
            for j, i in enumerate(rows):
                vid[i] = f"VNEW{j + 1:06d}"
            c = table.col("vendor_id")
            table = table.with_columns(Column.build("vendor_id", c.kind, vid, mask=c.mask, group=c.group))
        return table

    # temporal drift
    alpha = stress.inflation
    cols = []
    for name in MONETARY + ("max_subamount",):
        if name in table:
            c = table.col(name)
            cols.append(c.replace(c.values * alpha))
    if "cycle_time_days" in table:
        c = table.col("cycle_time_days")
        cols.append(c.replace(c.values * alpha**0.25))
    table = table.with_columns(*cols)
    if stress.churn > 0 and "vendor_id" in table:
        c = table.col("vendor_id")
        present = np.unique(c.values[~c.mask])
        present = present[np.argsort([c.categories[i] for i in present], kind="stable")]
        n_churn = int(round(stress.churn * len(present)))
        if n_churn:
            gone = present[rng.derive("churn").choice(len(present), n_churn, replace=False)]
            remap = {int(g): f"{c.categories[g]}-R{stress.seed}" for g in gone}
            vid = c.decoded().copy()
            for i in np.flatnonzero(np.isin(c.values, gone) & ~c.mask):
                vid[i] = remap[int(c.values[i])]
            table = table.with_columns(Column.build("vendor_id", c.kind, vid, mask=c.mask, group=c.group))
    return table


def apply_stress_after(table: CaseTable, stress: StressConfig, rng: Rng, start_fraction: float = 0.5) -> CaseTable:
    """Stress only the rows at or after the ``start_fraction`` time quantile.

    Used to build datasets whose later period has drifted; row order is kept.
    """
    t = table.times
    cut = np.sort(t)[int(np.floor(start_fraction * (table.n - 1)))]
    late = np.flatnonzero(t >= cut)
    early = np.flatnonzero(t < cut)
    stressed = apply_stress(table.take(late), stress, rng)
    if stressed.n != len(late):
        raise ValidationError("apply_stress_after requires a row-preserving stress kind")
    merged = concat([table.take(early), stressed])
    order = np.empty(table.n, dtype=np.int64)
    order[np.concatenate([early, late])] = np.arange(table.n)
    return merged.take(order)


def generate_dataset(config: GenConfig, drift: StressConfig | None = None, drift_start: float = 0.5):
    """Run master -> cases -> injection (-> optional late-period drift).

    Returns:
        ``(table, manifest)`` where the manifest records seeds, the config
        hash and the content hash of the result.
    """
    rng = Rng(config.seed)
    master = generate_master(config, rng.derive("master"))
    table = simulate_cases(config, master, rng.derive("cases"))
    table = inject_typologies(table, config, rng.derive("inject"))
    manifest = {
        "generator": "p2prisk.synth/1",
        "seeds": {"typology": config.seed},
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
    }
    if drift is not None:
        table = apply_stress_after(table, drift, Rng(drift.seed), drift_start)
        manifest["seeds"]["drift"] = drift.seed
        manifest["drift"] = {**drift.to_dict(), "start_fraction": drift_start}
    y = table.label
    counts = {}
    for rt in table.strings("risk_type"):
        if rt is not None:
            counts[rt] = counts.get(rt, 0) + 1
    manifest.update(
        n_rows=table.n,
        n_positive=int(y.sum()),
        typology_counts=dict(sorted(counts.items())),
        content_hash=table.content_hash(),
    )
    return table, manifest


def with_overrides(config: GenConfig, **kw) -> GenConfig:
    return replace(config, **kw)
