"""Row-wise feature engineering from canonical P2P cases.

Everything here is a pure per-row function of one case, so it can be applied
to a full table before splitting without leaking information between rows.
Fitted (and therefore leakage-sensitive) steps live in :mod:`p2prisk.pipeline`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .table import CaseTable, ColumnKind

DAY = 86400.0

RAW_NUMERIC = (
    "po_amount",
    "gr_amount",
    "invoice_amount",
    "paid_amount",
    "n_goods_receipts",
    "n_rework",
    "cycle_time_days",
    "n_invoices",
    "invoice_gap_days",
    "split_count",
    "max_subamount",
    "vendor_age",
    "actor_tenure",
    "override_rate",
)
RAW_FLAGS = ("requires_gr", "gr_based_iv", "invoice_blocked", "bank_change_recent")
RAW_CATEGORICAL = ("flow_type", "vendor_geo", "actor_role")
ID_CATEGORICAL = ("vendor_id", "user_id", "company_id")


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    """Named feature columns before fitting.

    Numeric columns are float64 with NaN for missing; categorical columns are
    object arrays with ``None`` for missing.
    """

    names: tuple
    kinds: tuple  # "num" | "cat"
    data: tuple

    def __post_init__(self):
        if not len(self.names) == len(self.kinds) == len(self.data):
            raise ValidationError("names, kinds and data must align")
        if len({len(d) for d in self.data}) > 1:
            raise ValidationError("feature columns have unequal lengths")

    @property
    def n(self) -> int:
        return len(self.data[0]) if self.data else 0

    def column(self, name):
        return self.data[self.names.index(name)]

    def take(self, rows) -> "FeatureFrame":
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureFrame(self.names, self.kinds, tuple(d[rows] for d in self.data))

    def append(self, other: "FeatureFrame") -> "FeatureFrame":
        if other.names != self.names or other.kinds != self.kinds:
            raise ValidationError("cannot append frames with different schemas")
        return FeatureFrame(self.names, self.kinds, tuple(np.concatenate([a, b]) for a, b in zip(self.data, other.data)))

    def signature(self) -> tuple:
        return tuple(zip(self.names, self.kinds))


def _num(table: CaseTable, name: str) -> np.ndarray:
    c = table.col(name)
    v = c.values.astype(np.float64)
    return np.where(c.mask, np.nan, v)


def _rel(a, b, base):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.abs(a - b) / np.maximum(np.abs(base), 1.0)


def build_features(table: CaseTable, include_ids: bool = True) -> FeatureFrame:
    """Engineer model features from a canonical-schema table.

    Args:
        table: canonical P2P cases.
        include_ids: keep vendor/user/company ids as categorical features.
            Entity ids are what make row-level random splits optimistic, so
            they stay in by default.
    """
    names, kinds, data = [], [], []

    def add(name, kind, values):
        names.append(name)
        kinds.append(kind)
        data.append(values)

    for name in RAW_NUMERIC:
        if name in table:
            add(name, "num", _num(table, name))
    for name in RAW_FLAGS:
        if name in table:
            add(name, "num", _num(table, name))

    if all(n in table for n in ("po_amount", "gr_amount", "invoice_amount", "paid_amount")):
        po, gr = _num(table, "po_amount"), _num(table, "gr_amount")
        inv, paid = _num(table, "invoice_amount"), _num(table, "paid_amount")
        add("log_po_amount", "num", np.log1p(np.maximum(po, 0.0)))
        add("po_gr_delta", "num", _rel(po, gr, po))
        add("gr_invoice_delta", "num", _rel(gr, inv, po))
        add("po_invoice_delta", "num", _rel(po, inv, po))
        add("invoice_paid_delta", "num", _rel(inv, paid, po))
        with np.errstate(invalid="ignore"):
            add("po_round_1000", "num", np.where(np.isnan(po), np.nan, (np.mod(po, 1000.0) == 0).astype(float)))
    if "max_subamount" in table and "po_amount" in table:
        with np.errstate(invalid="ignore", divide="ignore"):
            add("max_sub_share", "num", _num(table, "max_subamount") / np.maximum(_num(table, "po_amount"), 1.0))

    dates = ("doc_date", "gr_date", "invoice_date", "payment_date")
    if all(d in table for d in dates):
        doc, gr_d, inv_d, pay = (_num(table, d) for d in dates)
        add("days_doc_to_gr", "num", (gr_d - doc) / DAY)
        add("days_gr_to_invoice", "num", (inv_d - gr_d) / DAY)
        add("days_invoice_to_payment", "num", (pay - inv_d) / DAY)
        add("days_gr_to_payment", "num", (pay - gr_d) / DAY)

    cats = RAW_CATEGORICAL + (ID_CATEGORICAL if include_ids else ())
    for name in cats:
        if name in table and table.col(name).kind is ColumnKind.CATEGORICAL:
            add(name, "cat", table.strings(name))
    return FeatureFrame(tuple(names), tuple(kinds), tuple(data))
