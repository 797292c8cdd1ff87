"""Compliance-rule labeling of canonical P2P cases.

A case is risky when any enabled matching rule fires:

* three-way: PO, goods receipt and invoice amounts must agree pairwise
  (po vs gr, gr vs inv) within ``max(eps * po, eps_abs)``;
* two-way: PO and invoice must agree when no goods receipt is required;
* consignment: a consignment case must not carry an invoice amount;
* temporal: payment may not clear before the goods receipt.

Labels derived here are independent of the generator's injected labels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .errors import LabelingError, ValidationError
from .table import LABEL_COLUMN, CaseTable, Column, ColumnKind

RULES = ("three_way", "two_way", "consignment", "temporal")


@dataclass(frozen=True)
class ComplianceConfig:
    epsilon: float = 0.005
    epsilon_abs: float = 1.0
    three_way: bool = True
    two_way: bool = True
    consignment: bool = True
    temporal: bool = True

    def __post_init__(self):
        if not self.epsilon >= 0 or not self.epsilon_abs >= 0:
            raise ValidationError("tolerances must be nonnegative")

    @property
    def enabled(self) -> tuple:
        return tuple(r for r in RULES if getattr(self, r))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def label_case(row: Mapping, config: ComplianceConfig = ComplianceConfig()):
    """Label one case.

    Args:
        row: mapping of canonical field names to values, ``None`` for missing.
        config: tolerances and rule toggles.

    Returns:
        ``(y, violated_rules)`` with ``y`` in {0, 1}.

    Raises:
        LabelingError: a field needed by an active rule is missing.
    """

    def get(name):
        v = row.get(name)
        if _missing(v):
            raise LabelingError(name)
        return v

    flow = get("flow_type")
    consign = flow == "consignment"
    needs_gr = bool(get("requires_gr")) if (config.three_way or config.two_way or config.temporal) else False
    fired = []
    if config.three_way and needs_gr and not consign:
        po, gr, inv = get("po_amount"), get("gr_amount"), get("invoice_amount")
        tol = max(config.epsilon * abs(po), config.epsilon_abs)
        if abs(po - gr) > tol or abs(gr - inv) > tol:
            fired.append("three_way")
    if config.two_way and not needs_gr and not consign:
        po, inv = get("po_amount"), get("invoice_amount")
        if abs(po - inv) > max(config.epsilon * abs(po), config.epsilon_abs):
            fired.append("two_way")
    if config.consignment and consign and get("invoice_amount") > 0:
        fired.append("consignment")
    if config.temporal and needs_gr and get("payment_date") < get("gr_date"):
        fired.append("temporal")
    return int(bool(fired)), fired


def _need(table: CaseTable, name: str, rows: np.ndarray):
    """Values of ``name``; raise on the first missing cell among ``rows``."""
    col = table.col(name)
    bad = np.flatnonzero(col.mask & rows)
    if bad.size:
        raise LabelingError(name, int(bad[0]))
    return col.values


def rule_matrix(table: CaseTable, config: ComplianceConfig = ComplianceConfig()) -> dict:
    """Boolean firing vector per enabled rule (vectorized :func:`label_case`)."""
    n = table.n
    everyone = np.ones(n, dtype=bool)
    flow_col = table.col("flow_type")
    _need(table, "flow_type", everyone)
    cats = np.array(flow_col.categories + ("",), dtype=object)
    consign = cats[np.where(flow_col.mask, len(flow_col.categories), flow_col.values)] == "consignment"
    out = {}
    uses_gr = config.three_way or config.two_way or config.temporal
    needs_gr = _need(table, "requires_gr", everyone).copy() if uses_gr else np.zeros(n, bool)

    if config.three_way:
        act = needs_gr & ~consign
        po = _need(table, "po_amount", act)
        gr = _need(table, "gr_amount", act)
        inv = _need(table, "invoice_amount", act)
        tol = np.maximum(config.epsilon * np.abs(po), config.epsilon_abs)
        with np.errstate(invalid="ignore"):
            out["three_way"] = act & ((np.abs(po - gr) > tol) | (np.abs(gr - inv) > tol))
    if config.two_way:
        act = ~needs_gr & ~consign
        po = _need(table, "po_amount", act)
        inv = _need(table, "invoice_amount", act)
        tol = np.maximum(config.epsilon * np.abs(po), config.epsilon_abs)
        with np.errstate(invalid="ignore"):
            out["two_way"] = act & (np.abs(po - inv) > tol)
    if config.consignment:
        inv = _need(table, "invoice_amount", consign)
        with np.errstate(invalid="ignore"):
            out["consignment"] = consign & (inv > 0)
    if config.temporal:
        pay = _need(table, "payment_date", needs_gr)
        gr_date = _need(table, "gr_date", needs_gr)
        out["temporal"] = needs_gr & (pay < gr_date)
    return out


def label_table(table: CaseTable, config: ComplianceConfig = ComplianceConfig()):
    """Write ``y_risk`` from the compliance rules.

    Returns:
        ``(labeled_table, summary)``; the summary holds per-rule firing counts.
    """
    fired = rule_matrix(table, config)
    y = np.zeros(table.n, dtype=bool)
    for v in fired.values():
        y |= v
    label = Column.build(LABEL_COLUMN, ColumnKind.BOOLEAN, y, group="labels")
    if LABEL_COLUMN in table:
        label = table.col(LABEL_COLUMN).replace(y, np.zeros(table.n, dtype=bool))
    summary = {
        "n_rows": table.n,
        "n_positive": int(y.sum()),
        "rule_counts": {r: int(fired[r].sum()) for r in config.enabled},
        "config": config.to_dict(),
    }
    return table.with_columns(label), summary
