"""Chronological holdout, fold construction and nested CV plans.

All fold functions work on a *universe* of row indices into a table (the
non-holdout rows, or an outer training set) and return a list of sorted
``int64`` index arrays that partition that universe.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleSplitError, ValidationError
from .rng import Rng
from .table import CaseTable


class SplitKind(str, enum.Enum):
    TIME_PLUS_GROUP = "TimePlusGroup"
    RANDOM_STRATIFIED = "RandomStratified"
    GROUP_ONLY = "GroupOnly"
    TIME_FORWARD = "TimeForward"


GROUPED = (SplitKind.TIME_PLUS_GROUP, SplitKind.GROUP_ONLY)
TIMED = (SplitKind.TIME_PLUS_GROUP, SplitKind.TIME_FORWARD)


@dataclass(frozen=True)
class SplitStrategy:
    kind: SplitKind = SplitKind.TIME_PLUS_GROUP
    phts_fraction: float = 0.20
    seed: int = 20260301

    def __post_init__(self):
        object.__setattr__(self, "kind", SplitKind(self.kind))
        if not 0 < self.phts_fraction < 1:
            raise ValidationError("phts_fraction must lie in (0, 1)")


def _kind(strategy) -> SplitKind:
    return strategy.kind if isinstance(strategy, SplitStrategy) else SplitKind(strategy)


def make_phts(table: CaseTable, fraction: float = 0.20):
    """Reserve the chronologically last ``ceil(fraction * n)`` rows.

    Rows sharing the boundary timestamp all move into the holdout.

    Returns:
        ``(train_rows, phts_rows)`` as sorted index arrays.
    """
    n = table.n
    if n < 5:
        raise ValidationError("need at least 5 rows to carve a holdout")
    if not 0 < fraction < 1:
        raise ValidationError("fraction must lie in (0, 1)")
    t = table.times
    if np.any(table.missing(table.time_column)):
        raise ValidationError("missing time values")
    k = max(1, math.ceil(fraction * n - 1e-9))
    boundary = np.sort(t)[n - k]
    phts = t >= boundary
    if phts.all():
        raise ValidationError("no time boundary exists: holdout would absorb every row")
    return np.flatnonzero(~phts), np.flatnonzero(phts)


def group_ids(table: CaseTable, rows=None) -> np.ndarray:
    """Connected-component id per row over all group key columns.

    Two rows share a group when they agree on any key value; missing key
    cells do not link rows.  Ids are dense and numbered in order of first
    appearance within ``rows``.
    """
    rows = np.arange(table.n) if rows is None else np.asarray(rows, dtype=np.int64)
    m = len(rows)
    parent = np.arange(m)

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    for name in table.group_key_columns:
        col = table.col(name)
        vals = col.values[rows]
        mask = col.mask[rows]
        first = {}
        for i in range(m):
            if mask[i]:
                continue
            v = vals[i]
            j = first.setdefault(v, i)
            if j != i:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(m)], dtype=np.int64)
    _, dense = np.unique(roots, return_inverse=True)
    # renumber by first appearance
    order = {}
    out = np.empty(m, dtype=np.int64)
    for i, g in enumerate(dense):
        out[i] = order.setdefault(g, len(order))
    return out


def _check_positive(folds, y_of, k):
    for f, rows in enumerate(folds):
        if len(rows) == 0:
            raise InfeasibleSplitError(f"fold {f} is empty: too few rows or groups for k={k}")
        if not y_of(rows).any():
            raise InfeasibleSplitError(f"fold {f} received no positive cases")


def make_folds(table: CaseTable, strategy, k: int, rng: Rng, rows=None) -> list:
    """Partition ``rows`` (default: all rows) into ``k`` folds.

    Raises:
        InfeasibleSplitError: some fold has no positives (or no rows).
    """
    kind = _kind(strategy)
    if k < 2:
        raise ValidationError("k must be at least 2")
    rows = np.arange(table.n) if rows is None else np.sort(np.asarray(rows, dtype=np.int64))
    y = table.label
    if kind in GROUPED and not table.group_key_columns:
        raise ValidationError(f"{kind.value} needs group key columns")

    if kind is SplitKind.RANDOM_STRATIFIED:
        assign = np.empty(len(rows), dtype=np.int64)
        start = 0
        for cls in (1, 0):
            idx = np.flatnonzero(y[rows] == cls)
            idx = idx[rng.derive(f"class{cls}").permutation(len(idx))]
            assign[idx] = (start + np.arange(len(idx))) % k
            start = (start + len(idx)) % k
        folds = [rows[assign == f] for f in range(k)]

    elif kind is SplitKind.TIME_FORWARD:
        t = table.times[rows]
        order = np.argsort(t, kind="stable")
        ts = t[order]
        m = len(rows)
        bounds = [0]
        for f in range(1, k):
            b = max(int(round(f * m / k)), bounds[-1])
            # keep tied timestamps in one block
            while 0 < b < m and ts[b] == ts[b - 1]:
                b += 1
            bounds.append(b)
        bounds.append(m)
        folds = [np.sort(rows[order[bounds[f] : bounds[f + 1]]]) for f in range(k)]

    else:
        gid = group_ids(table, rows)
        n_groups = gid.max() + 1 if len(gid) else 0
        size = np.bincount(gid, minlength=n_groups)
        pos = np.bincount(gid, weights=y[rows], minlength=n_groups).astype(np.int64)
        if np.any(size > len(rows) / k):
            warnings.warn(
                f"{int(np.sum(size > len(rows) / k))} group(s) exceed n/k rows; folds will be unbalanced",
                stacklevel=2,
            )
        if kind is SplitKind.TIME_PLUS_GROUP:
            t = table.times[rows]
            first = np.full(n_groups, np.iinfo(np.int64).max)
            np.minimum.at(first, gid, t)
            base = np.lexsort((np.arange(n_groups), first))
            order = list(base)
        else:
            # positive-rich and large groups first so the greedy fill balances
            base = rng.derive("groups").permutation(n_groups)
            order = sorted(base, key=lambda g: (-int(pos[g]), -int(size[g])))
        fold_pos = np.zeros(k, dtype=np.int64)
        fold_size = np.zeros(k, dtype=np.int64)
        g_fold = np.empty(n_groups, dtype=np.int64)
        for g in order:
            if pos[g] > 0:
                f = min(range(k), key=lambda j: (fold_pos[j], fold_size[j], j))
            else:
                f = min(range(k), key=lambda j: (fold_size[j], j))
            g_fold[g] = f
            fold_pos[f] += pos[g]
            fold_size[f] += size[g]
        assign = g_fold[gid]
        folds = [rows[assign == f] for f in range(k)]

    _check_positive(folds, lambda r: y[r] == 1, k)
    return folds


def fold_pairs(folds: list, kind) -> list:
    """(train, eval) index pairs for a partition.

    Time-forward partitions give expanding-window pairs (train = all earlier
    blocks), so ``k`` blocks yield ``k - 1`` pairs; other strategies give the
    usual leave-one-fold-out pairs.
    """
    kind = SplitKind(kind)
    if kind is SplitKind.TIME_FORWARD:
        return [(np.sort(np.concatenate(folds[:f])), folds[f]) for f in range(1, len(folds))]
    return [
        (np.sort(np.concatenate([folds[j] for j in range(len(folds)) if j != f])), folds[f])
        for f in range(len(folds))
    ]


@dataclass(frozen=True, eq=False)
class CvPlan:
    """Materialized nested split assignment (row indices into one table)."""

    kind: SplitKind
    k_outer: int
    k_inner: int
    universe: np.ndarray
    outer_folds: list
    inner_folds: list
    phts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    group_keys: tuple = ()
    seed: int = 0
    notes: dict = field(default_factory=dict)

    def outer_pairs(self) -> list:
        return fold_pairs(self.outer_folds, self.kind)

    def inner_pairs(self, outer: int) -> list:
        return fold_pairs(self.inner_folds[outer], self.kind)

    @property
    def n_outer_pairs(self) -> int:
        return len(self.outer_folds) - (1 if self.kind is SplitKind.TIME_FORWARD else 0)

    def to_dict(self) -> dict:
        return {
            "strategy": self.kind.value,
            "k_outer": self.k_outer,
            "k_inner": self.k_inner,
            "seed": self.seed,
            "group_keys": list(self.group_keys),
            "phts": self.phts.tolist(),
            "outer_folds": [f.tolist() for f in self.outer_folds],
            "inner_folds": [[f.tolist() for f in inner] for inner in self.inner_folds],
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "CvPlan":
        arr = lambda v: np.asarray(v, dtype=np.int64)  # noqa: E731
        outer = [arr(f) for f in d["outer_folds"]]
        return cls(
            kind=SplitKind(d["strategy"]),
            k_outer=d["k_outer"],
            k_inner=d["k_inner"],
            universe=np.sort(np.concatenate(outer)),
            outer_folds=outer,
            inner_folds=[[arr(f) for f in inner] for inner in d["inner_folds"]],
            phts=arr(d.get("phts", [])),
            group_keys=tuple(d.get("group_keys", ())),
            seed=d.get("seed", 0),
            notes=d.get("notes", {}),
        )

    def plan_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def validate(self, table: CaseTable) -> list:
        """Check partition, purity, ordering and holdout exclusion.

        Returns:
            list of violation messages (empty when the plan is sound).
        """
        problems = []

        def check_partition(folds, universe, where):
            allrows = np.concatenate(folds) if folds else np.zeros(0, np.int64)
            if any(len(f) == 0 for f in folds):
                problems.append(f"{where}: empty fold")
            if len(np.unique(allrows)) != len(allrows):
                problems.append(f"{where}: folds overlap")
            if not np.array_equal(np.sort(allrows), np.sort(universe)):
                problems.append(f"{where}: folds do not cover their universe")

        def check_groups(folds, where):
            if self.kind not in GROUPED:
                return
            for name in self.group_keys:
                col = table.col(name)
                owner = {}
                for f, rows in enumerate(folds):
                    for v in np.unique(col.values[rows][~col.mask[rows]]):
                        if owner.setdefault(v, f) != f:
                            problems.append(f"{where}: {name} value shared by folds {owner[v]} and {f}")
                            break

        def check_time(pairs, where):
            if self.kind is not SplitKind.TIME_FORWARD:
                return
            t = table.times
            for i, (tr, ev) in enumerate(pairs):
                if t[tr].max() >= t[ev].min():
                    problems.append(f"{where} pair {i}: training time overlaps evaluation time")

        check_partition(self.outer_folds, self.universe, "outer")
        check_groups(self.outer_folds, "outer")
        check_time(self.outer_pairs(), "outer")
        if len(self.phts):
            if np.intersect1d(self.phts, self.universe).size:
                problems.append("holdout rows appear in the fold universe")
            if table.times[self.universe].max() >= table.times[self.phts].min():
                problems.append("fold rows are not strictly earlier than the holdout")
        for o, (tr, _) in enumerate(self.outer_pairs()):
            inner = self.inner_folds[o]
            check_partition(inner, tr, f"inner[{o}]")
            check_groups(inner, f"inner[{o}]")
            check_time(fold_pairs(inner, self.kind), f"inner[{o}]")
        return problems


def make_cv_plan(
    table: CaseTable,
    strategy,
    k_outer: int = 5,
    k_inner: int = 3,
    rng: Rng | None = None,
    rows=None,
    phts=None,
) -> CvPlan:
    """Outer folds over ``rows`` plus inner folds inside every outer-train set.

    The caller removes the holdout beforehand and may pass it as ``phts`` so
    that it is recorded (and validated) in the plan.
    """
    kind = _kind(strategy)
    if rng is None:
        rng = Rng(strategy.seed if isinstance(strategy, SplitStrategy) else 20260301)
    rows = np.arange(table.n) if rows is None else np.sort(np.asarray(rows, dtype=np.int64))
    if phts is not None and np.intersect1d(rows, phts).size:
        raise ValidationError("holdout rows must be removed before planning")
    outer = make_folds(table, kind, k_outer, rng.derive("outer"), rows)
    n_pairs = k_outer - 1 if kind is SplitKind.TIME_FORWARD else k_outer
    inner = []
    for o, (train, _) in enumerate(fold_pairs(outer, kind)):
        inner.append(make_folds(table, kind, k_inner, rng.derive(f"inner/{o}"), train))
    assert len(inner) == n_pairs
    notes = {}
    if kind is SplitKind.TIME_PLUS_GROUP:
        notes["inner_constraint"] = "group purity only (no time ordering inside outer-train sets)"
    if kind is SplitKind.TIME_FORWARD:
        notes["pairs"] = "expanding window: k blocks yield k-1 train/eval pairs"
    return CvPlan(
        kind=kind,
        k_outer=k_outer,
        k_inner=k_inner,
        universe=rows,
        outer_folds=outer,
        inner_folds=inner,
        phts=np.zeros(0, np.int64) if phts is None else np.sort(np.asarray(phts, dtype=np.int64)),
        group_keys=tuple(table.group_key_columns) if kind in GROUPED else (),
        seed=rng.seed,
        notes=notes,
    )
