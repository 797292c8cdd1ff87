"""Columnar case tables in the canonical procure-to-pay schema.

A :class:`CaseTable` is an immutable, ordered collection of typed
:class:`Column` objects of equal length.  Missingness is carried by an
explicit per-column mask; the mask, not NaN, is authoritative.

Storage per kind:

=============  ===============================  =====================
kind           values dtype                     placeholder if missing
=============  ===============================  =====================
numeric        float64                          NaN
categorical    int32 codes into ``categories``  -1
boolean        bool                             False
datetime       int64 epoch seconds              0
identifier     object (str)                     ""
=============  ===============================  =====================
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, SchemaError, ValidationError

LABEL_COLUMN = "y_risk"


class ColumnKind(str, enum.Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    BOOLEAN = "boolean"
    DATETIME = "datetime"
    IDENTIFIER = "identifier"


_PLACEHOLDER = {
    ColumnKind.NUMERIC: np.nan,
    ColumnKind.CATEGORICAL: -1,
    ColumnKind.BOOLEAN: False,
    ColumnKind.DATETIME: 0,
    ColumnKind.IDENTIFIER: "",
}
_DTYPE = {
    ColumnKind.NUMERIC: np.float64,
    ColumnKind.CATEGORICAL: np.int32,
    ColumnKind.BOOLEAN: np.bool_,
    ColumnKind.DATETIME: np.int64,
    ColumnKind.IDENTIFIER: object,
}


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Field:
    name: str
    kind: ColumnKind
    group: str = ""

    def to_dict(self):
        return {"name": self.name, "kind": self.kind.value, "group": self.group}


@dataclass(frozen=True, eq=False)
class Column:
    name: str
    kind: ColumnKind
    values: np.ndarray
    mask: np.ndarray
    categories: tuple = ()
    group: str = ""

    def __post_init__(self):
        if self.values.shape != self.mask.shape or self.values.ndim != 1:
            raise ValidationError(f"column {self.name!r}: values and mask must be 1-d of equal length")
        if self.kind is ColumnKind.CATEGORICAL:
            codes = self.values[~self.mask]
            if codes.size and (codes.min() < 0 or codes.max() >= len(self.categories)):
                raise ValidationError(f"column {self.name!r}: category code out of range")
        _frozen(self.values)
        _frozen(self.mask)

    # construction ---------------------------------------------------------
    @classmethod
    def build(cls, name, kind, values, mask=None, group="", categories=None) -> "Column":
        """Build a column from raw values.

        Categorical columns accept strings (``None`` = missing) and get a
        dictionary in first-appearance order, unless ``categories`` is given,
        in which case ``values`` may also be integer codes.
        """
        kind = ColumnKind(kind)
        n = len(values)
        if kind is ColumnKind.CATEGORICAL:
            return cls._build_categorical(name, values, mask, group, categories)
        if kind is ColumnKind.IDENTIFIER:
            vals = np.empty(n, dtype=object)
            vals[:] = ["" if v is None else str(v) for v in values]
            m = np.array([v is None for v in values], dtype=bool) if mask is None else np.asarray(mask, bool).copy()
            vals[m] = ""
            return cls(name, kind, vals, m, (), group)
        vals = np.array(values, dtype=_DTYPE[kind], copy=True)
        if mask is None:
            m = np.isnan(vals) if kind is ColumnKind.NUMERIC else np.zeros(n, dtype=bool)
        else:
            m = np.array(mask, dtype=bool, copy=True)
        vals[m] = _PLACEHOLDER[kind]
        return cls(name, kind, vals, m, (), group)

    @classmethod
    def _build_categorical(cls, name, values, mask, group, categories):
        values = np.asarray(values, dtype=object if categories is None else None)
        n = len(values)
        if categories is not None and values.dtype != object:
            codes = np.array(values, dtype=np.int32, copy=True)
            m = codes < 0 if mask is None else np.array(mask, dtype=bool, copy=True)
            codes[m] = -1
            return cls(name, ColumnKind.CATEGORICAL, codes, m, tuple(categories), group)
        lookup = {} if categories is None else {c: i for i, c in enumerate(categories)}
        cats = [] if categories is None else list(categories)
        codes = np.full(n, -1, dtype=np.int32)
        m = np.zeros(n, dtype=bool) if mask is None else np.array(mask, dtype=bool, copy=True)
        for i, v in enumerate(values):
            if m[i] or v is None:
                m[i] = True
                continue
            v = str(v)
            code = lookup.get(v)
            if code is None:
                code = lookup[v] = len(cats)
                cats.append(v)
            codes[i] = code
        return cls(name, ColumnKind.CATEGORICAL, codes, m, tuple(cats), group)

    # access ---------------------------------------------------------------
    def __len__(self):
        return len(self.values)

    @property
    def field(self) -> Field:
        return Field(self.name, self.kind, self.group)

    def decoded(self) -> np.ndarray:
        """Python-level values with ``None`` for missing cells."""
        if self.kind is ColumnKind.CATEGORICAL:
            cats = np.array(list(self.categories) + [None], dtype=object)
            return cats[np.where(self.mask, len(self.categories), self.values)]
        out = self.values.astype(object)
        out[self.mask] = None
        return out

    def take(self, rows) -> "Column":
        rows = np.asarray(rows, dtype=np.int64)
        return Column(self.name, self.kind, self.values[rows].copy(), self.mask[rows].copy(), self.categories, self.group)

    def replace(self, values=None, mask=None) -> "Column":
        vals = np.array(self.values if values is None else values, dtype=_DTYPE[self.kind], copy=True)
        m = np.array(self.mask if mask is None else mask, dtype=bool, copy=True)
        vals[m] = _PLACEHOLDER[self.kind]
        return Column(self.name, self.kind, vals, m, self.categories, self.group)

    def equals(self, other: "Column") -> bool:
        if (self.name, self.kind, self.group) != (other.name, other.kind, other.group):
            return False
        if not np.array_equal(self.mask, other.mask):
            return False
        if self.kind is ColumnKind.CATEGORICAL:
            return np.array_equal(self.decoded(), other.decoded())
        if self.kind is ColumnKind.NUMERIC:
            return np.array_equal(self.values, other.values, equal_nan=True)
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class CaseTable:
    """Immutable columnar dataset.

    Args:
        columns: ordered columns of identical length.
        group_key_columns: columns defining entities for group-aware splits.
        time_column: datetime column used for chronological operations.
    """

    columns: tuple
    group_key_columns: tuple = ()
    time_column: str | None = None
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "group_key_columns", tuple(self.group_key_columns))
        lengths = {len(c) for c in cols}
        if len(lengths) > 1:
            raise ValidationError(f"columns have unequal lengths {sorted(lengths)}")
        index = {}
        for i, c in enumerate(cols):
            if c.name in index:
                raise SchemaError(f"duplicate column {c.name!r}")
            index[c.name] = i
        object.__setattr__(self, "_index", index)
        for name in self.group_key_columns:
            if name not in index:
                raise SchemaError(f"group key column {name!r} not in schema")
        if self.time_column is not None:
            if self.time_column not in index:
                raise SchemaError(f"time column {self.time_column!r} not in schema")
            if cols[index[self.time_column]].kind is not ColumnKind.DATETIME:
                raise SchemaError("time column must be a datetime column")
        if LABEL_COLUMN in index:
            lab = cols[index[LABEL_COLUMN]]
            if lab.kind is not ColumnKind.BOOLEAN:
                raise SchemaError(f"{LABEL_COLUMN} must be boolean")

    # basic access ---------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    def __len__(self):
        return self.n

    @property
    def names(self) -> list:
        return [c.name for c in self.columns]

    @property
    def schema(self) -> list:
        return [c.field for c in self.columns]

    def __contains__(self, name):
        return name in self._index

    def col(self, name: str) -> Column:
        try:
            return self.columns[self._index[name]]
        except KeyError:
            raise SchemaError(f"unknown column {name!r}") from None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.col(name).values

    def missing(self, name: str) -> np.ndarray:
        return self.col(name).mask

    def strings(self, name: str) -> np.ndarray:
        return self.col(name).decoded()

    @property
    def has_label(self) -> bool:
        return LABEL_COLUMN in self._index

    @property
    def label(self) -> np.ndarray:
        """Binary risk label as int8."""
        return self[LABEL_COLUMN].astype(np.int8)

    @property
    def times(self) -> np.ndarray:
        if self.time_column is None:
            raise ValidationError("table has no time column")
        return self[self.time_column]

    # derivation -----------------------------------------------------------
    def _derive(self, columns) -> "CaseTable":
        return CaseTable(tuple(columns), self.group_key_columns, self.time_column)

    def take(self, rows) -> "CaseTable":
        rows = np.asarray(rows, dtype=np.int64)
        return self._derive(c.take(rows) for c in self.columns)

    def with_columns(self, *columns: Column) -> "CaseTable":
        """Replace same-named columns in place, append new ones at the end."""
        cols = list(self.columns)
        for c in columns:
            if c.name in self._index:
                cols[self._index[c.name]] = c
            else:
                cols.append(c)
        return self._derive(cols)

    def replace_values(self, name: str, values=None, mask=None) -> "CaseTable":
        return self.with_columns(self.col(name).replace(values, mask))

    def drop(self, *names: str) -> "CaseTable":
        return self._derive(c for c in self.columns if c.name not in names)

    def equals(self, other: "CaseTable") -> bool:
        return (
            self.names == other.names
            and self.group_key_columns == other.group_key_columns
            and self.time_column == other.time_column
            and all(a.equals(b) for a, b in zip(self.columns, other.columns))
        )

    def content_hash(self) -> str:
        """SHA-256 over the canonical CSV rendering."""
        h = hashlib.sha256()
        for line in _csv_lines(self):
            h.update(line.encode("utf-8"))
        return h.hexdigest()

    def row_hashes(self) -> list:
        """One digest per row, for permutation checks."""
        rendered = [_render_column(c) for c in self.columns]
        return [hashlib.sha1("\x1f".join(r[i] for r in rendered).encode()).hexdigest() for i in range(self.n)]

    def schema_descriptor(self) -> dict:
        return {
            "fields": [f.to_dict() for f in self.schema],
            "group_keys": list(self.group_key_columns),
            "time_column": self.time_column,
        }


def concat(tables: Sequence[CaseTable]) -> CaseTable:
    """Row-wise concatenation; categorical dictionaries are merged."""
    first = tables[0]
    cols = []
    for j, c0 in enumerate(first.columns):
        parts = [t.columns[j] for t in tables]
        if any(p.name != c0.name or p.kind is not c0.kind for p in parts):
            raise SchemaError("tables have different schemas")
        if c0.kind is ColumnKind.CATEGORICAL:
            vals = np.concatenate([p.decoded() for p in parts])
            cols.append(Column.build(c0.name, c0.kind, vals, group=c0.group, categories=_merged_categories(parts)))
        else:
            vals = np.concatenate([p.values for p in parts])
            mask = np.concatenate([p.mask for p in parts])
            cols.append(Column(c0.name, c0.kind, vals, mask, (), c0.group))
    return CaseTable(tuple(cols), first.group_key_columns, first.time_column)


def _merged_categories(parts):
    seen = {}
    for p in parts:
        for c in p.categories:
            seen.setdefault(c, None)
    return tuple(seen)


# ---------------------------------------------------------------------------
# schema descriptors

def schema_from_descriptor(desc: Mapping) -> tuple:
    """Parse a JSON schema descriptor into ``(fields, group_keys, time_column)``."""
    try:
        fields = [Field(f["name"], ColumnKind(f["kind"]), f.get("group", "")) for f in desc["fields"]]
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad schema descriptor: {exc}") from exc
    return fields, tuple(desc.get("group_keys", ())), desc.get("time_column")


def load_schema(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# CSV

_TRUE = {"true", "1", "t", "yes"}
_FALSE = {"false", "0", "f", "no"}


def _parse_datetime(cell: str) -> int:
    try:
        return int(cell)
    except ValueError:
        pass
    dt = datetime.fromisoformat(cell)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def read_csv(path, schema, strict: bool = True) -> CaseTable:
    """Read a canonical-schema CSV.

    Args:
        path: file path.
        schema: descriptor dict (``fields``/``group_keys``/``time_column``)
            or a list of :class:`Field`.
        strict: reject header columns that are not in the schema.

    Raises:
        ParseError: ragged row or unparseable cell (carries the line number).
        SchemaError: header does not match the schema.
    """
    if isinstance(schema, Mapping):
        fields, group_keys, time_column = schema_from_descriptor(schema)
    else:
        fields, group_keys, time_column = list(schema), (), None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("missing header row", line=1) from None
        pos = {name: i for i, name in enumerate(header)}
        unknown = [h for h in header if h not in {f.name for f in fields}]
        if unknown and strict:
            raise SchemaError(f"unknown columns in header: {unknown}")
        absent = [f.name for f in fields if f.name not in pos]
        if absent:
            raise SchemaError(f"header lacks schema columns: {absent}")
        raw = {f.name: [] for f in fields}
        for row in reader:
            line = reader.line_num
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, found {len(row)}", line=line)
            for f in fields:
                raw[f.name].append((row[pos[f.name]], line))
    columns = [_parse_column(f, raw[f.name]) for f in fields]
    return CaseTable(tuple(columns), group_keys, time_column)


def _parse_column(f: Field, cells) -> Column:
    n = len(cells)
    mask = np.array([c == "" for c, _ in cells], dtype=bool)
    if f.kind is ColumnKind.CATEGORICAL:
        return Column.build(f.name, f.kind, [None if c == "" else c for c, _ in cells], group=f.group)
    if f.kind is ColumnKind.IDENTIFIER:
        return Column.build(f.name, f.kind, [None if c == "" else c for c, _ in cells], group=f.group)
    vals = np.empty(n, dtype=_DTYPE[f.kind])
    for i, (c, line) in enumerate(cells):
        if c == "":
            vals[i] = _PLACEHOLDER[f.kind]
            continue
        try:
            if f.kind is ColumnKind.NUMERIC:
                vals[i] = float(c)
            elif f.kind is ColumnKind.BOOLEAN:
                lc = c.strip().lower()
                if lc not in _TRUE and lc not in _FALSE:
                    raise ValueError(c)
                vals[i] = lc in _TRUE
            else:
                vals[i] = _parse_datetime(c)
        except ValueError:
            raise ParseError(f"cannot parse {c!r} as {f.kind.value} in column {f.name!r}", line=line) from None
    return Column.build(f.name, f.kind, vals, mask=mask, group=f.group)


def _render_column(c: Column) -> list:
    out = []
    if c.kind is ColumnKind.CATEGORICAL:
        cats = c.categories
        for v, m in zip(c.values, c.mask):
            out.append("" if m else cats[v])
    elif c.kind is ColumnKind.NUMERIC:
        for v, m in zip(c.values.tolist(), c.mask):
            out.append("" if m else repr(v) if math.isfinite(v) else str(v))
    elif c.kind is ColumnKind.BOOLEAN:
        for v, m in zip(c.values, c.mask):
            out.append("" if m else ("true" if v else "false"))
    elif c.kind is ColumnKind.DATETIME:
        for v, m in zip(c.values.tolist(), c.mask):
            out.append("" if m else str(v))
    else:
        for v, m in zip(c.values, c.mask):
            out.append("" if m else v)
    return out


def _csv_lines(table: CaseTable) -> Iterable[str]:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.names)
    yield buf.getvalue()
    rendered = [_render_column(c) for c in table.columns]
    for i in range(table.n):
        buf.seek(0)
        buf.truncate()
        writer.writerow([r[i] for r in rendered])
        yield buf.getvalue()


def write_csv(table: CaseTable, path) -> None:
    """Write RFC-4180 CSV; missing cells become empty strings."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in _csv_lines(table):
            fh.write(line)


def sort_by_time(table: CaseTable) -> CaseTable:
    """Stable chronological reordering."""
    if table.time_column is None:
        raise ValidationError("sort_by_time requires a declared time column")
    if table.missing(table.time_column).any():
        raise ValidationError(f"time column {table.time_column!r} has missing values")
    order = np.argsort(table.times, kind="stable")
    return table.take(order)
