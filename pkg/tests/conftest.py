import json
from pathlib import Path

import numpy as np
import pytest

from p2prisk.synth import GenConfig, generate_dataset
from p2prisk.table import CaseTable, Column, ColumnKind

GOLDEN = Path(__file__).parent / "golden"


def golden(name):
    with open(GOLDEN / name, encoding="utf-8") as fh:
        return json.load(fh)


def make_table(times, groups=None, y=None, extra=None):
    """Small table with a datetime column, optional vendor groups and label."""
    n = len(times)
    cols = [
        Column.build("case_id", ColumnKind.IDENTIFIER, [f"C{i}" for i in range(n)]),
        Column.build("created_at", ColumnKind.DATETIME, np.asarray(times, dtype=np.int64)),
    ]
    keys = ()
    if groups is not None:
        cols.append(Column.build("vendor_id", ColumnKind.IDENTIFIER, [str(g) for g in groups]))
        keys = ("vendor_id",)
    if y is not None:
        cols.append(Column.build("y_risk", ColumnKind.BOOLEAN, np.asarray(y, dtype=bool)))
    for c in extra or ():
        cols.append(c)
    return CaseTable(tuple(cols), keys, "created_at")


@pytest.fixture(scope="session")
def small_data():
    """2,000 generated cases; shared across modules (read-only)."""
    table, manifest = generate_dataset(GenConfig(n_cases=2000, seed=11))
    return table, manifest


@pytest.fixture(scope="session")
def mid_data():
    table, manifest = generate_dataset(GenConfig(n_cases=4000, seed=5))
    return table, manifest


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "ACCEPTANCE", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
