import csv
import datetime as dt

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

VARIABLES = ("new_cases_pmp", "new_deaths_pmp", "stringency_index")


def write_wide(path, dates, ids, values, missing="NA"):
    """values: (len(ids), len(dates)) with NaN for missing cells."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *ids])
        for t, d in enumerate(dates):
            w.writerow([d.isoformat(), *[missing if np.isnan(v) else repr(float(v)) for v in values[:, t]]])


def write_meta(path, ids, pops, extra=None):
    extra = extra or {}
    cols = ["id", "name", "population", *extra]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r, (i, p) in enumerate(zip(ids, pops)):
            w.writerow([i, f"Country {i}", p, *[extra[c][r] for c in extra]])


def day_range(start, n):
    return [start + dt.timedelta(days=i) for i in range(n)]


@pytest.fixture
def panel_files(tmp_path):
    """Builder for a panel fixture on disk; returns (paths, metadata path)."""

    def build(ids, dates, values_by_var, pops=None, extra=None):
        paths = {}
        for v, vals in values_by_var.items():
            p = tmp_path / f"{v}.csv"
            write_wide(p, dates, ids, vals)
            paths[v] = p
        meta = None
        if pops is not None:
            meta = tmp_path / "meta.csv"
            write_meta(meta, ids, pops, extra)
        return paths, meta

    return build


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail=""):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
