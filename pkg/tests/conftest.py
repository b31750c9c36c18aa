import datetime as dt

import numpy as np
import pytest

from deadlyheat.timeseries import DailySeries

# acceptance tests append (criterion, passed, detail) here; printed at the end
ACCEPTANCE_RESULTS: list = []


def series_from_codes(codes, start=dt.date(2001, 7, 1), deaths=None, temp=None):
    n = len(codes)
    deaths = np.full(n, 100.0) if deaths is None else deaths
    meteo = np.column_stack([np.full(n, 25.0) if temp is None else temp,
                             np.full(n, 1015.0), np.full(n, 3.0), np.full(n, 60.0)])
    return DailySeries("test", "city", start, deaths, meteo, frozenset(), tuple(codes))


@pytest.fixture
def make_series():
    return series_from_codes


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
