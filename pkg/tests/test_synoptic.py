import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deadlyheat.errors import DataError
from deadlyheat.synoptic import (HeatwaveEvent, SscCode, day_qualifies, detect_heatwaves, find_runs,
                                 parse_code, qualifying_days, window_qualifies)
from conftest import series_from_codes

DT, MT, DM, MM = SscCode.DT, SscCode.MT, SscCode.DM, SscCode.MM
CODES = list(SscCode)


def brute_force_events(codes):
    """Enumerate windows one by one, then glue qualifying days into runs."""
    n = len(codes)
    good = [False] * n
    for s in range(n - 2):
        w = codes[s:s + 3]
        ok = all(c == DT for c in w) or (DT in w and MT in w)
        if ok:
            for k in range(s, s + 3):
                good[k] = True
    runs, k = [], 0
    while k < n:
        if good[k]:
            j = k
            while j + 1 < n and good[j + 1]:
                j += 1
            runs.append((k, j))
            k = j + 1
        else:
            k += 1
    return runs


def test_window_rule_examples():
    assert window_qualifies([DT, DT, DT])
    assert window_qualifies([DT, MT, DM])
    assert not window_qualifies([DM, DM, DT])
    assert not window_qualifies([MT, MT, MT])


def test_window_needs_three_codes():
    with pytest.raises(ValueError):
        window_qualifies([DT, DT])


def test_day_qualifies_examples():
    codes = [DM, DT, DT, DT, DM]
    assert day_qualifies(codes, 1)
    assert not day_qualifies(codes, 0)
    assert not any(day_qualifies([DT, DT], t) for t in range(2))


def test_detect_examples():
    assert detect_heatwaves(series_from_codes([DM] * 10)) == []
    s = series_from_codes([DM, DT, DT, DT, DM])
    assert detect_heatwaves(s) == [HeatwaveEvent(s.date(1), s.date(3))]
    (e,) = detect_heatwaves(series_from_codes([DT] * 10))
    assert e.length == 10


def test_mixed_window_marks_all_three_days():
    # DM DT MT holds both tropical types, so the leading DM day is in; MM before it is not
    s = series_from_codes([MM, DM, DT, MT, MM, MM])
    assert detect_heatwaves(s) == [HeatwaveEvent(s.date(1), s.date(4))]


def test_missing_codes_listed():
    s = series_from_codes([DT, None, DT, None])
    with pytest.raises(DataError, match="2001-07-02.*2001-07-04"):
        detect_heatwaves(s)


def test_parse_code():
    assert parse_code(" dt ") is DT
    with pytest.raises(DataError):
        parse_code("XX")


def test_find_runs():
    assert find_runs(np.array([0, 1, 1, 0, 1], bool)) == [(1, 2), (4, 4)]
    assert find_runs(np.zeros(0, bool)) == []


def test_exhaustive_short_sequences():
    alphabet = [DT, MT, DM]
    for n in range(0, 7):
        for codes in itertools.product(alphabet, repeat=n):
            codes = list(codes)
            assert find_runs(qualifying_days(codes)) == brute_force_events(codes), codes


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(CODES), min_size=3, max_size=40))
def test_events_disjoint_and_maximal(codes):
    s = series_from_codes(codes)
    events = detect_heatwaves(s)
    for a, b in zip(events, events[1:]):
        assert (b.start - a.end).days >= 2
    for e in events:
        assert e.length >= 3


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(CODES), min_size=3, max_size=40))
def test_no_tropical_no_event(codes):
    codes = [c for c in codes if c not in (DT,)]
    if len(codes) >= 3:
        assert detect_heatwaves(series_from_codes(codes)) == []
