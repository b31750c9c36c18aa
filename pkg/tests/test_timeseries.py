import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deadlyheat.errors import DataError, UnimputableError
from deadlyheat.synoptic import SscCode
from deadlyheat.timeseries import (DailySeries, calendar_covariates, impute_meteo, impute_mortality, ingest_csv,
                                   normalize_minmax, scale_provincial, write_csv)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def _meteo_rows(dates):
    return "".join(f"{d},25.0,1015.0,3.0,60.0\n" for d in dates)


def _series(deaths, level="city", start=dt.date(2019, 1, 1), temps=None):
    n = len(deaths)
    temps = np.full(n, 20.0) if temps is None else np.asarray(temps, float)
    meteo = np.column_stack([temps, np.full(n, 1015.0), np.full(n, 3.0), np.full(n, 60.0)])
    return DailySeries("x", level, start, np.asarray(deaths, float), meteo)


def test_ingest_passthrough(tmp_path):
    m = _write(tmp_path / "m.csv", "date,deaths\n2020-01-01,5\n2020-01-02,6\n2020-01-03,7\n")
    z = _write(tmp_path / "z.csv", "date,temp_c,pressure_hpa,wind_ms,humidity_pct\n"
               + _meteo_rows(["2020-01-01", "2020-01-02", "2020-01-03"]))
    s = ingest_csv(m, z, region_name="r", level="city")
    assert len(s) == 3
    assert list(s.deaths) == [5, 6, 7]


def test_ingest_alignment_marks_missing(tmp_path):
    days = [dt.date(2020, 1, d) for d in range(1, 11)]
    m = _write(tmp_path / "m.csv", "date,deaths\n" + "".join(f"{d},3\n" for d in days))
    z = _write(tmp_path / "z.csv", "date,temp_c,pressure_hpa,wind_ms,humidity_pct\n" + _meteo_rows(days[2:]))
    s = ingest_csv(m, z, region_name="r", level="city")
    assert np.isnan(s.meteo[:2]).all()
    assert not np.isnan(s.meteo[2:]).any()


@pytest.mark.parametrize("body", [
    "2020-02-30,5\n",                  # invalid calendar day
    "2020-01-01,-1\n",                 # negative count
    "2020-01-01,5\n2020-01-01,6\n",    # duplicate date
])
def test_ingest_rejects(tmp_path, body):
    m = _write(tmp_path / "m.csv", "date,deaths\n" + body)
    z = _write(tmp_path / "z.csv", "date,temp_c,pressure_hpa,wind_ms,humidity_pct\n" + _meteo_rows(["2020-01-01"]))
    with pytest.raises(DataError):
        ingest_csv(m, z, region_name="r", level="city")


def test_ingest_unknown_ssc_token(tmp_path):
    m = _write(tmp_path / "m.csv", "date,deaths\n2020-01-01,5\n")
    z = _write(tmp_path / "z.csv", "date,temp_c,pressure_hpa,wind_ms,humidity_pct\n" + _meteo_rows(["2020-01-01"]))
    c = _write(tmp_path / "c.csv", "date,code\n2020-01-01,HOT\n")
    with pytest.raises(DataError):
        ingest_csv(m, z, c, region_name="r", level="city")


def test_csv_round_trip_is_bit_exact(tmp_path):
    src = tmp_path / "in"
    src.mkdir()
    days = [dt.date(2020, 1, d) for d in range(1, 6)]
    mort = "date,deaths\n" + "".join(f"{d},{k}\n" for k, d in enumerate(days))
    met = ("date,temp_c,pressure_hpa,wind_ms,humidity_pct\n"
           + "".join(f"{d},{20 + k / 3!r},1015.25,3.5,{50 + k}\n" for k, d in enumerate(days)))
    ssc = "date,code\n" + "".join(f"{d},{c}\n" for d, c in zip(days, ["DT", "MT", "DM", "OTHER", "MP"]))
    hol = "date\n2020-01-01\n"
    paths = [_write(src / n, t) for n, t in
             (("mortality.csv", mort), ("meteo.csv", met), ("ssc.csv", ssc), ("holidays.csv", hol))]
    s = ingest_csv(*paths, region_name="r", level="city")
    out = write_csv(s, tmp_path / "out")
    s2 = ingest_csv(out["mortality"], out["meteo"], out["ssc"], out["holidays"], region_name="r", level="city")
    assert np.array_equal(s.meteo, s2.meteo) and np.array_equal(s.deaths, s2.deaths)
    assert s.ssc == s2.ssc and s.holidays == s2.holidays
    assert out["mortality"].read_text() == mort
    assert out["ssc"].read_text() == ssc


def test_impute_mortality_month_mean():
    start = dt.date(2019, 1, 1)
    n = (dt.date(2021, 12, 31) - start).days + 1
    deaths = np.full(n, 50.0)
    dates = [start + dt.timedelta(days=k) for k in range(n)]
    for k, d in enumerate(dates):
        if d.month == 6:
            deaths[k] = {2019: 30.0, 2020: 40.0, 2021: 99.0}[d.year]
    miss = dates.index(dt.date(2021, 6, 15))
    deaths[miss] = np.nan
    out = impute_mortality(_series(deaths, start=start))
    assert out.deaths[miss] == 35
    assert np.array_equal(np.delete(out.deaths, miss), np.delete(deaths, miss))


def test_impute_mortality_identity_and_error():
    s = _series([1.0, 2.0, 3.0])
    assert impute_mortality(s) is s
    with pytest.raises(UnimputableError, match="1995-06-15"):
        impute_mortality(_series([1.0, np.nan], start=dt.date(1995, 6, 14)))


def test_impute_mortality_rounds_ties_up():
    # June 2019 mean 30.5 -> 31
    start = dt.date(2019, 6, 1)
    deaths = [30.0, 31.0] + [np.nan] * 28 + [0.0] * 31
    deaths = np.array(deaths)
    deaths[2:30] = [30.0, 31.0] * 14
    n = (dt.date(2020, 6, 30) - start).days + 1
    full = np.full(n, 10.0)
    full[:30] = deaths[:30]
    full[-1] = np.nan
    out = impute_mortality(_series(full, start=start))
    assert out.deaths[-1] == 31


def test_impute_meteo_examples():
    assert list(impute_meteo(_series([1, 1, 1], temps=[10, np.nan, 20])).temperature) == [10, 10, 20]
    assert list(impute_meteo(_series([1, 1, 1], temps=[10, 20, np.nan])).temperature) == [10, 20, 15]
    with pytest.raises(UnimputableError):
        impute_meteo(_series([1, 1], temps=[np.nan, 1.0]))


def test_scale_provincial_examples(caplog):
    assert list(scale_provincial(_series([250, 300], level="province")).deaths) == [2.5, 3.0]
    assert list(scale_provincial(_series([0], level="province")).deaths) == [0.0]
    city = _series([250])
    assert list(scale_provincial(city).deaths) == [250]
    assert "unchanged" in caplog.text


@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=20), st.integers(1, 9))
def test_scale_provincial_linear(deaths, a):
    x = scale_provincial(_series(deaths, level="province")).deaths
    ax = scale_provincial(_series([a * d for d in deaths], level="province")).deaths
    assert np.allclose(ax, a * x)


def test_normalize_minmax_examples():
    # value 20 is the running maximum at t=2, so the stated formula gives 1.0
    assert normalize_minmax([10, 20, 30], 2) == 1.0
    assert normalize_minmax([10, 20, 30], 3) == 1.0
    assert normalize_minmax([7, 7, 7], 3) == 0.5
    assert normalize_minmax([10, 30, 20], 3) == 0.5
    with pytest.raises(IndexError):
        normalize_minmax([1, 2], 1)
    with pytest.raises(IndexError):
        normalize_minmax([1, 2], 3)


@settings(max_examples=200)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20), st.data())
def test_normalize_minmax_in_unit_interval_and_monotone(hist, data):
    t = data.draw(st.integers(2, len(hist)))
    lo, hi = min(hist[: t - 1]), max(hist[:t])
    v = normalize_minmax(hist, t)
    if lo <= hist[t - 1] <= hi:
        assert -1e-12 <= v <= 1 + 1e-12
    bumped = list(hist)
    bumped[t - 1] = hist[t - 1] + 1.0
    assert normalize_minmax(bumped, t) >= v - 1e-12


def test_calendar_covariates():
    assert calendar_covariates(dt.date(2023, 1, 2)) == (1, 1, False)
    dow, doy, _ = calendar_covariates(dt.date(2020, 12, 31))
    assert (dow, doy) == (4, 365)
    assert calendar_covariates(dt.date(2020, 1, 6), {dt.date(2020, 1, 6)})[2] is True


def test_series_invariants():
    with pytest.raises(DataError):
        _series([-1.0])
    s = _series([1.0, 2.0])
    with pytest.raises(ValueError):
        s.deaths[0] = 5.0
    rec = s.record(0)
    assert rec.deaths == 1.0 and rec.ssc is None
    assert not math.isnan(rec.temp_c)
    assert s.slice(1, 2).start == dt.date(2019, 1, 2)
    assert isinstance(SscCode("DT"), SscCode)
