"""Daily series model, CSV ingestion, calendar covariates and preprocessing.

Mortality and meteorology are kept as dense float arrays over a contiguous
calendar; a missing observation is ``NaN``, never an absent row.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, UnimputableError
from .synoptic import SscCode, parse_code

log = logging.getLogger(__name__)

METEO_COLUMNS = ("temp_c", "pressure_hpa", "wind_ms", "humidity_pct")
LEVELS = ("city", "province")

__all__ = [
    "METEO_COLUMNS",
    "DailyRecord",
    "DailySeries",
    "ingest_csv",
    "write_csv",
    "impute_mortality",
    "impute_meteo",
    "scale_provincial",
    "normalize_minmax",
    "calendar_covariates",
    "day_of_week",
    "day_of_year",
]


def day_of_week(d: dt.date) -> int:
    """ISO weekday, 1 = Monday."""
    return d.isoweekday()


def day_of_year(d: dt.date) -> int:
    """Zero-based ordinal within the year (0..365)."""
    return d.timetuple().tm_yday - 1


def calendar_covariates(date: dt.date, holiday_table: Iterable[dt.date] = ()) -> tuple[int, int, bool]:
    return day_of_week(date), day_of_year(date), date in set(holiday_table)


@dataclass(frozen=True)
class DailyRecord:
    date: dt.date
    deaths: float | None
    temp_c: float | None
    pressure_hpa: float | None
    wind_ms: float | None
    humidity_pct: float | None
    holiday: bool
    ssc: SscCode | None


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DailySeries:
    """Aligned daily records for one region.

    ``deaths`` is ``(n,)`` and ``meteo`` is ``(n, 4)`` in :data:`METEO_COLUMNS`
    order, both float with ``NaN`` for missing.  ``ssc`` is ``None`` when no
    synoptic file was supplied, otherwise a tuple with ``None`` on uncovered days.
    """

    region_name: str
    level: str
    start: dt.date
    deaths: np.ndarray
    meteo: np.ndarray
    holidays: frozenset = field(default_factory=frozenset)
    ssc: tuple | None = None

    def __post_init__(self):
        if self.level not in LEVELS:
            raise DataError(f"level must be one of {LEVELS}, got {self.level!r}")
        deaths = np.asarray(self.deaths, dtype=float)
        meteo = np.asarray(self.meteo, dtype=float).reshape(len(deaths), len(METEO_COLUMNS))
        if np.any(deaths[~np.isnan(deaths)] < 0):
            raise DataError("negative death count")
        hum = meteo[:, 3]
        if np.any((hum[~np.isnan(hum)] < 0) | (hum[~np.isnan(hum)] > 100)):
            raise DataError("humidity outside [0, 100]")
        if self.ssc is not None and len(self.ssc) != len(deaths):
            raise DataError("ssc length does not match the series")
        object.__setattr__(self, "deaths", _readonly(deaths))
        object.__setattr__(self, "meteo", _readonly(meteo))
        object.__setattr__(self, "holidays", frozenset(self.holidays))
        if self.ssc is not None:
            object.__setattr__(self, "ssc", tuple(None if c is None else SscCode(c) for c in self.ssc))

    def __len__(self) -> int:
        return len(self.deaths)

    @property
    def end(self) -> dt.date:
        return self.date(len(self) - 1)

    def date(self, i: int) -> dt.date:
        if i < 0:
            i += len(self)
        return self.start + dt.timedelta(days=int(i))

    @property
    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=k) for k in range(len(self))]

    @property
    def dates64(self) -> np.ndarray:
        return np.datetime64(self.start, "D") + np.arange(len(self))

    def index_of(self, d: dt.date) -> int:
        i = (d - self.start).days
        if not 0 <= i < len(self):
            raise KeyError(f"{d} outside series span {self.start}..{self.end}")
        return i

    @property
    def holiday(self) -> np.ndarray:
        return np.array([d in self.holidays for d in self.dates], dtype=bool)

    @property
    def temperature(self) -> np.ndarray:
        return self.meteo[:, 0]

    @property
    def years(self) -> list[int]:
        return list(range(self.start.year, self.end.year + 1))

    def year_start_index(self, year: int) -> int:
        """Index of the first day of ``year`` clipped to the series span."""
        return int(min(max((dt.date(year, 1, 1) - self.start).days, 0), len(self)))

    def record(self, i: int) -> DailyRecord:
        def opt(x):
            return None if math.isnan(x) else float(x)

        m = self.meteo[i]
        d = self.date(i)
        return DailyRecord(
            d, opt(self.deaths[i]), opt(m[0]), opt(m[1]), opt(m[2]), opt(m[3]),
            d in self.holidays, None if self.ssc is None else self.ssc[i],
        )

    def records(self) -> Iterator[DailyRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def slice(self, lo: int, hi: int) -> "DailySeries":
        """Rows ``lo..hi-1`` as a new series."""
        lo, hi = max(lo, 0), min(hi, len(self))
        if hi <= lo:
            raise DataError(f"empty slice [{lo}, {hi})")
        return replace(
            self,
            start=self.date(lo),
            deaths=self.deaths[lo:hi],
            meteo=self.meteo[lo:hi],
            ssc=None if self.ssc is None else self.ssc[lo:hi],
        )

    def with_deaths(self, deaths: np.ndarray) -> "DailySeries":
        return replace(self, deaths=np.asarray(deaths, dtype=float))

    def with_meteo(self, meteo: np.ndarray) -> "DailySeries":
        return replace(self, meteo=np.asarray(meteo, dtype=float))


# ---------------------------------------------------------------- CSV I/O


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise DataError(f"{where}: malformed date {text!r}") from None


def _parse_float(text: str, where: str) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{where}: not a number {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{where}: non-finite value {text!r}")
    return v


def _read_rows(path, expected: Sequence[str]) -> list[tuple[int, dict[str, str]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header != list(expected):
            raise DataError(f"{path}: header {header} != expected {list(expected)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected):
                raise DataError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            rows.append((lineno, dict(zip(expected, row))))
    return rows


def _keyed_by_date(path, expected) -> dict[dt.date, dict[str, str]]:
    out: dict[dt.date, dict[str, str]] = {}
    for lineno, row in _read_rows(path, expected):
        d = _parse_date(row["date"], f"{path}:{lineno}")
        if d in out:
            raise DataError(f"{path}:{lineno}: duplicate date {d}")
        out[d] = row
    return out


def ingest_csv(mortality_path, meteo_path, ssc_path=None, holidays_path=None, *,
               region_name: str = "region", level: str = "city") -> DailySeries:
    """Read and date-align the four input files into one series."""
    mort = _keyed_by_date(mortality_path, ("date", "deaths"))
    met = _keyed_by_date(meteo_path, ("date",) + METEO_COLUMNS)
    codes = _keyed_by_date(ssc_path, ("date", "code")) if ssc_path is not None else None
    holidays: set[dt.date] = set()
    if holidays_path is not None:
        for lineno, row in _read_rows(holidays_path, ("date",)):
            holidays.add(_parse_date(row["date"], f"{holidays_path}:{lineno}"))

    all_dates = set(mort) | set(met) | (set(codes) if codes else set())
    if not all_dates:
        raise DataError("no dated rows in any input")
    start, end = min(all_dates), max(all_dates)
    n = (end - start).days + 1

    deaths = np.full(n, np.nan)
    for d, row in mort.items():
        v = _parse_float(row["deaths"], f"{mortality_path} {d}")
        if v < 0:
            raise DataError(f"{mortality_path} {d}: negative death count {v}")
        deaths[(d - start).days] = v
    meteo = np.full((n, len(METEO_COLUMNS)), np.nan)
    for d, row in met.items():
        meteo[(d - start).days] = [_parse_float(row[c], f"{meteo_path} {d} {c}") for c in METEO_COLUMNS]
    ssc = None
    if codes is not None:
        ssc = [None] * n
        for d, row in codes.items():
            ssc[(d - start).days] = parse_code(row["code"])
    return DailySeries(region_name, level, start, deaths, meteo, frozenset(holidays), ssc)


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    if float(v).is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def write_csv(series: DailySeries, directory) -> dict[str, Path]:
    """Write the four canonical input files; dates with no data are omitted."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {k: directory / f"{k}.csv" for k in ("mortality", "meteo", "ssc", "holidays")}
    dates = series.dates
    with paths["mortality"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "deaths"))
        for d, v in zip(dates, series.deaths):
            if not math.isnan(v):
                w.writerow((d.isoformat(), _fmt(v)))
    with paths["meteo"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date",) + METEO_COLUMNS)
        for d, row in zip(dates, series.meteo):
            if not np.all(np.isnan(row)):
                w.writerow([d.isoformat()] + [_fmt(v) for v in row])
    if series.ssc is not None:
        with paths["ssc"].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("date", "code"))
            for d, c in zip(dates, series.ssc):
                if c is not None:
                    w.writerow((d.isoformat(), c.value))
    else:
        del paths["ssc"]
    with paths["holidays"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date",))
        for d in sorted(series.holidays):
            w.writerow((d.isoformat(),))
    return paths


def write_merged_csv(series: DailySeries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "deaths") + METEO_COLUMNS + ("holiday", "ssc"))
        for r, row, v in zip(series.records(), series.meteo, series.deaths):
            w.writerow([r.date.isoformat(), _fmt(v)] + [_fmt(x) for x in row]
                       + [int(r.holiday), "" if r.ssc is None else r.ssc.value])
    return path


# ---------------------------------------------------------------- preprocessing


def impute_mortality(series: DailySeries) -> DailySeries:
    """Fill missing deaths with the calendar-month mean over all earlier years.

    The mean is rounded to the nearest integer, ties upward.
    """
    deaths = np.array(series.deaths)
    missing = np.flatnonzero(np.isnan(deaths))
    if missing.size == 0:
        return series
    dates = series.dates
    years = np.array([d.year for d in dates])
    months = np.array([d.month for d in dates])
    observed = ~np.isnan(series.deaths)
    for i in missing:
        sel = observed & (months == months[i]) & (years < years[i])
        if not sel.any():
            raise UnimputableError(f"cannot impute deaths on {dates[i]}: no earlier-year data for that month")
        deaths[i] = math.floor(float(series.deaths[sel].mean()) + 0.5)
    return series.with_deaths(deaths)


def impute_meteo(series: DailySeries) -> DailySeries:
    """Fill each missing meteo value with the mean of all earlier observed values."""
    meteo = np.array(series.meteo)
    for k, name in enumerate(METEO_COLUMNS):
        col = series.meteo[:, k]
        if not np.isnan(col).any():
            continue
        if np.isnan(col[0]):
            raise UnimputableError(f"cannot impute {name} on {series.start}: first record missing")
        ok = ~np.isnan(col)
        csum = np.cumsum(np.where(ok, col, 0.0))
        ccount = np.cumsum(ok)
        for i in np.flatnonzero(~ok):
            meteo[i, k] = csum[i - 1] / ccount[i - 1]
    return series.with_meteo(meteo)


def scale_provincial(series: DailySeries) -> DailySeries:
    """Divide provincial death counts by one hundred; city series pass through."""
    if series.level != "province":
        log.warning("scale_provincial called on %s-level series %r; left unchanged",
                    series.level, series.region_name)
        return series
    return series.with_deaths(np.asarray(series.deaths, dtype=float) / 100.0)


def envelope(values: Sequence[float], t: int) -> tuple[float, float]:
    """(min over positions < t, max over positions <= t), 1-based ``t``."""
    x = np.asarray(values, dtype=float)
    if not 2 <= t <= len(x):
        raise IndexError(f"t={t} outside 2..{len(x)}")
    return float(np.min(x[: t - 1])), float(np.max(x[:t]))


def normalize_minmax(history: Sequence[float], t: int) -> float:
    """Normalize the ``t``-th value (1-based) against the envelope of its history.

    The lower bound uses strictly earlier values, the upper bound includes
    the value itself.  A flat envelope maps to 0.5.
    """
    lo, hi = envelope(history, t)
    if hi == lo:
        return 0.5
    return (float(history[t - 1]) - lo) / (hi - lo)
