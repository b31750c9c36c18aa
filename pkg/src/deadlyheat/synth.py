"""Seeded synthetic worlds with known heat events.

Deaths are Poisson around a log-linear calendar mean times a designed excess
multiplier on event days; temperature is a seasonal cycle with AR(1) noise,
lifted on event days, and the synoptic codes mark event days as tropical.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .decision import HeatwaveLevel
from .synoptic import HeatwaveEvent, SscCode
from .timeseries import DailySeries, day_of_week, write_csv

__all__ = [
    "EventSpec",
    "WorldParams",
    "WorldTruth",
    "generate",
    "truth_label",
    "spanish_holidays",
    "random_events",
    "write_world",
]

SUMMER_MONTHS = (6, 7, 8, 9)
# fixed-date national holidays (month, day)
HOLIDAY_DATES = ((1, 1), (1, 6), (5, 1), (8, 15), (10, 12), (11, 1), (12, 6), (12, 8), (12, 25))


def spanish_holidays(years: Sequence[int]) -> frozenset:
    return frozenset(dt.date(y, m, d) for y in years for m, d in HOLIDAY_DATES)


@dataclass(frozen=True)
class EventSpec:
    start: dt.date
    length: int
    multiplier: float
    ssc_pattern: str = "DT"

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=self.length - 1)

    @property
    def designed_ratio(self) -> float:
        return round(self.multiplier - 1.0, 12)  # 1.3 - 1 must not exceed 0.30

    def overlaps(self, event: HeatwaveEvent) -> bool:
        return not (event.end < self.start or event.start > self.end)

    def to_json(self) -> dict:
        return {"start": self.start.isoformat(), "end": self.end.isoformat(), "length": self.length,
                "multiplier": self.multiplier, "ssc_pattern": self.ssc_pattern}


@dataclass(frozen=True)
class WorldParams:
    years: int = 5
    start_year: int = 2000
    base_mortality: float = math.log(150.0)
    annual_amplitude: float = 0.12
    dow_effects: tuple = (0.03, 0.01, 0.0, 0.0, 0.0, -0.02, -0.02)
    holiday_effect: float = -0.05
    temp_mean: float = 16.0
    temp_amplitude: float = 9.0
    temp_noise_sd: float = 2.0
    pressure_mean: float = 1015.0
    pressure_amplitude: float = 3.0
    pressure_noise_sd: float = 4.0
    wind_mean: float = 3.5
    wind_amplitude: float = 0.5
    wind_noise_sd: float = 1.0
    humidity_mean: float = 60.0
    humidity_amplitude: float = 10.0
    humidity_noise_sd: float = 8.0
    ar1_rho: float = 0.7
    event_temp_boost: float = 8.0
    temp_boost_per_excess: float = 0.0
    event_boost_sd: float = 0.0
    precursor_days: int = 0
    events: tuple = ()
    seed: int = 0
    region_name: str = "synthetic"
    level: str = "city"

    def __post_init__(self):
        if self.years < 1:
            raise ValueError("years must be positive")
        if len(self.dow_effects) != 7:
            raise ValueError("dow_effects needs 7 entries (Monday..Sunday)")
        if not 0 <= self.ar1_rho < 1:
            raise ValueError("ar1_rho must lie in [0, 1)")
        if self.event_temp_boost < 8.0:
            raise ValueError("event_temp_boost must be at least 8 degrees")
        if self.precursor_days < 0 or self.event_boost_sd < 0:
            raise ValueError("precursor_days and event_boost_sd must be non-negative")
        events = tuple(e if isinstance(e, EventSpec) else _event_from_json(e) for e in self.events)
        object.__setattr__(self, "events", tuple(sorted(events, key=lambda e: e.start)))
        first, last = dt.date(self.start_year, 1, 1), dt.date(self.start_year + self.years - 1, 12, 31)
        prev_end = None
        for e in self.events:
            if e.multiplier < 1.0:
                raise ValueError(f"event at {e.start}: multiplier {e.multiplier} < 1")
            if e.length < 3:
                raise ValueError(f"event at {e.start}: length must be at least 3 days")
            if e.ssc_pattern not in ("DT", "MT"):
                raise ValueError(f"event at {e.start}: ssc_pattern must be 'DT' or 'MT'")
            if e.start < first or e.end > last:
                raise ValueError(f"event at {e.start} outside the simulated span")
            if e.start.month not in SUMMER_MONTHS or e.end.month not in SUMMER_MONTHS or e.start.year != e.end.year:
                raise ValueError(f"event at {e.start} is not contained in June..September")
            if prev_end is not None and (e.start - prev_end).days < 4:
                raise ValueError(f"event at {e.start} overlaps or touches the previous event")
            prev_end = e.end

    def to_json(self) -> dict:
        obj = dataclasses.asdict(self)
        obj["dow_effects"] = list(self.dow_effects)
        obj["events"] = [e.to_json() for e in self.events]
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "WorldParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown world parameters: {sorted(unknown)}")
        obj = dict(obj)
        if "dow_effects" in obj:
            obj["dow_effects"] = tuple(obj["dow_effects"])
        obj["events"] = tuple(_event_from_json(e) for e in obj.get("events", ()))
        return cls(**obj)


def _event_from_json(obj) -> EventSpec:
    if isinstance(obj, EventSpec):
        return obj
    return EventSpec(dt.date.fromisoformat(obj["start"]), int(obj["length"]), float(obj["multiplier"]),
                     obj.get("ssc_pattern", "DT"))


@dataclass(frozen=True, eq=False)
class WorldTruth:
    mu: np.ndarray
    events: tuple
    start: dt.date

    def event_for(self, event) -> EventSpec:
        if isinstance(event, EventSpec):
            if event in self.events:
                return event
        else:
            for e in self.events:
                if e.overlaps(event):
                    return e
        raise KeyError(f"no injected event matches {event}")

    def true_ratio(self, d: dt.date) -> float:
        """Designed excess ratio on day ``d`` (0 outside events)."""
        for e in self.events:
            if e.start <= d <= e.end:
                return e.designed_ratio
        return 0.0

    def to_json(self) -> dict:
        return {
            "start": self.start.isoformat(),
            "events": [dict(e.to_json(), designed_ratio=e.designed_ratio,
                            truth_level=truth_label(self, e).name) for e in self.events],
            "mu": [float(v) for v in self.mu],
        }


def _ar1(rng, n: int, rho: float, sd: float) -> np.ndarray:
    eps = rng.normal(0.0, sd * math.sqrt(1 - rho * rho), n)
    x = np.empty(n)
    x[0] = rng.normal(0.0, sd)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + eps[i]
    return x


def generate(params: WorldParams) -> tuple[DailySeries, WorldTruth]:
    rng = np.random.default_rng(params.seed)
    start = dt.date(params.start_year, 1, 1)
    end = dt.date(params.start_year + params.years - 1, 12, 31)
    n = (end - start).days + 1
    dates = [start + dt.timedelta(days=k) for k in range(n)]
    doy = np.array([d.timetuple().tm_yday - 1 for d in dates], dtype=float)
    dow = np.array([day_of_week(d) for d in dates])
    holidays = spanish_holidays(range(params.start_year, params.start_year + params.years))
    hol = np.array([d in holidays for d in dates], dtype=float)

    season = np.cos(2 * math.pi * doy / 365.25)  # +1 in early January
    log_mu = (params.base_mortality + params.annual_amplitude * season
              + np.asarray(params.dow_effects)[dow - 1] + params.holiday_effect * hol)
    event_mult = np.ones(n)
    boost = np.zeros(n)
    codes = np.where(rng.random(n) < 0.5, 1, 4)  # DM / MM
    # separate stream so adding events leaves the background weather untouched
    boost_noise = np.random.default_rng([params.seed, 1]).normal(0.0, 1.0, len(params.events)) * params.event_boost_sd
    for e, noise in zip(params.events, boost_noise):
        i0 = (e.start - start).days
        sl = slice(i0, i0 + e.length)
        event_mult[sl] = e.multiplier
        lift = max(params.event_temp_boost + params.temp_boost_per_excess * e.designed_ratio + noise,
                   params.event_temp_boost)
        boost[sl] = lift
        # heat builds over the days before the synoptic onset; codes stay moderate
        P = params.precursor_days
        for k in range(1, P + 1):
            if i0 - k >= 0:
                boost[i0 - k] = max(boost[i0 - k], lift * (P + 1 - k) / (P + 1))
        if e.ssc_pattern == "DT":
            codes[sl] = 2
        else:
            codes[sl] = np.where(np.arange(e.length) % 2 == 0, 2, 5)  # DT, MT, DT, ...
    mu = np.exp(log_mu) * event_mult

    warm = -np.cos(2 * math.pi * (doy - 15) / 365.25)  # +1 in mid July
    temp = params.temp_mean + params.temp_amplitude * warm + _ar1(rng, n, params.ar1_rho, params.temp_noise_sd) + boost
    pressure = (params.pressure_mean - params.pressure_amplitude * warm
                + _ar1(rng, n, params.ar1_rho, params.pressure_noise_sd))
    wind = np.clip(params.wind_mean + params.wind_amplitude * season
                   + _ar1(rng, n, params.ar1_rho, params.wind_noise_sd), 0.0, None)
    humidity = np.clip(params.humidity_mean + params.humidity_amplitude * season
                       + _ar1(rng, n, params.ar1_rho, params.humidity_noise_sd), 0.0, 100.0)
    meteo = np.round(np.column_stack([temp, pressure, wind, humidity]), 2)
    deaths = rng.poisson(mu).astype(float)  # drawn last: rejection sampling consumes a mu-dependent stream

    all_codes = tuple(SscCode)
    ssc = [all_codes[c] for c in codes]
    series = DailySeries(params.region_name, params.level, start, deaths, meteo, holidays, ssc)
    return series, WorldTruth(mu, params.events, start)


def truth_label(truth: WorldTruth, event) -> HeatwaveLevel:
    """Noise-free level implied by the designed multiplier."""
    r = truth.event_for(event).designed_ratio
    if r > 0.30:
        return HeatwaveLevel.L2
    if r > 0.15:
        return HeatwaveLevel.L1
    return HeatwaveLevel.L0


def random_events(seed: int, start_year: int, years: int, per_year: int, ratios: Sequence[float],
                  lengths: Sequence[int] = (5, 6, 7, 8), ssc_pattern: str = "DT",
                  skip_years: int = 0) -> tuple[EventSpec, ...]:
    """Place ``per_year`` non-touching summer events in each year after ``skip_years``.

    Excess ratios cycle through ``ratios`` in a seeded shuffled order so each
    value occurs equally often.
    """
    rng = np.random.default_rng(seed)
    total = per_year * (years - skip_years)
    pool = np.resize(np.asarray(ratios, dtype=float), total)
    rng.shuffle(pool)
    out = []
    k = 0
    for y in range(start_year + skip_years, start_year + years):
        season_lo = dt.date(y, 6, 5)
        season_len = (dt.date(y, 9, 25) - season_lo).days
        slot = season_len // per_year
        for j in range(per_year):
            length = int(rng.choice(lengths))
            offset = int(rng.integers(0, max(slot - length - 4, 1)))
            s = season_lo + dt.timedelta(days=j * slot + offset)
            out.append(EventSpec(s, length, round(1.0 + float(pool[k]), 6), ssc_pattern))
            k += 1
    return tuple(out)


def write_world(directory, series: DailySeries, truth: WorldTruth, params: WorldParams | None = None) -> dict:
    directory = Path(directory)
    paths = write_csv(series, directory)
    obj = truth.to_json()
    if params is not None:
        obj["params"] = params.to_json()
    paths["truth"] = directory / "truth.json"
    paths["truth"].write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")
    return paths
