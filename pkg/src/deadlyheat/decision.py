"""Excess-mortality ratios, alarm rule and observed event levels."""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .glm import GlmFit, predict_mean
from .synoptic import HeatwaveEvent

__all__ = [
    "HeatwaveLevel",
    "AlarmConfig",
    "ForecastBundle",
    "excess_ratios",
    "decide_alarm",
    "level_from_ratio",
    "label_event",
    "LEVEL_THRESHOLDS",
]

# observed-level cut points; fixed by the level definition, independent of alarm tuning
LEVEL_THRESHOLDS = {"l1": 0.15, "l2": 0.30}


class HeatwaveLevel(enum.IntEnum):
    L0 = 0
    L1 = 1
    L2 = 2

    def at_least(self, level: str) -> bool:
        return self >= {"l1": HeatwaveLevel.L1, "l2": HeatwaveLevel.L2}[level]


@dataclass(frozen=True)
class AlarmConfig:
    alpha_l1: float = 0.15
    alpha_l2: float = 0.30

    def __post_init__(self):
        if not 0 < self.alpha_l1 <= self.alpha_l2:
            raise ValueError("need 0 < alpha_l1 <= alpha_l2")

    def alpha(self, level: str) -> float:
        return {"l1": self.alpha_l1, "l2": self.alpha_l2}[level]


def excess_ratios(all_cause, baseline, dates: Sequence[dt.date] | None = None) -> np.ndarray:
    """(all-cause - baseline) / baseline, day by day."""
    a = np.asarray(all_cause, dtype=float)
    b = np.asarray(baseline, dtype=float)
    if a.shape != b.shape:
        raise ValueError("all-cause and baseline lengths differ")
    bad = np.flatnonzero(~(b > 0))
    if bad.size:
        i = int(bad[0])
        day = dates[i] if dates is not None else f"index {i}"
        raise DataError(f"non-positive baseline {b[i]!r} on {day}")
    return (a - b) / b


@dataclass(frozen=True, eq=False)
class ForecastBundle:
    dates: tuple
    all_cause: np.ndarray
    baseline: np.ndarray

    def __post_init__(self):
        if not len(self.dates) == len(self.all_cause) == len(self.baseline):
            raise ValueError("bundle arrays differ in length")
        object.__setattr__(self, "dates", tuple(self.dates))

    @property
    def excess(self) -> np.ndarray:
        return np.asarray(self.all_cause) - np.asarray(self.baseline)

    @property
    def ratios(self) -> np.ndarray:
        return excess_ratios(self.all_cause, self.baseline, self.dates)

    def max_ratio(self, days: Sequence[dt.date]) -> float:
        days = set(days)
        sel = [i for i, d in enumerate(self.dates) if d in days]
        if not sel:
            raise ValueError("no event day falls inside the forecast horizon")
        return float(np.max(self.ratios[sel]))


def decide_alarm(bundle: ForecastBundle, event_days_in_horizon: Sequence[dt.date], alpha: float) -> bool:
    """Alarm iff some event day's forecast ratio strictly exceeds ``alpha``."""
    return bundle.max_ratio(event_days_in_horizon) > alpha


def level_from_ratio(r: float) -> HeatwaveLevel:
    if r > LEVEL_THRESHOLDS["l2"]:
        return HeatwaveLevel.L2
    if r > LEVEL_THRESHOLDS["l1"]:
        return HeatwaveLevel.L1
    return HeatwaveLevel.L0


def label_event(series, glm_fit: GlmFit, event: HeatwaveEvent) -> tuple[HeatwaveLevel, float]:
    """Observed level: maximum daily excess over the fitted baseline during the event."""
    days = event.days()
    try:
        idx = [series.index_of(d) for d in days]
    except KeyError as exc:
        raise DataError(f"event {event.start}..{event.end} outside the series") from exc
    observed = np.asarray(series.deaths)[idx]
    if np.isnan(observed).any():
        raise DataError(f"missing deaths during event {event.start}..{event.end}")
    baseline = predict_mean(glm_fit, days, series.holidays)
    r = float(np.max(excess_ratios(observed, baseline, days)))
    return level_from_ratio(r), r
