"""Heatwave detection from daily Spatial Synoptic Classification (SSC) codes.

A day belongs to a heatwave when at least one 3-day window containing it is
either all Dry Tropical, or holds both a Dry Tropical and a Moist Tropical day.
A heatwave is a maximal run of such days.
"""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "SscCode",
    "HeatwaveEvent",
    "parse_code",
    "window_qualifies",
    "day_qualifies",
    "qualifying_days",
    "find_runs",
    "detect_heatwaves",
]


class SscCode(str, enum.Enum):
    DP = "DP"
    DM = "DM"
    DT = "DT"
    MP = "MP"
    MM = "MM"
    MT = "MT"
    OTHER = "OTHER"


_CODES = tuple(SscCode)
_DT = _CODES.index(SscCode.DT)
_MT = _CODES.index(SscCode.MT)


def parse_code(token: str) -> SscCode:
    try:
        return SscCode(token.strip().upper())
    except ValueError:
        raise DataError(f"unknown SSC token {token!r}") from None


@dataclass(frozen=True, order=True)
class HeatwaveEvent:
    """Inclusive date span of a detected heatwave."""

    start: dt.date
    end: dt.date

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"event end {self.end} precedes start {self.start}")

    @property
    def length(self) -> int:
        return (self.end - self.start).days + 1

    def days(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=k) for k in range(self.length)]


def window_qualifies(w: Sequence[SscCode]) -> bool:
    if len(w) != 3:
        raise ValueError("a synoptic window has exactly 3 codes")
    w = [SscCode(c) for c in w]
    if all(c is SscCode.DT for c in w):
        return True
    return SscCode.DT in w and SscCode.MT in w


def _as_index_array(codes) -> np.ndarray:
    return np.fromiter((_CODES.index(SscCode(c)) for c in codes), dtype=np.int8, count=len(codes))


def qualifying_days(codes) -> np.ndarray:
    """Boolean mask of heatwave days; windows hanging off either end are ignored."""
    idx = codes if isinstance(codes, np.ndarray) and codes.dtype == np.int8 else _as_index_array(codes)
    n = len(idx)
    mask = np.zeros(n, dtype=bool)
    if n < 3:
        return mask
    is_dt = idx == _DT
    is_mt = idx == _MT
    n_dt = is_dt[:-2].astype(np.int8) + is_dt[1:-1] + is_dt[2:]
    n_mt = is_mt[:-2].astype(np.int8) + is_mt[1:-1] + is_mt[2:]
    window_ok = (n_dt == 3) | ((n_dt > 0) & (n_mt > 0))
    # window s covers days s, s+1, s+2
    mask[:-2] |= window_ok
    mask[1:-1] |= window_ok
    mask[2:] |= window_ok
    return mask


def day_qualifies(codes: Sequence[SscCode], t: int) -> bool:
    if not 0 <= t < len(codes):
        raise IndexError(t)
    return bool(qualifying_days(codes)[t]) if len(codes) >= 3 else False


def find_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as inclusive (start, end) index pairs."""
    m = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    edges = np.flatnonzero(m[1:] != m[:-1])
    return [(int(a), int(b) - 1) for a, b in zip(edges[::2], edges[1::2])]


def detect_heatwaves(series) -> list[HeatwaveEvent]:
    """Heatwave events of a DailySeries, sorted and disjoint."""
    if series.ssc is None:
        raise DataError("series has no SSC codes")
    missing = [series.date(i) for i, c in enumerate(series.ssc) if c is None]
    if missing:
        shown = ", ".join(str(d) for d in missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise DataError(f"missing SSC codes on {shown}{more}")
    runs = find_runs(qualifying_days(series.ssc))
    return [HeatwaveEvent(series.date(a), series.date(b)) for a, b in runs]

