"""Two temperature-driven comparison predictors of deadly heat.

* spline projection: least squares of the observed excess ratio on a natural
  cubic spline of day-of-season crossed with (1, T, T^2);
* exponential projection: excess = annual average * (exp(beta * (T - T0)+) - 1).

Both read the temperature of the event days themselves, unlike the main
pipeline, and both carry alarm thresholds picked by maximizing training F1.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .decision import LEVEL_THRESHOLDS, HeatwaveLevel, label_event
from .evaluation import ConfusionCounts, alpha_grid
from .errors import DataError, InsufficientDataError
from .glm import GlmDesignConfig, GlmFit, fit_baseline, predict_mean
from .synoptic import HeatwaveEvent, detect_heatwaves
from .timeseries import DailySeries

log = logging.getLogger(__name__)

__all__ = [
    "SplineProjectionFit",
    "ExpProjectionFit",
    "ReferenceOutcome",
    "natural_spline_basis",
    "spline_design",
    "fit_spline_projection",
    "fit_exp_projection",
    "predict_ratios",
    "predict_event",
    "calibrate_threshold",
    "reference_outcomes",
    "reference_counts",
    "fit_from_json",
]

SEASON_START = (6, 1)
SEASON_DAYS = 122  # June 1 .. September 30
T0_GRID = tuple(25.0 + 0.5 * k for k in range(21))
TEMP_CENTER, TEMP_SCALE = 25.0, 10.0
RIDGE = 1e-8


def day_of_season(d: dt.date) -> int:
    return (d - dt.date(d.year, *SEASON_START)).days


def _in_season(d: dt.date) -> bool:
    return 0 <= day_of_season(d) < SEASON_DAYS


def natural_spline_basis(x, knots: Sequence[float]) -> np.ndarray:
    """Truncated-power natural cubic spline basis: 1, x, and K-2 curvature terms."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(knots, dtype=float)
    if k.size < 2:
        raise ValueError("a natural spline needs at least 2 knots")

    def d(j):
        return (np.maximum(x - k[j], 0.0) ** 3 - np.maximum(x - k[-1], 0.0) ** 3) / (k[-1] - k[j])

    cols = [np.ones_like(x), x]
    last = d(k.size - 2)
    cols += [d(j) - last for j in range(k.size - 2)]
    return np.column_stack(cols)


def spline_design(season_day, temperature, knots) -> np.ndarray:
    """Row-wise tensor product of the season basis with (1, T, T^2)."""
    # scale to O(1) so the normal equations stay well conditioned
    s = natural_spline_basis(np.asarray(season_day, dtype=float) / SEASON_DAYS, np.asarray(knots) / SEASON_DAYS)
    tt = (np.asarray(temperature, dtype=float) - TEMP_CENTER) / TEMP_SCALE
    poly = np.column_stack([np.ones_like(tt), tt, tt * tt])
    return (s[:, :, None] * poly[:, None, :]).reshape(len(tt), -1)


@dataclass(frozen=True, eq=False)
class SplineProjectionFit:
    knots: tuple
    coef: np.ndarray
    thresholds: dict = field(default_factory=lambda: dict(LEVEL_THRESHOLDS))

    kind = "spline"

    def __post_init__(self):
        if len(self.knots) < 2:
            raise ValueError("need at least 2 knots")
        if not np.all(np.isfinite(self.coef)):
            raise ValueError("non-finite spline coefficients")

    def ratios(self, dates, temperature) -> np.ndarray:
        sd = [day_of_season(d) for d in dates]
        return spline_design(sd, temperature, self.knots) @ self.coef

    def to_json(self) -> dict:
        return {"kind": self.kind, "knots": list(self.knots), "coef": [float(c) for c in self.coef],
                "thresholds": dict(self.thresholds)}


@dataclass(frozen=True, eq=False)
class ExpProjectionFit:
    t0: float
    beta: float
    annual_avg: float
    thresholds: dict = field(default_factory=lambda: dict(LEVEL_THRESHOLDS))

    kind = "exp"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    def excess(self, temperature) -> np.ndarray:
        return self.annual_avg * self.ratios(None, temperature)

    def ratios(self, dates, temperature) -> np.ndarray:
        over = np.maximum(np.asarray(temperature, dtype=float) - self.t0, 0.0)
        return np.expm1(self.beta * over)

    def to_json(self) -> dict:
        return {"kind": self.kind, "t0": self.t0, "beta": self.beta, "annual_avg": self.annual_avg,
                "thresholds": dict(self.thresholds)}


def fit_from_json(obj: dict):
    obj = dict(obj)
    kind = obj.pop("kind")
    if kind == "spline":
        return SplineProjectionFit(tuple(obj["knots"]), np.asarray(obj["coef"], dtype=float), dict(obj["thresholds"]))
    if kind == "exp":
        return ExpProjectionFit(float(obj["t0"]), float(obj["beta"]), float(obj["annual_avg"]), dict(obj["thresholds"]))
    raise ValueError(f"unknown reference model kind {kind!r}")


# ---------------------------------------------------------------- calibration


def calibrate_threshold(scores: Sequence[float], positive: Sequence[bool], default: float,
                        grid: Sequence[float] | None = None) -> float:
    """Grid threshold with the best F1 (alarm iff score > threshold).

    Ties go to the smallest threshold; with no positives or no defined F1 the
    ``default`` is kept.
    """
    s = np.asarray(scores, dtype=float)
    pos = np.asarray(positive, dtype=bool)
    if s.size == 0 or not pos.any():
        return default
    best, best_f1 = default, -1.0
    for a in (alpha_grid() if grid is None else grid):
        hit = s > a
        tp = int(np.sum(hit & pos))
        fp = int(np.sum(hit & ~pos))
        fn = int(np.sum(~hit & pos))
        if tp == 0:
            continue
        f1 = 2 * tp / (2 * tp + fp + fn)
        if f1 > best_f1 + 1e-12:
            best, best_f1 = float(a), f1
    return best


def _training_events(series: DailySeries, glm_fit: GlmFit) -> list[tuple[HeatwaveEvent, HeatwaveLevel]]:
    if series.ssc is None or any(c is None for c in series.ssc):
        return []
    return [(e, label_event(series, glm_fit, e)[0]) for e in detect_heatwaves(series)]


def _calibrate(fit, series: DailySeries, glm_fit: GlmFit):
    events = _training_events(series, glm_fit)
    if not events:
        return dict(LEVEL_THRESHOLDS)
    scores = [predict_event(fit, series, e)[0] for e, _ in events]
    return {lev: calibrate_threshold(scores, [lab.at_least(lev) for _, lab in events], LEVEL_THRESHOLDS[lev])
            for lev in ("l1", "l2")}


def _observed(series: DailySeries, glm_fit: GlmFit, summer_only: bool):
    rows = [i for i in range(len(series)) if not summer_only or _in_season(series.date(i))]
    rows = [i for i in rows if not (np.isnan(series.deaths[i]) or np.isnan(series.temperature[i]))]
    dates = [series.date(i) for i in rows]
    deaths = np.asarray(series.deaths)[rows]
    base = predict_mean(glm_fit, dates, series.holidays) if rows else np.zeros(0)
    return rows, dates, deaths, base


# ---------------------------------------------------------------- fits


def fit_spline_projection(series: DailySeries, glm_fit: GlmFit | None = None, n_knots: int = 4,
                          calibrate: bool = True) -> SplineProjectionFit:
    glm_fit = glm_fit or fit_baseline(series)
    rows, dates, deaths, base = _observed(series, glm_fit, summer_only=True)
    knots = tuple(float(k) for k in np.linspace(0, SEASON_DAYS - 1, n_knots))
    width = 3 * n_knots
    if len(rows) < width:
        raise InsufficientDataError(f"{len(rows)} summer days for {width} spline coefficients")
    X = spline_design([day_of_season(d) for d in dates], np.asarray(series.temperature)[rows], knots)
    y = (deaths - base) / base
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        # min-norm least squares can still be ill-posed numerically; fall back to a tiny ridge
        A = X.T @ X
        A[np.diag_indices_from(A)] += RIDGE
        coef = np.linalg.solve(A, X.T @ y)
    fit = SplineProjectionFit(knots, coef)
    if calibrate:
        fit = SplineProjectionFit(knots, coef, _calibrate(fit, series, glm_fit))
    return fit


def fit_exp_projection(series: DailySeries, glm_fit: GlmFit | None = None,
                       t0_grid: Sequence[float] = T0_GRID, calibrate: bool = True) -> ExpProjectionFit:
    """Grid over T0; beta by least squares through the origin on log(1 + excess/avg)."""
    if len(series) < 365:
        raise InsufficientDataError("the exponential projection needs at least one year of data")
    glm_fit = glm_fit or fit_baseline(series)
    rows, dates, deaths, base = _observed(series, glm_fit, summer_only=False)
    avg = float(np.mean(deaths))
    temp = np.asarray(series.temperature)[rows]
    y = np.log(np.maximum(1.0 + (deaths - base) / avg, 1e-6))
    best = None
    for t0 in t0_grid:
        x = np.maximum(temp - t0, 0.0)
        sxx = float(x @ x)
        if sxx == 0.0:
            continue
        beta = max(float(x @ y) / sxx, 0.0)
        sse = float(np.sum((y[x > 0] - beta * x[x > 0]) ** 2) + np.sum(y[x == 0] ** 2))
        if best is None or sse < best[0] - 1e-12:
            best = (sse, float(t0), beta)
    if best is None:
        log.warning("no training day exceeds any candidate T0; beta set to 0")
        fit = ExpProjectionFit(float(t0_grid[-1]), 0.0, avg)
    else:
        fit = ExpProjectionFit(best[1], best[2], avg)
    if calibrate:
        fit = ExpProjectionFit(fit.t0, fit.beta, avg, _calibrate(fit, series, glm_fit))
    return fit


def predict_ratios(fit, series: DailySeries, days: Sequence[dt.date]) -> np.ndarray:
    idx = [series.index_of(d) for d in days]
    temp = np.asarray(series.temperature)[idx]
    if np.isnan(temp).any():
        raise DataError(f"missing temperature during {days[0]}..{days[-1]}")
    return fit.ratios(days, temp)


def predict_event(fit, series: DailySeries, event: HeatwaveEvent, level: str = "l1") -> tuple[float, bool]:
    r = float(np.max(predict_ratios(fit, series, event.days())))
    return r, r > fit.thresholds[level]


# ---------------------------------------------------------------- rolling comparison


@dataclass(frozen=True)
class ReferenceOutcome:
    event: HeatwaveEvent
    label: HeatwaveLevel
    max_ratio: float
    thresholds: dict

    def alarm(self, level: str) -> bool:
        return self.max_ratio > self.thresholds[level]


def reference_outcomes(series: DailySeries, outcomes, kind: str,
                       glm_config: GlmDesignConfig = GlmDesignConfig()) -> list[ReferenceOutcome]:
    """Score the pipeline's evaluated events with a reference model.

    For each event year the model is fit on all complete years before it, with
    targets from a baseline fit on that same span; mortality from the event
    year itself is never read.
    """
    fitter = {"spline": fit_spline_projection, "exp": fit_exp_projection}[kind]
    fits: dict[int, object] = {}
    out = []
    for o in outcomes:
        y = o.event.start.year
        if y not in fits:
            hist = series.slice(0, series.year_start_index(y))
            fits[y] = fitter(hist, fit_baseline(hist, config=glm_config))
        fit = fits[y]
        r = float(np.max(predict_ratios(fit, series, o.event.days())))
        out.append(ReferenceOutcome(o.event, o.label, r, dict(fit.thresholds)))
    return out


def reference_counts(outcomes: Sequence[ReferenceOutcome], level: str):
    tp = sum(o.label.at_least(level) and o.alarm(level) for o in outcomes)
    fp = sum(not o.label.at_least(level) and o.alarm(level) for o in outcomes)
    fn = sum(o.label.at_least(level) and not o.alarm(level) for o in outcomes)
    return ConfusionCounts(tp, fp, fn, len(outcomes) - tp - fp - fn)
