"""Quasi-Poisson baseline mortality regression fit by IRLS.

Covariates are calendar-only (day of week, day of year, holiday flag), so the
fitted mean carries no weather signal and serves as the expected death count
in the absence of heat.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConvergenceError, InsufficientDataError
from .timeseries import DailySeries, day_of_week, day_of_year

__all__ = [
    "GlmDesignConfig",
    "GlmFit",
    "build_design",
    "design_matrix",
    "poisson_deviance",
    "fit_irls",
    "fit_baseline",
    "predict_mean",
    "baseline_for_year",
]

RIDGE = 1e-8


@dataclass(frozen=True)
class GlmDesignConfig:
    encoding: str = "categorical_harmonic"
    harmonics: int = 2
    period: float = 365.25

    def __post_init__(self):
        if self.encoding not in ("literal", "categorical_harmonic"):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if not 0 <= self.harmonics <= 6:
            raise ValueError("harmonics must lie in 0..6")
        if self.period <= 0:
            raise ValueError("period must be positive")

    @property
    def width(self) -> int:
        return 4 if self.encoding == "literal" else 8 + 2 * self.harmonics


@dataclass(frozen=True, eq=False)
class GlmFit:
    beta: np.ndarray
    dispersion: float
    config: GlmDesignConfig
    train_span: tuple[dt.date, dt.date] | None = None
    deviance_trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def n_iter(self) -> int:
        return max(len(self.deviance_trace) - 1, 0)

    def to_json(self) -> dict:
        return {
            "encoding": self.config.encoding,
            "harmonics": self.config.harmonics,
            "period": self.config.period,
            "beta": [float(b) for b in self.beta],
            "dispersion": float(self.dispersion),
            "train_span": None if self.train_span is None else [d.isoformat() for d in self.train_span],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GlmFit":
        cfg = GlmDesignConfig(obj["encoding"], obj["harmonics"], obj.get("period", 365.25))
        span = obj.get("train_span")
        if span is not None:
            span = tuple(dt.date.fromisoformat(s) for s in span)
        return cls(np.asarray(obj["beta"], dtype=float), float(obj["dispersion"]), cfg, span)


def build_design(date: dt.date, holiday_table: Iterable[dt.date], config: GlmDesignConfig = GlmDesignConfig()) -> np.ndarray:
    return design_matrix([date], holiday_table, config)[0]


def design_matrix(dates: Sequence[dt.date], holiday_table: Iterable[dt.date],
                  config: GlmDesignConfig = GlmDesignConfig()) -> np.ndarray:
    holidays = holiday_table if isinstance(holiday_table, (set, frozenset)) else set(holiday_table)
    dow = np.array([day_of_week(d) for d in dates], dtype=float)
    doy = np.array([day_of_year(d) for d in dates], dtype=float)
    hol = np.array([d in holidays for d in dates], dtype=float)
    ones = np.ones(len(dates))
    if config.encoding == "literal":
        return np.column_stack([ones, dow, doy, hol])
    cols = [ones]
    cols += [(dow == k).astype(float) for k in range(2, 8)]  # Monday is the reference level
    cols.append(hol)
    for k in range(1, config.harmonics + 1):
        phase = 2.0 * math.pi * k * doy / config.period
        cols += [np.sin(phase), np.cos(phase)]
    return np.column_stack(cols)


def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        ylogy = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(ylogy - (y - mu)))


def _wls(X: np.ndarray, z: np.ndarray, w: np.ndarray) -> np.ndarray:
    Xw = X * w[:, None]
    A = X.T @ Xw
    A[np.diag_indices_from(A)] += RIDGE
    return np.linalg.solve(A, Xw.T @ z)


def fit_irls(designs, counts, max_iter: int = 100, tol: float = 1e-8,
             config: GlmDesignConfig | None = None, train_span=None) -> GlmFit:
    """Log-link Poisson-family IRLS with quasi-Poisson dispersion.

    A step that would raise the deviance is halved (up to 30 times) before
    being accepted, so the recorded deviance trace never increases.
    """
    X = np.asarray(designs, dtype=float)
    y = np.asarray(counts, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"design {X.shape} and counts {y.shape} do not align")
    n, p = X.shape
    if n < p:
        raise InsufficientDataError(f"{n} observations for {p} coefficients")
    if np.any(~np.isfinite(y)) or np.any(y < 0):
        raise ValueError("counts must be finite and non-negative")
    if not np.any(y > 0):
        raise ConvergenceError("all counts are zero; the log-link MLE does not exist")

    beta = np.zeros(p)
    beta[0] = math.log(y.mean() + 1e-8)
    eta = X @ beta
    mu = np.exp(eta)
    dev = poisson_deviance(y, mu)
    trace = [dev]
    for _ in range(max_iter):
        z = eta + (y - mu) / mu
        proposal = _wls(X, z, mu)
        if not np.all(np.isfinite(proposal)):
            raise ConvergenceError("singular fit: non-finite coefficients")
        step = proposal - beta
        for _halving in range(30):
            cand = beta + step
            eta_c = X @ cand
            with np.errstate(over="ignore"):
                mu_c = np.exp(eta_c)
            dev_c = poisson_deviance(y, mu_c) if np.all(np.isfinite(mu_c)) else math.inf
            if dev_c <= dev:
                break
            step = step / 2.0
        else:
            cand, eta_c, mu_c, dev_c = beta, eta, mu, dev
        if not math.isfinite(dev_c):
            raise ConvergenceError("singular fit: non-finite deviance")
        beta, eta, mu = cand, eta_c, mu_c
        rel = abs(dev - dev_c) / (abs(dev_c) + 0.1)
        dev = dev_c
        trace.append(dev)
        if rel < tol:
            break
    else:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")

    dof = n - p
    dispersion = float(np.sum((y - mu) ** 2 / mu) / dof) if dof > 0 else math.nan
    return GlmFit(beta, dispersion, config or _guess_config(p), train_span, tuple(trace))


def _guess_config(p: int) -> GlmDesignConfig:
    if p == 4:
        return GlmDesignConfig("literal", 0)
    h = (p - 8) // 2
    if p >= 8 and 8 + 2 * h == p and h <= 6:
        return GlmDesignConfig("categorical_harmonic", h)
    # bare designs outside the calendar encodings (tests, direct users)
    return GlmDesignConfig("categorical_harmonic", 0)


def fit_baseline(series: DailySeries, lo: int = 0, hi: int | None = None,
                 config: GlmDesignConfig = GlmDesignConfig(), **kwargs) -> GlmFit:
    """Fit the baseline model on series rows ``lo..hi-1`` (missing deaths dropped)."""
    hi = len(series) if hi is None else hi
    dates = [series.date(i) for i in range(lo, hi)]
    y = np.asarray(series.deaths[lo:hi], dtype=float)
    keep = ~np.isnan(y)
    X = design_matrix(dates, series.holidays, config)
    return fit_irls(X[keep], y[keep], config=config, train_span=(dates[0], dates[-1]), **kwargs)


def predict_mean(fit: GlmFit, dates: Sequence[dt.date], holiday_table: Iterable[dt.date] = ()) -> np.ndarray:
    X = design_matrix(list(dates), holiday_table, fit.config)
    return np.exp(X @ fit.beta)


def baseline_for_year(series: DailySeries, year: int, config: GlmDesignConfig = GlmDesignConfig()) -> GlmFit:
    """Refit from scratch on the two calendar years preceding ``year``."""
    lo = series.year_start_index(year - 2)
    hi = series.year_start_index(year)
    if hi - lo < (config.width + 1):
        raise InsufficientDataError(f"no two-year window before {year}")
    return fit_baseline(series, lo, hi, config)
