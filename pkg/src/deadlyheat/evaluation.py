"""Rolling real-time evaluation, confusion metrics and threshold sweeps."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .decision import AlarmConfig, ForecastBundle, HeatwaveLevel, label_event
from .errors import DataError, InsufficientDataError, LeakageError
from .forecaster import TrainResult, TransformerConfig, build_samples, predict_horizon, train_on_samples
from .glm import GlmDesignConfig, GlmFit, fit_baseline, predict_mean
from .synoptic import HeatwaveEvent, _as_index_array, detect_heatwaves, qualifying_days
from .timeseries import DailySeries

log = logging.getLogger(__name__)

__all__ = [
    "ConfusionCounts",
    "MetricSet",
    "SweepPoint",
    "EventOutcome",
    "RollingConfig",
    "RollingResult",
    "SeriesReader",
    "AuditedReader",
    "AccessRecord",
    "metrics",
    "fp_fn_rates",
    "tally",
    "sweep",
    "alpha_grid",
    "run_rolling",
    "write_outcomes_csv",
    "read_outcomes_csv",
    "write_metrics_json",
    "write_sweep_csv",
    "metrics_block",
]


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class MetricSet:
    """Fractions in [0, 1]; ``None`` marks an undefined metric (shown as "-")."""

    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1}

    def percent(self) -> dict[str, str]:
        return {k: "-" if v is None else f"{100 * v:.1f}" for k, v in self.as_dict().items()}


def _div(a: int, b: int) -> float | None:
    return a / b if b else None


def metrics(counts: ConfusionCounts) -> MetricSet:
    if counts.total == 0:
        raise ValueError("metrics of an empty confusion table")
    precision = _div(counts.tp, counts.tp + counts.fp)
    recall = _div(counts.tp, counts.tp + counts.fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricSet((counts.tp + counts.tn) / counts.total, precision, recall, f1)


def fp_fn_rates(counts: ConfusionCounts) -> tuple[float | None, float | None]:
    return _div(counts.fp, counts.fp + counts.tn), _div(counts.fn, counts.fn + counts.tp)


# ---------------------------------------------------------------- outcomes


@dataclass(frozen=True)
class EventOutcome:
    event: HeatwaveEvent
    label: HeatwaveLevel
    max_forecast_ratio: float
    label_ratio: float = math.nan
    origins: tuple = ()

    def alarm(self, alpha: float) -> bool:
        return self.max_forecast_ratio > alpha


@dataclass(frozen=True)
class SweepPoint:
    alpha: float
    fpr: float | None
    fnr: float | None


def tally(outcomes: Iterable[EventOutcome], level: str, alpha: float) -> ConfusionCounts:
    tp = fp = fn = tn = 0
    for o in outcomes:
        pos = o.label.at_least(level)
        hit = o.alarm(alpha)
        if pos and hit:
            tp += 1
        elif hit:
            fp += 1
        elif pos:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def alpha_grid(alpha_min: float = 0.01, alpha_max: float = 0.50, step: float = 0.001) -> np.ndarray:
    n = int(round((alpha_max - alpha_min) / step))
    return np.round(alpha_min + step * np.arange(n + 1), 10)


def sweep(outcomes: Sequence[EventOutcome], level: str = "l1", alpha_min: float = 0.01,
          alpha_max: float = 0.50, step: float = 0.001) -> list[SweepPoint]:
    """False-positive/false-negative rates over a threshold grid from cached ratios."""
    ratios = np.array([o.max_forecast_ratio for o in outcomes], dtype=float)
    pos = np.array([o.label.at_least(level) for o in outcomes], dtype=bool)
    points = []
    for a in alpha_grid(alpha_min, alpha_max, step):
        hit = ratios > a
        c = ConfusionCounts(int(np.sum(hit & pos)), int(np.sum(hit & ~pos)),
                            int(np.sum(~hit & pos)), int(np.sum(~hit & ~pos)))
        fpr, fnr = fp_fn_rates(c)
        points.append(SweepPoint(float(a), fpr, fnr))
    return points


# ---------------------------------------------------------------- data access


@dataclass(frozen=True)
class AccessRecord:
    purpose: str
    kind: str
    lo: int
    hi: int
    origin: int | None = None
    year: int | None = None


class SeriesReader:
    """Every read the rolling driver makes goes through one of these methods."""

    def __init__(self, series: DailySeries):
        self.series = series
        self._codes = None

    def _record(self, rec: AccessRecord) -> None:
        pass

    def training(self, stop: int, year: int) -> DailySeries:
        self._record(AccessRecord("train", "mortality", 0, stop, year=year))
        self._record(AccessRecord("train", "meteo", 0, stop, year=year))
        return self.series.slice(0, stop)

    def baseline(self, lo: int, hi: int, year: int) -> DailySeries:
        self._record(AccessRecord("glm", "mortality", lo, hi, year=year))
        return self.series.slice(lo, hi)

    def forecast(self, origin: int) -> DailySeries:
        self._record(AccessRecord("forecast", "mortality", 0, origin + 1, origin=origin))
        self._record(AccessRecord("forecast", "meteo", 0, origin + 1, origin=origin))
        return self.series.slice(0, origin + 1)

    def synoptic(self, lo: int, hi: int, origin: int) -> np.ndarray:
        """SSC code indices for rows ``lo..hi-1`` as known at ``origin``."""
        self._record(AccessRecord("detect", "ssc", lo, hi, origin=origin))
        if self._codes is None:
            if self.series.ssc is None or any(c is None for c in self.series.ssc):
                raise DataError("rolling evaluation needs an SSC code for every day")
            self._codes = _as_index_array(self.series.ssc)
        return self._codes[lo:hi]

    def ground_truth(self) -> DailySeries:
        self._record(AccessRecord("label", "all", 0, len(self.series)))
        return self.series


class AuditedReader(SeriesReader):
    """Reader that keeps a log of every access for leakage audits."""

    def __init__(self, series: DailySeries):
        super().__init__(series)
        self.log: list[AccessRecord] = []

    def _record(self, rec: AccessRecord) -> None:
        self.log.append(rec)

    def violations(self, horizon: int) -> list[AccessRecord]:
        """Reads that cross the information boundary of their step.

        Training and baseline fits may only see rows before their year,
        forecasts only rows through their origin, and the synoptic feed only
        codes through ``origin + horizon``.
        """
        bad = []
        for r in self.log:
            if r.purpose in ("train", "glm"):
                limit = self.series.year_start_index(r.year)
            elif r.purpose == "forecast":
                limit = r.origin + 1
            elif r.purpose == "detect":
                limit = r.origin + horizon + 1
            else:
                continue
            if r.hi > limit:
                bad.append(r)
        return bad

    def assert_no_leakage(self, horizon: int) -> None:
        bad = self.violations(horizon)
        if bad:
            raise LeakageError(f"{len(bad)} reads past the information boundary, first: {bad[0]}")


# ---------------------------------------------------------------- rolling driver


@dataclass(frozen=True)
class RollingConfig:
    transformer: TransformerConfig = TransformerConfig()
    glm: GlmDesignConfig = GlmDesignConfig()
    alarm: AlarmConfig = AlarmConfig()
    warmup_years: int = 2
    finetune_window: str = "new"  # "new": windows of the latest finetune_years; "all": every window so far
    finetune_years: int = 1

    def __post_init__(self):
        if self.finetune_window not in ("new", "all"):
            raise ValueError("finetune_window must be 'new' or 'all'")
        if self.finetune_years < 1:
            raise ValueError("finetune_years must be at least 1")
        if self.warmup_years < 2:
            raise ValueError("the two-year baseline refit needs warmup_years >= 2")


@dataclass
class RollingResult:
    outcomes: list[EventOutcome]
    models: dict[int, TrainResult] = field(default_factory=dict)
    baselines: dict[int, GlmFit] = field(default_factory=dict)
    evaluations: list[tuple] = field(default_factory=list)


def _evaluation_windows(reader: SeriesReader, origin_lo: int, origin_hi: int, h: int):
    """Replay the synoptic feed day by day.

    At origin ``t`` the codes through ``t + h`` are known.  Yields
    ``(event_start, t, last_known_event_day)`` whenever an event begins at
    ``t + 1`` or still covers the far edge ``t + h`` of the horizon.
    """
    n = len(reader.series)
    current_start = None
    for t in range(origin_lo, origin_hi):
        p = t + h
        if p >= n:
            break
        lo = max(t - 2, 0)
        q = qualifying_days(reader.synoptic(lo, p + 1, origin=t))
        q_t, q_next = bool(q[t - lo]), bool(q[t + 1 - lo])
        if not q_next:
            current_start = None
            continue
        if not q_t:
            current_start = t + 1
        elif current_start is None:
            continue  # began before the replay window
        run_end = t + 1
        while run_end + 1 <= p and q[run_end + 1 - lo]:
            run_end += 1
        if current_start == t + 1 or run_end == p:
            yield current_start, t, run_end


def run_rolling(series: DailySeries, config: RollingConfig = RollingConfig(),
                reader: SeriesReader | None = None,
                on_year: Callable[[int, TrainResult, GlmFit], None] | None = None) -> RollingResult:
    """Year-by-year real-time replay over ``series`` (imputed, SSC complete).

    For evaluation year ``Y`` the forecaster is trained on data before ``Y``
    (from scratch the first time, warm-started from ``Y - 1`` afterwards) and
    the baseline is refit on ``Y - 2 .. Y - 1``.  Forecasts at origin ``t`` use
    the models of ``t``'s calendar year.
    """
    reader = reader or SeriesReader(series)
    tcfg = config.transformer
    years = series.years
    if len(years) < config.warmup_years + 1:
        raise InsufficientDataError(f"need at least {config.warmup_years + 1} calendar years, got {len(years)}")
    eval_years = years[config.warmup_years:]
    result = RollingResult([])

    prior = None
    for Y in eval_years:
        stop = series.year_start_index(Y)
        hist = reader.training(stop, Y)
        if prior is None or config.finetune_window == "all":
            first = max(tcfg.T - 1, 1)
        else:
            first = max(series.year_start_index(Y - config.finetune_years) - 1, tcfg.T - 1, 1)
        origins = np.arange(first, stop - tcfg.h)
        inputs, targets, _, _ = build_samples(hist.deaths, hist.meteo, origins, tcfg)
        res = train_on_samples(inputs, targets, tcfg, prior_weights=None if prior is None else prior.weights,
                               seed=tcfg.seed + Y)
        prior = res
        result.models[Y] = res
        glo = series.year_start_index(Y - 2)
        gseries = reader.baseline(glo, stop, Y)
        result.baselines[Y] = fit_baseline(gseries, 0, len(gseries), config.glm)
        if on_year is not None:
            on_year(Y, res, result.baselines[Y])
        log.info("year %d: trained on %d windows, final loss %.5f", Y, len(origins), res.loss_trace[-1])

    # realtime replay
    origin_lo = max(series.year_start_index(eval_years[0]) - 1, 1)
    evaluations: dict[int, list[tuple[int, int]]] = {}
    for start, t, run_end in _evaluation_windows(reader, origin_lo, len(series) - 1, tcfg.h):
        evaluations.setdefault(start, []).append((t, run_end))

    truth = reader.ground_truth()
    final_events = {series.index_of(e.start): e for e in detect_heatwaves(truth)}
    outcomes = []
    for start, evals in sorted(evaluations.items()):
        event = final_events.get(start)
        start_year = series.date(start).year
        if event is None:
            log.warning("realtime event at %s has no final counterpart; skipped", series.date(start))
            continue
        if start_year not in result.baselines:
            continue
        if evals[0][0] < tcfg.T - 1:
            log.warning("event %s..%s has fewer than %d days of history; skipped", event.start, event.end, tcfg.T)
            continue
        if any(series.date(t).year not in result.models for t, _ in evals):
            log.warning("event %s..%s has an origin outside the evaluation years; skipped", event.start, event.end)
            continue
        ratios = []
        for t, run_end in evals:
            model_year = series.date(t).year
            model, glm = result.models[model_year], result.baselines[model_year]
            view = reader.forecast(t)
            all_cause = predict_horizon(model.weights, view, t)
            dates = [series.date(t + k) for k in range(1, tcfg.h + 1)]
            bundle = ForecastBundle(dates, all_cause, predict_mean(glm, dates, series.holidays))
            event_days = dates[: run_end - t]
            r = bundle.max_ratio(event_days)
            ratios.append(r)
            result.evaluations.append((event.start, series.date(t), r))
        level, r_obs = label_event(truth, result.baselines[start_year], event)
        outcomes.append(EventOutcome(event, level, float(max(ratios)), r_obs,
                                     tuple(series.date(t) for t, _ in evals)))
    result.outcomes = outcomes
    return result


# ---------------------------------------------------------------- files


def write_outcomes_csv(outcomes: Sequence[EventOutcome], alarm: AlarmConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("event_start", "event_end", "alpha_l1", "alpha_l2", "max_ratio", "alarm_l1", "alarm_l2", "label",
                    "label_ratio"))
        for o in outcomes:
            w.writerow((o.event.start.isoformat(), o.event.end.isoformat(), repr(alarm.alpha_l1),
                        repr(alarm.alpha_l2), repr(float(o.max_forecast_ratio)),
                        int(o.alarm(alarm.alpha_l1)), int(o.alarm(alarm.alpha_l2)), o.label.name,
                        repr(float(o.label_ratio))))
    return path


def read_outcomes_csv(path) -> list[EventOutcome]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            try:
                ev = HeatwaveEvent(dt.date.fromisoformat(row["event_start"]), dt.date.fromisoformat(row["event_end"]))
                out.append(EventOutcome(ev, HeatwaveLevel[row["label"]], float(row["max_ratio"]),
                                        float(row.get("label_ratio") or "nan")))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}: bad outcome row {row}: {exc}") from exc
    return out


def metrics_block(outcomes: Sequence[EventOutcome], level: str, alpha: float) -> dict:
    c = tally(outcomes, level, alpha)
    m = metrics(c).as_dict() if c.total else None
    return {"alpha": alpha, "counts": c.as_dict(), "metrics": m}


def write_metrics_json(outcomes: Sequence[EventOutcome], alarm: AlarmConfig, path, region: str = "") -> Path:
    obj = {
        "region": region,
        "n_events": len(outcomes),
        "l1": metrics_block(outcomes, "l1", alarm.alpha_l1),
        "l2": metrics_block(outcomes, "l2", alarm.alpha_l2),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_sweep_csv(points: Sequence[SweepPoint], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("alpha", "fpr", "fnr"))
        for p in points:
            w.writerow((f"{p.alpha:.3f}", "" if p.fpr is None else repr(p.fpr), "" if p.fnr is None else repr(p.fnr)))
    return path
