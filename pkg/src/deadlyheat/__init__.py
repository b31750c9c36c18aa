"""Early warning of deadly heatwaves from synoptic detection, a numpy attention
forecaster of all-cause mortality and a quasi-Poisson baseline."""

__version__ = "0.1.0"

from .decision import AlarmConfig, ForecastBundle, HeatwaveLevel, decide_alarm, excess_ratios, label_event
from .errors import (ConfigError, ConvergenceError, DataError, DeadlyHeatError, DivergenceError,
                     InsufficientDataError, LeakageError, UnimputableError)
from .evaluation import (AuditedReader, ConfusionCounts, EventOutcome, MetricSet, RollingConfig, fp_fn_rates,
                         metrics, run_rolling, sweep, tally)
from .forecaster import TransformerConfig, TransformerWeights, forward, predict_horizon, train
from .glm import GlmDesignConfig, GlmFit, fit_baseline, fit_irls, predict_mean
from .synoptic import HeatwaveEvent, SscCode, detect_heatwaves
from .synth import EventSpec, WorldParams, generate
from .timeseries import DailySeries, ingest_csv

__all__ = [
    "AlarmConfig", "ForecastBundle", "HeatwaveLevel", "decide_alarm", "excess_ratios", "label_event",
    "ConfigError", "ConvergenceError", "DataError", "DeadlyHeatError", "DivergenceError",
    "InsufficientDataError", "LeakageError", "UnimputableError",
    "AuditedReader", "ConfusionCounts", "EventOutcome", "MetricSet", "RollingConfig", "fp_fn_rates",
    "metrics", "run_rolling", "sweep", "tally",
    "TransformerConfig", "TransformerWeights", "forward", "predict_horizon", "train",
    "GlmDesignConfig", "GlmFit", "fit_baseline", "fit_irls", "predict_mean",
    "HeatwaveEvent", "SscCode", "detect_heatwaves",
    "EventSpec", "WorldParams", "generate", "DailySeries", "ingest_csv",
    "__version__",
]
