import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deadlyheat.decision import (AlarmConfig, ForecastBundle, HeatwaveLevel, decide_alarm, excess_ratios,
                                 label_event, level_from_ratio)
from deadlyheat.errors import DataError
from deadlyheat.glm import GlmDesignConfig, GlmFit, baseline_for_year
from deadlyheat.synoptic import HeatwaveEvent
from deadlyheat.synth import EventSpec, WorldParams, generate
from deadlyheat.timeseries import DailySeries

D0 = dt.date(2020, 7, 1)


def _days(n):
    return [D0 + dt.timedelta(days=k) for k in range(n)]


def _flat_fit(level=100.0):
    # width-8 design with only the intercept switched on: baseline is `level` every day
    beta = np.zeros(8)
    beta[0] = math.log(level)
    return GlmFit(beta, 1.0, GlmDesignConfig(harmonics=0))


def _series(deaths):
    n = len(deaths)
    return DailySeries("x", "city", D0, np.asarray(deaths, float), np.tile([30.0, 1015, 3, 60], (n, 1)))


def test_excess_ratio_examples():
    assert np.allclose(excess_ratios([120], [100]), [0.2])
    assert np.all(excess_ratios([5, 6], [5, 6]) == 0)
    assert np.allclose(excess_ratios([80], [100]), [-0.2])
    with pytest.raises(DataError, match="2020-07-02"):
        excess_ratios([1, 1], [1, 0], _days(2))


def test_bundle_consistency():
    b = ForecastBundle(_days(3), np.array([110.0, 90, 130]), np.array([100.0, 100, 100]))
    assert np.allclose(b.excess, [10, -10, 30])
    assert np.allclose(b.ratios, b.excess / b.baseline, atol=1e-12)
    with pytest.raises(ValueError):
        ForecastBundle(_days(2), np.ones(3), np.ones(3))


def _bundle(ratios):
    n = len(ratios)
    return ForecastBundle(_days(n), 100 * (1 + np.asarray(ratios)), np.full(n, 100.0))


def test_decide_alarm_examples():
    assert decide_alarm(_bundle([0.10, 0.20]), _days(2), 0.15)
    assert not decide_alarm(_bundle([0.15]), _days(1), 0.15)
    assert not decide_alarm(_bundle([-0.1, -0.3]), _days(2), 0.01)
    with pytest.raises(ValueError):
        decide_alarm(_bundle([0.5]), [D0 - dt.timedelta(days=1)], 0.1)


def test_alarm_only_looks_at_event_days():
    assert not decide_alarm(_bundle([0.0, 0.9]), _days(1), 0.15)


@given(st.lists(st.floats(-0.9, 2.0), min_size=1, max_size=5), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_alarm_monotone_in_alpha(ratios, a, b):
    lo, hi = sorted((a, b))
    bundle = _bundle(ratios)
    if decide_alarm(bundle, _days(len(ratios)), hi):
        assert decide_alarm(bundle, _days(len(ratios)), lo)


def test_alarm_config():
    assert AlarmConfig().alpha("l1") == 0.15 and AlarmConfig().alpha("l2") == 0.30
    with pytest.raises(ValueError):
        AlarmConfig(0.3, 0.2)


def test_label_examples():
    s = _series([120, 140, 110])
    level, r = label_event(s, _flat_fit(), HeatwaveEvent(D0, D0 + dt.timedelta(days=1)))
    assert level is HeatwaveLevel.L2 and r == pytest.approx(0.40)
    level, r = label_event(s, _flat_fit(), HeatwaveEvent(D0 + dt.timedelta(days=2), D0 + dt.timedelta(days=2)))
    assert level is HeatwaveLevel.L0 and r == pytest.approx(0.10)


def test_label_errors():
    s = _series([120, np.nan])
    with pytest.raises(DataError):
        label_event(s, _flat_fit(), HeatwaveEvent(D0, D0 + dt.timedelta(days=1)))
    with pytest.raises(DataError):
        label_event(s, _flat_fit(), HeatwaveEvent(D0, D0 + dt.timedelta(days=5)))


@given(st.lists(st.integers(0, 300), min_size=1, max_size=8), st.integers(0, 100))
def test_label_monotone_in_uniform_boost(deaths, boost):
    event = HeatwaveEvent(D0, D0 + dt.timedelta(days=len(deaths) - 1))
    base, _ = label_event(_series(deaths), _flat_fit(), event)
    up, _ = label_event(_series([d + boost for d in deaths]), _flat_fit(), event)
    assert up >= base


@given(st.floats(-1, 2, allow_nan=False))
def test_l2_implies_l1_and_alarm_reproduces_label(r):
    level = level_from_ratio(r)
    if level.at_least("l2"):
        assert level.at_least("l1")
    # using observed deaths as the "forecast" reproduces the label thresholds
    bundle = _bundle([r])
    assert decide_alarm(bundle, _days(1), 0.15) == level.at_least("l1")
    assert decide_alarm(bundle, _days(1), 0.30) == level.at_least("l2")


def test_label_monte_carlo_l1_band():
    """Multiplier 1.25 on a large population lands in L1 (not L2) nearly always."""
    hits = 0
    for seed in range(200):
        event = EventSpec(dt.date(2002, 7, 10), 5, 1.25)
        s, _ = generate(WorldParams(years=3, seed=seed, base_mortality=math.log(5000), events=(event,)))
        fit = baseline_for_year(s, 2002)
        level, _ = label_event(s, fit, HeatwaveEvent(event.start, event.end))
        hits += level is HeatwaveLevel.L1
    assert hits / 200 >= 0.95
