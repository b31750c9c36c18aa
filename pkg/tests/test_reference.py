import datetime as dt
import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deadlyheat.errors import InsufficientDataError
from deadlyheat.glm import GlmDesignConfig, GlmFit
from deadlyheat.reference import (ExpProjectionFit, SplineProjectionFit, calibrate_threshold, fit_exp_projection,
                                  fit_from_json, fit_spline_projection, natural_spline_basis, predict_event,
                                  predict_ratios, spline_design)
from deadlyheat.synoptic import HeatwaveEvent
from deadlyheat.timeseries import DailySeries

START = dt.date(2001, 1, 1)


def _flat_glm(level):
    beta = np.zeros(8)
    beta[0] = math.log(level)
    return GlmFit(beta, 1.0, GlmDesignConfig(harmonics=0))


def _world(excess_fn, years=3, base=1000.0, seed=0, temp_sd=4.0, noise=True):
    """Constant baseline, seasonal temperature, deaths = base * (1 + excess(T))."""
    rng = np.random.default_rng(seed)
    n = (dt.date(2001 + years - 1, 12, 31) - START).days + 1
    doy = np.arange(n) % 365
    temp = 16 - 11 * np.cos(2 * np.pi * (doy - 15) / 365) + rng.normal(0, temp_sd, n)
    mu = base * (1 + excess_fn(temp))
    deaths = rng.poisson(mu).astype(float) if noise else mu
    meteo = np.column_stack([np.round(temp, 2), np.full(n, 1015.0), np.full(n, 3.0), np.full(n, 60.0)])
    return DailySeries("ref", "city", START, deaths, meteo)


def test_natural_spline_basis_linear_beyond_boundary():
    knots = [0.0, 1.0, 2.0, 3.0]
    x = np.array([3.0, 4.0, 5.0, 6.0])
    B = natural_spline_basis(x, knots)
    assert B.shape == (4, 4)
    assert np.allclose(np.diff(B, n=2, axis=0), 0, atol=1e-9)  # natural: linear past the last knot
    with pytest.raises(ValueError):
        natural_spline_basis(x, [1.0])


def test_spline_zero_target_gives_zero_coefficients():
    glm = _flat_glm(1000.0)
    s = _world(lambda t: 0 * t, noise=False)
    fit = fit_spline_projection(s, glm, calibrate=False)
    assert np.max(np.abs(fit.coef[1:])) < 1e-8 and abs(fit.coef[0]) < 1e-8


def test_spline_recovers_hinge_excess_on_held_out_year():
    def f(t):
        return 0.02 * np.maximum(0, t - 30)

    s = _world(f, years=4, seed=1)
    train = s.slice(0, s.year_start_index(2004))
    fit = fit_spline_projection(train, _flat_glm(1000.0), calibrate=False)
    lo = s.year_start_index(2004)
    days = [d for d in s.dates[lo:] if 6 <= d.month <= 9]
    pred = predict_ratios(fit, s, days)
    truth = f(np.asarray([s.temperature[s.index_of(d)] for d in days]))
    assert math.sqrt(np.mean((pred - truth) ** 2)) < 0.05


def test_spline_square_basis_interpolates():
    rng = np.random.default_rng(0)
    days = rng.choice(np.arange(122), 12, replace=False)
    temp = rng.uniform(15, 40, 12)
    X = spline_design(days, temp, np.linspace(0, 121, 4))
    y = rng.normal(size=12)
    coef = np.linalg.lstsq(X, y, rcond=None)[0]
    assert np.allclose(X @ coef, y, atol=1e-8)


def test_spline_needs_data():
    s = _world(lambda t: 0 * t, years=1).slice(180, 181)
    with pytest.raises(InsufficientDataError):
        fit_spline_projection(s, _flat_glm(1000.0))


def test_exp_recovers_generating_parameters():
    s = _world(lambda t: np.expm1(0.05 * np.maximum(t - 30, 0)), years=3, base=5000.0, seed=2)
    fit = fit_exp_projection(s, _flat_glm(5000.0), calibrate=False)
    assert abs(fit.beta - 0.05) < 0.01 and abs(fit.t0 - 30) <= 1.0


def test_exp_no_exceedance_gives_zero(caplog):
    s = _world(lambda t: 0 * t, years=1, temp_sd=0.5)
    s = s.with_meteo(np.column_stack([np.full(len(s), 20.0), s.meteo[:, 1:]]))
    with caplog.at_level(logging.WARNING):
        fit = fit_exp_projection(s, _flat_glm(1000.0), calibrate=False)
    assert fit.beta == 0 and "beta set to 0" in caplog.text
    assert np.all(fit.excess(np.linspace(0, 50, 11)) == 0)


def test_exp_hinge_boundary_and_monotone():
    fit = ExpProjectionFit(30.0, 0.05, 150.0)
    assert fit.excess([30.0])[0] == 0 and fit.excess([29.0])[0] == 0
    t = np.linspace(30.01, 45, 50)
    assert np.all(np.diff(fit.excess(t)) > 0)
    with pytest.raises(ValueError):
        ExpProjectionFit(30.0, -0.1, 150.0)


def test_exp_needs_a_year():
    with pytest.raises(InsufficientDataError):
        fit_exp_projection(_world(lambda t: 0 * t, years=1).slice(0, 200))


def _event_series(temps):
    n = len(temps)
    meteo = np.column_stack([temps, np.full(n, 1015.0), np.full(n, 3.0), np.full(n, 60.0)])
    return DailySeries("e", "city", dt.date(2005, 7, 1), np.full(n, 100.0), meteo)


def test_zero_fit_never_alarms():
    s = _event_series([45.0] * 5)
    ev = HeatwaveEvent(s.start, s.end)
    zero = SplineProjectionFit((0.0, 40.0, 80.0, 121.0), np.zeros(12))
    assert predict_event(zero, s, ev) == (0.0, False)
    flat = ExpProjectionFit(30.0, 0.0, 100.0)
    assert predict_event(flat, s, ev, "l2") == (0.0, False)


@given(st.lists(st.floats(20, 45), min_size=3, max_size=8), st.floats(0, 10))
def test_exp_event_ratio_monotone_in_uniform_warming(temps, delta):
    fit = ExpProjectionFit(30.0, 0.04, 150.0)
    ev = HeatwaveEvent(dt.date(2005, 7, 1), dt.date(2005, 7, len(temps)))
    cool = predict_event(fit, _event_series(temps), ev)[0]
    warm = predict_event(fit, _event_series([t + delta for t in temps]), ev)[0]
    assert warm >= cool


def test_predict_event_missing_temperature():
    s = _event_series([30.0, np.nan, 30.0])
    with pytest.raises(Exception, match="missing temperature"):
        predict_event(ExpProjectionFit(30.0, 0.1, 1.0), s, HeatwaveEvent(s.start, s.end))


def test_calibrate_threshold():
    scores = [0.05, 0.10, 0.20, 0.40]
    assert calibrate_threshold(scores, [False, False, True, True], 0.15) == pytest.approx(0.10)
    assert calibrate_threshold(scores, [False] * 4, 0.15) == 0.15


def test_json_round_trip():
    a = SplineProjectionFit((0.0, 1.0), np.arange(6.0), {"l1": 0.1, "l2": 0.2})
    b = ExpProjectionFit(31.5, 0.02, 140.0)
    for fit in (a, b):
        back = fit_from_json(json.loads(json.dumps(fit.to_json())))
        assert back.to_json() == fit.to_json()
    with pytest.raises(ValueError):
        fit_from_json({"kind": "xgboost"})
