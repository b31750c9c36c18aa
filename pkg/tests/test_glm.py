import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deadlyheat.errors import ConvergenceError, InsufficientDataError
from deadlyheat.glm import (GlmDesignConfig, GlmFit, baseline_for_year, build_design, design_matrix, fit_baseline,
                            fit_irls, poisson_deviance, predict_mean)
from deadlyheat.synth import WorldParams, generate


def test_literal_design():
    assert list(build_design(dt.date(2023, 1, 2), (), GlmDesignConfig("literal"))) == [1, 1, 1, 0]


def test_categorical_design_monday_and_phase_zero():
    x = build_design(dt.date(2023, 1, 1), {dt.date(2023, 1, 1)}, GlmDesignConfig(harmonics=2))
    assert x.shape == (12,)
    assert x[0] == 1 and x[7] == 1                      # intercept, holiday
    assert list(x[1:7]) == [0, 0, 0, 0, 0, 1]           # Sunday dummy
    assert np.allclose(x[8:], [0, 1, 0, 1])             # doy 0: sin 0, cos 1
    monday = build_design(dt.date(2023, 1, 2), (), GlmDesignConfig(harmonics=2))
    assert not monday[1:7].any()


def test_design_config_validation():
    with pytest.raises(ValueError):
        GlmDesignConfig(harmonics=7)
    with pytest.raises(ValueError):
        GlmDesignConfig("splines")
    assert GlmDesignConfig(harmonics=3).width == 14


def test_intercept_only_constant():
    fit = fit_irls(np.ones((50, 1)), np.full(50, 20.0))
    assert math.isclose(fit.beta[0], math.log(20), abs_tol=1e-9)
    assert np.allclose(np.exp(np.ones((3, 1)) @ fit.beta), 20)


def test_errors():
    with pytest.raises(InsufficientDataError):
        fit_irls(np.ones((2, 3)), [1, 2])
    with pytest.raises(ConvergenceError):
        fit_irls(np.ones((5, 1)), np.zeros(5))
    with pytest.raises(ValueError):
        fit_irls(np.ones((3, 1)), [1, -1, 2])


def _simulate(n, seed, dispersion_noise=False):
    rng = np.random.default_rng(seed)
    start = dt.date(2001, 1, 1)
    dates = [start + dt.timedelta(days=k) for k in range(n)]
    X = design_matrix(dates, (), GlmDesignConfig(harmonics=2))
    beta = np.array([4.0, 0.05, -0.03, 0.02, 0.0, -0.06, -0.04, -0.1, 0.12, 0.08, -0.03, 0.02])
    y = rng.poisson(np.exp(X @ beta))
    return X, y, beta


def test_recovers_coefficients():
    X, y, beta = _simulate(730, 0)
    # the holiday column is all-zero here; the ridge pins it near 0 and it must not break the fit
    fit = fit_irls(X, y)
    keep = np.arange(12) != 7
    assert np.max(np.abs(fit.beta[keep] - beta[keep])) < 0.05
    assert 0.8 <= fit.dispersion <= 1.2
    assert all(b <= a for a, b in zip(fit.deviance_trace, fit.deviance_trace[1:]))


def test_score_equations_hold():
    X, y, _ = _simulate(730, 1)
    fit = fit_irls(X, y)
    mu = np.exp(X @ fit.beta)
    assert np.max(np.abs(X.T @ (y - mu))) < 1e-6 * y.sum()


def test_recovery_improves_with_n():
    errs = []
    for n in (730, 7300):
        X, y, beta = _simulate(n, 2)
        keep = np.arange(12) != 7
        errs.append(np.max(np.abs(fit_irls(X, y).beta[keep] - beta[keep])))
    assert errs[1] < errs[0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_deviance_never_increases(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(60), rng.normal(size=(60, 2))])
    y = rng.poisson(np.exp(1 + X[:, 1] * rng.uniform(-1, 1)))
    if y.sum() == 0:
        return
    fit = fit_irls(X, y)
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(fit.deviance_trace, fit.deviance_trace[1:]))
    assert np.all(np.exp(X @ fit.beta) > 0)


def test_collinear_design_survives():
    rng = np.random.default_rng(3)
    x = rng.normal(size=100)
    X = np.column_stack([np.ones(100), x, x])
    y = rng.poisson(np.exp(2 + 0.2 * x))
    fit = fit_irls(X, y)
    assert np.isfinite(fit.beta).all()


def test_predict_matches_fitted_and_held_out_year():
    s, truth = generate(WorldParams(years=3, seed=5))
    fit = fit_baseline(s, 0, s.year_start_index(2002))
    X = design_matrix(s.dates[:10], s.holidays, fit.config)
    assert np.allclose(predict_mean(fit, s.dates[:10], s.holidays), np.exp(X @ fit.beta), rtol=0, atol=0)
    lo = s.year_start_index(2002)
    pred = predict_mean(fit, s.dates[lo:], s.holidays)
    rel = np.abs(pred / truth.mu[lo:] - 1)
    # the holiday coefficient rests on ~20 days, so single holidays may be a few sd off
    assert rel.mean() < 0.02 and rel.max() < 0.08


def test_baseline_for_year_uses_two_years():
    s, _ = generate(WorldParams(years=4, seed=1))
    fit = baseline_for_year(s, 2003)
    assert fit.train_span == (dt.date(2001, 1, 1), dt.date(2002, 12, 31))
    with pytest.raises(InsufficientDataError):
        baseline_for_year(s, 2000)


def test_json_round_trip():
    s, _ = generate(WorldParams(years=2, seed=1))
    fit = fit_baseline(s)
    back = GlmFit.from_json(fit.to_json())
    assert np.array_equal(back.beta, fit.beta) and back.config == fit.config and back.train_span == fit.train_span


def test_deviance_zero_at_perfect_fit():
    y = np.array([0.0, 3.0, 5.0])
    assert poisson_deviance(y, np.where(y > 0, y, 1e-300)) == pytest.approx(0, abs=1e-12)
