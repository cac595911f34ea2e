import numpy as np
import pytest

from distloss.calibration import ConstantLabels, ResidualFit, assign_subgroups, correct, fit_residuals

import oracles


def test_identity_predictions():
    y = np.arange(10.0)
    fit = fit_residuals(y, y)
    assert (fit.intercept, fit.slope, fit.fit_n) == (0.0, 0.0, 10)


def test_planted_linear_trend():
    y = np.random.default_rng(0).uniform(30, 80, size=500)
    yhat = y + 2 + 0.5 * y
    fit = fit_residuals(y, yhat)
    assert fit.intercept == pytest.approx(2, abs=1e-9) and fit.slope == pytest.approx(0.5, abs=1e-9)
    fixed = correct(yhat, y, fit)
    np.testing.assert_allclose(fixed, y, atol=1e-9)


def test_constant_residual():
    y = np.linspace(0, 1, 7)
    fit = fit_residuals(y, y + 3.0)
    assert fit.intercept == pytest.approx(3.0) and fit.slope == pytest.approx(0.0, abs=1e-12)


def test_matches_ols_oracle_and_refit_is_zero():
    rng = np.random.default_rng(1)
    y = rng.uniform(30, 80, 200)
    yhat = 0.6 * y + 20 + rng.normal(scale=4, size=200)
    fit = fit_residuals(y, yhat)
    a, b = oracles.ols(y.tolist(), (yhat - y).tolist())
    assert fit.intercept == pytest.approx(a, abs=1e-9) and fit.slope == pytest.approx(b, abs=1e-9)
    refit = fit_residuals(y, correct(yhat, y, fit))
    assert abs(refit.intercept) < 1e-9 and abs(refit.slope) < 1e-9


def test_zero_fit_is_identity():
    yhat = np.array([1.0, 5.0])
    np.testing.assert_array_equal(correct(yhat, np.array([3.0, 4.0]), ResidualFit(0.0, 0.0, 2)), yhat)


def test_errors():
    with pytest.raises(ConstantLabels):
        fit_residuals([4.0, 4.0, 4.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        fit_residuals([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        assign_subgroups([1.0], [1.0], threshold=0)


def test_subgroups_and_boundaries():
    y = np.full(6, 50.0)
    corrected = np.array([35.0, 40.0, 45.0, 55.0, 60.0, 65.0])
    sub = assign_subgroups(y, corrected, threshold=10)
    assert sub.groups.tolist() == ["younger", "neutral", "neutral", "neutral", "neutral", "older"]
    assert sub.counts() == {"younger": 1, "neutral": 4, "older": 1}
