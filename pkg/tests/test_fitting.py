import numpy as np
import pytest
from scipy.optimize import curve_fit as scipy_curve_fit

from csgate.fitting import FitError, cosine_fit, curve_fit, fft_frequency


def _decay(x, a, alpha, b):
    return a * alpha**x + b


def test_matches_scipy_on_noisy_decay():
    rng = np.random.default_rng(0)
    x = np.array([1, 5, 10, 20, 30, 50, 75, 100, 125, 150], float)
    y = _decay(x, 0.7, 0.975, 0.26) + rng.normal(0, 0.01, x.size)
    ours = curve_fit(_decay, x, y, [0.6, 0.97, 0.3])
    ref, cov = scipy_curve_fit(_decay, x, y, p0=[0.6, 0.97, 0.3])
    assert np.allclose(ours.params, ref, rtol=1e-6)
    assert np.allclose(ours.stderr, np.sqrt(np.diag(cov)), rtol=1e-3)


def test_weighted_fit_matches_scipy():
    rng = np.random.default_rng(1)
    x = np.linspace(0, 10, 30)
    sigma = 0.02 + 0.01 * x
    y = 2.0 * np.exp(-0.3 * x) + rng.normal(0, sigma)
    model = lambda xx, a, k: a * np.exp(-k * xx)  # noqa: E731
    ours = curve_fit(model, x, y, [1.0, 0.1], sigma=sigma, absolute_sigma=True)
    ref, cov = scipy_curve_fit(model, x, y, p0=[1.0, 0.1], sigma=sigma, absolute_sigma=True)
    assert np.allclose(ours.params, ref, rtol=1e-6)
    assert np.allclose(ours.stderr, np.sqrt(np.diag(cov)), rtol=1e-3)


def test_exact_data_recovered():
    x = np.array([1, 5, 10, 20, 50, 100], float)
    fit = curve_fit(_decay, x, _decay(x, 0.75, 0.97, 0.25), [0.5, 0.9, 0.4])
    assert np.allclose(fit.params, [0.75, 0.97, 0.25], atol=1e-9)
    assert fit.converged


def test_fft_and_cosine_fit_recover_frequency():
    x = np.linspace(0, 1, 41)
    y = 0.9 * np.cos(2 * np.pi * 2.3 * x) + 0.05
    assert fft_frequency(x, y) == pytest.approx(2.3, rel=0.05)
    fit = cosine_fit(x, y, phase=0.0)
    assert fit.params[1] == pytest.approx(2.3, rel=1e-8)


def test_cosine_fit_free_phase_and_decay():
    x = np.linspace(0, 5e-6, 60)
    y = 0.8 * np.exp(-1e5 * x) * np.cos(2 * np.pi * 7e5 * x + 0.4) + 0.1
    fit = cosine_fit(x, y, phase=None, decay=True)
    assert fit.params[1] == pytest.approx(7e5, rel=1e-6)


def test_bad_input_rejected():
    with pytest.raises(FitError):
        cosine_fit(np.array([0.0, 0.0, 0.0, 0.0]), np.ones(4))
    with pytest.raises(FitError):
        curve_fit(_decay, np.arange(5.0), np.ones(5), [1, 0.9, 0], sigma=np.zeros(5))
