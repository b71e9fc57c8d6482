import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluctuon.errors import ConfigError
from fluctuon.noise import (NoiseBand, NoiseModel, correlation, correlation_time, correlation_total,
                            effective_fluctuator, model_from_dict, band_from_dict, normalization_constant,
                            rate_pdf, rate_quantile, spectral_density, spectral_density_quadrature,
                            spectral_ratio)
from fluctuon.special import integrate, QuadratureSpec

SLOW = NoiseBand(1, 1.0, 5e-7, 0.5)
FAST = NoiseBand(2, 1.0, 0.5, 4.25)
BANDS = [SLOW, FAST, NoiseBand(1, 0.7, 0.05, 3.0), NoiseBand(3, 1.3, 0.2, 6.0), NoiseBand(4, 0.5, 1.0, 2.0)]


def _chi_oracle(band, tau):
    """sigma^2 int P(g) exp(-2 g tau) dg in log-rate variables (mpmath)."""
    A = normalization_constant(band)
    f = lambda u: A * mpmath.e ** ((1 - band.n) * u) * mpmath.e ** (-2 * mpmath.e ** u * tau)
    return band.sigma ** 2 * float(mpmath.quad(f, [math.log(band.gamma_lo), math.log(band.gamma_hi)]))


def _s_oracle(band, w):
    """Lorentzian superposition (sigma^2/pi) int P(g) 2g/(4g^2 + w^2) dg."""
    A = normalization_constant(band)
    f = lambda u: A * mpmath.e ** ((1 - band.n) * u) * 2 * mpmath.e ** u / (4 * mpmath.e ** (2 * u) + w * w)
    lo, hi = math.log(band.gamma_lo), math.log(band.gamma_hi)
    pts = [lo, hi] if w == 0 else sorted({lo, hi, min(max(math.log(w / 2), lo), hi)})
    return band.sigma ** 2 / math.pi * float(mpmath.quad(f, pts))


def test_normalization_examples():
    assert normalization_constant(SLOW) == pytest.approx(1 / math.log(1e6), rel=1e-14)
    assert normalization_constant(SLOW) == pytest.approx(0.0723824, rel=1e-6)
    assert normalization_constant(FAST) == pytest.approx(0.5 / (1 - 0.5 / 4.25), rel=1e-14)


@pytest.mark.parametrize("band", BANDS)
def test_pdf_integrates_to_one(band):
    spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-12)
    total = integrate(lambda u: math.exp(u) * rate_pdf(band, math.exp(u)), math.log(band.gamma_lo),
                      math.log(band.gamma_hi), spec)
    assert total == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("band", BANDS)
def test_quantile_inverts_cdf(band):
    u = np.linspace(0, 1, 11)
    g = rate_quantile(band, u)
    assert g[0] == pytest.approx(band.gamma_lo) and g[-1] == pytest.approx(band.gamma_hi)
    for ui, gi in zip(u[1:-1], g[1:-1]):
        cdf = integrate(lambda x: rate_pdf(band, x), band.gamma_lo, gi)
        assert cdf == pytest.approx(ui, abs=1e-9)


@pytest.mark.parametrize("band", BANDS)
@pytest.mark.parametrize("tau", [1e-9, 0.01, 0.5, 1.0, 7.0])
def test_correlation_matches_rate_integral(band, tau):
    assert correlation(band, tau) == pytest.approx(_chi_oracle(band, tau), rel=1e-9)


def test_correlation_examples():
    assert correlation(SLOW, 0.0) == 1.0
    assert correlation(FAST, 100.0) < 1e-10
    model = NoiseModel((SLOW, FAST))
    assert correlation_total(model, 0.0) == 2.0
    tau = 0.5
    assert correlation_total(model, tau) == pytest.approx(_chi_oracle(SLOW, tau) + _chi_oracle(FAST, tau), rel=1e-8)
    with pytest.raises(ValueError):
        correlation(SLOW, -1.0)


@pytest.mark.parametrize("band", BANDS[:4])
def test_correlation_positive_decreasing_convex(band):
    tau = np.geomspace(1e-4, 50, 300)
    chi = correlation(band, tau)
    assert np.all(chi > 0)
    assert np.all(np.diff(chi) < 0)
    # convexity on a non-uniform grid via divided differences
    d = np.diff(chi) / np.diff(tau)
    assert np.all(np.diff(d) > -1e-12 * np.abs(d[:-1]))


@pytest.mark.parametrize("band", BANDS)
def test_spectral_density_matches_lorentzian_sum(band):
    w = np.geomspace(1e-4 * band.gamma_lo, 1e3 * band.gamma_hi, 13)
    got = spectral_density(band, w)
    for wi, gi in zip(w, got):
        assert gi == pytest.approx(_s_oracle(band, wi), rel=1e-9)
    assert spectral_density(band, 0.0) == pytest.approx(_s_oracle(band, 0.0), rel=1e-12)


@pytest.mark.parametrize("band", [FAST, NoiseBand(1, 1.0, 0.05, 3.0), NoiseBand(3, 1.0, 0.2, 6.0)])
def test_spectral_density_matches_cosine_transform(band):
    for w in [0.0, 1e-4 * band.gamma_lo, 0.3, 1.0, 40.0]:
        assert spectral_density_quadrature(band, w) == pytest.approx(spectral_density(band, w), rel=1e-4)


def test_cosine_transform_of_slow_band_at_high_frequency():
    # nearly flat chi over many periods used to trip the roundoff check
    band = NoiseBand(1, 4.92, 5e-7, 0.5)
    for w in (50.0, 100.0, 1e3):
        assert spectral_density_quadrature(band, w) == pytest.approx(spectral_density(band, w), rel=1e-8)


def test_spectral_zero_frequency_limits():
    s1 = spectral_density(SLOW, 0.0)
    A1 = normalization_constant(SLOW)
    assert s1 == pytest.approx(A1 / (2 * math.pi) * (1 / SLOW.gamma_lo - 1 / SLOW.gamma_hi), rel=1e-13)
    A2 = normalization_constant(FAST)
    ref2 = A2 / math.pi * (1 / (4 * 0.5 ** 2) - 1 / (4 * 4.25 ** 2))
    assert spectral_density(FAST, 0.0) == pytest.approx(ref2, rel=1e-13)
    # continuity into the closed form away from zero
    assert spectral_density(FAST, 1e-9) == pytest.approx(ref2, rel=1e-12)


@pytest.mark.parametrize("band", BANDS)
def test_spectral_sum_rule(band):
    # 2 int_0^inf S dw = sigma^2, integrated in log-frequency with an analytic tail
    spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-11, max_subdivisions=5000)
    lo, hi = math.log(1e-8 * band.gamma_lo), math.log(1e4 * band.gamma_hi)
    body = integrate(lambda u: math.exp(u) * spectral_density(band, math.exp(u)), lo, hi, spec)
    head = spectral_density(band, 0.0) * math.exp(lo)
    # beyond W the density falls as C/w^2 with C = W^2 S(W)
    W = math.exp(hi)
    tail = W * spectral_density(band, W)
    assert 2 * (head + body + tail) == pytest.approx(band.sigma ** 2, rel=1e-4)


def test_one_over_f_example():
    w = 2 * math.pi * 1e3 * 1e-6
    s = spectral_density(SLOW, w)
    A = 1.0 / (2 * math.log(1e6))
    assert s == pytest.approx(5.74, rel=2e-3)
    assert s * w / A == pytest.approx(1.0, rel=1e-2)


def test_lorentzian_tail_asymptote():
    w = 1e3 * 4.25
    ref = 2 * 0.5 / (math.pi * (1 - 0.5 / 4.25)) * math.log(4.25 / 0.5) / w ** 2
    assert spectral_density(FAST, w) == pytest.approx(ref, rel=1e-2)


def _plateau_window():
    w = np.geomspace(10 * SLOW.b, 0.1 * SLOW.c, 401)
    A = SLOW.sigma ** 2 / (2 * math.log(SLOW.gamma_hi / SLOW.gamma_lo))
    return w, spectral_density(SLOW, w) * w / A - 1.0


@pytest.mark.xfail(strict=True, reason="S1*w/A departs by 6.35% at both window edges; the 5% bound holds "
                                       "only inside the window")
def test_plateau_law_five_percent():
    _, dev = _plateau_window()
    assert np.max(np.abs(dev)) <= 0.05


def test_plateau_edge_deviation_is_arctan_correction():
    w, dev = _plateau_window()
    # S1 w / A = (2/pi)(arctan(w/b) - arctan(w/c)); at w = 10 b the loss is (2/pi) arctan(0.1) + ...
    exact = (2 / math.pi) * (np.arctan(w / SLOW.b) - np.arctan(w / SLOW.c)) - 1.0
    np.testing.assert_allclose(dev, exact, atol=1e-12)
    assert np.max(np.abs(dev)) == pytest.approx((2 / math.pi) * (math.atan(0.1) + math.atan(10 * SLOW.b / SLOW.c)),
                                                rel=1e-9)


def test_spectral_ratio_order_of_magnitude():
    model = NoiseModel.two_band(1.0, 1.0, 5e-7, 0.5, 4.25)
    r0 = spectral_ratio(model, 0.0)
    rc = spectral_ratio(model, 2 * 0.5)
    assert 1e-5 / 3 <= r0 <= 3e-5
    assert 10 / 3 <= rc <= 30
    scaled = NoiseModel.two_band(1.0, 3.0, 5e-7, 0.5, 4.25)
    w = np.array([0.0, 0.1, 1.0, 10.0])
    np.testing.assert_allclose(spectral_ratio(scaled, w), 9 * spectral_ratio(model, w), rtol=1e-13)
    with pytest.raises(ValueError):
        spectral_ratio(NoiseModel((SLOW,)), 1.0)


def test_sigma_scaling_of_quadrature():
    a = spectral_density_quadrature(FAST, 1.0)
    b = spectral_density_quadrature(FAST.scaled(2.0), 1.0)
    assert b == pytest.approx(4 * a, rel=1e-10)


def test_correlation_time_examples():
    tau1 = correlation_time(NoiseBand(1, 1.0, 5e-7, 0.5))
    assert tau1 * 1e-6 == pytest.approx(0.0724, rel=1e-3)  # seconds
    tau2 = correlation_time(NoiseBand(2, 1.0, 0.5, 500.0))
    assert tau2 == pytest.approx(0.5, rel=0.01)


@pytest.mark.parametrize("band", [FAST, NoiseBand(1, 1.0, 0.05, 3.0), NoiseBand(3, 2.0, 0.2, 6.0)])
def test_correlation_time_matches_quadrature(band):
    spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-11, max_subdivisions=4000)
    # exponential substitution tau = e^s keeps the log singularity tame
    val = integrate(lambda s: math.exp(s) * correlation(band, math.exp(s)), -30.0, math.log(60 / band.gamma_lo),
                    spec)
    assert correlation_time(band) == pytest.approx(val / band.sigma ** 2, rel=1e-6)


def _richardson_rate(band):
    # gamma* = -(1/2) d ln chi / d tau at 0+, one-sided differences in h and h/2
    h = 1e-5 / band.gamma_hi
    d = lambda h: -(math.log(correlation(band, h)) - math.log(band.sigma ** 2)) / (2 * h)
    # leading error is O(h ln h) for n <= 2; three-level extrapolation
    d1, d2, d4 = d(h), d(h / 2), d(h / 4)
    return d4 + (d4 - d2) ** 2 / ((d2 - d1) - (d4 - d2)) if (d2 - d1) != (d4 - d2) else d4


def test_effective_fluctuator_examples():
    e1 = effective_fluctuator(NoiseBand(1, 2.0, 5e-7, 0.5))
    assert e1.gamma_star == pytest.approx(0.0362, abs=5e-5)
    assert e1.a_star == 2.0
    e2 = effective_fluctuator(FAST)
    assert e2.gamma_star == pytest.approx(1.213, abs=1e-3)


@pytest.mark.parametrize("band", [FAST, NoiseBand(1, 1.0, 0.05, 3.0), NoiseBand(3, 1.0, 0.2, 6.0)])
def test_effective_rate_is_initial_log_slope(band):
    # the mean switching rate from the density, computed by quadrature
    mean = integrate(lambda g: g * rate_pdf(band, g), band.gamma_lo, band.gamma_hi,
                     QuadratureSpec(abs_tol=1e-14, rel_tol=1e-12))
    assert effective_fluctuator(band).gamma_star == pytest.approx(mean, rel=1e-10)
    assert effective_fluctuator(band).gamma_star == pytest.approx(_richardson_rate(band), rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 5), lo=st.floats(1e-3, 1.0), ratio=st.floats(1.5, 1e3), sigma=st.floats(0.1, 5.0))
def test_chi_zero_and_monotone_property(n, lo, ratio, sigma):
    band = NoiseBand(n, sigma, lo, lo * ratio)
    assert correlation(band, 0.0) == pytest.approx(sigma ** 2)
    tau = np.array([1e-3, 1e-2, 1e-1, 1.0]) / lo
    chi = correlation(band, tau)
    assert np.all(np.diff(chi) < 0) and np.all(chi <= sigma ** 2)


def test_band_validation():
    with pytest.raises(ValueError):
        NoiseBand(0, 1.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        NoiseBand(1, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        NoiseBand(1, -1.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        NoiseModel((SLOW, NoiseBand(2, 1.0, 0.6, 4.0)), require_continuity=True)
    NoiseModel((SLOW, FAST), require_continuity=True)


def test_config_round_trip_and_units():
    band = band_from_dict({"n": 1, "sigma": 1, "gamma_lo": 0.5, "gamma_hi": 5e5, "units": "1/s"})
    assert band.gamma_lo == pytest.approx(5e-7) and band.gamma_hi == pytest.approx(0.5)
    assert band_from_dict(FAST.to_dict()) == FAST
    model = model_from_dict({"bands": [SLOW.to_dict(), FAST.to_dict()], "require_continuity": True})
    assert model.bands == (SLOW, FAST)
    with pytest.raises(ConfigError):
        band_from_dict({"n": 1, "sigma": 1, "gamma_lo": 1})
    with pytest.raises(ConfigError):
        band_from_dict({"n": 1, "sigma": 1, "gamma_lo": 1, "gamma_hi": 2, "units": "furlongs"})
    with pytest.raises(ConfigError):
        model_from_dict({"bands": []})
