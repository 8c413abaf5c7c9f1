import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from mechqubit import processes as pr
from mechqubit.errors import FitFailureError, InvalidParameterError

# --- telegraph ---------------------------------------------------------------

def test_symmetric_telegraph_half_occupancy():
    path = pr.simulate_telegraph(pr.TelegraphParams(1.0, 1.0), 1e5, seed=1)
    assert abs(path.occupancy(1) - 0.5) < 0.01


def test_asymmetric_telegraph_occupancy():
    params = pr.TelegraphParams(3.0, 1.0)
    assert params.stationary_occupancy() == pytest.approx(0.75)
    path = pr.simulate_telegraph(params, 1e5, seed=2)
    assert abs(path.occupancy(1) - 0.75) < 0.01


def test_telegraph_deterministic():
    a = pr.simulate_telegraph(pr.TelegraphParams(2.0, 5.0), 100.0, seed=7)
    b = pr.simulate_telegraph(pr.TelegraphParams(2.0, 5.0), 100.0, seed=7)
    assert np.array_equal(a.jump_times, b.jump_times)
    assert np.array_equal(a.states, b.states)


def test_telegraph_alternates_and_holding_means():
    path = pr.simulate_telegraph(pr.TelegraphParams(2.0, 5.0), 2e4, seed=3)
    assert np.all(np.diff(path.states) != 0)
    d0 = path.interior_dwells(0)
    d1 = path.interior_dwells(1)
    # mean holding time 1/gamma, standard error mean/sqrt(n)
    assert abs(d0.mean() - 0.5) < 4 * 0.5 / math.sqrt(d0.size)
    assert abs(d1.mean() - 0.2) < 4 * 0.2 / math.sqrt(d1.size)


@pytest.mark.parametrize("g0,g1,dur", [(0, 1, 1), (1, -1, 1), (1, 1, 0), (1, 1, -2), (np.inf, 1, 1)])
def test_telegraph_invalid(g0, g1, dur):
    with pytest.raises(InvalidParameterError):
        pr.simulate_telegraph(pr.TelegraphParams(g0, g1), dur, 0)


@settings(max_examples=15, deadline=None)
@given(g0=st.floats(0.1, 10), g1=st.floats(0.1, 10), seed=st.integers(0, 2**31))
def test_telegraph_occupancy_property(g0, g1, seed):
    # ~4000 expected jumps; the occupancy of an alternating renewal process
    # has variance 2 p^2 (1-p)^2 (1/g0 + 1/g1) / T
    p = g0 / (g0 + g1)
    dur = 2000.0 / min(g0, g1)
    path = pr.simulate_telegraph(pr.TelegraphParams(g0, g1), dur, seed)
    se = math.sqrt(2 * p**2 * (1 - p) ** 2 * (1 / g0 + 1 / g1) / dur)
    assert abs(path.occupancy(1) - p) < 3 * se + 1e-3


# --- Poisson reset -----------------------------------------------------------

def test_poisson_reset_zero_sigma_is_constant_zero():
    path = pr.simulate_poisson_reset(pr.PoissonResetParams(1.0, 0.0), 50.0, seed=0)
    assert np.all(path.states == 0.0)


def test_poisson_reset_event_count_and_level_variance():
    path = pr.simulate_poisson_reset(pr.PoissonResetParams(2.0, 0.5), 1e5, seed=4)
    n = path.jump_times.size
    assert abs(n - 2e5) < 3 * math.sqrt(2e5)
    assert_allclose(np.var(path.states), 0.25, rtol=0.05)


def test_poisson_reset_invalid():
    with pytest.raises(InvalidParameterError):
        pr.PoissonResetParams(0.0, 1.0)
    with pytest.raises(InvalidParameterError):
        pr.PoissonResetParams(1.0, -0.1)


def test_lorentzian_mappings():
    lt = pr.TelegraphParams(1.0, 3.0).lorentzian()
    assert_allclose([lt.amplitude_A, lt.alpha], [3 / 16, 4.0])
    lp = pr.PoissonResetParams(2.0, 0.5).lorentzian()
    assert_allclose([lp.amplitude_A, lp.alpha], [0.25, 2.0])


# --- analytic statistics -----------------------------------------------------

def test_autocorrelation_values():
    n = pr.LorentzianNoise(0.25, 2.0)
    assert pr.analytic_autocorrelation(n, 0.0) == pytest.approx(0.25)
    assert pr.analytic_autocorrelation(n, 1e3) == pytest.approx(0.0, abs=1e-300)
    assert pr.analytic_autocorrelation(pr.LorentzianNoise(1, 1), 1.0) == pytest.approx(math.exp(-1))
    t = np.linspace(-3, 3, 13)
    assert_allclose(pr.analytic_autocorrelation(n, t), pr.analytic_autocorrelation(n, -t))


def test_psd_values_and_integral():
    n = pr.LorentzianNoise(0.3, 2.5)
    assert pr.analytic_psd(n, 0.0) == pytest.approx(2 * 0.3 / 2.5)
    assert pr.analytic_psd(n, 2.5) == pytest.approx(0.3 / 2.5)
    total, _ = integrate.quad(lambda w: pr.analytic_psd(n, w), -np.inf, np.inf)
    assert_allclose(total, 2 * np.pi * pr.analytic_autocorrelation(n, 0.0), rtol=1e-3)


@pytest.mark.parametrize("k", [0.0, 1.0, 5.0])
def test_wiener_khinchin_inverse_transform(k):
    n = pr.LorentzianNoise(0.7, 1.3)
    tau = k / n.alpha
    # c(tau) = (1/2pi) int S(w) cos(w tau) dw, done with the Fourier-weight quadrature
    if tau == 0:
        val, _ = integrate.quad(lambda w: pr.analytic_psd(n, w), 0, np.inf)
    else:
        val, _ = integrate.quad(lambda w: pr.analytic_psd(n, w), 0, np.inf, weight="cos", wvar=tau)
    assert_allclose(val / np.pi, pr.analytic_autocorrelation(n, tau), rtol=1e-3)


def test_adev_closed_form_examples():
    one = pr.LorentzianNoise(1.0, 1.0)
    assert pr.analytic_adev(pr.LorentzianNoise(0.0, 1.0), np.array([0.1, 1, 10])) == pytest.approx(0.0)
    assert_allclose(pr.analytic_adev(one, 0.01), math.sqrt(2 * 0.01 / 3), rtol=5e-3)
    assert_allclose(pr.analytic_adev(one, 100.0), math.sqrt(197) / 100, rtol=1e-12)


def test_adev_asymptotes():
    n = pr.LorentzianNoise(0.4, 3.0)
    small, large = 1e-6, 1e5
    assert_allclose(pr.analytic_adev(n, small), math.sqrt(2 * 0.4 * 3.0 * small / 3), rtol=1e-5)
    assert_allclose(pr.analytic_adev(n, large), math.sqrt(2 * 0.4 / (3.0 * large)), rtol=1e-3)


def test_adev_branch_continuity():
    n = pr.LorentzianNoise(1.0, 1.0)
    x = pr.ADEV_SERIES_THRESHOLD
    below = pr.analytic_adev(n, x * (1 - 1e-12))
    above = pr.analytic_adev(n, x * (1 + 1e-12))
    assert_allclose(below, above, rtol=1e-9)
    # the series branch must agree with a high-precision evaluation of the closed form
    xs = np.array([1e-8, 1e-5, 5e-4])
    exact = np.array([
        math.sqrt(sum((-1) ** k * (4 - 2**k) * v**k / math.factorial(k) for k in range(3, 30))) / v
        for v in xs
    ])
    assert_allclose(pr.analytic_adev(n, xs), exact, rtol=1e-12)


def test_adev_nonpositive_tau():
    with pytest.raises(InvalidParameterError):
        pr.analytic_adev(pr.LorentzianNoise(1, 1), 0.0)


@settings(max_examples=50, deadline=None)
@given(A=st.floats(1e-6, 1e3), alpha=st.floats(1e-3, 1e3), tau=st.floats(1e-4, 1e4))
def test_adev_nonnegative_and_bounded(A, alpha, tau):
    v = float(pr.analytic_adev(pr.LorentzianNoise(A, alpha), tau))
    assert v >= 0
    # the ADEV never exceeds the standard deviation of the process
    assert v <= math.sqrt(A) * (1 + 1e-9)


# --- empirical ADEV ----------------------------------------------------------

def test_empirical_adev_constant_series():
    c = pr.empirical_adev(np.full(1000, 3.0), 0.1, [0.1, 0.5, 1.0])
    assert_allclose(c.sigmas, 0.0, atol=1e-12)
    assert list(c.counts) == [1001 - 2, 1001 - 10, 1001 - 20]


def test_empirical_adev_matches_direct_definition():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(500)
    m, dt = 7, 0.2
    means = np.convolve(x, np.ones(m) / m, mode="valid")  # xbar over windows starting at each sample
    diffs = means[m:] - means[:-m]
    direct = math.sqrt(0.5 * np.mean(diffs**2))
    c = pr.empirical_adev(x, dt, [m * dt])
    assert_allclose(c.sigmas[0], direct, rtol=1e-10)
    assert c.counts[0] == diffs.size


def test_empirical_adev_white_noise_slope():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(2_000_000)
    taus = pr.log_tau_grid(1.0, 1.0, 1000.0)
    c = pr.empirical_adev(x, 1.0, taus)
    slope = np.polyfit(np.log(c.taus), np.log(c.sigmas), 1)[0]
    assert abs(slope + 0.5) < 0.025
    # level: sigma^2(tau) = v / tau for white noise sampled at dt
    assert_allclose(c.sigmas[0], 1.0, rtol=0.01)


def test_empirical_adev_tau_not_multiple():
    with pytest.raises(InvalidParameterError):
        pr.empirical_adev(np.zeros(100), 0.1, [0.15])


def test_empirical_adev_omits_long_tau():
    with pytest.warns(UserWarning):
        c = pr.empirical_adev(np.zeros(10), 1.0, [1.0, 6.0])
    assert list(c.taus) == [1.0]
    assert c.omitted == (6.0,)


def test_empirical_adev_telegraph_converges():
    params = pr.TelegraphParams(1.0, 1.0)
    dt = 0.01
    taus = pr.log_tau_grid(dt, 0.05, 50.0)
    curves = [pr.empirical_adev(pr.simulate_telegraph(params, 1e5, seed=10 + k).bin_average(dt), dt, taus)
              for k in range(2)]
    mean = pr.mean_adev_curve(curves)
    expect = pr.analytic_adev(params.lorentzian(), mean.taus)
    assert np.max(np.abs(mean.sigmas / expect - 1)) < 0.10


def test_mean_adev_curve_is_rms_and_order_stable():
    t = np.array([1.0, 2.0])
    a = pr.AdevCurve(t, np.array([3.0, 0.0]), np.array([5, 5]))
    b = pr.AdevCurve(t, np.array([4.0, 0.0]), np.array([5, 5]))
    m = pr.mean_adev_curve([a, b])
    assert_allclose(m.sigmas, [math.sqrt(12.5), 0.0])
    assert list(m.counts) == [10, 10]


# --- model fit ---------------------------------------------------------------

def _synthetic_curve(c1, c2, k, noise, seed):
    taus = np.geomspace(1e-2, 1e3, 51)
    s = pr.adev_model(taus, c1, c2, k)
    rng = np.random.default_rng(seed)
    s = s * (1 + noise * rng.standard_normal(taus.size))
    return pr.AdevCurve(taus, s, np.ones_like(taus, dtype=int), dt=1e-3, duration=1e4)


def test_fit_recovers_parameters():
    c1, c2, k = pr.LorentzianNoise(1.0, 0.05), pr.LorentzianNoise(0.2, 20.0), 0.01
    fit = pr.fit_adev_model(_synthetic_curve(c1, c2, k, 0.02, 0))
    got = [fit.comp1.amplitude_A, fit.comp1.alpha, fit.comp2.amplitude_A, fit.comp2.alpha, fit.white_k]
    assert_allclose(got, [1.0, 0.05, 0.2, 20.0, 0.01], rtol=0.2)
    assert fit.comp1.alpha <= fit.comp2.alpha
    assert fit.residual >= 0


def test_fit_single_lorentzian_suppresses_second():
    c1 = pr.LorentzianNoise(1.0, 1.0)
    curve = _synthetic_curve(c1, pr.LorentzianNoise(0.0, 1.0), 0.0, 0.0, 0)
    fit = pr.fit_adev_model(curve)
    amps = sorted([fit.comp1.amplitude_A, fit.comp2.amplitude_A])
    assert amps[0] < 0.05 * amps[1]
    assert_allclose(fit(curve.taus), curve.sigmas, rtol=0.02)


def test_fit_white_only():
    taus = np.geomspace(1e-2, 1e2, 41)
    k = 0.3
    curve = pr.AdevCurve(taus, k / np.sqrt(taus), np.ones(41, dtype=int), dt=1e-3, duration=1e3)
    fit = pr.fit_adev_model(curve)
    lor_max = max(np.max(pr.analytic_adev(c, taus) / (k / np.sqrt(taus))) for c in (fit.comp1, fit.comp2))
    assert lor_max < 0.05
    assert_allclose(fit.white_k, k, rtol=0.05)


def test_fit_degenerate_curve():
    taus = np.geomspace(1e-2, 1e2, 20)
    with pytest.raises(FitFailureError):
        pr.fit_adev_model(pr.AdevCurve(taus, np.zeros(20), np.ones(20, dtype=int)))


def test_fit_json_and_csv_roundtrip(tmp_path):
    fit = pr.AdevModelFit(pr.LorentzianNoise(1, 2), pr.LorentzianNoise(3, 4), 0.5, 0.01)
    pr.write_fit_json(tmp_path / "fit.json", fit)
    import json

    keys = set(json.loads((tmp_path / "fit.json").read_text()))
    assert keys == {"A1", "alpha1", "A2", "alpha2", "k", "residual"}
    back = pr.read_fit_json(tmp_path / "fit.json")
    assert back.to_dict() == fit.to_dict()
    curve = pr.AdevCurve(np.array([0.1, 1.0]), np.array([0.3, 0.2]), np.array([10, 5]))
    pr.write_adev_csv(tmp_path / "a.csv", curve)
    c2 = pr.read_adev_csv(tmp_path / "a.csv")
    assert_allclose(c2.sigmas, curve.sigmas, rtol=0)
    assert list(c2.counts) == [10, 5]
