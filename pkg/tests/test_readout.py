import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.special import erfc

from mechqubit import readout as ro
from mechqubit.errors import (
    CalibrationError,
    InsufficientDataError,
    NonThermalInversionError,
    NoSolutionError,
)
from mechqubit.paths import E, G, StatePath
from mechqubit.qubitsim import ReadoutModel, simulate_readout

TWO_PI = 2 * math.pi


def _mixture(n, weights, means, sigmas, seed):
    rng = np.random.default_rng(seed)
    comp = rng.choice(len(weights), size=n, p=weights)
    return np.asarray(means)[comp] + np.asarray(sigmas)[comp] * rng.standard_normal(n)


# --- PCA ---------------------------------------------------------------------

def test_pca_vertical_clusters_map_to_i_axis():
    rng = np.random.default_rng(0)
    d = 2.0
    iq = np.concatenate([rng.normal(0, 0.1, 5000) + 1j * rng.normal(0, 0.1, 5000),
                         rng.normal(0, 0.1, 5000) + 1j * (d + rng.normal(0, 0.1, 5000))])
    rot_iq, rot = ro.pca_rotate(iq, ground_hint=0j)
    a, b = rot.apply(0j), rot.apply(1j * d)
    assert_allclose(b.real - a.real, d, rtol=1e-6)
    assert_allclose(b.imag - a.imag, 0.0, atol=1e-2)
    assert np.linalg.det(rot.matrix) == pytest.approx(1.0)


def test_pca_already_along_i_is_identity_up_to_sign():
    rng = np.random.default_rng(1)
    iq = np.concatenate([rng.normal(0, 0.05, 4000), rng.normal(1, 0.05, 4000)])
    iq = iq + 1j * rng.normal(0, 0.05, 8000)
    _, rot = ro.pca_rotate(iq)
    assert_allclose(np.abs(rot.matrix), np.eye(2), atol=1e-2)


def test_pca_diagonal_separation_eigen_oracle():
    # exact two-point cloud: the principal axis is the separation direction
    s = 3.0
    u = s * np.exp(1j * np.pi / 4)
    iq = np.array([0j, u] * 500)
    rot_iq, rot = ro.pca_rotate(iq, ground_hint=0j)
    assert_allclose(rot.apply(u).real - rot.apply(0j).real, s, rtol=1e-6)
    assert_allclose(rot.apply(0j).real, -s / 2, rtol=1e-9)


def test_pca_degenerate():
    with pytest.raises(CalibrationError):
        ro.pca_rotate(np.ones(100, dtype=complex))
    with pytest.raises(CalibrationError):
        ro.pca_rotate([1 + 1j])


# --- mixture fit -------------------------------------------------------------

def test_two_gaussian_recovery():
    x = _mixture(100_000, [0.9, 0.1], [0.0, 1.0], [0.05, 0.05], seed=2)
    cal = ro.fit_gaussian_mixture(x, 2)
    assert_allclose(cal.means, [0.0, 1.0], atol=0.02)
    assert_allclose(cal.sigmas, [0.05, 0.05], rtol=0.02)
    assert_allclose(cal.weights, [0.9, 0.1], rtol=0.02)
    assert_allclose(cal.thresholds, [0.5], atol=0.02)
    assert cal.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_single_population_leaves_absent_component():
    x = np.random.default_rng(3).normal(0.0, 0.1, 20_000)
    cal = ro.fit_gaussian_mixture(x, 2)
    assert min(cal.weights) < 1e-3
    assert cal.absent.count(True) == 1


def test_three_component_imbalanced_weights():
    w = [0.986, 0.0125, 0.0015]
    x = _mixture(300_000, w, [0.0, 1.0, 2.0], [1 / 13] * 3, seed=4)
    cal = ro.fit_gaussian_mixture(x, 3)
    assert_allclose(cal.weights, w, rtol=0.1)
    assert np.all(np.diff(cal.means) > 0)


def test_fit_is_input_order_invariant():
    x = _mixture(5000, [0.7, 0.3], [0.0, 1.0], [0.1, 0.1], seed=5)
    a = ro.fit_gaussian_mixture(x, 2)
    b = ro.fit_gaussian_mixture(np.random.default_rng(0).permutation(x), 2)
    for f in ("means", "sigmas", "weights", "thresholds"):
        assert_allclose(getattr(a, f), getattr(b, f), rtol=1e-9, atol=1e-12)


def test_fit_needs_enough_samples():
    with pytest.raises(InsufficientDataError):
        ro.fit_gaussian_mixture(np.arange(999.0), 2)


def test_calibration_json_roundtrip(tmp_path):
    x = _mixture(5000, [0.7, 0.3], [0.0, 1.0], [0.1, 0.1], seed=6)
    cal = ro.calibrate(x + 0j)
    ro.write_calibration_json(tmp_path / "cal.json", cal)
    back = ro.read_calibration_json(tmp_path / "cal.json")
    assert set(cal.to_dict()) == {"rotation", "means", "sigmas", "weights", "thresholds"}
    assert_allclose(back.thresholds, cal.thresholds)
    assert_allclose(back.rotation.matrix, cal.rotation.matrix)
    assert np.array_equal(ro.classify(x + 0j, back), ro.classify(x + 0j, cal))


def test_calibration_invariants_enforced():
    with pytest.raises(CalibrationError):
        ro.CalibrationResult([1.0, 0.0], [0.1, 0.1], [0.5, 0.5], [0.5])
    with pytest.raises(CalibrationError):
        ro.CalibrationResult([0.0, 1.0], [0.1, 0.1], [0.5, 0.6], [0.5])
    with pytest.raises(CalibrationError):
        ro.CalibrationResult([0.0, 1.0], [0.1, 0.1], [0.5, 0.5], [1.0])


# --- classification ----------------------------------------------------------

def _cal2(mu=(0.0, 1.0), s=(0.1, 0.1)):
    return ro.CalibrationResult(list(mu), list(s), [0.5, 0.5], [0.5 * (mu[0] + mu[1])])


def test_classify_tie_and_means():
    cal = ro.CalibrationResult([0.0, 1.0, 2.0], [0.1] * 3, [0.6, 0.3, 0.1], [0.5, 1.5])
    assert list(ro.classify([0.5, 1.5, 0.0, 1.0, 2.0], cal)) == [G, E, G, E, 2]


def test_classify_well_separated_no_errors():
    model = ReadoutModel.from_separation(6.5, sigma=1.0)
    path = StatePath(np.array([0.5]), np.array([G, E]), 1.0)
    tr = simulate_readout(path, np.linspace(0, 1, 1_000_000, endpoint=False), model, seed=7)
    cal = ro.CalibrationResult([0.0, 13.0], [1.0, 1.0], [0.5, 0.5], [6.5],
                               rotation=ro.IQRotation(np.eye(2), np.zeros(2)))
    lab = ro.classify(tr.iq[0], cal)
    assert np.count_nonzero(lab != tr.states[0]) == 0


def test_classify_error_rates_match_budget():
    ratio, t_read = 2.0, 3e-6
    g_up, g_down = 0.01 / t_read, 0.02 / t_read
    model = ReadoutModel.from_separation(ratio, sigma=1.0, flip_up_prob=g_up * t_read,
                                         flip_down_prob=g_down * t_read)
    n = 400_000
    path = StatePath(np.array([0.5]), np.array([G, E]), 1.0)
    tr = simulate_readout(path, np.linspace(0, 1, n, endpoint=False), model, seed=8)
    cal = ro.CalibrationResult([0.0, 2 * ratio], [1.0, 1.0], [0.5, 0.5], [ratio],
                               rotation=ro.IQRotation(np.eye(2), np.zeros(2)))
    lab = ro.classify(tr.iq[0], cal)
    sep_up, sep_down = ro.separation_errors(cal)
    fu, fd = ro.flip_error_bounds(g_up, g_down, t_read)
    for state, sep, flip in ((G, sep_up, fu), (E, sep_down, fd)):
        sel = tr.states[0] == state
        # flipped shots are misclassified unless noise carries them back
        p = flip * (1 - sep) + (1 - flip) * sep
        rate = np.mean(lab[sel] != state)
        assert abs(rate - p) < 3 * math.sqrt(p * (1 - p) / sel.sum())


# --- error budget ------------------------------------------------------------

def test_separation_errors_examples():
    assert ro.separation_errors(_cal2((0.0, 1e-12), (1.0, 1.0)))[0] == pytest.approx(0.5)
    up, down = ro.separation_errors(_cal2((0.0, 13.0), (1.0, 1.0)))
    assert_allclose(up, 0.5 * erfc(6.5 / math.sqrt(2)), rtol=1e-12)
    assert_allclose(up, 4.1e-11, rtol=0.03)
    up, down = ro.separation_errors(_cal2((0.0, 4.0), (0.5, 1.0)))
    assert down > up


def test_flip_bounds_reference_values():
    t = 3e-6
    up, down = ro.flip_error_bounds(TWO_PI * 3.23, TWO_PI * 1.44e3, t)
    assert up == pytest.approx(6.1e-5, rel=0.01)
    assert down == pytest.approx(0.027, rel=0.01)
    assert ro.flip_error_bounds(0.0, 0.0, t) == (0.0, 0.0)


def test_error_budget_range():
    with pytest.raises(ValueError):
        ro.ErrorBudget(0.1, 0.1, 0.6, 0.0)


def test_free_evolution_rates():
    up, down = ro.free_evolution_rates(0.015, 0.2e-3)
    assert up / TWO_PI == pytest.approx(11.9, abs=0.05)
    assert down / TWO_PI == pytest.approx(784, abs=1)
    assert ro.free_evolution_rates(0.0, 1e-3)[0] == 0.0


@given(p=st.floats(0, 0.999), t1=st.floats(1e-6, 10))
def test_free_evolution_sum(p, t1):
    up, down = ro.free_evolution_rates(p, t1)
    assert_allclose(up + down, 1 / t1, rtol=1e-14)


# --- thermometry and bath ----------------------------------------------------

def test_effective_temperature_reference_values():
    assert ro.effective_temperature(0.0012, 0.9988, 4.794064e9) == pytest.approx(0.034, abs=5e-4)
    assert ro.effective_temperature(0.0125, 0.986, 4.794e9) == pytest.approx(0.053, abs=1e-3)
    assert ro.effective_temperature(0.0015, 0.0125, 4.794e9 - 0.272e9) == pytest.approx(0.102, abs=1e-3)


def test_effective_temperature_inversion():
    with pytest.raises(NonThermalInversionError):
        ro.effective_temperature(0.6, 0.4, 5e9)


@given(lo=st.floats(0.01, 0.99), a=st.floats(1e-4, 0.98), b=st.floats(1e-4, 0.98))
def test_effective_temperature_monotone(lo, a, b):
    p1, p2 = sorted([a * lo, b * lo])
    if p2 - p1 < 1e-9 * lo:
        return
    assert ro.effective_temperature(p1, lo, 5e9) < ro.effective_temperature(p2, lo, 5e9)


def test_bath_occupation_examples():
    n = ro.required_bath_occupation(0.2, TWO_PI * 10, TWO_PI * 1e3)
    assert n == pytest.approx(33.67, abs=0.01)
    assert ro.required_bath_occupation(0.0, 1.0, 1.0) == 0.0
    assert ro.measured_occupation(30, 0.1) == pytest.approx(3.0)
    assert ro.measured_occupation(7.0, 1.0) == 7.0
    assert ro.measured_occupation(0.0, 0.3) == 0.0
    est = ro.estimate_bath(0.2, TWO_PI * 10, TWO_PI * 1e3, 0.1)
    assert est.n_measured == pytest.approx(0.1 * est.n_ex)
    with pytest.raises(NoSolutionError):
        ro.required_bath_occupation(0.5, 1.0, 1.0)


@given(p=st.floats(0, 0.499), gex=st.floats(1e-2, 1e4), gin=st.floats(0, 1e4))
def test_bath_roundtrip(p, gex, gin):
    n = ro.required_bath_occupation(p, gex, gin)
    assert_allclose(ro.bath_excitation_probability(n, gex, gin), p, rtol=1e-12, atol=1e-15)


def test_bath_monotone_and_divergent():
    ps = np.linspace(0, 0.4999, 200)
    n = np.array([ro.required_bath_occupation(p, 1.0, 10.0) for p in ps])
    assert np.all(np.diff(n) > 0)
    assert ro.required_bath_occupation(0.5 - 1e-9, 1.0, 10.0) > 1e9
