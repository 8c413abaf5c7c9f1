"""Lorentzian noise processes: simulators, closed-form statistics and ADEV.

Random telegraph noise and the Poisson reset process share the autocorrelation
``A exp(-alpha |tau|)``, hence the same Lorentzian PSD and Allan deviation.
This module simulates both, evaluates the closed forms, estimates the
overlapping ADEV of sampled data and fits the two-Lorentzian plus white-noise
ADEV model.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import FitFailureError, InvalidInputError, InvalidParameterError
from .io import atomic_write_text, read_csv_columns, write_csv_columns
from .paths import StatePath

logger = logging.getLogger(__name__)

# Below this value of alpha*tau the ADEV radicand is evaluated by its series.
ADEV_SERIES_THRESHOLD = 1e-3
# Coefficients of x**n, n >= 3, in 4exp(-x) - exp(-2x) + 2x - 3.
_ADEV_SERIES = tuple((-1) ** n * (4 - 2**n) / math.factorial(n) for n in range(3, 13))

A_BOUNDS = (1e-12, 1e12)

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


def _sum_sq_second_difference_np(phase, m):
    step = phase[m:] - phase[:-m]
    d = step[m:] - step[:-m]
    return float(np.dot(d, d))


if numba is not None:
    @numba.njit(cache=True, nogil=True)
    def _sum_sq_second_difference(phase, m):
        acc = 0.0
        for i in range(phase.size - 2 * m):
            d = phase[i + 2 * m] - 2.0 * phase[i + m] + phase[i]
            acc += d * d
        return acc
else:  # pragma: no cover
    _sum_sq_second_difference = _sum_sq_second_difference_np


@dataclass(frozen=True)
class TelegraphParams:
    """Rates of a 0/1 telegraph process: ``gamma0`` for 0->1, ``gamma1`` for 1->0."""

    gamma0: float
    gamma1: float

    def __post_init__(self):
        for name in ("gamma0", "gamma1"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidParameterError(f"{name} must be positive and finite, got {v}")

    def stationary_occupancy(self) -> float:
        """Long-run probability of state 1."""
        return self.gamma0 / (self.gamma0 + self.gamma1)

    def lorentzian(self) -> LorentzianNoise:
        g = self.gamma0 + self.gamma1
        return LorentzianNoise(self.gamma0 * self.gamma1 / g**2, g)


@dataclass(frozen=True)
class PoissonResetParams:
    """Reset events at rate ``gamma``; new level ~ Normal(0, sigma**2)."""

    gamma: float
    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidParameterError(f"gamma must be positive and finite, got {self.gamma}")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise InvalidParameterError(f"sigma must be >= 0, got {self.sigma}")

    def lorentzian(self) -> LorentzianNoise:
        return LorentzianNoise(self.sigma**2, self.gamma)


@dataclass(frozen=True)
class LorentzianNoise:
    """Autocorrelation ``amplitude_A * exp(-alpha |tau|)``."""

    amplitude_A: float
    alpha: float

    def __post_init__(self):
        if not self.amplitude_A >= 0:
            raise InvalidParameterError("amplitude_A must be >= 0")
        if not self.alpha > 0:
            raise InvalidParameterError("alpha must be > 0")


@dataclass(frozen=True, eq=False)
class AdevCurve:
    """Allan deviation versus averaging time.

    ``dt`` and ``duration`` describe the underlying series when known; the
    model fit uses them to bound the corner rates.
    """

    taus: np.ndarray
    sigmas: np.ndarray
    counts: np.ndarray
    omitted: tuple = ()
    dt: float | None = None
    duration: float | None = None

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        sigmas = np.asarray(self.sigmas, dtype=float)
        counts = np.asarray(self.counts, dtype=np.int64)
        if not (taus.shape == sigmas.shape == counts.shape) or taus.ndim != 1:
            raise InvalidInputError("taus, sigmas and counts must be equal-length 1-D")
        if np.any(np.diff(taus) <= 0):
            raise InvalidInputError("taus must be strictly increasing")
        if np.any(sigmas < 0):
            raise InvalidInputError("sigmas must be non-negative")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "counts", counts)


@dataclass(frozen=True)
class AdevModelFit:
    """Two Lorentzian ADEV components (``comp1.alpha <= comp2.alpha``) plus ``white_k/sqrt(tau)``."""

    comp1: LorentzianNoise
    comp2: LorentzianNoise
    white_k: float
    residual: float
    n_starts: int = 0
    converged: bool = True

    def __call__(self, tau):
        return adev_model(tau, self.comp1, self.comp2, self.white_k)

    def to_dict(self) -> dict:
        return {
            "A1": self.comp1.amplitude_A,
            "alpha1": self.comp1.alpha,
            "A2": self.comp2.amplitude_A,
            "alpha2": self.comp2.alpha,
            "k": self.white_k,
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, d: dict) -> AdevModelFit:
        return cls(
            LorentzianNoise(d["A1"], d["alpha1"]),
            LorentzianNoise(d["A2"], d["alpha2"]),
            d["k"],
            d["residual"],
        )


def _check_duration(duration):
    if not (np.isfinite(duration) and duration > 0):
        raise InvalidParameterError(f"duration must be positive, got {duration}")


def simulate_telegraph(params: TelegraphParams, duration: float, seed: int) -> StatePath:
    """Event-driven random telegraph path on ``[0, duration]``.

    The initial state is drawn from the stationary law; holding times in
    state 0 are Exp(gamma0) and in state 1 Exp(gamma1).
    """
    _check_duration(duration)
    rng = np.random.default_rng(seed)
    first = int(rng.random() < params.stationary_occupancy())
    mean_hold = np.array([1.0 / params.gamma0, 1.0 / params.gamma1])
    # Expected holding-pair length fixes the block size.
    block = int(2 * duration / mean_hold.sum()) + 64
    jumps = []
    t = 0.0
    n_done = 0
    while True:
        order = (first + n_done + np.arange(block)) % 2
        holds = rng.exponential(mean_hold[order])
        cum = t + np.cumsum(holds)
        inside = cum < duration
        jumps.append(cum[inside])
        n_done += int(inside.sum())
        if not inside.all():
            break
        t = cum[-1]
    jump_times = np.concatenate(jumps)
    states = (first + np.arange(jump_times.size + 1)) % 2
    return StatePath(jump_times, states.astype(np.int8), float(duration))


def simulate_poisson_reset(params: PoissonResetParams, duration: float, seed: int) -> StatePath:
    """Piecewise-constant path reset to a fresh Normal(0, sigma**2) level at Poisson events."""
    _check_duration(duration)
    rng = np.random.default_rng(seed)
    n_events = rng.poisson(params.gamma * duration)
    times = np.sort(rng.uniform(0.0, duration, n_events))
    # Ties have probability zero but would break strict ordering.
    times = np.unique(times)
    levels = rng.normal(0.0, params.sigma, times.size + 1)
    return StatePath(times, levels, float(duration))


def analytic_autocorrelation(noise: LorentzianNoise, tau):
    """``A exp(-alpha |tau|)`` (the constant offset is dropped)."""
    return noise.amplitude_A * np.exp(-noise.alpha * np.abs(np.asarray(tau, dtype=float)))


def analytic_psd(noise: LorentzianNoise, omega):
    """Two-sided Lorentzian PSD ``2 A alpha / (alpha**2 + omega**2)``."""
    omega = np.asarray(omega, dtype=float)
    a = noise.alpha
    return 2.0 * noise.amplitude_A * a / (a * a + omega * omega)


def _adev_radicand(x: np.ndarray) -> np.ndarray:
    """``4exp(-x) - exp(-2x) + 2x - 3`` without cancellation near zero."""
    out = np.empty_like(x)
    small = x < ADEV_SERIES_THRESHOLD
    xs = x[small]
    poly = np.zeros_like(xs)
    for c in reversed(_ADEV_SERIES):
        poly = poly * xs + c
    out[small] = poly * xs**3
    xl = x[~small]
    out[~small] = 4.0 * np.expm1(-xl) - np.expm1(-2.0 * xl) + 2.0 * xl
    return np.maximum(out, 0.0)


def analytic_adev(noise: LorentzianNoise, tau):
    r"""Closed-form Allan deviation of a Lorentzian process.

    .. math::

        \sigma(\tau) = \frac{\sqrt{A(4e^{-\alpha\tau} - e^{-2\alpha\tau}
                       + 2\alpha\tau - 3)}}{\alpha\tau}

    For ``alpha*tau < ADEV_SERIES_THRESHOLD`` the radicand is summed as a
    power series.
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr <= 0):
        raise InvalidParameterError("tau must be > 0")
    x = np.atleast_1d(noise.alpha * tau_arr)
    out = np.sqrt(noise.amplitude_A * _adev_radicand(x)) / x
    return out.reshape(tau_arr.shape) if tau_arr.ndim else float(out[0])


def adev_model(tau, comp1: LorentzianNoise, comp2: LorentzianNoise, white_k: float):
    """Sum of two Lorentzian ADEVs and a white-noise term ``k/sqrt(tau)``."""
    tau = np.asarray(tau, dtype=float)
    return analytic_adev(comp1, tau) + analytic_adev(comp2, tau) + white_k / np.sqrt(tau)


def log_tau_grid(dt: float, tau_min: float, tau_max: float, per_decade: int = 10) -> np.ndarray:
    """Log-spaced averaging times rounded to multiples of ``dt`` (duplicates removed)."""
    if not (0 < tau_min <= tau_max):
        raise InvalidParameterError("need 0 < tau_min <= tau_max")
    n = max(int(round(per_decade * math.log10(tau_max / tau_min))), 0) + 1
    m = np.unique(np.maximum(np.round(np.geomspace(tau_min, tau_max, n) / dt), 1))
    return m * dt


def empirical_adev(series, dt: float, taus) -> AdevCurve:
    """Overlapping Allan deviation of a uniformly sampled series.

    Each ``tau`` must be an integer multiple ``m*dt``. The estimator averages
    all ``len(series) + 1 - 2m`` overlapping pairs; averaging times without
    a single pair are omitted and reported in ``AdevCurve.omitted``.
    """
    x = np.asarray(series, dtype=float).reshape(-1)
    if not dt > 0:
        raise InvalidParameterError("dt must be > 0")
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    ms = taus / dt
    m_int = np.round(ms)
    if np.any(np.abs(ms - m_int) > 1e-6 * np.maximum(1.0, ms)) or np.any(m_int < 1):
        raise InvalidParameterError("every tau must be a positive integer multiple of dt")
    # The ADEV is insensitive to a constant offset; removing it keeps the phase small.
    phase = np.empty(x.size + 1)
    phase[0] = 0.0
    np.cumsum(x - x.mean(), out=phase[1:])
    phase *= dt

    out_tau, out_sigma, out_count, omitted = [], [], [], []
    for tau, m in sorted(zip(taus, m_int.astype(np.int64))):
        n_pairs = phase.size - 2 * m
        if n_pairs < 1:
            omitted.append(float(tau))
            continue
        ssq = _sum_sq_second_difference(phase, int(m))
        out_tau.append(m * dt)
        out_sigma.append(math.sqrt(ssq / (2.0 * n_pairs)) / (m * dt))
        out_count.append(n_pairs)
    if omitted:
        warnings.warn(f"insufficient data for tau = {omitted}; omitted", stacklevel=2)
    return AdevCurve(
        np.array(out_tau), np.array(out_sigma), np.array(out_count, dtype=np.int64),
        omitted=tuple(omitted), dt=float(dt), duration=float(x.size * dt),
    )


def mean_adev_curve(curves) -> AdevCurve:
    """Root-mean-square combination of curves sharing the same taus.

    Curves are combined in the order given so results are bit-stable.
    """
    curves = list(curves)
    if not curves:
        raise InvalidInputError("no curves to combine")
    ref = curves[0]
    var = np.zeros_like(ref.sigmas)
    counts = np.zeros_like(ref.counts)
    for c in curves:
        if c.taus.shape != ref.taus.shape or not np.allclose(c.taus, ref.taus):
            raise InvalidInputError("curves have different tau grids")
        var += c.sigmas**2
        counts += c.counts
    return AdevCurve(ref.taus, np.sqrt(var / len(curves)), counts,
                     dt=ref.dt, duration=ref.duration)


def _unpack(p):
    a1, al1, a2, al2, k = 10.0 ** np.asarray(p)
    return LorentzianNoise(a1, al1), LorentzianNoise(a2, al2), k


def fit_adev_model(curve: AdevCurve, n_starts: int = 8, seed: int = 0,
                   alpha_bounds: tuple[float, float] | None = None) -> AdevModelFit:
    """Least-squares fit of the two-Lorentzian plus white-noise ADEV model.

    The loss is the sum of squared differences of ``log(sigma)`` (unweighted).
    Parameters are optimised in log10 space from ``n_starts`` starting points;
    amplitudes and ``k`` are bounded to ``A_BOUNDS`` and corner rates to
    ``alpha_bounds`` (default ``[1/duration, 1/dt]`` of the source series).

    Raises
    ------
    FitFailureError
        If the curve is degenerate or no start converged. ``err.best``
        carries the best fit found.
    """
    keep = curve.sigmas > 0
    taus, sig = curve.taus[keep], curve.sigmas[keep]
    if taus.size == 0:
        raise FitFailureError("degenerate ADEV curve (all zeros)")
    if taus.size < 8 or taus[-1] / taus[0] < 100.0 * (1 - 1e-9):
        raise InvalidInputError("need >= 8 positive points spanning >= 2 decades")

    if alpha_bounds is None:
        t_total = curve.duration if curve.duration else 2.0 * taus[-1]
        dt = curve.dt if curve.dt else taus[0]
        alpha_bounds = (1.0 / t_total, 1.0 / dt)
    la = np.log10(alpha_bounds)
    lA = np.log10(A_BOUNDS)
    lower = np.array([lA[0], la[0], lA[0], la[0], lA[0]])
    upper = np.array([lA[1], la[1], lA[1], la[1], lA[1]])
    log_sig = np.log(sig)

    def resid(p):
        c1, c2, k = _unpack(p)
        model = adev_model(taus, c1, c2, k)
        return np.log(np.maximum(model, 1e-300)) - log_sig

    rng = np.random.default_rng(seed)
    # A Lorentzian ADEV peaks near 0.72*sqrt(A); k is scaled from the shortest tau.
    a_scale = 2.0 * np.log10(sig.max() / 0.72)
    k_scale = np.log10(sig[0] * np.sqrt(taus[0]))
    best, n_ok = None, 0
    for i in range(n_starts):
        al = np.sort(rng.uniform(la[0], la[1], 2))
        p0 = np.array([
            a_scale - rng.uniform(0, 2), al[0],
            a_scale - rng.uniform(0, 2), al[1],
            k_scale - rng.uniform(0, 2),
        ])
        p0 = np.clip(p0, lower + 1e-6, upper - 1e-6)
        try:
            res = least_squares(resid, p0, bounds=(lower, upper), method="trf",
                                x_scale=1.0, max_nfev=2000)
        except (ValueError, FloatingPointError) as exc:  # pragma: no cover
            logger.debug("start %d failed: %s", i, exc)
            continue
        n_ok += int(res.status > 0)
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitFailureError("no start produced a finite fit")
    c1, c2, k = _unpack(best.x)
    if c1.alpha > c2.alpha:
        c1, c2 = c2, c1
    fit = AdevModelFit(c1, c2, float(k), float(2.0 * best.cost),
                       n_starts=n_starts, converged=best.status > 0)
    if n_ok == 0:
        raise FitFailureError("ADEV fit did not converge", best=fit,
                              diagnostics={"status": int(best.status)})
    return fit


# --- serialisation -----------------------------------------------------------

def write_series_csv(path, t, values) -> None:
    write_csv_columns(path, {"t": t, "value": values})


def read_series_csv(path):
    cols = read_csv_columns(path, ["t", "value"])
    return cols["t"], cols["value"]


def write_adev_csv(path, curve: AdevCurve) -> None:
    write_csv_columns(path, {"tau": curve.taus, "sigma": curve.sigmas, "count": curve.counts})


def read_adev_csv(path) -> AdevCurve:
    cols = read_csv_columns(path, ["tau", "sigma", "count"])
    return AdevCurve(cols["tau"], cols["sigma"], cols["count"].astype(np.int64))


def write_fit_json(path, fit: AdevModelFit) -> None:
    atomic_write_text(path, json.dumps(fit.to_dict(), indent=2) + "\n")


def read_fit_json(path) -> AdevModelFit:
    with open(path) as fh:
        return AdevModelFit.from_dict(json.load(fh))
