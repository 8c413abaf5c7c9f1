"""Readout calibration, thermometry and readout error budgets.

IQ points are rotated by PCA so the state separation lies along I, the I
histogram is fitted with a 1-D Gaussian mixture, and shots are classified by
thresholds halfway between adjacent fitted means. Populations come from the
mixture weights rather than from threshold counts, which removes most of the
separation error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .errors import (
    CalibrationError,
    FitFailureError,
    InsufficientDataError,
    InvalidInputError,
    InvalidParameterError,
    NonThermalInversionError,
    NoSolutionError,
)
from .io import atomic_write_text
from .paths import STATE_NAMES

# Planck constant over Boltzmann constant (K s), CODATA 2018 exact values.
H_OVER_KB = 4.7992430734e-11

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True, eq=False)
class IQRotation:
    """Affine map ``u = matrix @ ([I, Q] - offset)`` with ``det(matrix) = +1``."""

    matrix: np.ndarray
    offset: np.ndarray

    def apply(self, iq) -> np.ndarray:
        iq = np.asarray(iq, dtype=complex)
        re, im = iq.real - self.offset[0], iq.imag - self.offset[1]
        m = self.matrix
        return (m[0, 0] * re + m[0, 1] * im) + 1j * (m[1, 0] * re + m[1, 1] * im)

    def to_dict(self) -> dict:
        return {"matrix": np.asarray(self.matrix).tolist(), "offset": np.asarray(self.offset).tolist()}

    @classmethod
    def from_dict(cls, d) -> IQRotation:
        return cls(np.asarray(d["matrix"], dtype=float), np.asarray(d["offset"], dtype=float))


@dataclass(frozen=True)
class Populations:
    """State occupation probabilities ordered (G, E, F)."""

    p: tuple

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1) > 1e-9:
            raise InvalidInputError("populations must lie in [0, 1] and sum to 1")

    def __getitem__(self, state: str) -> float:
        i = STATE_NAMES.index(state)
        return float(self.p[i]) if i < len(self.p) else 0.0

    def as_dict(self) -> dict:
        return {STATE_NAMES[i]: float(v) for i, v in enumerate(self.p)}


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Fitted 1-D Gaussian mixture along the rotated I axis.

    Components are sorted by mean and map to G, E, F in order. ``absent``
    marks components that the data could not resolve; they carry zero
    weight and sit ``min_separation`` widths from their merged neighbour.
    """

    means: np.ndarray
    sigmas: np.ndarray
    weights: np.ndarray
    thresholds: np.ndarray
    rotation: IQRotation | None = None
    absent: tuple = ()
    log_likelihood: float = float("nan")
    n_iter: int = 0

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        if np.any(np.diff(means) <= 0):
            raise CalibrationError("component means must be strictly increasing")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise CalibrationError("weights must be >= 0 and sum to 1")
        th = np.asarray(self.thresholds, dtype=float)
        if th.size != means.size - 1 or np.any(th <= means[:-1]) or np.any(th >= means[1:]):
            raise CalibrationError("thresholds must separate adjacent means")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=float))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "thresholds", th)
        if not self.absent:
            object.__setattr__(self, "absent", (False,) * means.size)

    @property
    def n_components(self) -> int:
        return self.means.size

    @property
    def half_separation(self) -> float:
        """Distance from the G and E means to their threshold."""
        return abs(self.means[1] - self.means[0]) / 2.0

    def populations(self) -> Populations:
        w = self.weights / self.weights.sum()
        return Populations(tuple(w))

    def to_dict(self) -> dict:
        return {
            "rotation": None if self.rotation is None else self.rotation.to_dict(),
            "means": self.means.tolist(),
            "sigmas": self.sigmas.tolist(),
            "weights": self.weights.tolist(),
            "thresholds": self.thresholds.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> CalibrationResult:
        rot = d.get("rotation")
        return cls(d["means"], d["sigmas"], d["weights"], d["thresholds"],
                   rotation=None if rot is None else IQRotation.from_dict(rot))


@dataclass(frozen=True)
class ErrorBudget:
    sep_up: float
    sep_down: float
    flip_up_bound: float
    flip_down_bound: float

    def __post_init__(self):
        for name in ("sep_up", "sep_down", "flip_up_bound", "flip_down_bound"):
            v = getattr(self, name)
            if not 0 <= v <= 0.5:
                raise InvalidParameterError(f"{name}={v} outside [0, 0.5]")


@dataclass(frozen=True)
class BathEstimate:
    gamma_ex: float
    gamma_in: float
    n_ex: float
    eta: float
    n_measured: float = field(init=False)

    def __post_init__(self):
        if self.n_ex < 0:
            raise InvalidParameterError("n_ex must be >= 0")
        object.__setattr__(self, "n_measured", measured_occupation(self.n_ex, self.eta))


# --- IQ rotation -------------------------------------------------------------

def pca_rotate(iq, ground_hint=None):
    """Centre the IQ cloud and rotate its largest-variance axis onto I.

    The sign of the axis is fixed so that ``ground_hint`` (a point near the
    G cluster) lands at negative I; without a hint, the I distribution is
    oriented with non-negative skewness, putting the sparse excited-state
    tail at positive I.

    Returns
    -------
    rotated : ndarray of complex
    rotation : IQRotation
    """
    iq = np.asarray(iq, dtype=complex).reshape(-1)
    if iq.size < 2:
        raise CalibrationError("need at least two IQ samples")
    xy = np.stack([iq.real, iq.imag])
    centre = xy.mean(axis=1)
    d = xy - centre[:, None]
    cov = d @ d.T / iq.size
    if np.trace(cov) <= 0 or not np.isfinite(np.trace(cov)):
        raise CalibrationError("IQ samples have zero variance")
    evals, evecs = np.linalg.eigh(cov)
    v = evecs[:, np.argmax(evals)]
    mat = np.array([[v[0], v[1]], [-v[1], v[0]]])
    proj = v @ d
    if ground_hint is not None:
        g = complex(ground_hint)
        flip = v @ (np.array([g.real, g.imag]) - centre) > 0
    else:
        flip = np.mean(proj**3) < 0
    if flip:
        mat = -mat
    rot = IQRotation(mat, centre)
    return rot.apply(iq), rot


# --- Gaussian mixture --------------------------------------------------------

def _kmeanspp_centres(x, k, rng):
    centres = [x[rng.integers(x.size)]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.asarray(centres)[None, :]) ** 2, axis=1)
        tot = d2.sum()
        if tot <= 0:
            centres.append(x[rng.integers(x.size)])
            continue
        centres.append(x[np.searchsorted(np.cumsum(d2), rng.random() * tot)])
    return np.sort(np.asarray(centres))


def _lloyd_1d(x, centres, n_iter=20):
    """k-means on sorted 1-D data; returns (centres, boundaries as indices)."""
    for _ in range(n_iter):
        cuts = np.searchsorted(x, 0.5 * (centres[1:] + centres[:-1]))
        parts = np.split(x, cuts)
        new = np.array([p.mean() if p.size else c for p, c in zip(parts, centres)])
        new = np.sort(new)
        if np.array_equal(new, centres):
            break
        centres = new
    cuts = np.searchsorted(x, 0.5 * (centres[1:] + centres[:-1]))
    return centres, cuts


def _em(x, w, mu, s, tol, max_iter, floor):
    ll_old = -np.inf
    n = x.size
    for it in range(1, max_iter + 1):
        z = (x[None, :] - mu[:, None]) / s[:, None]
        logp = -0.5 * z * z - np.log(s)[:, None] + np.log(np.maximum(w, 1e-300))[:, None]
        top = logp.max(axis=0)
        r = np.exp(logp - top)
        tot = r.sum(axis=0)
        ll = float(np.sum(np.log(tot) + top)) - n * _LOG_SQRT_2PI
        r /= tot
        nk = r.sum(axis=1)
        w = nk / n
        safe = np.maximum(nk, 1e-300)
        mu = (r @ x) / safe
        var = np.einsum("kn,kn->k", r, (x[None, :] - mu[:, None]) ** 2) / safe
        s = np.sqrt(np.maximum(var, floor**2))
        if abs(ll - ll_old) <= tol * abs(ll):
            return w, mu, s, ll, it, True
        ll_old = ll
    return w, mu, s, ll, max_iter, False


def fit_gaussian_mixture(samples_I, n_components: int, n_init: int = 20, tol: float = 1e-9,
                         max_iter: int = 5000, seed: int = 0, min_separation: float = 2.0,
                         rotation: IQRotation | None = None) -> CalibrationResult:
    """Maximum-likelihood 1-D Gaussian mixture by expectation-maximisation.

    ``n_init`` k-means++ starts are refined by k-means and a short EM run;
    the best one is iterated until the relative log-likelihood change drops
    below ``tol``. Samples are sorted first, so the result does not depend on
    input order. Adjacent components closer than ``min_separation`` times the
    wider sigma are merged and the missing state is reported as absent with
    zero weight.

    Raises
    ------
    InsufficientDataError
        Fewer than 1000 samples.
    FitFailureError
        No convergence, or a component collapsed below the data resolution.
    """
    if n_components not in (2, 3):
        raise InvalidParameterError("n_components must be 2 or 3")
    x = np.sort(np.asarray(samples_I, dtype=float).reshape(-1))
    if x.size < 1000:
        raise InsufficientDataError("need at least 1000 samples")
    spread = x.std()
    if not spread > 0:
        raise FitFailureError("samples have zero variance")
    floor = 1e-6 * spread
    rng = np.random.default_rng(seed)
    k = n_components

    # Distinct k-means solutions only; identical starts add nothing.
    starts = {}
    for _ in range(n_init):
        centres, cuts = _lloyd_1d(x, _kmeanspp_centres(x, k, rng))
        parts = np.split(x, cuts)
        if any(p.size < 2 for p in parts):
            continue
        key = tuple(np.round(centres / spread, 9))
        starts.setdefault(key, parts)
    if not starts:
        raise FitFailureError("k-means++ initialisation produced empty clusters")

    short = []
    for parts in starts.values():
        w0 = np.array([p.size for p in parts], dtype=float) / x.size
        mu0 = np.array([p.mean() for p in parts])
        s0 = np.array([max(p.std(), floor) for p in parts])
        short.append(_em(x, w0, mu0, s0, tol, 30, floor))
    best = max(short, key=lambda r: r[3])
    w, mu, s, ll, it, ok = _em(x, best[0], best[1], best[2], tol, max_iter, floor)
    it += 30
    if not ok:
        raise FitFailureError("EM did not converge", diagnostics={"iterations": it, "ll": ll})
    order = np.argsort(mu)
    w, mu, s = w[order], mu[order], s[order]
    if np.any(s <= floor * (1 + 1e-9)):
        raise FitFailureError("mixture component collapsed", diagnostics={"sigmas": s.tolist()})
    w, mu, s, absent = _merge_unresolved(w, mu, s, min_separation)
    w = w / w.sum()
    thresholds = 0.5 * (mu[1:] + mu[:-1])
    return CalibrationResult(mu, s, w, thresholds, rotation=rotation, absent=absent,
                             log_likelihood=ll, n_iter=it)


def _merge_unresolved(w, mu, s, min_sep):
    w, mu, s = list(w), list(mu), list(s)
    absent = [False] * len(w)
    changed = True
    while changed:
        changed = False
        for i in range(len(w) - 1):
            if absent[i] or absent[i + 1]:
                continue
            if mu[i + 1] - mu[i] < min_sep * max(s[i], s[i + 1]):
                tot = w[i] + w[i + 1]
                m = (w[i] * mu[i] + w[i + 1] * mu[i + 1]) / tot
                second = w[i] * (s[i] ** 2 + mu[i] ** 2) + w[i + 1] * (s[i + 1] ** 2 + mu[i + 1] ** 2)
                v = second / tot - m * m
                sd = math.sqrt(max(v, 0.0))
                keep, drop = (i, i + 1) if w[i] >= w[i + 1] else (i + 1, i)
                side = 1.0 if drop > keep else -1.0
                mu[keep], s[keep], w[keep] = m, sd, tot
                mu[drop], s[drop], w[drop] = m + side * min_sep * sd, sd, 0.0
                absent[drop] = True
                changed = True
    return np.array(w), np.array(mu), np.array(s), tuple(absent)


def calibrate(iq, n_components: int = 2, ground_hint=None, **kw) -> CalibrationResult:
    """PCA rotation followed by a mixture fit on the rotated I quadrature."""
    rotated, rot = pca_rotate(iq, ground_hint=ground_hint)
    return fit_gaussian_mixture(rotated.real, n_components, rotation=rot, **kw)


def classify(values, cal: CalibrationResult) -> np.ndarray:
    """Integer state labels by threshold interval.

    Complex input is rotated with ``cal.rotation`` first. A value exactly at
    a threshold is assigned to the lower state.
    """
    v = np.asarray(values)
    if np.iscomplexobj(v):
        if cal.rotation is None:
            raise InvalidInputError("complex input requires a calibration rotation")
        v = cal.rotation.apply(v).real
    return np.searchsorted(cal.thresholds, v, side="left").astype(np.int8)


# --- error budget ------------------------------------------------------------

def separation_errors(cal: CalibrationResult):
    """``(sep_up, sep_down) = 0.5 erfc(mu_bar / (sqrt(2) sigma_{G,E}))``."""
    if cal.n_components < 2:
        raise InvalidInputError("need two calibrated components")
    mu_bar = cal.half_separation
    return (0.5 * float(erfc(mu_bar / (math.sqrt(2) * cal.sigmas[0]))),
            0.5 * float(erfc(mu_bar / (math.sqrt(2) * cal.sigmas[1]))))


def flip_error_bounds(gamma_up: float, gamma_down: float, t_readout: float):
    """Upper bounds ``(gamma_up*T, gamma_down*T)`` on readout-induced flips."""
    if not t_readout > 0:
        raise InvalidParameterError("t_readout must be > 0")
    return gamma_up * t_readout, gamma_down * t_readout


def error_budget(cal: CalibrationResult, gamma_up, gamma_down, t_readout) -> ErrorBudget:
    sep_up, sep_down = separation_errors(cal)
    fu, fd = flip_error_bounds(gamma_up, gamma_down, t_readout)
    return ErrorBudget(sep_up, sep_down, fu, fd)


def free_evolution_rates(p_th: float, t1: float):
    """``(P_th/T1, (1-P_th)/T1)`` in s^-1."""
    if not 0 <= p_th < 1:
        raise InvalidParameterError("p_th must lie in [0, 1)")
    if not t1 > 0:
        raise InvalidParameterError("t1 must be > 0")
    return p_th / t1, (1.0 - p_th) / t1


# --- thermometry and bath occupation -----------------------------------------

def effective_temperature(p_upper: float, p_lower: float, transition_freq: float) -> float:
    """Boltzmann temperature (K) reproducing ``p_upper/p_lower`` at ``transition_freq`` (Hz)."""
    if not transition_freq > 0:
        raise InvalidParameterError("transition_freq must be > 0")
    if not p_upper > 0:
        raise InvalidParameterError("p_upper must be > 0")
    if p_upper >= p_lower:
        raise NonThermalInversionError(
            f"p_upper={p_upper} >= p_lower={p_lower}: population inversion "
            "(negative or infinite temperature)"
        )
    return H_OVER_KB * transition_freq / math.log(p_lower / p_upper)


def bath_excitation_probability(n_ex: float, gamma_ex: float, gamma_in: float) -> float:
    """Steady-state P_E of a qubit coupled to a bath with occupation ``n_ex``."""
    return gamma_ex * n_ex / (gamma_ex * (2 * n_ex + 1) + gamma_in)


def required_bath_occupation(p_e: float, gamma_ex: float, gamma_in: float) -> float:
    """Bath occupation needed for excitation probability ``p_e``.

    Inverse of :func:`bath_excitation_probability`; solutions exist only for
    ``p_e < 1/2``.
    """
    if not gamma_ex > 0 or gamma_in < 0:
        raise InvalidParameterError("need gamma_ex > 0 and gamma_in >= 0")
    if p_e < 0:
        raise InvalidParameterError("p_e must be >= 0")
    if p_e >= 0.5:
        raise NoSolutionError("no finite bath occupation gives p_e >= 1/2")
    return p_e * (gamma_ex + gamma_in) / (gamma_ex * (1.0 - 2.0 * p_e))


def measured_occupation(n_ex: float, eta: float) -> float:
    """Occupation seen through a chain of quantum efficiency ``eta``."""
    if not 0 < eta <= 1:
        raise InvalidParameterError("eta must lie in (0, 1]")
    return eta * n_ex


def estimate_bath(p_e, gamma_ex, gamma_in, eta) -> BathEstimate:
    return BathEstimate(gamma_ex, gamma_in, required_bath_occupation(p_e, gamma_ex, gamma_in), eta)


def write_calibration_json(path, cal: CalibrationResult) -> None:
    atomic_write_text(path, json.dumps(cal.to_dict(), indent=2) + "\n")


def read_calibration_json(path) -> CalibrationResult:
    with open(path) as fh:
        return CalibrationResult.from_dict(json.load(fh))
