"""Quantum-jump analysis: dwell extraction, exponential rate fits, coherence fits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, curve_fit

from .errors import (
    FitFailureError,
    InsufficientDataError,
    InvalidInputError,
    InvalidParameterError,
    InvertedBathError,
)
from .io import read_csv_columns, write_csv_columns
from .paths import E, G

MIN_DWELLS = 50
TRUNCATION_PERCENTILES = tuple(range(50, 100, 5))


# --- types -------------------------------------------------------------------

@dataclass(frozen=True)
class DwellEvent:
    state: int
    event_time: float
    dwell: float
    trace_id: int = 0


@dataclass(frozen=True, eq=False)
class DwellTable:
    """Columnar collection of dwell events.

    ``censored_time`` is the total duration of the discarded edge runs.
    """

    state: np.ndarray
    event_time: np.ndarray
    dwell: np.ndarray
    trace_id: np.ndarray
    censored_time: float = 0.0

    def __post_init__(self):
        cols = [np.asarray(c).reshape(-1) for c in (self.state, self.event_time, self.dwell, self.trace_id)]
        if len({c.size for c in cols}) != 1:
            raise InvalidInputError("dwell columns must have equal length")
        if np.any(cols[2] <= 0):
            raise InvalidInputError("dwells must be > 0")
        for name, c, dt in zip(("state", "event_time", "dwell", "trace_id"), cols,
                               (np.int8, float, float, np.int64)):
            object.__setattr__(self, name, c.astype(dt))

    def __len__(self) -> int:
        return self.dwell.size

    def __iter__(self):
        for s, t, d, k in zip(self.state, self.event_time, self.dwell, self.trace_id):
            yield DwellEvent(int(s), float(t), float(d), int(k))

    def __getitem__(self, mask) -> DwellTable:
        return DwellTable(self.state[mask], self.event_time[mask], self.dwell[mask],
                          self.trace_id[mask])

    def of_state(self, state) -> DwellTable:
        return self[self.state == state]

    @classmethod
    def empty(cls) -> DwellTable:
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))

    @classmethod
    def concat(cls, tables) -> DwellTable:
        tables = list(tables)
        if not tables:
            return cls.empty()
        return cls(*(np.concatenate([getattr(t, c) for t in tables])
                     for c in ("state", "event_time", "dwell", "trace_id")),
                   censored_time=sum(t.censored_time for t in tables))


@dataclass(frozen=True)
class RateFit:
    rate: float
    stderr: float
    fit_region: tuple
    n_used: int
    chi2_red: float = float("nan")
    step_prob: float | None = None


@dataclass(frozen=True)
class RateEstimate:
    phase_time: float
    gamma_up: float
    gu_err: float
    gamma_down: float
    gd_err: float
    gamma_eff: float
    n_eff: float
    fit_region: tuple
    bin_width: float = float("nan")
    n_events: tuple = (0, 0)


@dataclass(frozen=True, eq=False)
class DwellHistogram:
    edges: np.ndarray
    counts: np.ndarray
    dwells: np.ndarray
    normalized: bool = False


@dataclass(frozen=True)
class CoherenceFit:
    kind: str
    time_constant: float
    stderr: float
    amplitude: float
    offset: float
    frequency: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if not self.time_constant > 0:
            raise InvalidParameterError("time_constant must be > 0")


# --- denoising and dwell extraction -----------------------------------------

def moving_average(values, window: int = 2) -> np.ndarray:
    """Causal boxcar; the first ``window-1`` outputs average what is available."""
    if window < 1:
        raise InvalidParameterError("window must be >= 1")
    x = np.asarray(values)
    if window == 1 or x.size == 0:
        return x.astype(np.result_type(x, float), copy=True)
    c = np.cumsum(np.concatenate([np.zeros(1, dtype=np.result_type(x, float)), x]))
    n = np.minimum(np.arange(1, x.size + 1), window)
    idx = np.arange(1, x.size + 1)
    return (c[idx] - c[idx - n]) / n


def _runs(codes):
    change = np.flatnonzero(codes[1:] != codes[:-1]) + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [codes.size])))
    return starts, lengths


def extract_dwells(labels, dt: float, trace_id: int = 0, t0: float = 0.0,
                   coarse: bool = True) -> DwellTable:
    """Maximal runs of equal labels, excluding the censored first and last runs.

    With ``coarse`` every non-G label counts as the excited state E. The
    event time is the run centre, ``t0 + (start + length/2) * dt``.
    """
    if not dt > 0:
        raise InvalidParameterError("dt must be > 0")
    lab = np.asarray(labels).reshape(-1)
    if lab.size == 0:
        return DwellTable.empty()
    codes = np.where(lab != G, E, G).astype(np.int8) if coarse else lab.astype(np.int8)
    starts, lengths = _runs(codes)
    if starts.size < 3:
        warnings.warn("trace has no interior dwells; all runs are censored", stacklevel=2)
        return DwellTable(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0),
                          censored_time=lab.size * dt)
    inner = slice(1, -1)
    s, n = starts[inner], lengths[inner]
    censored = (lengths[0] + lengths[-1]) * dt
    return DwellTable(codes[s], t0 + (s + n / 2.0) * dt, n * dt,
                      np.full(s.size, trace_id), censored_time=censored)


def write_dwells_csv(path, table: DwellTable) -> None:
    names = np.array(["G", "E", "F"])
    write_csv_columns(path, {"trace_id": table.trace_id, "state": names[table.state],
                             "event_time": table.event_time, "dwell": table.dwell})


def read_dwells_csv(path) -> DwellTable:
    c = read_csv_columns(path, ["trace_id", "state", "event_time", "dwell"])
    code = {"G": G, "E": E, "F": 2}
    return DwellTable(np.array([code[s] for s in c["state"]]), c["event_time"], c["dwell"],
                      c["trace_id"])


# --- exponential rate fits ---------------------------------------------------

def _mle_continuous(x, upper):
    """Truncated-exponential MLE on ``[0, upper]``; returns (rate, stderr)."""
    n, m = x.size, x.mean()
    if not np.isfinite(upper):
        return 1.0 / m, 1.0 / (m * math.sqrt(n))
    if m >= upper / 2:
        raise FitFailureError("truncated dwells show no exponential decay")

    def score(lam):
        u = lam * upper
        return 1.0 / lam - m - upper / math.expm1(u)

    lo, hi = 1e-9 / upper, 1.0 / m
    while score(hi) > 0:
        hi *= 2
    lam = brentq(score, lo, hi, xtol=1e-14 / upper, rtol=1e-13)
    u = lam * upper
    info = n * (1.0 / lam**2 - upper**2 * math.exp(u) / math.expm1(u) ** 2)
    return lam, 1.0 / math.sqrt(info) if info > 0 else float("inf")


def _mle_geometric(k, kmax):
    """Truncated geometric MLE for counts ``k >= 1`` capped at ``kmax``.

    Returns (q, stderr of q) where ``q`` is the per-step stay probability.
    """
    n, s = k.size, float(np.sum(k - 1))
    if s == 0:
        return 0.0, 0.0

    def loglik(q):
        tail = -math.expm1(kmax * math.log(q)) if np.isfinite(kmax) else 1.0
        return n * math.log1p(-q) + s * math.log(q) - n * math.log(tail)

    def score(q):
        g = -n / (1 - q) + s / q
        if np.isfinite(kmax):
            qk = q**kmax
            g += n * kmax * q ** (kmax - 1) / (1 - qk)
        return g

    if not np.isfinite(kmax):
        q = s / (s + n)
    else:
        if k.mean() >= (kmax + 1) / 2:
            raise FitFailureError("truncated dwells show no geometric decay")
        eps = 1e-15
        q = brentq(score, eps, 1 - eps, xtol=1e-15)
    h = 1e-6 * min(q, 1 - q)
    d2 = (loglik(q + h) - 2 * loglik(q) + loglik(q - h)) / h**2
    return q, 1.0 / math.sqrt(-d2) if d2 < 0 else float("inf")


def _chi2_red(x, upper, cdf):
    nb = int(np.clip(x.size // 50, 5, 40))
    edges = np.linspace(0.0, upper if np.isfinite(upper) else x.max(), nb + 1)
    obs, _ = np.histogram(x, edges)
    p = np.diff(cdf(edges))
    p = p / p.sum()
    exp = p * x.size
    ok = exp > 0
    return float(np.sum((obs[ok] - exp[ok]) ** 2 / exp[ok]) / max(1, ok.sum() - 2))


def _fit_one(x, upper, dt):
    """Fit dwells ``x <= upper``; returns RateFit."""
    sel = x[x <= upper] if np.isfinite(upper) else x
    if dt is None:
        lam, se = _mle_continuous(sel, upper)
        top = upper if np.isfinite(upper) else np.inf

        def cdf(t):
            return -np.expm1(-lam * np.minimum(t, top))
        chi2 = _chi2_red(sel, upper, cdf)
        return RateFit(lam, se, (0.0, float(upper)), sel.size, chi2)
    k = np.maximum(np.rint(sel / dt), 1).astype(np.int64)
    kmax = np.rint(upper / dt) if np.isfinite(upper) else np.inf
    q, se_q = _mle_geometric(k, kmax)
    if q <= 0:
        raise FitFailureError("all dwells are single samples; rate unresolved")
    lam = -math.log(q) / dt
    se = se_q / (q * dt)

    def cdf(t):
        return 1.0 - q ** np.floor(t / dt + 0.5)
    chi2 = _chi2_red(sel, upper, cdf)
    return RateFit(lam, se, (0.0, float(upper)), sel.size, chi2, step_prob=1.0 - q)


def fit_exponential_rate(data, dt: float | None = None,
                         percentiles=TRUNCATION_PERCENTILES) -> RateFit:
    """Exponential decay rate of dwell times with an optimised fit region.

    The right edge of the fit region is chosen from the given dwell
    percentiles to minimise the relative standard error, inflated by the
    square root of the reduced chi-square when the shape misfits (as
    happens when a slow tail contaminates the window). With ``dt`` the
    dwells are treated as whole numbers of samples and fitted with a
    geometric likelihood; ``step_prob`` then holds the per-sample exit
    probability. An empty ``percentiles`` fits the full range.

    Raises
    ------
    FitFailureError
        All dwells equal, or no region yields a valid fit.
    """
    x = np.asarray(getattr(data, "dwells", data), dtype=float).reshape(-1)
    if x.size < 2:
        raise InsufficientDataError("need at least two dwells")
    if np.any(x <= 0):
        raise InvalidInputError("dwells must be > 0")
    if np.ptp(x) == 0 or (dt is not None and np.ptp(np.rint(x / dt)) == 0):
        raise FitFailureError("all dwells are equal; no decay to fit")
    uppers = np.unique(np.percentile(x, list(percentiles)))
    best, best_score = None, np.inf
    for up in uppers:
        if np.count_nonzero(x <= up) < 2:
            continue
        try:
            fit = _fit_one(x, up, dt)
        except FitFailureError:
            continue
        if not (np.isfinite(fit.stderr) and fit.rate > 0):
            continue
        score = fit.stderr / fit.rate * math.sqrt(max(1.0, fit.chi2_red))
        if score < best_score:
            best, best_score = fit, score
    if best is None:
        best = _fit_one(x, np.inf, dt)
    return best


def sampled_chain_rates(p_up: float, p_down: float, dt: float):
    """Continuous rates of a two-state chain observed every ``dt``.

    ``p_up`` and ``p_down`` are the per-sample exit probabilities from G and
    E. The sampled transition matrix has ``p_up + p_down = 1 - exp(-(up+down) dt)``
    with the ratio preserved, which inverts exactly.
    """
    tot = p_up + p_down
    if not 0 < tot < 1:
        raise InvalidInputError("need 0 < p_up + p_down < 1")
    s = -math.log1p(-tot) / dt
    return p_up / tot * s, p_down / tot * s


def rates_to_effective(gamma_up: float, gamma_down: float):
    """``(gamma_eff, n_eff)`` with ``down = eff (n+1)`` and ``up = eff n``."""
    if gamma_up < 0:
        raise InvalidParameterError("gamma_up must be >= 0")
    if gamma_up >= gamma_down:
        raise InvertedBathError(
            f"gamma_up={gamma_up} >= gamma_down={gamma_down}: population inversion"
        )
    eff = gamma_down - gamma_up
    return eff, gamma_up / eff


def effective_to_rates(gamma_eff: float, n_eff: float):
    return gamma_eff * n_eff, gamma_eff * (n_eff + 1.0)


# --- time-resolved analysis --------------------------------------------------

def _phases(events: DwellTable, alignment):
    if isinstance(alignment, dict):
        out = np.empty(len(events))
        for tid in np.unique(events.trace_id):
            sel = events.trace_id == tid
            out[sel] = alignment[int(tid)].phase_of(events.event_time[sel])
        period = next(iter(alignment.values())).reference_period
        return out, period
    return alignment.phase_of(events.event_time), alignment.reference_period


def _in_window(phase, centre, width, period):
    d = np.mod(phase - centre + period / 2, period) - period / 2
    return np.abs(d) <= width / 2


def time_resolved_dwell_histogram(events: DwellTable, state, phase_center: float,
                                  bin_width: float, alignment, n_bins: int = 30,
                                  normalize: bool = False) -> DwellHistogram:
    """Dwell histogram of events whose folded time lies within ``bin_width/2`` of ``phase_center``.

    Dwell bins are log-spaced. ``normalize`` divides by the first bin.
    """
    ev = events.of_state(state)
    phase, period = _phases(ev, alignment)
    x = ev.dwell[_in_window(phase, phase_center, bin_width, period)]
    if x.size < MIN_DWELLS:
        raise InsufficientDataError(f"{x.size} events in window, need {MIN_DWELLS}")
    lo, hi = x.min(), x.max()
    edges = np.geomspace(lo, hi * (1 + 1e-12), n_bins + 1) if hi > lo else np.array([lo, lo * 2])
    counts, _ = np.histogram(x, edges)
    counts = counts.astype(float)
    if normalize and counts[0] > 0:
        counts = counts / counts[0]
    return DwellHistogram(edges, counts, x, normalize)


def _window_dwells(phase, dwell, centre, width, period):
    return dwell[_in_window(phase, centre, width, period)]


def time_resolved_rates(events: DwellTable, alignment, period: float | None = None,
                        dt: float | None = None, pilot_bins: int = 10,
                        max_widen: float = 4.0, n_iter: int = 3) -> list[RateEstimate]:
    """Walk the folded phase with adaptive steps and fit G and E dwell rates.

    The step width is the local mean G dwell, found by fixed-point iteration
    from a pilot pass over ``pilot_bins`` uniform bins. A window with fewer
    than the minimum dwells is widened (doubling, up to ``max_widen``
    times); if still short, the step is skipped with a warning. With ``dt``
    the sampled-chain correction is applied to each window's rates.
    """
    if len(events) == 0:
        raise InsufficientDataError("no dwell events")
    order = np.lexsort((events.dwell, events.event_time, events.state, events.trace_id))
    events = events[order]
    phase, p_align = _phases(events, alignment)
    period = p_align if period is None else period
    is_g = events.state == G
    pg, dg = phase[is_g], events.dwell[is_g]
    pe, de = phase[~is_g], events.dwell[~is_g]
    if dg.size < MIN_DWELLS or de.size < MIN_DWELLS:
        raise InsufficientDataError("too few dwells for a time-resolved analysis")

    pilot_w = period / pilot_bins
    pilot = np.array([dg[_in_window(pg, (i + 0.5) * pilot_w, pilot_w, period)].mean()
                      if np.any(_in_window(pg, (i + 0.5) * pilot_w, pilot_w, period)) else dg.mean()
                      for i in range(pilot_bins)])
    w_min, w_max = period * 1e-5, period / 2

    out, skipped = [], []
    phi = 0.0
    while phi < period - 1e-12 * period:
        w = float(np.clip(pilot[min(int(phi / pilot_w), pilot_bins - 1)], w_min, w_max))
        for _ in range(n_iter):
            sel = _window_dwells(pg, dg, phi + w / 2, w, period)
            if sel.size < MIN_DWELLS:
                break
            w = float(np.clip(sel.mean(), w_min, w_max))
        w = min(w, period - phi) if period - phi > w_min else w
        width = w
        est = None
        while width <= max_widen * w * (1 + 1e-12):
            centre = phi + width / 2
            xg = _window_dwells(pg, dg, centre, width, period)
            xe = _window_dwells(pe, de, centre, width, period)
            if xg.size >= MIN_DWELLS and xe.size >= MIN_DWELLS:
                try:
                    est = _estimate(centre, xg, xe, dt, width)
                except FitFailureError:
                    est = None
                if est is not None:
                    break
            width *= 2
        if est is None:
            skipped.append(phi)
            width = w
        else:
            out.append(est)
        phi += width
    if skipped:
        warnings.warn(f"{len(skipped)} phase steps skipped for lack of dwells "
                      f"(first at {skipped[0]:.6g} s)", stacklevel=2)
    return out


def _estimate(centre, xg, xe, dt, width):
    fg = fit_exponential_rate(xg, dt=dt)
    fe = fit_exponential_rate(xe, dt=dt)
    up, up_err, down, down_err = fg.rate, fg.stderr, fe.rate, fe.stderr
    if dt is not None:
        try:
            up2, down2 = sampled_chain_rates(fg.step_prob, fe.step_prob, dt)
        except InvalidInputError as exc:
            raise FitFailureError(str(exc)) from exc
        up_err *= up2 / up
        down_err *= down2 / down
        up, down = up2, down2
    try:
        eff, n_eff = rates_to_effective(up, down)
    except InvertedBathError:
        eff, n_eff = float("nan"), float("nan")
    return RateEstimate(centre, up, up_err, down, down_err, eff, n_eff, fg.fit_region,
                        width, (xg.size, xe.size))


def write_rates_csv(path, estimates) -> None:
    cols = {k: [getattr(e, a) for e in estimates] for k, a in
            (("phase", "phase_time"), ("gamma_up", "gamma_up"), ("gu_err", "gu_err"),
             ("gamma_down", "gamma_down"), ("gd_err", "gd_err"),
             ("gamma_eff", "gamma_eff"), ("n_eff", "n_eff"))}
    write_csv_columns(path, {k: np.asarray(v, dtype=float) for k, v in cols.items()})


def read_rates_csv(path) -> dict:
    return read_csv_columns(path, ["phase", "gamma_up", "gu_err", "gamma_down", "gd_err",
                                   "gamma_eff", "n_eff"])


# --- coherence fits ----------------------------------------------------------

def _decay(t, a, tau, c):
    return a * np.exp(-t / tau) + c


def _ramsey(t, a, tau, f, ph, c):
    return a * np.exp(-t / tau) * np.cos(2 * np.pi * f * t + ph) + c


def _check_series(t, p, n_min):
    t = np.asarray(t, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    if t.size != p.size:
        raise InvalidInputError("times and probabilities must have equal length")
    if t.size < n_min:
        raise InsufficientDataError(f"need at least {n_min} points")
    return t, p


def fit_decay(times, probabilities, kind: str = "T1") -> CoherenceFit:
    """Least-squares fit of ``a exp(-t/tau) + c``."""
    t, p = _check_series(times, probabilities, 5)
    if np.ptp(p) == 0:
        raise FitFailureError("constant series has no decay")
    span = np.ptp(t)
    a0, c0 = p[np.argmin(t)] - p[np.argmax(t)], p[np.argmax(t)]
    try:
        popt, pcov = curve_fit(_decay, t, p, p0=(a0, span / 3, c0), maxfev=20000,
                               ftol=1e-15, xtol=1e-15, gtol=1e-15)
    except (RuntimeError, ValueError) as exc:
        raise FitFailureError(f"decay fit did not converge: {exc}") from exc
    a, tau, c = popt
    if not (tau > 0 and np.isfinite(tau)) or tau > 1e6 * span:
        raise FitFailureError("decay time not resolved", best=popt)
    return CoherenceFit(kind, float(tau), float(np.sqrt(max(pcov[1, 1], 0.0))), float(a), float(c))


def fit_echo(times, probabilities) -> CoherenceFit:
    return fit_decay(times, probabilities, kind="Echo")


def fit_ramsey(times, probabilities) -> CoherenceFit:
    """Damped cosine fit with the frequency seeded from the FFT peak.

    If the dominant component is below two cycles over the record, the data
    is treated as a plain decay with zero frequency.
    """
    t, p = _check_series(times, probabilities, 10)
    if np.ptp(p) == 0:
        raise FitFailureError("constant series has no dominant frequency")
    order = np.argsort(t)
    t, p = t[order], p[order]
    span = t[-1] - t[0]
    # Uniform resampling for the frequency seed; zero padding for resolution.
    tu = np.linspace(t[0], t[-1], t.size)
    pu = np.interp(tu, t, p) - p.mean()
    nfft = 8 * t.size
    spec = np.abs(np.fft.rfft(pu, nfft))
    freqs = np.fft.rfftfreq(nfft, tu[1] - tu[0])
    k = int(np.argmax(spec[1:]) + 1)
    f0 = freqs[k]
    if f0 * span < 1.5:
        fit = fit_decay(t, p, kind="Ramsey")
        return fit
    a0 = 0.5 * np.ptp(p)
    c0 = p.mean()
    best = None
    for ph0 in (0.0, np.pi / 2, np.pi, -np.pi / 2):
        try:
            popt, pcov = curve_fit(_ramsey, t - t[0], p, p0=(a0, span / 2, f0, ph0, c0),
                                   maxfev=20000, ftol=1e-15, xtol=1e-15, gtol=1e-15)
        except (RuntimeError, ValueError):
            continue
        cost = np.sum((_ramsey(t - t[0], *popt) - p) ** 2)
        if best is None or cost < best[0]:
            best = (cost, popt, pcov)
    if best is None:
        raise FitFailureError("Ramsey fit did not converge")
    _, (a, tau, f, ph, c), pcov = best
    if a < 0:
        a, ph = -a, ph + np.pi
    if f < 0:
        f, ph = -f, -ph
    ph = float(np.mod(ph - 2 * np.pi * f * t[0], 2 * np.pi))
    if not tau > 0:
        raise FitFailureError("dephasing time not resolved")
    return CoherenceFit("Ramsey", float(tau), float(np.sqrt(max(pcov[1, 1], 0.0))), float(a),
                        float(c), float(f), ph)
