"""Ground-truth generator for vibration, qubit jumps and dispersive readout.

The vibration waveform is periodic in absolute time, so a trace recorded from
an arbitrary ``start_time`` carries a phase offset that the sync module must
recover. Qubit transition rates follow the same absolute phase:

    gamma_down(t) = gamma_eff(t) * (n_eff(t) + 1)
    gamma_up(t)   = gamma_eff(t) * n_eff(t)

with multiplicative boosts that jump at each spike time and relax
exponentially.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AliasingError, InvalidInputError, InvalidParameterError
from .io import read_csv_columns, write_csv_columns
from .paths import E, F, G, StatePath

__all__ = [
    "ShockTemplate", "VibrationSpec", "VibrationTrace", "RateProfile", "ReadoutModel",
    "ShotTrace", "StatePath", "synth_vibration", "simulate_jump_trajectory",
    "simulate_readout", "make_shot_schedule", "combine_qubits",
    "write_shots_csv", "read_shots_csv",
]

# Candidate events per thinning chunk; bounds peak memory.
_CHUNK_CANDIDATES = 2_000_000


@dataclass(frozen=True)
class ShockTemplate:
    """Damped oscillation ``amplitude * exp(-damping*dt) * sin(2 pi ring_freq dt)``."""

    amplitude: float = 0.05
    ring_freq: float = 35.0
    damping: float = 25.0


@dataclass(frozen=True)
class VibrationSpec:
    period: float = 0.714
    harmonic_amps: tuple = (0.010, 0.006, 0.004, 0.003, 0.002)
    harmonic_phases: tuple = (0.0, 1.1, 2.3, 0.4, 1.7)
    shock_time_in_period: float = 0.10
    shock_template: ShockTemplate = field(default_factory=ShockTemplate)
    noise_floor: float = 2e-4

    def __post_init__(self):
        if not self.period > 0:
            raise InvalidParameterError("period must be > 0")
        if not 0 <= self.shock_time_in_period < self.period:
            raise InvalidParameterError("shock_time_in_period must lie in [0, period)")
        if len(self.harmonic_phases) not in (0, len(self.harmonic_amps)):
            raise InvalidParameterError("harmonic_phases must match harmonic_amps")
        if self.noise_floor < 0:
            raise InvalidParameterError("noise_floor must be >= 0")

    @property
    def fundamental(self) -> float:
        return 1.0 / self.period

    def waveform(self, t) -> np.ndarray:
        """Noise-free acceleration at absolute times ``t``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        phases = self.harmonic_phases or (0.0,) * len(self.harmonic_amps)
        for n, (amp, ph) in enumerate(zip(self.harmonic_amps, phases), start=1):
            if amp:
                out += amp * np.sin(2 * np.pi * n * t / self.period + ph)
        shock = self.shock_template
        if shock.amplitude:
            since = np.mod(t - self.shock_time_in_period, self.period)
            out += (shock.amplitude * np.exp(-shock.damping * since)
                    * np.sin(2 * np.pi * shock.ring_freq * since))
        return out


@dataclass(frozen=True, eq=False)
class VibrationTrace:
    """Uniformly sampled accelerometer record (m/s^2)."""

    sample_rate: float
    start_time: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).reshape(-1)
        if not self.sample_rate > 0:
            raise InvalidInputError("sample_rate must be > 0")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.samples.size) / self.sample_rate

    def to_bytes(self) -> bytes:
        return self.samples.astype("<f8").tobytes()

    def header(self) -> dict:
        return {"sample_rate": self.sample_rate, "start_time": self.start_time,
                "n": int(self.samples.size)}

    @classmethod
    def from_bytes(cls, header: dict, data: bytes) -> VibrationTrace:
        samples = np.frombuffer(data, dtype="<f8")
        if samples.size != header["n"]:
            raise InvalidInputError("sample count does not match header")
        return cls(float(header["sample_rate"]), float(header["start_time"]), samples.copy())


@dataclass(frozen=True)
class RateProfile:
    """Phase-dependent effective decay rate and bath occupation.

    Each spike multiplies ``n_eff`` by ``n_eff_boost`` and ``gamma_eff`` by
    ``gamma_eff_boost`` at its onset; the excess decays at ``spike_decay``.
    ``ef_gamma_eff``/``ef_n_eff`` switch on the E<->F transitions (same
    modulation as G<->E).
    """

    baseline_gamma_eff: float
    baseline_n_eff: float
    spike_times_in_period: tuple = ()
    n_eff_boost: float = 1.0
    gamma_eff_boost: float = 1.0
    spike_decay: float = 50.0
    ef_gamma_eff: float = 0.0
    ef_n_eff: float = 0.0

    def __post_init__(self):
        if not self.baseline_gamma_eff > 0:
            raise InvalidParameterError("baseline_gamma_eff must be > 0")
        if not self.baseline_n_eff >= 0:
            raise InvalidParameterError("baseline_n_eff must be >= 0")
        if self.n_eff_boost < 1 or self.gamma_eff_boost < 1:
            raise InvalidParameterError("boosts must be >= 1")
        if not self.spike_decay > 0:
            raise InvalidParameterError("spike_decay must be > 0")
        if self.ef_gamma_eff < 0 or self.ef_n_eff < 0:
            raise InvalidParameterError("E-F parameters must be >= 0")

    @classmethod
    def from_rates(cls, gamma_up: float, gamma_down: float, **kw) -> RateProfile:
        """Homogeneous-baseline profile with the given G->E and E->G rates."""
        if not gamma_down > gamma_up >= 0:
            raise InvalidParameterError("need gamma_down > gamma_up >= 0")
        g_eff = gamma_down - gamma_up
        return cls(g_eff, gamma_up / g_eff, **kw)

    @property
    def three_level(self) -> bool:
        return self.ef_gamma_eff > 0

    def _factors(self, t, period):
        t = np.asarray(t, dtype=float)
        excess = np.zeros_like(t)
        for s in self.spike_times_in_period:
            excess += np.exp(-self.spike_decay * np.mod(t - s, period))
        return (1.0 + (self.gamma_eff_boost - 1.0) * excess,
                1.0 + (self.n_eff_boost - 1.0) * excess)

    def gamma_eff(self, t, period):
        return self.baseline_gamma_eff * self._factors(t, period)[0]

    def n_eff(self, t, period):
        return self.baseline_n_eff * self._factors(t, period)[1]

    def rates(self, t, period):
        """``(gamma_up, gamma_down)`` at absolute times ``t``."""
        fg, fn = self._factors(t, period)
        g = self.baseline_gamma_eff * fg
        n = self.baseline_n_eff * fn
        return g * n, g * (n + 1.0)

    def ef_rates(self, t, period):
        """``(gamma_EF, gamma_FE)`` at absolute times ``t``."""
        fg, fn = self._factors(t, period)
        g = self.ef_gamma_eff * fg
        n = self.ef_n_eff * fn
        return g * n, g * (n + 1.0)

    def stationary_excited(self, t, period):
        """Instantaneous stationary E (and F) probability."""
        up, down = self.rates(t, period)
        if not self.three_level:
            return up / (up + down)
        ef, fe = self.ef_rates(t, period)
        w = np.stack([np.ones_like(up), up / down, up / down * ef / fe])
        return w[1:] / w.sum(axis=0)

    def rate_bounds(self):
        """Upper bounds of ``(up, down, ef, fe)`` valid for all times."""
        k = len(self.spike_times_in_period)
        g = self.baseline_gamma_eff * (1 + k * (self.gamma_eff_boost - 1))
        n = self.baseline_n_eff * (1 + k * (self.n_eff_boost - 1))
        ge = self.ef_gamma_eff * (1 + k * (self.gamma_eff_boost - 1))
        ne = self.ef_n_eff * (1 + k * (self.n_eff_boost - 1))
        return g * n, g * (n + 1), ge * ne, ge * (ne + 1)


@dataclass(frozen=True)
class ReadoutModel:
    """Isotropic Gaussian IQ clusters with per-readout state flips.

    ``mean_iq`` lists cluster centres for (G, E, F); ``sigma`` is the
    standard deviation per quadrature (scalar or per state).
    """

    mean_iq: tuple = (0j, 1 + 0j, 2 + 0j)
    sigma: float | tuple = 1.0 / 13.0
    flip_down_prob: float = 0.0
    flip_up_prob: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.sigma, dtype=float) <= 0):
            raise InvalidParameterError("sigma must be > 0")
        for p in (self.flip_down_prob, self.flip_up_prob):
            if not 0 <= p < 1:
                raise InvalidParameterError("flip probabilities must lie in [0, 1)")

    def sigmas(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.sigma, dtype=float), (len(self.mean_iq),))

    @classmethod
    def from_separation(cls, ratio: float, sigma: float = 1.0, angle: float = 0.0,
                        **kw) -> ReadoutModel:
        """Collinear G, E, F clusters with ``|mu_E - mu_G| / 2 = ratio * sigma``."""
        step = 2.0 * ratio * sigma * np.exp(1j * angle)
        return cls(mean_iq=(0j, step, 2 * step), sigma=sigma, **kw)


@dataclass(eq=False)
class ShotTrace:
    """Timestamped IQ outcomes for one or more simultaneously read qubits.

    ``iq`` and ``labels`` have shape ``(n_qubits, n_shots)``; ``states``
    optionally holds the true (pre-flip) states.
    """

    shot_times: np.ndarray
    iq: np.ndarray
    qubit_ids: tuple = (0,)
    labels: np.ndarray | None = None
    trace_id: int = 0
    states: np.ndarray | None = None

    def __post_init__(self):
        self.shot_times = np.asarray(self.shot_times, dtype=float).reshape(-1)
        self.iq = np.atleast_2d(np.asarray(self.iq, dtype=complex))
        self.qubit_ids = tuple(self.qubit_ids)
        n = self.shot_times.size
        if np.any(np.diff(self.shot_times) <= 0):
            raise InvalidInputError("shot_times must be strictly increasing")
        if self.iq.shape != (len(self.qubit_ids), n):
            raise InvalidInputError("iq must have shape (n_qubits, n_shots)")
        for name in ("labels", "states"):
            v = getattr(self, name)
            if v is not None:
                v = np.atleast_2d(np.asarray(v))
                if v.shape != self.iq.shape:
                    raise InvalidInputError(f"{name} must match iq shape")
                setattr(self, name, v)

    @property
    def n_shots(self) -> int:
        return self.shot_times.size

    def index(self, qubit) -> int:
        return self.qubit_ids.index(qubit)

    def select(self, qubit) -> ShotTrace:
        """Single-qubit view."""
        i = self.index(qubit)
        def pick(a):
            return None if a is None else a[i:i + 1]

        return ShotTrace(self.shot_times, self.iq[i:i + 1], (qubit,), pick(self.labels),
                         self.trace_id, pick(self.states))

    def with_labels(self, labels) -> ShotTrace:
        return ShotTrace(self.shot_times, self.iq, self.qubit_ids, labels, self.trace_id,
                         self.states)


def synth_vibration(spec: VibrationSpec, duration: float, sample_rate: float, seed: int,
                    start_time: float = 0.0) -> VibrationTrace:
    """Sample the periodic vibration plus white noise at ``noise_floor`` (one-sided ASD)."""
    if duration < spec.period:
        raise InvalidParameterError("duration must cover at least one period")
    n_harm = max((n for n, a in enumerate(spec.harmonic_amps, start=1) if a), default=0)
    if n_harm and sample_rate < 4 * n_harm / spec.period:
        raise AliasingError(
            f"sample_rate {sample_rate} Hz below 4x highest harmonic {n_harm / spec.period:.3g} Hz"
        )
    n = int(round(duration * sample_rate))
    t = start_time + np.arange(n) / sample_rate
    x = spec.waveform(t)
    if spec.noise_floor:
        rng = np.random.default_rng(seed)
        x = x + rng.normal(0.0, spec.noise_floor * np.sqrt(sample_rate / 2.0), n)
    return VibrationTrace(float(sample_rate), float(start_time), x)


def _thinned_times(rng, rate_fn, bound, a, b):
    """Inhomogeneous Poisson event times on [a, b) by thinning a rate-``bound`` process."""
    if bound <= 0:
        return np.empty(0)
    n = rng.poisson(bound * (b - a))
    cand = a + (b - a) * np.sort(rng.random(n))
    lam = rate_fn(cand)
    assert np.all(lam <= bound * (1 + 1e-12)), "rate exceeds thinning bound"
    return cand[rng.random(n) * bound < lam]


def simulate_jump_trajectory(profile: RateProfile, vib_period: float, duration: float,
                             seed: int, t_start: float = 0.0) -> StatePath:
    """Exact sample of the time-inhomogeneous qubit jump process.

    Each transition channel is an inhomogeneous Poisson process drawn by
    thinning against ``profile.rate_bounds()``; the chain takes the first
    event of the channel leaving its current state. The initial state is drawn
    from the instantaneous stationary law at ``t_start``.
    """
    if not (np.isfinite(duration) and duration > 0):
        raise InvalidParameterError("duration must be > 0")
    if not vib_period > 0:
        raise InvalidParameterError("vib_period must be > 0")
    rng = np.random.default_rng(seed)
    t_end = t_start + duration
    up_max, down_max, ef_max, fe_max = profile.rate_bounds()
    p_exc = np.atleast_1d(profile.stationary_excited(np.array([t_start]), vib_period))
    u = rng.random()
    state = G if u >= p_exc.sum() else (E if u < p_exc[0] else F)

    up = lambda t: profile.rates(t, vib_period)[0]  # noqa: E731
    down = lambda t: profile.rates(t, vib_period)[1]  # noqa: E731
    chunk = _CHUNK_CANDIDATES / max(up_max + down_max + ef_max + fe_max, 1e-300)
    jumps, states = [], [state]
    a = t_start
    while a < t_end:
        b = min(a + chunk, t_end)
        t_up = _thinned_times(rng, up, up_max, a, b)
        t_down = _thinned_times(rng, down, down_max, a, b)
        if not profile.three_level:
            # Channel code = state the channel leaves (G for up, E for down).
            times = np.concatenate((t_up, t_down))
            kinds = np.concatenate((np.zeros(t_up.size, np.int8), np.ones(t_down.size, np.int8)))
            order = np.argsort(times, kind="stable")
            times, kinds = times[order], kinds[order]
            if times.size:
                starts = np.concatenate(([0], np.flatnonzero(np.diff(kinds)) + 1))
                if kinds[0] != state:
                    starts = starts[1:]
                jumps.append(times[starts])
                if starts.size % 2:
                    state = 1 - state
        else:
            t_ef = _thinned_times(rng, lambda t: profile.ef_rates(t, vib_period)[0], ef_max, a, b)
            t_fe = _thinned_times(rng, lambda t: profile.ef_rates(t, vib_period)[1], fe_max, a, b)
            state, seg_j, seg_s = _walk_three_level(state, a, t_up, t_down, t_ef, t_fe)
            jumps.append(seg_j)
            states.extend(seg_s)
        a = b
    jump_times = np.concatenate(jumps) if jumps else np.empty(0)
    if profile.three_level:
        st = np.asarray(states, dtype=np.int8)
    else:
        st = ((states[0] + np.arange(jump_times.size + 1)) % 2).astype(np.int8)
    return StatePath(jump_times, st, float(t_end), float(t_start))


def _walk_three_level(state, t, t_up, t_down, t_ef, t_fe):
    def nxt(arr, t):
        i = np.searchsorted(arr, t, side="right")
        return arr[i] if i < arr.size else np.inf

    jumps, states = [], []
    while True:
        if state == G:
            t_new, s_new = nxt(t_up, t), E
        elif state == E:
            td, tf = nxt(t_down, t), nxt(t_ef, t)
            t_new, s_new = (td, G) if td <= tf else (tf, F)
        else:
            t_new, s_new = nxt(t_fe, t), E
        if not np.isfinite(t_new):
            return state, np.asarray(jumps), states
        jumps.append(t_new)
        states.append(s_new)
        t, state = t_new, s_new


def simulate_readout(path: StatePath, shot_times, model: ReadoutModel, seed: int,
                     qubit_id=0, trace_id: int = 0) -> ShotTrace:
    """Single-shot IQ outcomes of one qubit following ``path``.

    A readout flip (G->E with ``flip_up_prob``, E->G with ``flip_down_prob``)
    is applied first; the emitted point is the flipped state's cluster mean
    plus isotropic complex Gaussian noise.
    """
    shot_times = np.asarray(shot_times, dtype=float)
    states = path.value_at(shot_times).astype(np.int8)
    rng = np.random.default_rng(seed)
    emitted = states.copy()
    u = rng.random(states.size)
    emitted[(states == G) & (u < model.flip_up_prob)] = E
    emitted[(states == E) & (u < model.flip_down_prob)] = G
    means = np.asarray(model.mean_iq, dtype=complex)
    sig = model.sigmas()[emitted]
    noise = rng.standard_normal((2, states.size))
    iq = means[emitted] + sig * (noise[0] + 1j * noise[1])
    return ShotTrace(shot_times, iq[None, :], (qubit_id,), trace_id=trace_id,
                     states=states[None, :])


def combine_qubits(traces) -> ShotTrace:
    """Stack single-qubit traces sharing the same shot times."""
    traces = list(traces)
    t0 = traces[0].shot_times
    for tr in traces[1:]:
        if tr.shot_times.shape != t0.shape or not np.array_equal(tr.shot_times, t0):
            raise InvalidInputError("traces must share shot times")
    iq = np.vstack([tr.iq for tr in traces])
    ids = sum((tr.qubit_ids for tr in traces), ())
    states = (np.vstack([tr.states for tr in traces])
              if all(tr.states is not None for tr in traces) else None)
    labels = (np.vstack([tr.labels for tr in traces])
              if all(tr.labels is not None for tr in traces) else None)
    return ShotTrace(t0, iq, ids, labels, traces[0].trace_id, states)


SHOT_INTERVALS = {"sparse": 1e-3, "continuous": 3e-6}


def make_shot_schedule(mode: str, interval: float | None = None, count: int = 1,
                       t0: float = 0.0) -> np.ndarray:
    """Uniform shot times ``t0 + k*interval``.

    ``sparse`` defaults to the 1 ms thermometry spacing, ``continuous`` to
    3 us back-to-back monitoring.
    """
    if mode not in SHOT_INTERVALS:
        raise InvalidParameterError(f"mode must be one of {sorted(SHOT_INTERVALS)}")
    if interval is None:
        interval = SHOT_INTERVALS[mode]
    if not interval > 0 or count < 1:
        raise InvalidParameterError("need interval > 0 and count >= 1")
    return t0 + interval * np.arange(int(count))


def write_shots_csv(path, traces) -> None:
    """CSV with columns ``trace_id,shot_index,t,qubit,I,Q`` (long format)."""
    cols = {k: [] for k in ("trace_id", "shot_index", "t", "qubit", "I", "Q")}
    for tr in traces:
        n = tr.n_shots
        for qi, q in enumerate(tr.qubit_ids):
            cols["trace_id"].append(np.full(n, tr.trace_id, dtype=np.int64))
            cols["shot_index"].append(np.arange(n, dtype=np.int64))
            cols["t"].append(tr.shot_times)
            cols["qubit"].append(np.full(n, q, dtype=np.int64))
            cols["I"].append(tr.iq[qi].real)
            cols["Q"].append(tr.iq[qi].imag)
    write_csv_columns(path, {k: np.concatenate(v) for k, v in cols.items()})


def read_shots_csv(path) -> list[ShotTrace]:
    cols = read_csv_columns(path, ["trace_id", "shot_index", "t", "qubit", "I", "Q"])
    out = []
    tid = cols["trace_id"]
    for trace_id in np.unique(tid):
        sel = tid == trace_id
        qubits = cols["qubit"][sel]
        ids = tuple(int(q) for q in np.unique(qubits))
        first = sel & (cols["qubit"] == ids[0])
        order = np.argsort(cols["shot_index"][first], kind="stable")
        times = cols["t"][first][order]
        rows = []
        for q in ids:
            s = sel & (cols["qubit"] == q)
            o = np.argsort(cols["shot_index"][s], kind="stable")
            if o.size != times.size:
                raise InvalidInputError(f"trace {trace_id}: qubits have unequal shot counts")
            rows.append(cols["I"][s][o] + 1j * cols["Q"][s][o])
        out.append(ShotTrace(times, np.vstack(rows), ids, trace_id=int(trace_id)))
    return out


def simulate_coherent_pulses(shot_times, amplitude: complex, seed: int, noise_var: float = 0.5,
                             modulation=None, trace_id: int = 0) -> ShotTrace:
    """Off-resonant coherent pulses with additive complex Gaussian noise.

    ``noise_var`` is the total variance ``E|z - mean|^2``. ``modulation``,
    if given, maps shot times to ``(amplitude_factor, variance_factor)``
    arrays for constructing non-stationary test data.
    """
    t = np.asarray(shot_times, dtype=float)
    if not noise_var > 0:
        raise InvalidParameterError("noise_var must be > 0")
    amp_f, var_f = (np.ones_like(t), np.ones_like(t)) if modulation is None else modulation(t)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, t.size)) * np.sqrt(noise_var * np.asarray(var_f) / 2)
    iq = amplitude * np.asarray(amp_f) + z[0] + 1j * z[1]
    return ShotTrace(t, iq[None, :], (0,), trace_id=trace_id)
