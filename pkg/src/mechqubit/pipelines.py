"""End-to-end simulate-and-analyse workflows shared by the CLI and the tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import correlate, jumps, processes, readout, sync
from .errors import InvalidParameterError
from .paths import G
from .qubitsim import (
    ReadoutModel,
    ShotTrace,
    VibrationSpec,
    VibrationTrace,
    simulate_coherent_pulses,
    simulate_jump_trajectory,
    simulate_readout,
    synth_vibration,
)


def child_seeds(seed: int, n: int) -> list[int]:
    """``n`` independent integer seeds derived from ``seed``."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def reference_period(spec: VibrationSpec, sample_rate: float) -> VibrationTrace:
    """Noise-free single period of the vibration starting at absolute time 0."""
    n = spec.period * sample_rate
    if abs(n - round(n)) > 1e-6:
        raise InvalidParameterError("period must be a whole number of vibration samples")
    t = np.arange(int(round(n))) / sample_rate
    return VibrationTrace(float(sample_rate), 0.0, spec.waveform(t))


def trace_start_times(n_traces: int, trace_duration: float, period: float, seed: int,
                      gap: float = 1.0) -> np.ndarray:
    """Start times with a random offset within one period for every trace."""
    rng = np.random.default_rng(seed)
    return np.arange(n_traces) * (trace_duration + gap + period) + rng.random(n_traces) * period


@dataclass(eq=False)
class LabeledRecord:
    """Classified continuous-monitoring record of one trace."""

    trace_id: int
    t0: float
    dt: float
    labels: np.ndarray  # (n_qubits, n_shots), int8
    qubit_ids: tuple = (0, 1)

    @property
    def n_shots(self) -> int:
        return self.labels.shape[1]

    @property
    def shot_times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_shots)


@dataclass(eq=False)
class MonitoringData:
    records: list
    vibrations: list
    reference: VibrationTrace
    profiles: tuple
    spec: VibrationSpec
    calibrations: tuple = ()
    paths: list = field(default_factory=list)


def classify_continuous(iq, cal: readout.CalibrationResult, window: int = 2) -> np.ndarray:
    """Rotate, average ``window`` successive quadratures causally and threshold."""
    x = cal.rotation.apply(iq).real if np.iscomplexobj(iq) else np.asarray(iq)
    return readout.classify(jumps.moving_average(x, window), cal)


@dataclass(eq=False)
class RawTrace:
    trace_id: int
    t0: float
    vibration: VibrationTrace
    shots: ShotTrace  # unlabelled IQ with true states
    paths: list


def iter_traces(profiles, spec: VibrationSpec, n_traces: int, trace_duration: float,
                interval: float, model: ReadoutModel, seed: int, vib_rate: float = 10_000.0):
    """Yield simulated traces one at a time: vibration record, IQ shots, true paths.

    Trace ``k`` uses seeds derived from ``seed`` and ``k`` only, so any
    subset of traces can be regenerated identically.
    """
    profiles = tuple(profiles)
    nq = len(profiles)
    starts = trace_start_times(n_traces, trace_duration, spec.period, seed)
    seeds = child_seeds(seed, n_traces * (2 * nq + 1))
    n_shots = int(math.floor(trace_duration / interval + 1e-9))
    for k, t0 in enumerate(starts):
        s = seeds[k * (2 * nq + 1):(k + 1) * (2 * nq + 1)]
        vib = synth_vibration(spec, trace_duration, vib_rate, s[0], start_time=t0)
        times = t0 + interval * np.arange(n_shots)
        iq, states, paths = [], [], []
        for q, prof in enumerate(profiles):
            path = simulate_jump_trajectory(prof, spec.period, trace_duration, s[1 + 2 * q], t_start=t0)
            tr = simulate_readout(path, times, model, s[2 + 2 * q])
            iq.append(tr.iq[0])
            states.append(tr.states[0])
            paths.append(path)
        shots = ShotTrace(times, np.vstack(iq), tuple(range(nq)), trace_id=k, states=np.vstack(states))
        yield RawTrace(k, float(t0), vib, shots, paths)


def simulate_monitoring(profiles, spec: VibrationSpec, n_traces: int, trace_duration: float,
                        dt: float, model: ReadoutModel, seed: int, vib_rate: float = 10_000.0,
                        ma_window: int = 2, calib_samples: int = 300_000,
                        keep_paths: bool = False) -> MonitoringData:
    """Continuous monitoring of one or more qubits sharing a vibration environment.

    Each trace has its own accelerometer record and a random start time.
    Readout is calibrated once per qubit on the first trace and then applied
    to every trace; IQ data is dropped after classification.
    """
    profiles = tuple(profiles)
    nq = len(profiles)
    cals = [None] * nq
    records, vibs, paths = [], [], []
    for raw in iter_traces(profiles, spec, n_traces, trace_duration, dt, model, seed, vib_rate):
        labels = np.empty((nq, raw.shots.n_shots), dtype=np.int8)
        for q in range(nq):
            iq = raw.shots.iq[q]
            if cals[q] is None:
                cals[q] = readout.calibrate(iq[:calib_samples], n_components=2,
                                            ground_hint=model.mean_iq[0])
            labels[q] = classify_continuous(iq, cals[q], ma_window)
        vibs.append(raw.vibration)
        if keep_paths:
            paths.extend(raw.paths)
        records.append(LabeledRecord(raw.trace_id, raw.t0, dt, labels, tuple(range(nq))))
    return MonitoringData(records, vibs, reference_period(spec, vib_rate), profiles, spec,
                          tuple(cals), paths)


def align_all(vibrations, reference) -> dict:
    return {k: sync.align_to_reference(v, reference) for k, v in enumerate(vibrations)}


def monitoring_dwells(data: MonitoringData, qubit: int) -> jumps.DwellTable:
    return jumps.DwellTable.concat(
        jumps.extract_dwells(r.labels[qubit], r.dt, trace_id=r.trace_id, t0=r.t0)
        for r in data.records)


def weighted_median(values, weights) -> float:
    v, w = np.asarray(values, dtype=float), np.asarray(weights, dtype=float)
    ok = np.isfinite(v)
    v, w = v[ok], w[ok]
    order = np.argsort(v)
    cw = np.cumsum(w[order])
    return float(v[order][np.searchsorted(cw, 0.5 * cw[-1])])


@dataclass(frozen=True)
class ContrastSummary:
    """Spike response of a time-resolved rate walk.

    Baselines are medians weighted by phase width, so the many narrow steps
    inside a spike do not dominate. Contrasts are taken at the steps within
    one step of the true spike phase.
    """

    expected_index: int
    onset_index: int
    n_eff_baseline: float
    gamma_eff_baseline: float
    n_eff_contrast: float
    gamma_eff_contrast: float

    @property
    def phase_ok(self) -> bool:
        return abs(self.onset_index - self.expected_index) <= 1


def spike_contrast(estimates, spike_phase: float, period: float,
                   onset_factor: float = 10.0) -> ContrastSummary:
    n = np.array([e.n_eff for e in estimates])
    g = np.array([e.gamma_eff for e in estimates])
    centre = np.array([e.phase_time for e in estimates])
    width = np.array([e.bin_width for e in estimates])
    n_base, g_base = weighted_median(n, width), weighted_median(g, width)
    d = np.abs(np.mod(spike_phase - centre + period / 2, period) - period / 2)
    inside = np.flatnonzero(d <= width / 2)
    expected = int(inside[0]) if inside.size else int(np.argmin(d))
    near = np.arange(max(0, expected - 1), min(n.size, expected + 2))
    k = near[np.nanargmax(n[near])]
    above = np.flatnonzero(n > onset_factor * n_base)
    onset = int(above[0]) if above.size else -1
    return ContrastSummary(expected, onset, n_base, g_base, float(n[k] / n_base),
                           float(g[k] / g_base))


def analyze_time_resolved(data: MonitoringData, qubit: int = 0):
    """Align every trace, extract dwells and walk the phase; returns (alignments, estimates)."""
    al = align_all(data.vibrations, data.reference)
    events = monitoring_dwells(data, qubit)
    return al, jumps.time_resolved_rates(events, al, dt=data.records[0].dt)


# --- sparse (1 ms) datasets -------------------------------------------------

@dataclass(eq=False)
class SparseData:
    shots: list  # ShotTrace per trace, qubits stacked
    vibrations: list
    reference: VibrationTrace
    calibrations: tuple = ()


def label_traces(traces, n_components: int = 2, ground_hint=None):
    """Calibrate each qubit on all traces pooled and label every shot."""
    nq = traces[0].iq.shape[0]
    cals = tuple(readout.calibrate(np.concatenate([t.iq[q] for t in traces]),
                                   n_components=n_components, ground_hint=ground_hint)
                 for q in range(nq))
    labelled = [t.with_labels(np.vstack([readout.classify(t.iq[q], cals[q]) for q in range(nq)]))
                for t in traces]
    return labelled, cals


def simulate_sparse(profiles, spec: VibrationSpec, n_traces: int, trace_duration: float,
                    interval: float, model: ReadoutModel, seed: int, vib_rate: float = 10_000.0,
                    n_components: int = 2) -> SparseData:
    """Widely spaced single shots on several qubits, labelled after calibration."""
    raws = list(iter_traces(profiles, spec, n_traces, trace_duration, interval, model, seed, vib_rate))
    labelled, cals = label_traces([r.shots for r in raws], n_components, model.mean_iq[0])
    return SparseData(labelled, [r.vibration for r in raws], reference_period(spec, vib_rate), cals)


def pooled_labels(data: SparseData, qubit: int) -> np.ndarray:
    return np.concatenate([t.labels[qubit] for t in data.shots])


def mi_with_null(data: SparseData, n_perm: int = 200, seed: int = 0):
    """Pooled plug-in MI of qubits 0 and 1 and its permutation 99th percentile."""
    a, b = pooled_labels(data, 0), pooled_labels(data, 1)
    mi = correlate.mutual_information(correlate.joint_from_shots(a, b))
    return mi, correlate.permutation_null(a, b, n_perm=n_perm, seed=seed)


# --- thermometry -------------------------------------------------------------

@dataclass(frozen=True)
class ThermometryReport:
    populations: dict
    t_eff_ge: float
    t_eff_ef: float | None


def thermometry(cal: readout.CalibrationResult, f_ge: float, anharmonicity: float) -> ThermometryReport:
    pops = cal.populations()
    t_ge = readout.effective_temperature(pops["E"], pops["G"], f_ge)
    t_ef = None
    if cal.n_components > 2 and pops["F"] > 0:
        t_ef = readout.effective_temperature(pops["F"], pops["E"], f_ge - anharmonicity)
    return ThermometryReport(pops.as_dict(), t_ge, t_ef)


# --- microwave null test -----------------------------------------------------

def simulate_microwave(spec: VibrationSpec, n_traces: int, trace_duration: float, interval: float,
                       amplitude: complex, seed: int, vib_rate: float = 10_000.0,
                       noise_var: float = 0.5, modulation=None):
    starts = trace_start_times(n_traces, trace_duration, spec.period, seed)
    seeds = child_seeds(seed, 2 * n_traces)
    n = int(math.floor(trace_duration / interval + 1e-9))
    pulses, vibs = [], []
    for k, t0 in enumerate(starts):
        vibs.append(synth_vibration(spec, trace_duration, vib_rate, seeds[2 * k], start_time=t0))
        pulses.append(simulate_coherent_pulses(t0 + interval * np.arange(n), amplitude,
                                               seeds[2 * k + 1], noise_var, modulation, trace_id=k))
    return pulses, vibs, reference_period(spec, vib_rate)


def microwave_stats(pulses, vibrations, reference, bin_width):
    al = align_all(vibrations, reference)
    return sync.time_resolved_microwave_stats(pulses, [al[k] for k in range(len(pulses))], bin_width)


# --- ADEV --------------------------------------------------------------------

def adev_realizations(params, duration: float, dt: float, taus, n_real: int, seed: int):
    """RMS empirical ADEV over realisations seeded ``seed + k``, combined in index order."""
    sim = (processes.simulate_telegraph if isinstance(params, processes.TelegraphParams)
           else processes.simulate_poisson_reset)
    curves = []
    for k in range(n_real):
        path = sim(params, duration, seed + k)
        curves.append(processes.empirical_adev(path.bin_average(dt), dt, taus))
    return processes.mean_adev_curve(curves)


def excited_fraction(labels) -> float:
    return float(np.mean(np.asarray(labels) != G))
