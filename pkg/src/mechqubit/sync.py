"""Alignment to a reference vibration period and phase-folded statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import welch

from .errors import InvalidInputError, InvalidParameterError
from .io import read_csv_columns, write_csv_columns
from .paths import G
from .qubitsim import ShotTrace, VibrationTrace

LOW_CONFIDENCE_PEAK = 0.2


@dataclass(frozen=True)
class AlignmentResult:
    """Offset of a trace against a one-period reference.

    Sample ``i`` of the trace lines up with reference sample
    ``(i + lag * sample_rate) mod n_ref``, so an absolute time ``t`` has
    phase ``(t - trace_start + lag) mod reference_period``.
    """

    lag: float
    peak_correlation: float
    reference_period: float
    trace_start: float = 0.0
    sample_rate: float | None = None
    low_confidence: bool = False

    def __post_init__(self):
        if not self.reference_period > 0:
            raise InvalidParameterError("reference_period must be > 0")
        if not 0 <= self.lag < self.reference_period:
            raise InvalidParameterError("lag must lie in [0, reference_period)")

    def phase_of(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.mod(t - self.trace_start + self.lag, self.reference_period)


@dataclass(frozen=True, eq=False)
class FoldedSeries:
    """Per-phase-bin statistic; bins with no samples hold NaN."""

    phase_bins: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    smoothing_window: float = 0.0
    stderr: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.counts) < 0):
            raise InvalidInputError("counts must be >= 0")

    @property
    def bin_width(self) -> float:
        pb = np.asarray(self.phase_bins)
        return float(pb[1] - pb[0]) if pb.size > 1 else float("nan")


@dataclass(frozen=True, eq=False)
class Spectrum:
    freqs: np.ndarray
    asd: np.ndarray


def align_to_reference(trace: VibrationTrace, reference: VibrationTrace) -> AlignmentResult:
    """Circular lag maximising the normalised cross-correlation.

    The trace is folded onto the reference length and averaged, then
    correlated with the reference through the FFT. The integer peak is
    refined by a three-point parabola.
    """
    if not np.isclose(trace.sample_rate, reference.sample_rate, rtol=1e-12, atol=0):
        raise InvalidInputError("trace and reference sample rates differ")
    n = reference.samples.size
    if n < 3:
        raise InvalidInputError("reference needs at least 3 samples")
    if trace.samples.size < 2 * n:
        raise InvalidInputError("trace must span at least two reference periods")
    fs = reference.sample_rate
    period = n / fs
    x = trace.samples
    idx = np.arange(x.size) % n
    folded = np.bincount(idx, weights=x, minlength=n) / np.bincount(idx, minlength=n)
    f = folded - folded.mean()
    r = reference.samples - reference.samples.mean()
    denom = np.linalg.norm(f) * np.linalg.norm(r)
    if denom == 0:
        return AlignmentResult(0.0, 0.0, period, trace.start_time, fs, True)
    # c[k] = sum_j f[j] r[j+k]
    c = np.fft.irfft(np.conj(np.fft.rfft(f)) * np.fft.rfft(r), n) / denom
    k = int(np.argmax(c))
    cm, c0, cp = c[(k - 1) % n], c[k], c[(k + 1) % n]
    curv = cm - 2 * c0 + cp
    delta = 0.5 * (cm - cp) / curv if curv < 0 else 0.0
    lag = float(np.mod((k + delta) / fs, period))
    if lag >= period:
        lag = 0.0
    peak = float(np.clip(c0, -1.0, 1.0))
    return AlignmentResult(lag, peak, period, trace.start_time, fs, peak < LOW_CONFIDENCE_PEAK)


def _bin_layout(alignment: AlignmentResult, bin_width: float):
    if not bin_width > 0:
        raise InvalidParameterError("bin_width must be > 0")
    period = alignment.reference_period
    nb = max(1, int(round(period / bin_width)))
    tol = 1.0 / alignment.sample_rate if alignment.sample_rate else 1e-9 * period
    if abs(nb * bin_width - period) > tol:
        raise InvalidParameterError("bin_width must divide the reference period")
    width = period / nb
    return nb, width, (np.arange(nb) + 0.5) * width


def _as_lists(shots, alignment):
    if isinstance(shots, ShotTrace):
        shots = [shots]
    shots = list(shots)
    if isinstance(alignment, AlignmentResult):
        # keep one entry with no shots so the bin layout is still defined
        alignment = [alignment] * max(len(shots), 1)
    alignment = list(alignment)
    if shots and len(alignment) != len(shots):
        raise InvalidInputError("need one alignment per shot trace")
    periods = {a.reference_period for a in alignment}
    if len(periods) > 1:
        raise InvalidInputError("alignments disagree on the reference period")
    return shots, alignment


def _circular_boxcar(x, w):
    if w <= 1:
        return x
    h = w // 2
    ext = np.concatenate([x[-h:], x, x[:h]]) if h else x
    c = np.concatenate([[0.0], np.cumsum(ext)])
    return c[w:] - c[:-w]


def phase_bin_index(shots, alignment, bin_width):
    """Bin index of every shot, concatenated over traces in order."""
    shots, alignment = _as_lists(shots, alignment)
    nb, width, _ = _bin_layout(alignment[0], bin_width)
    out = [np.minimum((a.phase_of(s.shot_times) / width).astype(np.int64), nb - 1)
           for s, a in zip(shots, alignment)]
    return (np.concatenate(out) if out else np.zeros(0, np.int64)), nb


def fold_shots(shots, alignment, bin_width: float, smoothing_window: float = 0.0,
               qubit=None) -> FoldedSeries:
    """Phase-folded excitation probability ``P(label != G)``.

    ``shots`` may be one labelled ShotTrace or a sequence of them with a
    matching sequence of alignments. With a ``smoothing_window`` the
    per-bin counts are summed over a centred circular boxcar before
    dividing, so sparse bins are weighted by their counts.
    """
    shots, alignment = _as_lists(shots, alignment)
    nb, width, centres = _bin_layout(alignment[0], bin_width)
    hits = np.zeros(nb)
    counts = np.zeros(nb, dtype=np.int64)
    for s, a in zip(shots, alignment):
        if s.labels is None:
            raise InvalidInputError("shots must be labelled before folding")
        row = s.labels[0 if qubit is None else s.index(qubit)]
        b = np.minimum((a.phase_of(s.shot_times) / width).astype(np.int64), nb - 1)
        counts += np.bincount(b, minlength=nb)
        hits += np.bincount(b, weights=(row != G).astype(float), minlength=nb)
    w = int(round(smoothing_window / width)) if smoothing_window else 1
    w = max(1, min(w, nb))
    if w > 1 and w % 2 == 0:
        w += 1 if w < nb else -1
    h_s = _circular_boxcar(hits, w)
    n_s = _circular_boxcar(counts.astype(float), w)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(n_s > 0, h_s / n_s, np.nan)
        se = np.where(n_s > 0, np.sqrt(p * (1 - p) / n_s), np.nan)
    return FoldedSeries(centres, p, counts, w * width if w > 1 else 0.0, se)


def asd(series, sample_rate: float, n_segments: int = 8) -> Spectrum:
    """One-sided amplitude spectral density by Welch averaging.

    Hann window, 50 % overlap, ``n_segments`` segments, density scaling;
    ``sum(asd**2) * df`` equals the series variance.
    """
    x = np.asarray(series, dtype=float).reshape(-1)
    if x.size < 16:
        raise InvalidInputError("series needs at least 16 samples")
    if not sample_rate > 0 or n_segments < 1:
        raise InvalidParameterError("need sample_rate > 0 and n_segments >= 1")
    nperseg = max(8, int(2 * x.size // (n_segments + 1)))
    freqs, psd = welch(x, fs=sample_rate, window="hann", nperseg=nperseg,
                       noverlap=nperseg // 2, detrend="constant", scaling="density")
    return Spectrum(freqs, np.sqrt(psd))


def time_resolved_microwave_stats(pulses, alignment, bin_width: float, qubit=None):
    """Phase-folded transmission ratio and background noise of coherent pulses.

    Transmission is ``|mean(iq)|`` per bin over the global ``|mean(iq)|``.
    Background noise is the per-bin variance about the bin mean over the
    global variance, scaled so the global level reads 0.5 (vacuum units).

    Returns
    -------
    transmission, background : FoldedSeries
        Each carries a per-bin standard error.
    """
    pulses, alignment = _as_lists(pulses, alignment)
    nb, width, centres = _bin_layout(alignment[0], bin_width)
    n = np.zeros(nb)
    s1 = np.zeros(nb, dtype=complex)
    s2 = np.zeros(nb)
    for p, a in zip(pulses, alignment):
        z = p.iq[0 if qubit is None else p.index(qubit)]
        b = np.minimum((a.phase_of(p.shot_times) / width).astype(np.int64), nb - 1)
        n += np.bincount(b, minlength=nb)
        s1 += (np.bincount(b, weights=z.real, minlength=nb)
               + 1j * np.bincount(b, weights=z.imag, minlength=nb))
        s2 += np.bincount(b, weights=np.abs(z) ** 2, minlength=nb)
    counts = n.astype(np.int64)
    total = n.sum()
    nan = np.full(nb, np.nan)
    if total < 2:
        return (FoldedSeries(centres, nan, counts, 0.0, nan),
                FoldedSeries(centres, nan.copy(), counts, 0.0, nan.copy()))
    g_mean = s1.sum() / total
    g_var = s2.sum() / total - abs(g_mean) ** 2
    if not abs(g_mean) > 0 or not g_var > 0:
        raise InvalidInputError("pulses need nonzero mean and variance")
    with np.errstate(invalid="ignore", divide="ignore"):
        m = np.where(n > 0, s1 / n, np.nan)
        v = np.where(n > 1, (s2 - n * np.abs(m) ** 2) / (n - 1), np.nan)
        trans = np.abs(m) / abs(g_mean)
        trans_se = np.sqrt(v / (2 * n)) / abs(g_mean)
        back = 0.5 * v / g_var
        back_se = back / np.sqrt(n)
    trans = np.where(n > 0, trans, np.nan)
    return (FoldedSeries(centres, trans, counts, 0.0, trans_se),
            FoldedSeries(centres, back, counts, 0.0, back_se))


def write_folded_csv(path, series: FoldedSeries) -> None:
    write_csv_columns(path, {"phase_s": series.phase_bins, "value": series.values,
                             "count": series.counts})


def read_folded_csv(path) -> FoldedSeries:
    c = read_csv_columns(path, ["phase_s", "value", "count"])
    return FoldedSeries(c["phase_s"].astype(float), c["value"].astype(float),
                        c["count"].astype(np.int64))


def write_spectrum_csv(path, spec: Spectrum) -> None:
    write_csv_columns(path, {"freq_hz": spec.freqs, "asd": spec.asd})
