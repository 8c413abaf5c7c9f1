"""Mutual information between qubit error records."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .io import atomic_write_text, write_csv_columns
from .paths import G
from .sync import FoldedSeries, _as_lists, _bin_layout

COARSE_LABELS = ("G", "Gbar")
FINE_LABELS = ("G", "E", "F")
INITIAL_STATES = ("GG", "GE", "EG", "EE")
ERROR_PATTERNS = ("--", "-x", "x-", "xx")


@dataclass(frozen=True, eq=False)
class JointDistribution:
    labels_x: tuple
    labels_y: tuple
    p: np.ndarray
    n_samples: int = 0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (len(self.labels_x), len(self.labels_y)):
            raise InvalidInputError("p shape must match the label lists")
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise InvalidInputError("joint probabilities must be >= 0 and sum to 1")
        object.__setattr__(self, "p", p)

    @property
    def marginal_x(self) -> np.ndarray:
        return self.p.sum(axis=1)

    @property
    def marginal_y(self) -> np.ndarray:
        return self.p.sum(axis=0)

    @classmethod
    def from_counts(cls, counts, labels_x, labels_y) -> JointDistribution:
        counts = np.asarray(counts, dtype=float)
        n = counts.sum()
        if n <= 0:
            raise InvalidInputError("no samples")
        return cls(tuple(labels_x), tuple(labels_y), counts / n, int(n))

    def to_dict(self) -> dict:
        return {"labels_x": list(self.labels_x), "labels_y": list(self.labels_y),
                "p": self.p.tolist(), "n_samples": self.n_samples}


@dataclass(frozen=True, eq=False)
class ErrorEventMatrix:
    """Window probabilities indexed by initial joint state and error pattern.

    Rows follow ``INITIAL_STATES``, columns ``ERROR_PATTERNS``; ``x`` marks
    at least one label change of that qubit inside the window.
    """

    interval: float
    p: np.ndarray
    n_windows: int

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (4, 4) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise InvalidInputError("p must be a 4x4 probability matrix")
        object.__setattr__(self, "p", p)

    def as_joint(self) -> JointDistribution:
        """Joint of (initial, flip) for qubit A against the same for qubit B."""
        q = self.p.reshape(2, 2, 2, 2)  # init_a, init_b, flip_a, flip_b
        joint = q.transpose(0, 2, 1, 3).reshape(4, 4)
        lab = ("G-", "Gx", "E-", "Ex")
        return JointDistribution(lab, lab, joint, self.n_windows)

    def to_dict(self) -> dict:
        return {"interval": self.interval, "rows": list(INITIAL_STATES),
                "columns": list(ERROR_PATTERNS), "p": self.p.tolist(),
                "n_windows": self.n_windows}


@dataclass(frozen=True, eq=False)
class MICurve:
    intervals: np.ndarray
    mi: np.ndarray
    null99: np.ndarray | None = None

    @property
    def argmax(self) -> float:
        return float(self.intervals[int(np.nanargmax(self.mi))])

    def has_interior_maximum(self) -> bool:
        k = int(np.nanargmax(self.mi))
        return 0 < k < self.mi.size - 1


def mutual_information(joint: JointDistribution) -> float:
    """``sum p(x,y) log2[p(x,y) / (p(x) p(y))]`` in bits; zero cells contribute 0."""
    p = joint.p
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    mi = float(np.sum(p[nz] * np.log2(p[nz] / (px @ py)[nz])))
    return max(mi, 0.0)


def _label_row(x):
    lab = getattr(x, "labels", None)
    if lab is not None or hasattr(x, "shot_times"):
        if lab is None:
            raise InvalidInputError("shots must be labelled")
        return np.asarray(lab)[0]
    return np.asarray(x).reshape(-1)


def _codes(labels, coarse):
    lab = np.asarray(labels)
    return (lab != G).astype(np.int64) if coarse else lab.astype(np.int64)


def _joint_counts(a, b, k):
    return np.bincount(a * k + b, minlength=k * k).reshape(k, k)


def joint_from_shots(shots_a, shots_b, coarse: bool = True) -> JointDistribution:
    """Empirical joint of simultaneous labels, over {G, Gbar} when ``coarse``."""
    a, b = _label_row(shots_a), _label_row(shots_b)
    if a.size != b.size:
        raise InvalidInputError("label sequences must have equal length")
    if a.size == 0:
        raise InvalidInputError("no shots")
    labels = COARSE_LABELS if coarse else FINE_LABELS
    k = len(labels)
    return JointDistribution.from_counts(_joint_counts(_codes(a, coarse), _codes(b, coarse), k),
                                         labels, labels)


def permutation_null(shots_a, shots_b, n_perm: int = 200, seed: int = 0,
                     quantile: float = 99.0, coarse: bool = True) -> float:
    """Percentile of plug-in MI after randomly re-pairing the shots."""
    a = _codes(_label_row(shots_a), coarse)
    b = _codes(_label_row(shots_b), coarse)
    if a.size != b.size:
        raise InvalidInputError("label sequences must have equal length")
    k = 2 if coarse else 3
    rng = np.random.default_rng(seed)
    vals = [mutual_information(JointDistribution.from_counts(
        _joint_counts(a, rng.permutation(b), k), range(k), range(k))) for _ in range(n_perm)]
    return float(np.percentile(vals, quantile))


def time_resolved_mi(shots_a, shots_b, alignment, bin_width: float,
                     coarse: bool = True) -> FoldedSeries:
    """Mutual information of the simultaneous labels within each phase bin.

    ``shots_a`` and ``shots_b`` are single-qubit ShotTraces (or matching
    sequences of them) sharing shot times; bins without shots hold NaN.
    """
    sa, alignment = _as_lists(shots_a, alignment)
    sb, _ = _as_lists(shots_b, alignment)
    if len(sa) != len(sb):
        raise InvalidInputError("need matching trace lists")
    nb, width, centres = _bin_layout(alignment[0], bin_width)
    k = 2 if coarse else 3
    counts = np.zeros((nb, k * k), dtype=np.int64)
    for ta, tb, al in zip(sa, sb, alignment):
        if ta.n_shots != tb.n_shots or not np.array_equal(ta.shot_times, tb.shot_times):
            raise InvalidInputError("paired traces must share shot times")
        a, b = _codes(_label_row(ta), coarse), _codes(_label_row(tb), coarse)
        bins = np.minimum((al.phase_of(ta.shot_times) / width).astype(np.int64), nb - 1)
        counts += np.bincount(bins * k * k + a * k + b, minlength=nb * k * k).reshape(nb, k * k)
    mi = np.full(nb, np.nan)
    for i in range(nb):
        if counts[i].sum():
            mi[i] = mutual_information(JointDistribution.from_counts(
                counts[i].reshape(k, k), range(k), range(k)))
    return FoldedSeries(centres, mi, counts.sum(axis=1))


def _window_codes(labels, m):
    lab = (np.asarray(labels) != G).astype(np.int8)
    nw = lab.size // m
    w = lab[:nw * m].reshape(nw, m)
    init = w[:, 0].astype(np.int64)
    flip = np.any(w[:, 1:] != w[:, :-1], axis=1).astype(np.int64)
    return init, flip


def _samples_per_window(interval, dt):
    if not interval > 0 or not dt > 0:
        raise InvalidParameterError("interval and dt must be > 0")
    m = int(round(interval / dt))
    if abs(m * dt - interval) > 1e-6 * dt:
        raise InvalidInputError("interval must be a multiple of the shot spacing")
    if m < 2:
        raise InvalidInputError("interval must span at least two shots")
    return m


def _pairs(records_a, records_b):
    ra = [records_a] if not isinstance(records_a, (list, tuple)) else list(records_a)
    rb = [records_b] if not isinstance(records_b, (list, tuple)) else list(records_b)
    if len(ra) != len(rb):
        raise InvalidInputError("need matching record lists")
    out = []
    for a, b in zip(ra, rb):
        a, b = _label_row(a), _label_row(b)
        if a.size != b.size:
            raise InvalidInputError("paired records must have equal length")
        out.append((a, b))
    return out


def _event_codes(pairs, m):
    xs, ys = [], []
    for a, b in pairs:
        ia, fa = _window_codes(a, m)
        ib, fb = _window_codes(b, m)
        xs.append(2 * ia + fa)
        ys.append(2 * ib + fb)
    return np.concatenate(xs), np.concatenate(ys)


def error_event_matrix(records_a, records_b, interval: float, dt: float) -> ErrorEventMatrix:
    """16-event distribution over non-overlapping windows of length ``interval``.

    Records are label sequences sampled every ``dt`` (or lists of them,
    paired by position). Trailing samples shorter than a window are ignored.
    """
    m = _samples_per_window(interval, dt)
    x, y = _event_codes(_pairs(records_a, records_b), m)
    if x.size == 0:
        raise InvalidInputError("records are shorter than one interval")
    ia, fa, ib, fb = x // 2, x % 2, y // 2, y % 2
    counts = np.bincount((2 * ia + ib) * 4 + 2 * fa + fb, minlength=16).reshape(4, 4)
    return ErrorEventMatrix(float(interval), counts / counts.sum(), int(x.size))


def _mi_codes(x, y):
    return mutual_information(JointDistribution.from_counts(_joint_counts(x, y, 4), range(4), range(4)))


def mi_vs_interval(records_a, records_b, intervals, dt: float, n_perm: int = 0,
                   seed: int = 0, null: str = "shift") -> MICurve:
    """MI of the 16-event distribution at each interval.

    With ``n_perm > 0`` the 99th percentile of a surrogate MI is returned
    alongside as a null band. ``null="shift"`` rotates the window sequence of
    qubit B by a random offset, which keeps the autocorrelation of both
    sequences; ``null="permute"`` shuffles the windows and is only valid when
    successive windows are independent.
    """
    if null not in ("shift", "permute"):
        raise InvalidParameterError(f"unknown null {null!r}")
    pairs = _pairs(records_a, records_b)
    intervals = np.asarray(intervals, dtype=float)
    mi = np.empty(intervals.size)
    band = np.empty(intervals.size) if n_perm else None
    rng = np.random.default_rng(seed)
    for i, iv in enumerate(intervals):
        x, y = _event_codes(pairs, _samples_per_window(iv, dt))
        if x.size == 0:
            raise InvalidInputError("records are shorter than one interval")
        mi[i] = _mi_codes(x, y)
        if n_perm:
            band[i] = np.percentile([_mi_codes(x, _surrogate(y, rng, null))
                                     for _ in range(n_perm)], 99)
    return MICurve(intervals, mi, band)


def _surrogate(y: np.ndarray, rng, kind: str) -> np.ndarray:
    if kind == "permute" or y.size < 3:
        return rng.permutation(y)
    # keep clear of the trivial alignments at either end
    margin = max(1, y.size // 10)
    return np.roll(y, int(rng.integers(margin, y.size - margin + 1)))


def write_joint_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj.to_dict(), indent=2) + "\n")


def write_mi_curve_csv(path, curve: MICurve) -> None:
    cols = {"interval_s": curve.intervals, "mi_bits": curve.mi}
    if curve.null99 is not None:
        cols["null99_bits"] = curve.null99
    write_csv_columns(path, cols)
