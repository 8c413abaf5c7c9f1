"""Piecewise-constant trajectories shared by the noise and qubit simulators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShotRangeError

# Integer codes for transmon levels.
G, E, F = 0, 1, 2
STATE_NAMES = ("G", "E", "F")


@dataclass(frozen=True, eq=False)
class StatePath:
    """Piecewise-constant trajectory.

    ``states[i]`` holds on ``[edges[i], edges[i+1])`` where
    ``edges = [t_start, *jump_times, t_end]``. States are integer level codes
    for qubit paths and real levels for the Poisson reset process.
    """

    jump_times: np.ndarray
    states: np.ndarray
    t_end: float
    t_start: float = 0.0

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float).reshape(-1)
        st = np.asarray(self.states).reshape(-1)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "states", st)
        if st.size != jt.size + 1:
            raise InvalidInputError("need exactly one more state than jump times")
        if not self.t_end > self.t_start:
            raise InvalidInputError("t_end must exceed t_start")
        if jt.size:
            if np.any(np.diff(jt) <= 0):
                raise InvalidInputError("jump times must be strictly increasing")
            if jt[0] < self.t_start or jt[-1] > self.t_end:
                raise InvalidInputError("jump times outside [t_start, t_end]")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate(([self.t_start], self.jump_times, [self.t_end]))

    @property
    def segment_durations(self) -> np.ndarray:
        return np.diff(self.edges)

    def value_at(self, t):
        """State in force at time(s) ``t`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        if t.size and (t.min() < self.t_start or t.max() > self.t_end):
            raise ShotRangeError(
                f"times must lie in [{self.t_start}, {self.t_end}]"
            )
        idx = np.searchsorted(self.jump_times, t, side="right")
        return self.states[idx]

    def occupancy(self, state) -> float:
        """Fraction of the total duration spent in ``state``."""
        dur = self.segment_durations
        return float(dur[self.states == state].sum() / self.duration)

    def integral_at(self, t) -> np.ndarray:
        """Running integral of the path from ``t_start`` to ``t``."""
        edges = self.edges
        cum = np.concatenate(([0.0], np.cumsum(self.states * np.diff(edges))))
        return np.interp(np.asarray(t, dtype=float), edges, cum)

    def bin_average(self, dt: float) -> np.ndarray:
        """Exact average of the path over consecutive bins of width ``dt``.

        Incomplete trailing bins are dropped.
        """
        n = int(np.floor(self.duration / dt + 1e-9))
        if n < 1:
            raise InvalidInputError("dt longer than the path")
        grid = self.t_start + dt * np.arange(n + 1)
        return np.diff(self.integral_at(grid)) / dt

    def interior_dwells(self, state) -> np.ndarray:
        """Durations of uncensored segments (first and last excluded)."""
        dur = self.segment_durations[1:-1]
        return dur[self.states[1:-1] == state]
