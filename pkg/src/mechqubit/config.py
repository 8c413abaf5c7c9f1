"""Scenario files: strict TOML schema, defaults and object construction."""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .processes import PoissonResetParams, TelegraphParams
from .qubitsim import RateProfile, ReadoutModel, ShockTemplate, VibrationSpec

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

KINDS = ("thermometry", "monitoring", "sparse", "microwave", "adev")

# section -> key -> (type or tuple of types, default); default None means optional.
_NUM = (int, float)
SCHEMA = {
    "vibration": {
        "period": (_NUM, 0.714),
        "harmonic_amps": (list, [0.010, 0.006, 0.004, 0.003, 0.002]),
        "harmonic_phases": (list, [0.0, 1.1, 2.3, 0.4, 1.7]),
        "shock_time_in_period": (_NUM, 0.10),
        "shock_amplitude": (_NUM, 0.05),
        "shock_ring_freq": (_NUM, 35.0),
        "shock_damping": (_NUM, 25.0),
        "noise_floor": (_NUM, 2e-4),
        "sample_rate": (_NUM, 10_000.0),
    },
    "qubit": {
        "baseline_gamma_eff": (_NUM, 5000.0),
        "baseline_n_eff": (_NUM, 0.015),
        "spike_times_in_period": (list, []),
        "n_eff_boost": (_NUM, 1.0),
        "gamma_eff_boost": (_NUM, 1.0),
        "spike_decay": (_NUM, 50.0),
        "ef_gamma_eff": (_NUM, 0.0),
        "ef_n_eff": (_NUM, 0.0),
    },
    "readout": {
        "separation_ratio": (_NUM, 6.5),
        "sigma": (_NUM, 1.0 / 13.0),
        "angle": (_NUM, 0.0),
        "flip_down_prob": (_NUM, 0.0),
        "flip_up_prob": (_NUM, 0.0),
    },
    "schedule": {
        "mode": (str, "sparse"),
        "interval": (_NUM, None),
        "n_traces": (int, 1),
        "trace_duration": (_NUM, 10.0),
    },
    "analysis": {
        "bin_width": (_NUM, 0.0102),
        "smoothing_window": (_NUM, 0.005),
        "ma_window": (int, 2),
        "n_components": (int, 2),
        "f_ge": (_NUM, 4.794064e9),
        "anharmonicity": (_NUM, 0.272e9),
        "mi_interval_samples": (list, [2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 4096]),
        "n_perm": (int, 100),
        "tau_min": (_NUM, None),
        "tau_max": (_NUM, None),
        "taus_per_decade": (int, 10),
    },
    "adev": {
        "process": (str, "telegraph"),
        "gamma0": (_NUM, 1.0),
        "gamma1": (_NUM, 1.0),
        "gamma": (_NUM, 2.0),
        "sigma": (_NUM, 0.5),
        "duration": (_NUM, 1000.0),
        "dt": (_NUM, 0.01),
        "n_realizations": (int, 2),
    },
    "microwave": {
        "amplitude_re": (_NUM, 3.0),
        "amplitude_im": (_NUM, 0.0),
        "noise_var": (_NUM, 0.5),
    },
}
TOP_LEVEL = {"name": str, "kind": str, "seed": int, "description": str}
REQUIRED = ("name", "kind", "seed")


def _check_type(where, value, typ):
    if typ is _NUM:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, typ)
    if not ok:
        raise ConfigError(f"{where}: expected {getattr(typ, '__name__', 'number')}, got {value!r}")


def _fill(section, raw, where):
    schema = SCHEMA[section]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    out = {}
    for key, (typ, default) in schema.items():
        if key in raw and not (raw[key] is None and default is None):
            _check_type(f"{where}.{key}", raw[key], typ)
            out[key] = raw[key]
        else:
            out[key] = copy.deepcopy(default)
    return out


@dataclass
class Scenario:
    name: str
    kind: str
    seed: int
    vibration: dict
    qubits: list
    readout: dict
    schedule: dict
    analysis: dict
    adev: dict
    microwave: dict
    description: str = ""

    # --- construction ---
    def vibration_spec(self) -> VibrationSpec:
        v = self.vibration
        return VibrationSpec(
            period=float(v["period"]), harmonic_amps=tuple(v["harmonic_amps"]),
            harmonic_phases=tuple(v["harmonic_phases"]),
            shock_time_in_period=float(v["shock_time_in_period"]),
            shock_template=ShockTemplate(v["shock_amplitude"], v["shock_ring_freq"], v["shock_damping"]),
            noise_floor=float(v["noise_floor"]))

    def profiles(self) -> list:
        return [RateProfile(q["baseline_gamma_eff"], q["baseline_n_eff"],
                            tuple(q["spike_times_in_period"]), q["n_eff_boost"],
                            q["gamma_eff_boost"], q["spike_decay"], q["ef_gamma_eff"],
                            q["ef_n_eff"]) for q in self.qubits]

    def readout_model(self) -> ReadoutModel:
        r = self.readout
        return ReadoutModel.from_separation(r["separation_ratio"], r["sigma"], r["angle"],
                                            flip_down_prob=r["flip_down_prob"],
                                            flip_up_prob=r["flip_up_prob"])

    def process_params(self):
        a = self.adev
        if a["process"] == "telegraph":
            return TelegraphParams(a["gamma0"], a["gamma1"])
        if a["process"] == "poisson_reset":
            return PoissonResetParams(a["gamma"], a["sigma"])
        raise ConfigError(f"adev.process must be 'telegraph' or 'poisson_reset', got {a['process']!r}")

    @property
    def shot_interval(self) -> float:
        from .qubitsim import SHOT_INTERVALS

        iv = self.schedule["interval"]
        return float(iv) if iv is not None else SHOT_INTERVALS[self.schedule["mode"]]

    def with_overrides(self, **sections) -> Scenario:
        """Copy with selected section keys replaced (validated like the file)."""
        new = copy.deepcopy(self)
        for sec, vals in sections.items():
            if sec not in SCHEMA or sec == "qubit":
                raise ConfigError(f"cannot override section {sec!r}")
            merged = {**getattr(new, sec), **vals}
            setattr(new, sec, _fill(sec, merged, sec))
        return new

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "seed": self.seed,
                "description": self.description, "vibration": self.vibration,
                "qubits": self.qubits, "readout": self.readout, "schedule": self.schedule,
                "analysis": self.analysis, "adev": self.adev, "microwave": self.microwave}


def parse_scenario(raw: dict) -> Scenario:
    sections = set(SCHEMA) - {"qubit"} | {"qubits"}
    unknown = sorted(set(raw) - set(TOP_LEVEL) - sections)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required key '{key}'")
    for key, typ in TOP_LEVEL.items():
        if key in raw:
            _check_type(key, raw[key], typ)
    if raw["kind"] not in KINDS:
        raise ConfigError(f"kind must be one of {list(KINDS)}, got {raw['kind']!r}")
    qubits = raw.get("qubits", [{}])
    if not isinstance(qubits, list) or not all(isinstance(q, dict) for q in qubits):
        raise ConfigError("qubits must be an array of tables")
    sc = Scenario(
        name=raw["name"], kind=raw["kind"], seed=raw["seed"],
        vibration=_fill("vibration", raw.get("vibration", {}), "vibration"),
        qubits=[_fill("qubit", q, f"qubits[{i}]") for i, q in enumerate(qubits)],
        readout=_fill("readout", raw.get("readout", {}), "readout"),
        schedule=_fill("schedule", raw.get("schedule", {}), "schedule"),
        analysis=_fill("analysis", raw.get("analysis", {}), "analysis"),
        adev=_fill("adev", raw.get("adev", {}), "adev"),
        microwave=_fill("microwave", raw.get("microwave", {}), "microwave"),
        description=raw.get("description", ""),
    )
    if sc.schedule["mode"] not in ("sparse", "continuous"):
        raise ConfigError("schedule.mode must be 'sparse' or 'continuous'")
    if sc.analysis["n_components"] not in (2, 3):
        raise ConfigError("analysis.n_components must be 2 or 3")
    try:
        sc.vibration_spec()
        sc.profiles()
        sc.readout_model()
        if sc.kind == "adev":
            sc.process_params()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return sc


def builtin_scenarios() -> list[str]:
    root = resources.files("mechqubit") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_scenario(source) -> Scenario:
    """Load a scenario from a TOML path or a built-in name such as ``fig3``."""
    path = Path(source)
    if path.suffix != ".toml" and not path.exists():
        res = resources.files("mechqubit") / "scenarios" / f"{source}.toml"
        if not res.is_file():
            raise ConfigError(f"no scenario {source!r}; built-ins: {builtin_scenarios()}")
        text = res.read_text()
    else:
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return parse_scenario(raw)
