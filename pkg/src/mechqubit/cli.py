"""Command-line interface: ``mechqubit <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 fit failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import correlate, jumps, pipelines, processes, readout, sync
from .config import Scenario, load_scenario
from .errors import (
    ConfigError,
    DataError,
    FitFailureError,
    InsufficientDataError,
    InvalidInputError,
    InvalidParameterError,
    MechQubitError,
)
from .io import atomic_write_bytes, atomic_write_text, sha256_file, write_csv_columns
from .qubitsim import ShotTrace, VibrationTrace, read_shots_csv, write_shots_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_FIT = 0, 2, 3, 4
PIPELINES = ("thermometry", "fold", "jumps", "mi", "adev", "microwave")
MANIFEST = "manifest.json"


# --- dataset files -----------------------------------------------------------

def _dump_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_vibration(base: Path, trace: VibrationTrace) -> list[Path]:
    atomic_write_bytes(base.with_suffix(".f64"), trace.to_bytes())
    _dump_json(base.with_suffix(".json"), trace.header())
    return [base.with_suffix(".f64"), base.with_suffix(".json")]


def read_vibration(path) -> VibrationTrace:
    base = Path(path).with_suffix("")
    try:
        header = json.loads(base.with_suffix(".json").read_text())
        data = base.with_suffix(".f64").read_bytes()
        return VibrationTrace.from_bytes(header, data)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read vibration trace {base}: {exc}") from exc


def write_continuous_shots(base: Path, shots: ShotTrace) -> list[Path]:
    """Raw IQ of evenly spaced shots: little-endian complex128, one row per qubit."""
    atomic_write_bytes(base.with_suffix(".iq"), shots.iq.astype("<c16").tobytes())
    header = {"trace_id": shots.trace_id, "t0": float(shots.shot_times[0]),
              "dt": float(shots.shot_times[1] - shots.shot_times[0]) if shots.n_shots > 1 else 0.0,
              "n": shots.n_shots, "qubits": list(shots.qubit_ids)}
    _dump_json(base.with_suffix(".json"), header)
    return [base.with_suffix(".iq"), base.with_suffix(".json")]


def read_continuous_shots(path) -> ShotTrace:
    base = Path(path).with_suffix("")
    try:
        h = json.loads(base.with_suffix(".json").read_text())
        iq = np.frombuffer(base.with_suffix(".iq").read_bytes(), dtype="<c16")
        iq = iq.reshape(len(h["qubits"]), h["n"]).astype(complex)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read shots {base}: {exc}") from exc
    return ShotTrace(h["t0"] + h["dt"] * np.arange(h["n"]), iq, tuple(h["qubits"]),
                     trace_id=h["trace_id"])


def write_path_csv(path, sp) -> None:
    e = sp.edges
    write_csv_columns(path, {"t_start": e[:-1], "t_end": e[1:], "state": sp.states})


def _profile_truth(sc: Scenario) -> dict:
    out = {"vibration_period": sc.vibration["period"],
           "profiles": [dataclasses.asdict(p) for p in sc.profiles()]}
    if sc.kind == "thermometry":
        prof = sc.profiles()[0]
        exc = np.atleast_1d(prof.stationary_excited(np.array([0.0]), sc.vibration["period"])).ravel()
        out["stationary_populations"] = [float(1 - exc.sum()), *map(float, exc)]
    if sc.kind == "adev":
        lor = sc.process_params().lorentzian()
        out["lorentzian"] = {"A": lor.amplitude_A, "alpha": lor.alpha}
    return out


def simulate_dataset(sc: Scenario, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    spec = sc.vibration_spec()
    fs = sc.vibration["sample_rate"]
    sched = sc.schedule
    if sc.kind == "adev":
        params = sc.process_params()
        sim = (processes.simulate_telegraph if sc.adev["process"] == "telegraph"
               else processes.simulate_poisson_reset)
        dt = sc.adev["dt"]
        for k in range(sc.adev["n_realizations"]):
            series = sim(params, sc.adev["duration"], sc.seed + k).bin_average(dt)
            base = out / "series" / f"real_{k:03d}"
            files += write_vibration(base, VibrationTrace(1.0 / dt, 0.0, series))
    elif sc.kind == "microwave":
        m = sc.microwave
        pulses, vibs, ref = pipelines.simulate_microwave(
            spec, sched["n_traces"], sched["trace_duration"], sc.shot_interval,
            complex(m["amplitude_re"], m["amplitude_im"]), sc.seed, fs, m["noise_var"])
        for k, v in enumerate(vibs):
            files += write_vibration(out / "vibration" / f"trace_{k:03d}", v)
        files += write_vibration(out / "reference", ref)
        write_shots_csv(out / "shots.csv", pulses)
        files.append(out / "shots.csv")
    else:
        raws = pipelines.iter_traces(sc.profiles(), spec, sched["n_traces"], sched["trace_duration"],
                                     sc.shot_interval, sc.readout_model(), sc.seed, fs)
        sparse = []
        for raw in raws:
            k = raw.trace_id
            files += write_vibration(out / "vibration" / f"trace_{k:03d}", raw.vibration)
            for q, p in enumerate(raw.paths):
                fp = out / "truth" / f"path_t{k:03d}_q{q}.csv"
                write_path_csv(fp, p)
                files.append(fp)
            if sched["mode"] == "continuous":
                files += write_continuous_shots(out / "shots" / f"trace_{k:03d}", raw.shots)
            else:
                sparse.append(raw.shots)
        files += write_vibration(out / "reference", pipelines.reference_period(spec, fs))
        if sparse:
            write_shots_csv(out / "shots.csv", sparse)
            files.append(out / "shots.csv")
    truth = out / "truth" / "truth.json"
    truth.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(truth, _profile_truth(sc))
    files.append(truth)
    manifest = {"scenario": sc.to_dict(),
                "files": {str(f.relative_to(out)): sha256_file(f) for f in sorted(set(files))}}
    _dump_json(out / MANIFEST, manifest)
    return out / MANIFEST


@dataclasses.dataclass
class Dataset:
    root: Path
    scenario: Scenario
    files: dict

    def vibrations(self) -> list[VibrationTrace]:
        names = sorted(f for f in self.files if f.startswith("vibration/") and f.endswith(".f64"))
        return [read_vibration(self.root / f) for f in names]

    def reference(self) -> VibrationTrace:
        return read_vibration(self.root / "reference.f64")

    def shots(self) -> list[ShotTrace]:
        if "shots.csv" in self.files:
            return read_shots_csv(self.root / "shots.csv")
        names = sorted(f for f in self.files if f.startswith("shots/") and f.endswith(".iq"))
        return [read_continuous_shots(self.root / f) for f in names]

    def truth(self) -> dict:
        return json.loads((self.root / "truth" / "truth.json").read_text())


def open_dataset(root) -> Dataset:
    """Read the manifest and verify every listed file's hash."""
    from .config import parse_scenario

    root = Path(root)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {root / MANIFEST}: {exc}") from exc
    for rel, digest in manifest.get("files", {}).items():
        f = root / rel
        if not f.is_file():
            raise DataError(f"manifest lists missing file {rel}")
        if sha256_file(f) != digest:
            raise DataError(f"hash mismatch for {rel}: file was modified")
    raw = dict(manifest["scenario"])
    return Dataset(root, parse_scenario(raw), manifest["files"])


# --- analysis pipelines ------------------------------------------------------

def _alignments(ds: Dataset):
    ref = ds.reference()
    al = [sync.align_to_reference(v, ref) for v in ds.vibrations()]
    return al


def _write_alignments(path, al) -> None:
    _dump_json(path, [dataclasses.asdict(a) for a in al])


def _labelled_shots(ds: Dataset):
    sc = ds.scenario
    traces = ds.shots()
    hint = sc.readout_model().mean_iq[0]
    if sc.schedule["mode"] == "continuous":
        nq = traces[0].iq.shape[0]
        cals = tuple(readout.calibrate(traces[0].iq[q][:300_000], n_components=2, ground_hint=hint)
                     for q in range(nq))
        w = sc.analysis["ma_window"]
        lab = [t.with_labels(np.vstack([pipelines.classify_continuous(t.iq[q], cals[q], w)
                                        for q in range(nq)])) for t in traces]
        return lab, cals
    return pipelines.label_traces(traces, sc.analysis["n_components"], hint)


def run_thermometry(ds: Dataset, out: Path) -> list[str]:
    sc = ds.scenario
    iq = np.concatenate([t.iq[0] for t in ds.shots()])
    cal = readout.calibrate(iq, n_components=sc.analysis["n_components"],
                            ground_hint=sc.readout_model().mean_iq[0])
    readout.write_calibration_json(out / "calibration.json", cal)
    rep = pipelines.thermometry(cal, sc.analysis["f_ge"], sc.analysis["anharmonicity"])
    _dump_json(out / "thermometry.json", dataclasses.asdict(rep))
    lines = [f"populations: {', '.join(f'{k}={v:.5f}' for k, v in rep.populations.items())}",
             f"T_eff(G-E) = {rep.t_eff_ge * 1e3:.2f} mK"]
    if rep.t_eff_ef is not None:
        lines.append(f"T_eff(E-F) = {rep.t_eff_ef * 1e3:.2f} mK")
    truth = ds.truth().get("stationary_populations")
    if truth:
        lines.append("ground truth: " + ", ".join(f"{v:.5f}" for v in truth))
    return lines


def run_fold(ds: Dataset, out: Path) -> list[str]:
    sc = ds.scenario
    shots, _ = _labelled_shots(ds)
    al = _alignments(ds)
    _write_alignments(out / "alignment.json", al)
    lines = [f"aligned {len(al)} traces; min peak correlation {min(a.peak_correlation for a in al):.3f}"]
    for q in shots[0].qubit_ids:
        fs = sync.fold_shots(shots, al, sc.analysis["bin_width"], sc.analysis["smoothing_window"], qubit=q)
        sync.write_folded_csv(out / f"folded_q{q}.csv", fs)
        k = int(np.nanargmax(fs.values))
        lines.append(f"qubit {q}: max P_E {fs.values[k]:.4g} at phase {fs.phase_bins[k]:.4f} s, "
                     f"median {np.nanmedian(fs.values):.4g}")
    return lines


def run_jumps(ds: Dataset, out: Path) -> list[str]:
    sc = ds.scenario
    if sc.schedule["mode"] != "continuous":
        raise InvalidInputError("the jumps pipeline needs continuous monitoring data")
    shots, _ = _labelled_shots(ds)
    al = _alignments(ds)
    lines = []
    for qi, q in enumerate(shots[0].qubit_ids):
        tables = [jumps.extract_dwells(t.labels[qi], t.shot_times[1] - t.shot_times[0],
                                       trace_id=t.trace_id, t0=t.shot_times[0]) for t in shots]
        ev = jumps.DwellTable.concat(tables)
        jumps.write_dwells_csv(out / f"dwells_q{q}.csv", ev)
        dt = shots[0].shot_times[1] - shots[0].shot_times[0]
        est = jumps.time_resolved_rates(ev, {t.trace_id: a for t, a in zip(shots, al)}, dt=dt)
        if not est:
            raise FitFailureError("no phase step had enough dwells")
        jumps.write_rates_csv(out / f"rates_q{q}.csv", est)
        lines.append(f"qubit {q}: {len(ev)} dwells, {len(est)} phase steps")
        spikes = sc.qubits[qi]["spike_times_in_period"]
        if spikes:
            c = pipelines.spike_contrast(est, spikes[0], sc.vibration["period"])
            lines.append(f"  n_eff contrast {c.n_eff_contrast:.1f}x, gamma_eff contrast "
                         f"{c.gamma_eff_contrast:.2f}x, spike located: {c.phase_ok}")
    return lines


def run_mi(ds: Dataset, out: Path) -> list[str]:
    sc = ds.scenario
    shots, _ = _labelled_shots(ds)
    if shots[0].iq.shape[0] < 2:
        raise InvalidInputError("the mi pipeline needs two qubits")
    a = np.concatenate([t.labels[0] for t in shots])
    b = np.concatenate([t.labels[1] for t in shots])
    joint = correlate.joint_from_shots(a, b)
    mi = correlate.mutual_information(joint)
    null = correlate.permutation_null(a, b, n_perm=sc.analysis["n_perm"], seed=sc.seed)
    correlate.write_joint_json(out / "joint.json", joint)
    lines = [f"pooled MI {mi:.4g} bit; permutation 99th percentile {null:.4g} bit"]
    al = _alignments(ds)
    tr = correlate.time_resolved_mi([t.select(0) for t in shots], [t.select(1) for t in shots],
                                    al, sc.analysis["bin_width"])
    sync.write_folded_csv(out / "mi_time_resolved.csv", tr)
    if sc.schedule["mode"] == "continuous":
        dt = sc.shot_interval
        ks = [k for k in sc.analysis["mi_interval_samples"] if k * dt <= shots[0].n_shots * dt]
        curve = correlate.mi_vs_interval([t.labels[0] for t in shots], [t.labels[1] for t in shots],
                                         np.asarray(ks) * dt, dt)
        correlate.write_mi_curve_csv(out / "mi_vs_interval.csv", curve)
        lines.append(f"MI vs interval peaks at {curve.argmax * 1e3:.4g} ms "
                     f"(interior maximum: {curve.has_interior_maximum()})")
    return lines


def run_adev(ds: Dataset, out: Path) -> list[str]:
    sc = ds.scenario
    names = sorted(f for f in ds.files if f.startswith("series/") and f.endswith(".f64"))
    series = [read_vibration(ds.root / f) for f in names]
    if not series:
        raise InvalidInputError("dataset has no series")
    dt = series[0].dt
    dur = min(s.duration for s in series)
    lo = sc.analysis["tau_min"] or 5 * dt
    hi = sc.analysis["tau_max"] or dur / 20
    taus = processes.log_tau_grid(dt, lo, hi, sc.analysis["taus_per_decade"])
    curve = processes.mean_adev_curve([processes.empirical_adev(s.samples, dt, taus) for s in series])
    processes.write_adev_csv(out / "adev.csv", curve)
    lor = sc.process_params().lorentzian()
    ref = processes.analytic_adev(lor, curve.taus)
    rel = np.max(np.abs(curve.sigmas / ref - 1))
    lines = [f"{len(series)} realizations, {curve.taus.size} taus; max relative deviation from "
             f"analytic ADEV (A={lor.amplitude_A:.4g}, alpha={lor.alpha:.4g}) {rel:.3f}"]
    return lines


def run_microwave(ds: Dataset, out: Path) -> list[str]:
    sc = ds.scenario
    pulses = ds.shots()
    al = _alignments(ds)
    trans, back = sync.time_resolved_microwave_stats(pulses, al, sc.analysis["bin_width"])
    write_csv_columns(out / "transmission.csv", {"phase_s": trans.phase_bins, "value": trans.values,
                                                 "stderr": trans.stderr, "count": trans.counts})
    write_csv_columns(out / "background.csv", {"phase_s": back.phase_bins, "value": back.values,
                                               "stderr": back.stderr, "count": back.counts})
    zt = np.nanmax(np.abs(trans.values - 1) / trans.stderr)
    zb = np.nanmax(np.abs(back.values - 0.5) / back.stderr)
    return [f"{trans.values.size} bins; max |transmission - 1| = {zt:.2f} sigma, "
            f"max |background - 0.5| = {zb:.2f} sigma"]


RUNNERS = {"thermometry": run_thermometry, "fold": run_fold, "jumps": run_jumps, "mi": run_mi,
           "adev": run_adev, "microwave": run_microwave}
DEFAULT_PIPELINES = {"thermometry": ("thermometry",), "sparse": ("fold", "mi"),
                     "monitoring": ("fold", "jumps", "mi"), "microwave": ("microwave",),
                     "adev": ("adev",)}


def analyze(dataset, pipeline: str, out) -> list[str]:
    ds = open_dataset(dataset)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"[{pipeline}] scenario {ds.scenario.name}"] + RUNNERS[pipeline](ds, out)
    atomic_write_text(out / f"summary_{pipeline}.txt", "\n".join(lines) + "\n")
    return lines


# --- argument parsing --------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mechqubit", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a scenario into a dataset directory")
    s.add_argument("--scenario", required=True, help="TOML file or built-in name")
    s.add_argument("--out", required=True)

    a = sub.add_parser("analyze", help="run an analysis pipeline on a dataset")
    a.add_argument("dataset")
    a.add_argument("--pipeline", required=True, choices=PIPELINES)
    a.add_argument("--out", required=True)

    for name in ("fold", "jumps", "mi", "adev", "microwave"):
        c = sub.add_parser(name, help=f"shorthand for analyze --pipeline {name}")
        c.add_argument("dataset")
        c.add_argument("--out", required=True)

    r = sub.add_parser("report", help="run every pipeline that applies to a dataset")
    r.add_argument("dataset")
    r.add_argument("--out", required=True)

    c = sub.add_parser("calibrate", help="fit readout calibration to a shots CSV")
    c.add_argument("shots")
    c.add_argument("--components", type=int, choices=(2, 3), default=2)
    c.add_argument("--qubit", type=int, default=None)
    c.add_argument("--out", required=True)

    al = sub.add_parser("align", help="align vibration traces to a one-period reference")
    al.add_argument("traces", nargs="+", help=".f64 files with JSON sidecars")
    al.add_argument("--reference", required=True)
    al.add_argument("--out", required=True)
    return p


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:  # pragma: no cover
        pass


def _run(args) -> list[str]:
    _set_threads(args.threads)
    cmd = args.command
    if cmd == "simulate":
        sc = load_scenario(args.scenario)
        path = simulate_dataset(sc, Path(args.out))
        return [f"wrote dataset for scenario {sc.name} ({sc.kind}); manifest {path}"]
    if cmd == "analyze":
        return analyze(args.dataset, args.pipeline, args.out)
    if cmd in ("fold", "jumps", "mi", "adev", "microwave"):
        return analyze(args.dataset, cmd, args.out)
    if cmd == "report":
        ds = open_dataset(args.dataset)
        lines = []
        for name in DEFAULT_PIPELINES[ds.scenario.kind]:
            lines += analyze(args.dataset, name, args.out)
        atomic_write_text(Path(args.out) / "report.txt", "\n".join(lines) + "\n")
        return lines
    if cmd == "calibrate":
        traces = read_shots_csv(args.shots)
        if not traces:
            raise DataError("shots file is empty")
        q = traces[0].qubit_ids[0] if args.qubit is None else args.qubit
        try:
            iq = np.concatenate([t.iq[t.index(q)] for t in traces])
        except ValueError as exc:
            raise DataError(f"qubit {q} not present") from exc
        cal = readout.calibrate(iq, n_components=args.components)
        readout.write_calibration_json(args.out, cal)
        return [f"calibrated {iq.size} shots; weights {np.round(cal.weights, 6).tolist()}"]
    if cmd == "align":
        ref = read_vibration(args.reference)
        al = [sync.align_to_reference(read_vibration(t), ref) for t in args.traces]
        _write_alignments(args.out, al)
        return [f"{t}: lag {a.lag:.6f} s, peak {a.peak_correlation:.3f}"
                + (" (low confidence)" if a.low_confidence else "") for t, a in zip(args.traces, al)]
    raise ConfigError(f"unknown command {cmd}")  # pragma: no cover


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        lines = _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitFailureError as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (DataError, InvalidInputError, InsufficientDataError, InvalidParameterError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MechQubitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for line in lines:
        print(line)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
