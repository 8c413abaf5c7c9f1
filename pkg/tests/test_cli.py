import json

import numpy as np
import pytest

from mechqubit import cli
from mechqubit.config import builtin_scenarios, load_scenario, parse_scenario
from mechqubit.errors import ConfigError

THERMO = """
name = "thermo_small"
kind = "thermometry"
seed = 11

[[qubits]]
baseline_gamma_eff = 5000.0
baseline_n_eff = 0.0125
ef_gamma_eff = 5000.0
ef_n_eff = 0.0015

[schedule]
mode = "sparse"
interval = 1e-3
n_traces = 1
trace_duration = 40.0

[analysis]
n_components = 3
"""

SPARSE = """
name = "sparse_small"
kind = "sparse"
seed = 5

[[qubits]]
spike_times_in_period = [0.1]
n_eff_boost = 100.0

[[qubits]]
spike_times_in_period = [0.1]
n_eff_boost = 100.0

[schedule]
mode = "sparse"
interval = 1e-3
n_traces = 2
trace_duration = 3.0
"""

MONITOR = """
name = "monitor_small"
kind = "monitoring"
seed = 9

[[qubits]]
baseline_gamma_eff = 300.0
baseline_n_eff = 0.02
spike_times_in_period = [0.3]
n_eff_boost = 30.0
spike_decay = 50.0

[[qubits]]
baseline_gamma_eff = 300.0
baseline_n_eff = 0.02
spike_times_in_period = [0.3]
n_eff_boost = 30.0
spike_decay = 50.0

[schedule]
mode = "continuous"
interval = 1e-4
n_traces = 2
trace_duration = 35.7

[analysis]
mi_interval_samples = [2, 8, 32, 128]
"""


def _scenario(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _simulate(tmp_path, text, out="data"):
    code = cli.main(["simulate", "--scenario", str(_scenario(tmp_path, text)),
                     "--out", str(tmp_path / out)])
    assert code == 0
    return tmp_path / out


# --- configuration -----------------------------------------------------------

def test_builtin_scenarios_load():
    names = builtin_scenarios()
    assert {"fig2", "fig3", "fig4_5", "fig6", "adev_fig12"} <= set(names)
    for n in names:
        assert load_scenario(n).name == n


def test_missing_seed_is_config_error(tmp_path, capsys):
    p = _scenario(tmp_path, 'name = "x"\nkind = "sparse"\n')
    assert cli.main(["simulate", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "seed" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path):
    p = _scenario(tmp_path, SPARSE + "\n[readout]\nsepration_ratio = 5.0\n")
    assert cli.main(["simulate", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(ConfigError, match="sepration_ratio"):
        load_scenario(p)


def test_wrong_type_and_kind_rejected():
    with pytest.raises(ConfigError):
        parse_scenario({"name": "x", "kind": "sparse", "seed": 1.5})
    with pytest.raises(ConfigError):
        parse_scenario({"name": "x", "kind": "unknown", "seed": 1})
    with pytest.raises(ConfigError):
        parse_scenario({"name": "x", "kind": "sparse", "seed": 1, "schedule": {"n_traces": "2"}})


def test_overrides_are_validated():
    sc = load_scenario("fig3")
    small = sc.with_overrides(schedule={"n_traces": 1})
    assert small.schedule["n_traces"] == 1 and sc.schedule["n_traces"] == 10
    with pytest.raises(ConfigError):
        sc.with_overrides(schedule={"bogus": 1})


def test_unknown_pipeline_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["analyze", str(tmp_path), "--pipeline", "nope", "--out", str(tmp_path / "o")])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    for name in cli.PIPELINES:
        assert name in err


def test_unknown_builtin_name(tmp_path):
    assert cli.main(["simulate", "--scenario", "no_such", "--out", str(tmp_path / "o")]) == 2


# --- datasets ----------------------------------------------------------------

def _data_files(root):
    manifest = json.loads((root / cli.MANIFEST).read_text())
    return manifest["files"]


def test_simulate_is_deterministic(tmp_path):
    a = _simulate(tmp_path, SPARSE, "a")
    b = _simulate(tmp_path, SPARSE, "b")
    fa, fb = _data_files(a), _data_files(b)
    assert fa == fb
    assert "shots.csv" in fa and "reference.f64" in fa
    assert any(f.startswith("vibration/") for f in fa)
    assert (a / cli.MANIFEST).read_bytes() == (b / cli.MANIFEST).read_bytes()


def test_tampered_file_is_data_error(tmp_path, capsys):
    root = _simulate(tmp_path, SPARSE)
    with open(root / "shots.csv", "a") as fh:
        fh.write("0,0,0,0,0\n")
    code = cli.main(["fold", str(root), "--out", str(tmp_path / "res")])
    assert code == 3
    assert "shots.csv" in capsys.readouterr().err


def test_missing_dataset_is_data_error(tmp_path):
    assert cli.main(["fold", str(tmp_path / "absent"), "--out", str(tmp_path / "res")]) == 3


def test_thermometry_pipeline_against_truth(tmp_path):
    root = _simulate(tmp_path, THERMO)
    out = tmp_path / "res"
    assert cli.main(["analyze", str(root), "--pipeline", "thermometry", "--out", str(out)]) == 0
    rep = json.loads((out / "thermometry.json").read_text())
    truth = json.loads((root / "truth" / "truth.json").read_text())["stationary_populations"]
    pops = [rep["populations"][k] for k in ("G", "E", "F")]
    np.testing.assert_allclose(pops, truth, rtol=0.15, atol=5e-4)
    assert "T_eff(G-E)" in (out / "summary_thermometry.txt").read_text()


def test_sparse_report_writes_fold_and_mi(tmp_path):
    root = _simulate(tmp_path, SPARSE)
    out = tmp_path / "res"
    assert cli.main(["report", str(root), "--out", str(out)]) == 0
    for f in ("folded_q0.csv", "folded_q1.csv", "joint.json", "mi_time_resolved.csv",
              "alignment.json", "report.txt"):
        assert (out / f).is_file()


def test_jumps_pipeline_writes_rates(tmp_path):
    root = _simulate(tmp_path, MONITOR)
    out = tmp_path / "res"
    assert cli.main(["jumps", str(root), "--out", str(out)]) == 0
    head = (out / "rates_q0.csv").read_text().splitlines()[0]
    assert "n_eff" in head
    assert (out / "dwells_q1.csv").is_file()
    assert cli.main(["mi", str(root), "--out", str(out)]) == 0
    assert (out / "mi_vs_interval.csv").is_file()


def test_jumps_pipeline_rejects_sparse_data(tmp_path):
    root = _simulate(tmp_path, SPARSE)
    assert cli.main(["jumps", str(root), "--out", str(tmp_path / "res")]) == 3


def test_adev_pipeline(tmp_path):
    text = ('name = "adev_small"\nkind = "adev"\nseed = 2\n'
            '[adev]\nduration = 2000.0\ndt = 0.01\nn_realizations = 2\n')
    root = _simulate(tmp_path, text)
    out = tmp_path / "res"
    assert cli.main(["adev", str(root), "--out", str(out)]) == 0
    assert (out / "adev.csv").is_file()


def test_microwave_pipeline(tmp_path):
    text = ('name = "mw_small"\nkind = "microwave"\nseed = 4\n'
            '[schedule]\nn_traces = 2\ntrace_duration = 5.0\n[analysis]\nbin_width = 0.102\n')
    root = _simulate(tmp_path, text)
    out = tmp_path / "res"
    assert cli.main(["microwave", str(root), "--out", str(out)]) == 0
    assert (out / "transmission.csv").is_file() and (out / "background.csv").is_file()


def test_calibrate_and_align_commands(tmp_path):
    root = _simulate(tmp_path, SPARSE)
    cal = tmp_path / "cal.json"
    assert cli.main(["calibrate", str(root / "shots.csv"), "--qubit", "1", "--out", str(cal)]) == 0
    assert len(json.loads(cal.read_text())["weights"]) == 2
    al = tmp_path / "al.json"
    traces = sorted(str(p) for p in (root / "vibration").glob("*.f64"))
    assert cli.main(["align", *traces, "--reference", str(root / "reference.f64"),
                     "--out", str(al)]) == 0
    assert len(json.loads(al.read_text())) == len(traces)
    assert cli.main(["calibrate", str(root / "shots.csv"), "--qubit", "7", "--out", str(cal)]) == 3


def test_threads_flag_validated(tmp_path):
    p = _scenario(tmp_path, SPARSE)
    assert cli.main(["--threads", "0", "simulate", "--scenario", str(p),
                     "--out", str(tmp_path / "o")]) == 2
