import csv
import json
import subprocess
import sys

import pytest

from regulab.cli import main
from regulab.scenarios import resolve


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_synth_linear_regulator(capsys, tmp_path):
    code, out, _ = run(capsys, "--out", str(tmp_path), "synth", "linear_regulator")
    assert code == 0
    assert "+0.000000+1.000000i" in out and "+0.000000-1.000000i" in out
    assert "non-resonance certificate" in out
    design = json.loads((tmp_path / "regulator.json").read_text())
    assert len(design["design"]["phi"]) == 2


def test_synth_names_failed_condition(capsys):
    code, _, err = run(capsys, "synth", "zero_input")
    assert code == 2 and "stabilizability" in err


def test_malformed_json_is_config_error(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"plant": ', encoding="utf-8")
    code, _, err = run(capsys, "synth", str(bad))
    assert code == 1 and "malformed JSON" in err and str(bad) in err


def test_missing_scenario_is_config_error(capsys, tmp_path):
    code, _, err = run(capsys, "synth", str(tmp_path / "nope.json"))
    assert code == 1 and err.startswith("error:")


def test_simulate_harmonic_spectrum(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", "harmonic_rejection", "--out", str(tmp_path))
    assert code == 0 and "stable=True" in out
    rows = read_csv(tmp_path / "spectrum.csv")
    assert list(rows[0]) == ["k", "component", "re", "im", "abs"]
    low = [float(r["abs"]) for r in rows if r["k"] in ("0", "1")]
    assert len(low) == 2 and max(low) <= 1e-3
    traj = (tmp_path / "trajectories" / "ic1.csv").read_text().splitlines()
    assert traj[0] == "t," + ",".join(f"z{i}" for i in range(1, 8))  # w, x, eta, observer
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["nominal"]["stable"] is True


def test_simulate_zero_horizon(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", "linear_regulator", "--horizon", "0",
                       "--out", str(tmp_path))
    assert code == 1 and "horizon" in err


def test_simulate_zero_error(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", "zero_error", "--out", str(tmp_path))
    assert code == 0
    props = json.loads((tmp_path / "report.json").read_text())["nominal"]["properties"]
    assert props[0]["metric"] == 0.0 and props[0]["holds"]


def test_simulate_divergence_is_recorded(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", "open_loop_unstable", "--out", str(tmp_path))
    assert code == 0 and "stable=False" in out
    assert json.loads((tmp_path / "report.json").read_text())["nominal"]["stable"] is False


def test_sweep_rejects_zero_samples(capsys, tmp_path):
    code, _, _ = run(capsys, "sweep", "matrix_sweep", "--samples", "0", "--out", str(tmp_path))
    assert code == 1


def test_sweep_is_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        code, _, _ = run(capsys, "sweep", "matrix_sweep", "--samples", "2", "--seed", "9",
                         "--out", str(d))
        assert code == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    raw = (a / "samples.csv").read_bytes()
    assert raw == (b / "samples.csv").read_bytes()
    assert raw.count(b"\r\n") == 3  # header plus two records, RFC 4180 line endings
    rows = read_csv(a / "samples.csv")
    assert [r["sample"] for r in rows] == ["0", "1"] and rows[0]["seed"] == "9"


def test_counterexample_rejects_zero_N(capsys, tmp_path):
    code, _, _ = run(capsys, "counterexample", "--N", "0", "--out", str(tmp_path))
    assert code == 1


def test_counterexample_fixed_seed(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        code, _, _ = run(capsys, "counterexample", "--samples", "2", "--seed", "3",
                         "--out", str(d))
        assert code == 0
    assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()
    header = read_csv(a / "samples.csv")[0].keys()
    assert {"phi_norm", "sup_e", "abs_c0", "abs_c1", "higher_harmonic_energy"} <= set(header)


def test_counterexample_defaults(capsys, tmp_path):
    code, _, _ = run(capsys, "counterexample", "--out", str(tmp_path))
    assert code == 0
    rows = read_csv(tmp_path / "samples.csv")
    assert len(rows) == 20
    for r in rows:
        scale = 1 + float(r["sup_e"])
        assert float(r["abs_c1"]) <= 1e-3 * scale
    assert any(float(r["sup_e"]) >= 1e-2 for r in rows)


def test_print_system(capsys):
    code, out, _ = run(capsys, "print-system", "linear_regulator")
    assert code == 0 and "dw1/dt = w2" in out and "dx1/dt" in out


def test_usage_errors(capsys):
    assert run(capsys)[0] == 1
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys, "sweep", "matrix_sweep", "--jobs", "0")[0] == 1
    assert run(capsys, "--seed", "-1", "synth", "linear_regulator")[0] == 1


@pytest.mark.parametrize("argv", [["--version"], ["synth", str(resolve("linear_regulator"))]])
def test_module_entry_point(argv):
    proc = subprocess.run([sys.executable, "-m", "regulab", *argv], capture_output=True,
                          text=True, timeout=120)
    assert proc.returncode == 0 and proc.stdout
