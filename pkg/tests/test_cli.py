import json

import numpy as np
import pytest

from nucspin import checks
from nucspin.cli import run
from nucspin.sequences import SignalTrace

SYSTEM = {
    "field_gauss": 81.0,
    "subspace": [0.5, 1.5],
    "nuclei": [
        {"species": "29Si", "a_par_khz": -23.5, "a_perp_khz": 12.0},
        {"species": "29Si", "a_par_khz": 0.2, "a_perp_khz": 8.5},
    ],
}


@pytest.fixture
def system_file(tmp_path):
    path = tmp_path / "system.json"
    path.write_text(json.dumps(SYSTEM, indent=2))
    return str(path)


def invoke(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def invoke_json(capsys, *argv):
    code, out, err = invoke(capsys, *argv)
    assert code == 0, err
    assert err == ""
    return json.loads(out)


# -- happy paths ---------------------------------------------------------------


def test_resonance(capsys, system_file):
    payload = invoke_json(capsys, "resonance", "--system", system_file, "--spin", 0, "--k", 1)
    assert payload["tau_approx_us"] == pytest.approx(5.38, abs=0.01)
    assert payload["tau_exact_us"] == pytest.approx(5.387, abs=0.001)


def test_field_override(capsys, system_file):
    a = invoke_json(capsys, "resonance", "--system", system_file)
    b = invoke_json(capsys, "resonance", "--system", system_file, "--field", 150)
    assert b["tau_zero_us"] < a["tau_zero_us"]


def test_simulate_cpmg_writes_trace(capsys, tmp_path, system_file):
    out = tmp_path / "fig4b.csv"
    payload = invoke_json(capsys, "simulate", "cpmg", "--system", system_file, "--n", 8, "--tau-min", 1,
                          "--tau-max", 21, "--points", 2000, "--out", out)
    assert payload["points"] == 2000 and payload["out"] == str(out)
    trace = SignalTrace.from_csv(out)
    assert len(trace) == 2000 and trace.unit == "us"
    assert trace.abscissa[0] == pytest.approx(1.0) and trace.abscissa[-1] == pytest.approx(21.0)
    assert 5.3 < payload["argmin"] < 5.5


def test_simulate_hahn_inline(capsys, system_file):
    payload = invoke_json(capsys, "simulate", "hahn", "--system", system_file, "--points", 50, "--t2", 1000)
    assert len(payload["values"]) == 50
    assert payload["values"][0] == pytest.approx(1.0)


def test_pulse_sweep(capsys, tmp_path, system_file):
    out = tmp_path / "fig4c.csv"
    payload = invoke_json(capsys, "simulate", "pulse-sweep", "--system", system_file, "--tau", 5.38,
                          "--n-max", 16, "--out", out)
    trace = SignalTrace.from_csv(out)
    assert payload["points"] == 9 and trace.unit == "pulses"
    assert trace.values[4] <= -0.95 and trace.values[8] >= 0.95


def test_bcrit_and_error_sweep(capsys, tmp_path):
    path = tmp_path / "crit.json"
    path.write_text(json.dumps(dict(SYSTEM, nuclei=[{"species": "29Si", "a_par_khz": -23.6, "a_perp_khz": 12.2}])))
    bc = invoke_json(capsys, "bcrit", "--system", path)["b_crit_gauss"]
    assert bc == pytest.approx(60.5, abs=0.2)
    sweep = invoke_json(capsys, "error-sweep", "--system", path, "--points", 40, "--out", tmp_path / "s17.csv")
    assert sweep["b_min_gauss"] == pytest.approx(bc)
    assert sweep["max_rel_error"] <= 0.0035
    assert not sweep["failed"]


def test_gates(capsys, system_file):
    payload = invoke_json(capsys, "gates", "--system", system_file, "--tau", 5.38, "--n", 4, "--target", "bell")
    assert payload["fidelity"] == pytest.approx(0.97, abs=0.01)


def test_analyze_yield(capsys):
    payload = invoke_json(capsys, "analyze", "yield", "--histogram", "50,30,15,5", "--dose", 1e11,
                          "--hole-diameter", 100)
    assert payload["n_spots"] == 100
    assert payload["mean"] == pytest.approx(0.75)


def test_analyze_grid(capsys, tmp_path):
    ii, jj = np.meshgrid(np.arange(6), np.arange(6))
    pts = np.column_stack([ii.ravel(), jj.ravel()]) * 500.0 + np.array([20.0, -10.0])
    lines = ["# unit=nm", "x,y"] + [f"{x},{y}" for x, y in pts]
    (tmp_path / "grid.csv").write_text("\n".join(lines) + "\n")
    payload = invoke_json(capsys, "analyze", "grid", "--data", tmp_path / "grid.csv", "--pitch", 500)
    assert payload["rotation_deg"] == pytest.approx(0.0, abs=1e-6)
    assert payload["variance_nm"] == pytest.approx(0.0, abs=1e-6)


def test_lock_simulate(capsys, tmp_path):
    out, cfg = tmp_path / "lock.csv", tmp_path / "lock.json"
    payload = invoke_json(capsys, "lock", "simulate", "--seed", 0, "--out", out, "--config-out", cfg)
    assert payload["fraction_within_linewidth"] >= 0.95
    assert out.read_text().startswith("t_s,phase,action")
    again = invoke_json(capsys, "lock", "simulate", "--config", cfg, "--seed", 0)
    assert again["fraction_within_linewidth"] == payload["fraction_within_linewidth"]


def test_fit_ple_from_file(capsys, tmp_path):
    from nucspin.fitting import double_lorentzian

    x = np.linspace(-2, 1, 600)
    y = double_lorentzian(x, -1.0, 0.0, 0.041, 0.024, 50.0, 60.0, 5.0)
    SignalTrace(x, y, "GHz").to_csv(tmp_path / "ple.csv")
    payload = invoke_json(capsys, "fit", "ple", "--data", tmp_path / "ple.csv")
    assert payload["derived"]["separation_ghz"] == pytest.approx(1.0, abs=1e-4)


def test_round_trip_simulate_then_fit(capsys, tmp_path, system_file):
    out = tmp_path / "trace.csv"
    invoke_json(capsys, "simulate", "cpmg", "--system", system_file, "--n", 8, "--tau-min", 1, "--tau-max", 21,
                "--points", 120, "--out", out)
    payload = invoke_json(capsys, "fit", "cpmg", "--data", out, "--system", system_file, "--n", 8)
    assert payload["rss"] < 1e-10


def test_reproduce_tau538(capsys):
    code, out, err = invoke(capsys, "reproduce", "tau538")
    assert code == 0
    assert json.loads(out)["passed"] is True
    assert "tau" in err  # the human-readable report goes to the error stream


def test_reproduce_names_match_checks():
    assert set(checks.CHECKS) == {"tau538", "bcrit605", "fidelities", "fig4b", "fig4c", "figS17", "figS18", "yield"}


# -- determinism -------------------------------------------------------------------


def test_byte_identical_output(capsys, system_file):
    argv = ("simulate", "hahn", "--system", system_file, "--points", 64)
    assert invoke(capsys, *argv)[1] == invoke(capsys, *argv)[1]
    argv = ("lock", "simulate", "--seed", 3, "--duration", 900)
    assert invoke(capsys, *argv)[1] == invoke(capsys, *argv)[1]


def test_numbers_have_twelve_significant_digits(capsys, system_file):
    out = invoke(capsys, "resonance", "--system", system_file)[1]
    value = json.loads(out)["tau_exact_us"]
    assert len(repr(value).replace(".", "").lstrip("0")) <= 12


# -- errors ----------------------------------------------------------------------


def test_empty_csv(capsys, tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    code, out, err = invoke(capsys, "fit", "ple", "--data", path)
    assert code == 2 and out == ""
    assert "empty.csv:1" in err


def test_header_only_csv_is_empty_input(capsys, tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("# unit=GHz\nabscissa,value\n")
    code, _, err = invoke(capsys, "fit", "ple", "--data", path)
    assert code == 2 and "empty input" in err and "empty.csv:2" in err


def test_missing_unit_comment(capsys, tmp_path):
    path = tmp_path / "nounit.csv"
    path.write_text("abscissa,value\n1,2\n3,4\n")
    code, _, err = invoke(capsys, "fit", "envelope", "--data", path)
    assert code == 2 and "nounit.csv:1" in err and "unit" in err


def test_non_numeric_row(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# unit=us\nabscissa,value\n1,2\n3,oops\n")
    code, _, err = invoke(capsys, "fit", "envelope", "--data", path)
    assert code == 2 and "bad.csv:4" in err


def test_malformed_json(capsys, tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "field_gauss": 81.0,\n  "nuclei": [\n}\n')
    code, out, err = invoke(capsys, "resonance", "--system", path)
    assert code == 2 and out == ""
    assert "broken.json:4" in err


def test_invalid_system(capsys, tmp_path):
    path = tmp_path / "sys.json"
    path.write_text(json.dumps({"nuclei": []}))
    code, _, err = invoke(capsys, "resonance", "--system", path)
    assert code == 2 and "field_gauss" in err
    code, _, err = invoke(capsys, "gates", "--system", path, "--tau", 5, "--n", 4, "--field", 81)
    assert code == 2 and "no nucleus" in err


def test_unknown_flag(capsys, system_file):
    code, out, err = invoke(capsys, "resonance", "--system", system_file, "--bogus")
    assert code == 2 and out == "" and "--bogus" in err


def test_unknown_check(capsys):
    code, out, err = invoke(capsys, "reproduce", "unknown-name")
    assert code == 2 and out == "" and "unknown-name" in err


def test_error_sweep_needs_positive_range(capsys, system_file):
    code, _, err = invoke(capsys, "error-sweep", "--system", system_file, "--b-min", 0, "--b-max", 10)
    assert code == 2 and "--b-min" in err
