import json
import subprocess
import sys

import pytest

from nqcs.cli import main, run
from nqcs.tradeoff import closed_form_mati


def write(path, text):
    path.write_text(text)
    return str(path)


SIM = """
[protocol]
tag = tod-tracking
[network]
h_mati = 0.0256
h_mad = 0.00385
[run]
T = 3
"""

VERIFY = """
[combo]
protocol = tod
node_dims = 1,1,1
n_df = 2
n_f = 1
delta = 0.8
m = 4
omega = 0.6
varpi = 0.25
[verify]
samples = 100000
"""


def test_tradeoff_printed_constants(tmp_path):
    cfg = write(tmp_path / "rr.ini", "[tradeoff]\npreset = manipulator\nprotocol = RR\n")
    code, rep = run("tradeoff", cfg, tmp_path / "out")
    assert code == 2 and rep["h_mati"] == 0.0
    assert rep["diagnostics"][0].startswith("mati-condition-fails-at-zero")
    result = json.loads((tmp_path / "out" / "result.json").read_text())
    assert {"h_mati", "h_mad", "diagnostics"} <= set(result)
    header = (tmp_path / "out" / "curve.csv").read_text().splitlines()[0]
    assert header == "tau,phi0,phi1,lhs_mati,rhs_mati,lhs_mad,rhs_mad"


def test_tradeoff_closed_form(tmp_path):
    cfg = write(tmp_path / "c.ini", "[tradeoff]\nL0 = 0\nL1 = 0\ngamma0 = 3\ngamma1 = 3\n"
                "lam = 0.5\nrho0 = 0\nrho1 = 0\nphi00 = 2\nphi10 = 2\n")
    code, rep = run("tradeoff", cfg, tmp_path / "out")
    assert code == 0
    assert rep["h_mati"] == pytest.approx(closed_form_mati(3, 0.5, 2), rel=1e-6)


def test_tradeoff_from_combo(tmp_path):
    cfg = write(tmp_path / "c.ini", VERIFY.split("[verify]")[0] + "M_e = 1\n"
                "[tradeoff]\ngamma0 = 3\ngamma1 = 3\nrho0 = 0.1\nphi00 = 1\nphi10 = 1\n")
    code, rep = run("tradeoff", cfg, tmp_path / "out")
    result = json.loads((tmp_path / "out" / "result.json").read_text())
    assert result["params"]["lam"] == pytest.approx(result["certificate"]["lam"])
    assert code in (0, 2)


def test_gamma0_zero_message(tmp_path, capsys):
    cfg = write(tmp_path / "c.ini", "[tradeoff]\nL0 = 0\nL1 = 0\ngamma0 = 0\ngamma1 = 3\n"
                "lam = 0.5\nrho0 = 0\nrho1 = 0\nphi00 = 2\nphi10 = 2\n")
    assert main(["tradeoff", "-c", cfg, "-o", str(tmp_path / "o")]) == 1
    assert "gamma0 must be positive" in capsys.readouterr().err


@pytest.mark.parametrize("text,key", [("[tradeoff]\nbogus = 1\n", "tradeoff.bogus"),
                                      ("[tradeoff]\nL0 = abc\n", "tradeoff.L0"),
                                      ("[nowhere]\nx = 1\n", "[nowhere]"),
                                      ("[tradeoff]\nL0 = 1\n", "tradeoff.")])
def test_bad_config_names_key(tmp_path, capsys, text, key):
    cfg = write(tmp_path / "c.ini", text)
    assert main(["tradeoff", "-c", cfg, "-o", str(tmp_path / "o")]) == 1
    assert key in capsys.readouterr().err


def test_simulate_deterministic_and_replayable(tmp_path):
    cfg = write(tmp_path / "s.ini", SIM)
    a, rep = run("simulate", cfg, tmp_path / "a")
    b, _ = run("simulate", cfg, tmp_path / "b")
    assert a == b == 0
    ta = (tmp_path / "a" / "trace.csv").read_bytes()
    assert ta == (tmp_path / "b" / "trace.csv").read_bytes()
    assert b"\r" not in ta
    m = rep["metrics"]
    assert m["sup_eta_last20"] < m["sup_eta_first20"]
    c, _ = run("simulate", str(tmp_path / "a" / "effective-config.json"), tmp_path / "c")
    assert c == 0 and (tmp_path / "c" / "trace.csv").read_bytes() == ta
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    listed = {f["file"] for f in manifest["files"]}
    assert {"trace.csv", "metrics.json", "report.json", "effective-config.json"} <= listed


def test_flags_written_back(tmp_path):
    cfg = write(tmp_path / "s.ini", SIM)
    assert main(["simulate", "-c", cfg, "-o", str(tmp_path / "o"), "--seed", "11",
                 "-s", "run.T=0.5"]) == 0
    eff = json.loads((tmp_path / "o" / "effective-config.json").read_text())
    assert eff["run"]["seed"] == 11 and eff["run"]["T"] == 0.5


def test_eps_above_interval_bound(tmp_path):
    cfg = write(tmp_path / "s.ini", SIM)
    code, rep = run("simulate", cfg, tmp_path / "o", ["network.eps=0.03"])
    assert code == 1 and "eps" in rep["error"]["message"]


def test_saturation_exit_code(tmp_path):
    cfg = write(tmp_path / "s.ini", SIM)
    code, rep = run("simulate", cfg, tmp_path / "o", ["quantizer.policy=always"])
    assert code == 3
    assert rep["error"]["type"] == "saturation" and rep["error"]["node"] >= 1
    assert rep["error"]["time"] > 0


def test_verify_passes_and_corruption_fails(tmp_path, capsys):
    cfg = write(tmp_path / "v.ini", VERIFY)
    code, rep = run("verify", cfg, tmp_path / "a")
    assert code == 0 and rep["passed"]
    u = rep["suites"]["uges"]["report"]
    assert u["max_contraction"] <= u["lam"] + 1e-12 and u["n_samples"] == 100_000
    assert rep["suites"]["sector"]["passed"]
    code, rep = run("verify", cfg, tmp_path / "b", ["verify.lam=0.5"])
    assert code != 0 and "uges.contraction" in rep["failed_checks"]
    assert "uges.contraction" in capsys.readouterr().err


def test_verify_uncertified_combo(tmp_path):
    cfg = write(tmp_path / "v.ini", VERIFY)
    code, rep = run("verify", cfg, tmp_path / "a", ["combo.quantizer=uniform"])
    assert code == 1 and rep["error"]["type"] == "UnsupportedCombination"


def test_example_command(tmp_path):
    code, rep = run("example", None, tmp_path / "ex",
                    ["example.T=0.3", "example.n_grid=2000"])
    assert code == 0
    assert "fig6.csv" in rep["files"] and (tmp_path / "ex" / "summary.json").exists()


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "nqcs", "--version"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and "nqcs" in out.stdout
