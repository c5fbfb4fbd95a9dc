import csv
import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from susceptlab.cli import EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION, main, parse_overrides, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    comments = [line[2:] for line in lines if line.startswith("# ")]
    body = list(csv.reader([line for line in lines if not line.startswith("#")]))
    return comments, body[0], body[1:]


def test_acim_full_tent(tmp_path, capsys):
    assert run("acim", CONFIGS / "tent2.yaml", tmp_path, tol_overrides="N=1024") == EXIT_OK
    comments, cols, rows = read_csv(tmp_path / "density.csv")
    assert cols == ["x", "rho", "rho_sal", "rho_reg"]
    rho = np.array([float(r[1]) for r in rows])
    assert np.sum(np.abs(rho - 1.0)) / len(rho) <= 1e-10
    keys = [c.split(":")[0] for c in comments]
    assert keys == ["scenario_hash", "command", "tool_version", "seed", "params"]
    summary = json.loads(capsys.readouterr().out)
    assert summary["s1"] == pytest.approx(-1.0)
    assert json.loads((tmp_path / "acim.json").read_text())["header"]["command"] == "acim"


def test_runs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("acim", CONFIGS / "tent19.yaml", out, tol_overrides="N=512,orbit_length=5000") == EXIT_OK
    for name in ("density.csv", "jumps.csv", "acim.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_malformed_config_leaves_nothing(tmp_path):
    out = tmp_path / "out"
    assert run("acim", CONFIGS / "bad.yaml", out) == EXIT_VALIDATION
    assert not out.exists()
    broken = tmp_path / "broken.yaml"
    broken.write_text("map: [unclosed\n")
    assert run("acim", broken, out) == EXIT_VALIDATION
    assert run("acim", CONFIGS / "tent2.yaml", out, tol_overrides="bogus=1") == EXIT_VALIDATION
    assert run("acim", CONFIGS / "tent2.yaml", out, tol_overrides="method=magic") == EXIT_VALIDATION
    assert not out.exists()


def test_numeric_failure_is_serialized(tmp_path):
    assert run("witness", CONFIGS / "tent2.yaml", tmp_path, tol_overrides="orbit_length=1000") == EXIT_NUMERIC
    err = json.loads((tmp_path / "witness.json").read_text())["error"]
    assert err["type"] == "NotFound" and err["finite_orbit"] is True


def test_seed_changes_hash(tmp_path):
    run("orbit", CONFIGS / "tent19.yaml", tmp_path / "a", tol_overrides="length=50")
    run("orbit", CONFIGS / "tent19.yaml", tmp_path / "b", seed=5, tol_overrides="length=50")
    ha = json.loads((tmp_path / "a" / "orbit.json").read_text())["header"]
    hb = json.loads((tmp_path / "b" / "orbit.json").read_text())["header"]
    assert ha["scenario_hash"] != hb["scenario_hash"] and hb["seed"] == 5


@pytest.mark.parametrize("command, overrides, files", [
    ("orbit", "length=100", ["orbit.csv", "orbit.json"]),
    ("suscept", "N=512;orbit_length=20000;radii=[0.3, 0.7];angles=4", ["suscept.csv", "suscept.json"]),
    ("boundary-scan", "orbit_length=100000;j_max=8", ["scan_0.csv", "scan_1.csv", "boundary_scan.json"]),
    ("nt-limit", "series=sigma;omega=1.0;weight=linear;j_max=10;orbit_length=200000", ["nt_limit.csv"]),
    ("ww", "ms=[100, 1000, 10000]", ["ww.csv", "ww.json"]),
    ("lil", "ms=[100, 1000, 10000];r_fit_points=4;r_check_points=6", ["lil_ratio.csv", "lil_envelope.csv"]),
    ("hecke", "count=5", ["hecke.csv", "hecke.json"]),
])
def test_commands_produce_artifacts(tmp_path, command, overrides, files):
    assert run(command, CONFIGS / "tent19.yaml", tmp_path, tol_overrides=overrides) == EXIT_OK
    for name in files:
        assert (tmp_path / name).exists(), name


def test_hecke_all_within_tails(tmp_path):
    run("hecke", CONFIGS / "tent19.yaml", tmp_path, tol_overrides="count=10")
    _, cols, rows = read_csv(tmp_path / "hecke.csv")
    assert all(r[cols.index("within_tails")] == "True" for r in rows)


def test_outer_suscept(tmp_path):
    code = run("suscept", CONFIGS / "tent19_horizontal.yaml", tmp_path,
               tol_overrides="N=512;orbit_length=50000;radii=[1.02];angles=3;side=outer;tol=1e-8")
    assert code == EXIT_OK
    _, cols, rows = read_csv(tmp_path / "suscept.csv")
    assert len(rows) == 3 and all(np.isfinite(float(r[cols.index("re_psi")])) for r in rows)


def test_response_command(tmp_path):
    code = run("response", CONFIGS / "tent19_horizontal.yaml", tmp_path,
               tol_overrides="N=1024,N_coarse=512,orbit_length=100000,j_max=10,birkhoff_m=5000")
    assert code == EXIT_OK
    rep = json.loads((tmp_path / "response.json").read_text())
    for key in ("fd", "formula", "nt_inner", "nt_outer", "consistency"):
        assert rep[key] is not None
    assert rep["horizontality"]["order"] >= 1


def test_parse_overrides():
    assert parse_overrides("N=64,tol=1e-9") == {"N": 64, "tol": 1e-9}
    assert parse_overrides("arcs=[[0.1, 0.4]];j_max=8") == {"arcs": [[0.1, 0.4]], "j_max": 8}
    assert parse_overrides("") == {}


def test_verify_exact_suite(capsys):
    assert main(["verify", "exact"]) == 0
    assert "PASS" in capsys.readouterr().out


@pytest.mark.skipif(shutil.which("susceptlab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["susceptlab", "run", "orbit", str(CONFIGS / "tent2.yaml"), str(tmp_path),
                           "--tol-overrides", "length=10"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["preperiodicity"] == {"m": 2, "p": 1, "proven": True}
    proc = subprocess.run([sys.executable, "-m", "susceptlab.cli", "run", "acim", str(CONFIGS / "bad.yaml"),
                           str(tmp_path / "x")], capture_output=True, text=True, env={**os.environ})
    assert proc.returncode == 2 and not (tmp_path / "x").exists()
