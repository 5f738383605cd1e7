import csv
import json
import subprocess
import sys

import pytest

from flagdim import __version__, cli
from flagdim.randwalk import dump_measure, shipped_measure


def run(args, tmp_path):
    return cli.main(args + ["--out", str(tmp_path)])


def load(tmp_path, name):
    return json.loads((tmp_path / f"{name}.json").read_text())


def test_lyapunov_outputs(tmp_path, capsys):
    spec = tmp_path / "m.json"
    spec.write_text(dump_measure(shipped_measure("sl2_hyperbolic")))
    assert run(["lyapunov", "--measure", str(spec), "--seed", "7", "--horizon", "300", "--replicas", "4"], tmp_path) == 0
    doc = load(tmp_path, "lyapunov")
    assert doc["command"] == "lyapunov" and doc["config"]["seed"] == 7
    assert doc["result"]["spectrum"]["mults"] == [1, 1]
    rows = list(csv.reader((tmp_path / "lyapunov.csv").open()))
    assert len(rows) > 1
    meta = load(tmp_path, "lyapunov.meta")
    assert "timestamp" in meta and "timestamp" not in json.dumps(doc)
    assert "wrote" in capsys.readouterr().out


def test_coords_verify_table(tmp_path):
    assert run(["coords-verify", "--N", "3", "--trials", "5", "--seed", "1"], tmp_path) == 0
    text = json.dumps(load(tmp_path, "coords_verify"))
    assert "15" in text and (tmp_path / "coords_oracle.csv").exists()


def test_topologies_and_path(tmp_path):
    assert run(["topologies", "--N", "3"], tmp_path) == 0
    assert len(load(tmp_path, "topologies")["result"]["topologies"]) == 7
    assert run(["path", "--exponents", "2,1,0"], tmp_path) == 0
    steps = load(tmp_path, "path")["result"]["steps"]
    assert len(steps) == 3


def test_lydim(tmp_path, capsys):
    assert run(["lydim", "--exponents", "1,0,-1", "--kappa", "1.5"], tmp_path) == 0
    assert load(tmp_path, "lydim")["result"]["lyapunov_profile"]["dim_ly"] == pytest.approx(1.5)
    assert "dim_LY = 1.5" in capsys.readouterr().out
    rows = list(csv.reader((tmp_path / "lydim_profile.csv").open()))
    assert rows[0] == ["t", "D"]


def test_report_command(tmp_path):
    args = ["report", "--measure", "sl2_hyperbolic", "--seed", "9", "--count", "400", "--horizon", "200",
            "--probes", "100", "--filtration", "1"]
    assert run(args, tmp_path) == 0
    doc = load(tmp_path, "report")["result"]
    assert {q["name"] for q in doc["inequalities"]} >= {"entropy cap", "path dimension <= dim_LY"}
    assert (tmp_path / "ball_mass.csv").exists()


def test_exit_codes(tmp_path, capsys):
    assert run(["lyapunov", "--measure", str(tmp_path / "missing.json"), "--seed", "1"], tmp_path) == 2
    assert run(["path", "--exponents", "0,1"], tmp_path) == 2
    assert run(["lydim", "--exponents", "1,0", "--kappa", "-1"], tmp_path) == 2
    assert run(["lydim", "--exponents", "1,1", "--mults", "1,1", "--kappa", "1"], tmp_path) == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"d": 2, "atoms": [{"p": 1.0, "m": [[2, 0], [0, 1]]}]}))
    assert run(["lyapunov", "--measure", str(bad), "--seed", "1"], tmp_path) == 2
    assert "error:" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["lyapunov", "--measure", "sl2_hyperbolic"],
    ["lyapunov", "--measure", "sl2_hyperbolic", "--seed", "1", "--horizon", "0"],
    ["bogus"],
    [],
])
def test_argparse_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_print_config_and_version(capsys):
    assert cli.main(["lydim", "--exponents", "1,-1", "--kappa", "0.5", "--print-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["kappa"] == 0.5 and cfg["command"] == "lydim" and "out" not in cfg
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "flagdim.cli", "topologies", "--N", "2", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert len(json.loads((tmp_path / "topologies.json").read_text())["result"]["topologies"]) == 2


def test_same_seed_same_bytes(tmp_path):
    args = ["oseledets", "--measure", "sl3_hyperbolic", "--seed", "3", "--count", "20"]
    assert run(args, tmp_path / "a") == 0 and run(args, tmp_path / "b") == 0
    assert (tmp_path / "a" / "oseledets.json").read_bytes() == (tmp_path / "b" / "oseledets.json").read_bytes()
    assert run(["oseledets", "--measure", "sl3_hyperbolic", "--seed", "4", "--count", "20"], tmp_path / "c") == 0
    a = load(tmp_path / "a", "oseledets")["result"]
    c = load(tmp_path / "c", "oseledets")["result"]
    assert a != c
