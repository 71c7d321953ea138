import csv
import json
import subprocess
import sys

import pytest

import svscip.cli as cli
import svscip.solve as solve_mod
from svscip.cli import ConfigError, main, parse_grid
from svscip.mesh import gen_crisscross, save_mesh

SMALL = ["--problem", "kovasznay", "--nx", "2", "--ny", "2", "--p", "4"]


def test_parse_grid():
    assert parse_grid("41x33") == (41, 33)
    for bad in ("41", "axb", "1x5"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


@pytest.mark.parametrize("argv", [
    ["--p", "3"],
    ["--lambda", "-1"],
    ["--max-iters", "0"],
    ["--grid", "4"],
    ["--mesh", "/nonexistent/mesh.txt"],
    ["--problem", "custom"],
])
def test_config_errors(argv, capsys):
    assert main(argv) == 2
    assert "error:" in capsys.readouterr().err


def test_argparse_rejects_unknown_method():
    with pytest.raises(SystemExit) as exc:
        main(["--method", "cg"])
    assert exc.value.code == 2


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"problem": "kovasznay", "nx": 2, "ny": 2, "p": 4, "lambda": 100.0,
                               "max-iters": 2, "div_tol": 0.0}))
    assert main(["--config", str(cfg), "--max-iters", "3"]) == 0
    out = capsys.readouterr().out
    assert "iterations=3" in out
    cfg.write_text(json.dumps({"polynomial": 4}))
    assert main(["--config", str(cfg)]) == 2


def test_both_reports_equivalence(tmp_path, capsys):
    hist = tmp_path / "h.csv"
    assert main(SMALL + ["--method", "both", "--history-out", str(hist)]) == 0
    out = capsys.readouterr().out
    line = [ln for ln in out.splitlines() if ln.startswith("equivalence:")][0]
    du = float(line.split("rel_H1_diff=")[1].split()[0])
    assert du <= 1e-8
    assert (tmp_path / "h_ip.csv").exists() and (tmp_path / "h_scip.csv").exists()


def test_equivalence_failure_exit_code(monkeypatch):
    monkeypatch.setattr(cli, "EQUIV_TOL", -1.0)
    assert main(SMALL + ["--method", "both"]) == 4


def test_abort_exit_code(monkeypatch, capsys, caplog):
    monkeypatch.setattr(solve_mod._StallMonitor, "update", lambda self, v, f: True)
    assert main(SMALL) == 3
    assert "lambda too small" in capsys.readouterr().out
    assert "lambda too small" in caplog.text


def _rows_without_seconds(path):
    rows = list(csv.reader(open(path)))
    i = rows[0].index("seconds")
    return [r[:i] + r[i + 1:] for r in rows]


def test_outputs_deterministic(tmp_path):
    for k in (1, 2):
        assert main(SMALL + ["--history-out", str(tmp_path / f"h{k}.csv"),
                             "--field-out", str(tmp_path / f"f{k}.txt"), "--grid", "7x5"]) == 0
    assert _rows_without_seconds(tmp_path / "h1.csv") == _rows_without_seconds(tmp_path / "h2.csv")
    assert (tmp_path / "f1.txt").read_bytes() == (tmp_path / "f2.txt").read_bytes()
    lines = (tmp_path / "f1.txt").read_text().splitlines()
    assert lines[0] == "x y u1 u2 p" and len(lines) == 36


def test_diagnostics_output(tmp_path, capsys):
    path = tmp_path / "diag.txt"
    assert main(SMALL + ["--diagnostics", str(path)]) == 0
    kv = dict(line.split("=", 1) for line in path.read_text().splitlines())
    assert kv["rank_matches_dim"] == "true"
    assert float(kv["identity_idempotence"]) <= 1e-12
    assert "Mesh and discretisation diagnostics" in capsys.readouterr().out


def test_custom_problem(tmp_path, capsys):
    mesh = tmp_path / "m.txt"
    save_mesh(gen_crisscross(1, 1), mesh)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"problem": "custom", "mesh": str(mesh), "nu": 1.0,
                               "dirichlet": ["x*x", "-2*x*y"], "source": ["-2 + 1", "1"]}))
    assert main(["--config", str(cfg), "--p", "4"]) == 0
    assert "status=converged" in capsys.readouterr().out
    # incompatible boundary data on a closed Dirichlet boundary
    cfg.write_text(json.dumps({"problem": "custom", "mesh": str(mesh), "dirichlet": ["x", "0"]}))
    assert main(["--config", str(cfg), "--p", "4"]) == 2
    # no builtins available to expressions
    cfg.write_text(json.dumps({"problem": "custom", "mesh": str(mesh),
                               "dirichlet": ["__import__('os')", "0"]}))
    assert main(["--config", str(cfg), "--p", "4"]) == 2


def test_sweep_summary(tmp_path):
    summ = tmp_path / "s.csv"
    assert main(SMALL + ["--sweep-p", "4,5", "--sweep-lambda", "100,1000",
                         "--summary-out", str(summ)]) == 0
    rows = list(csv.DictReader(open(summ)))
    assert [(r["p"], r["lambda"]) for r in rows] == [("4", "100"), ("4", "1000"), ("5", "100"), ("5", "1000")]
    assert all(r["status"] == "converged" for r in rows)
    # larger lambda contracts faster
    assert float(rows[1]["mean_decay_ratio"]) < float(rows[0]["mean_decay_ratio"])


def test_decay_ratios():
    hist = [solve_mod.IterationRecord(i, d, 0.0) for i, d in enumerate([1.0, 1e-3, 1e-6, 1e-15])]
    assert cli.decay_ratios(hist) == pytest.approx([1e-3, 1e-3])


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "svscip", "--p", "2"], capture_output=True, text=True)
    assert r.returncode == 2 and "p must be >= 4" in r.stderr
