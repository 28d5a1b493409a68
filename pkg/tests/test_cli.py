import csv
import json
import math

import numpy as np
import pytest

from entstab import __version__
from entstab.cli import config_hash, load_config, main


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def write(path, text):
    path.write_text(text)
    return str(path)


def test_tightness_sweep_matches_formula(tmp_path):
    cfg = write(tmp_path / "t.toml", "R = 1\nepsilons = [0.5]\nthetas = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5]\n")
    assert main(["tightness", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "tightness.csv")
    assert len(rows) == 6
    for r in rows:
        assert float(r["lhs"]) == pytest.approx(math.tanh(math.sin(float(r["theta"])) / 0.5), abs=1e-6)


def test_report_provenance(tmp_path):
    out = tmp_path / "o"
    assert main(["tightness", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["version"] == __version__
    assert report["config_hash"] == config_hash("tightness", load_config("tightness", None, None))
    assert report["scenario"] == "tightness-sweep"
    assert report["violations"] == []


def test_chain_seed_7(tmp_path):
    out = tmp_path / "o"
    assert main(["chain", "--seed", "7", "--out", str(out)]) == 0
    rows = read_rows(out / "chain.csv")
    assert len(rows) == 20
    for col in ("I_nonnegative", "jensen", "I_tilde_nonnegative", "step2_identity", "step3", "step1"):
        assert all(r[col] == "true" for r in rows)


def test_outputs_identical_across_thread_counts(tmp_path):
    cfg = write(tmp_path / "s.toml", "triples = 15\nepsilons = [0.05, 0.5]\n")
    for threads in ("1", "4"):
        assert main(["stability", "--config", cfg, "--seed", "3", "--threads", threads,
                     "--out", str(tmp_path / threads)]) == 0
    assert (tmp_path / "1" / "stability.csv").read_bytes() == (tmp_path / "4" / "stability.csv").read_bytes()
    assert main(["stability", "--config", cfg, "--seed", "4", "--out", str(tmp_path / "x")]) == 0
    assert (tmp_path / "1" / "stability.csv").read_bytes() != (tmp_path / "x" / "stability.csv").read_bytes()


def test_malformed_measure_file(tmp_path, capsys):
    src = write(tmp_path / "a.txt", "2 2\n0.5 1 0\n0.5 oops 0\n")
    cfg = write(tmp_path / "c.toml", f'source = "{src}"\ntarget = "{src}"\nepsilon = 0.5\n')
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "a.txt:3:" in capsys.readouterr().err


def test_solve_writes_outputs(tmp_path):
    a = write(tmp_path / "a.txt", "2 3\n0.3 1 0\n0.3 0 1\n0.4 -1 -0.5\n")
    b = write(tmp_path / "b.txt", "2 2\n0.5 0.5 0.5\n0.5 -0.5 0\n")
    cfg = write(tmp_path / "c.toml", f'scenario = "solve"\nsource = "{a}"\ntarget = "{b}"\nepsilon = 0.2\n')
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "potentials.txt").exists() and (out / "plan.csv").exists()
    summary = json.loads((out / "report.json").read_text())["summary"]
    assert summary["marginal_residual"] <= 1e-8


def test_solver_failure_exit_code(tmp_path, capsys):
    a = write(tmp_path / "a.txt", "2 3\n0.3 1 0\n0.3 0 1\n0.4 -1 -0.5\n")
    b = write(tmp_path / "b.txt", "2 2\n0.5 0.5 0.5\n0.5 -0.5 0\n")
    cfg = write(tmp_path / "c.toml", f'source = "{a}"\ntarget = "{b}"\nepsilon = 0.01\nmax_iterations = 2\n')
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "did not converge" in capsys.readouterr().err


@pytest.mark.parametrize("text, message", [
    ("epsilons = [0.5\nR = 1\n", "line 2"),
    ("R = -1\n", "'R' must be positive"),
    ("colour = 1\n", "unknown config key 'colour'"),
    ("thetas = 0.3\n", "list of numbers"),
    ('scenario = "bias-sweep"\n', "subcommand"),
    ("[table]\nR = 1\n", "nested"),
    ("seed = -3\n", "seed"),
])
def test_config_errors(tmp_path, capsys, text, message):
    cfg = write(tmp_path / "c.toml", text)
    assert main(["tightness", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert message in capsys.readouterr().err


def test_missing_required_key(tmp_path, capsys):
    cfg = write(tmp_path / "c.toml", "epsilon = 0.5\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "missing required config key 'source'" in capsys.readouterr().err


def test_invariant_violation_is_named(tmp_path, capsys):
    cfg = write(tmp_path / "c.toml", "thetas = [0.3]\nepsilons = [0.5]\nformula_atol = 1e-30\n")
    assert main(["tightness", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "invariant violated: lhs = R tanh" in capsys.readouterr().err
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["violations"] == ["lhs = R tanh(R sin(theta)/eps)"]


def test_bias_sweep_and_plotdata(tmp_path):
    cfg = write(tmp_path / "b.toml", "resolution = 128\nepsilons = [0.1, 0.05, 0.025]\n")
    out = tmp_path / "o"
    assert main(["bias", "--config", cfg, "--out", str(out)]) == 0
    rows = read_rows(out / "bias.csv")
    assert main(["plotdata", str(out / "bias.csv"), "--x", "epsilon", "--y", "bias_l2",
                 "--transform", "log-log", "--out", str(tmp_path / "p.dat")]) == 0
    lines = (tmp_path / "p.dat").read_text().splitlines()
    data = np.array([[float(v) for v in ln.split()] for ln in lines if not ln.startswith("#")])
    assert len(data) == len(rows)
    slope = float(lines[-1].split("bias_l2=")[1])
    assert slope == pytest.approx(np.polyfit(data[:, 0], data[:, 1], 1)[0], rel=1e-12)
    report = json.loads((out / "report.json").read_text())
    assert slope == pytest.approx(report["summary"]["slope"], rel=1e-9)


def test_plotdata_linear_and_filtering(tmp_path, capsys):
    table = write(tmp_path / "t.csv", "a,b,c\n1,2,3\n2,-1,5\n3,4,0\n4,8,1\n")
    assert main(["plotdata", table, "--x", "a", "--y", "b,c", "--out", str(tmp_path / "lin.dat")]) == 0
    body = [ln for ln in (tmp_path / "lin.dat").read_text().splitlines() if not ln.startswith("#")]
    assert len(body) == 4 and len(body[0].split()) == 3
    assert main(["plotdata", table, "--x", "a", "--y", "b,c", "--transform", "log-log",
                 "--out", str(tmp_path / "log.dat")]) == 0
    assert "dropped 2 row(s)" in capsys.readouterr().err
    body = [ln for ln in (tmp_path / "log.dat").read_text().splitlines() if not ln.startswith("#")]
    assert len(body) == 2


def test_plotdata_empty_and_missing(tmp_path, capsys):
    empty = write(tmp_path / "e.csv", "")
    assert main(["plotdata", empty, "--x", "a", "--y", "b", "--out", str(tmp_path / "e.dat")]) == 0
    assert (tmp_path / "e.dat").read_text() == ""
    assert "empty" in capsys.readouterr().err
    table = write(tmp_path / "t.csv", "a,b\n1,2\n")
    assert main(["plotdata", table, "--x", "a", "--y", "zz", "--out", str(tmp_path / "m.dat")]) == 2
    assert "missing column" in capsys.readouterr().err


def test_sdstab_runs(tmp_path):
    cfg = write(tmp_path / "s.toml", "resolution = 128\nthetas = [0.4, 0.1]\n")
    out = tmp_path / "o"
    assert main(["sdstab", "--config", cfg, "--out", str(out)]) == 0
    rows = read_rows(out / "sdstab.csv")
    assert {"theta", "epsilon", "bias_mu", "bias_nu", "entropic_term", "lhs", "w2", "ratio"} <= set(rows[0])
