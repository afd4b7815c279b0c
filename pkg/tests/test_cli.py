import json
import subprocess
import sys

import pytest

from conftest import FIXTURES
from thinlimit.cli import build_parser, main

LAP = "examples/laplacian_oblique.prob"


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check_passes(capsys):
    code, out, err = run(["check", LAP], capsys)
    assert code == 0
    assert out.splitlines()[0] == "check,passed,value,witness,detail"
    assert len(out.splitlines()) == 12
    assert "FAIL" not in err


def test_check_fixture_fails(capsys):
    code, out, _ = run(["check", str(FIXTURES / "zero_c.prob"), "--format", "json"], capsys)
    assert code == 1
    data = json.loads(out)
    assert not data["passed"]
    assert [r["check"] for r in data["rows"] if not r["passed"]] == ["positivity of c"]


def test_parse_errors_exit_3(capsys, tmp_path):
    bad = tmp_path / "bad.prob"
    bad.write_text("[domain]\ng_plus = 1 +\n")
    assert run(["parse", str(bad)], capsys)[0] == 3
    assert run(["parse", str(tmp_path / "missing.prob")], capsys)[0] == 3
    assert run(["check", LAP, "--set", "solver.bogus=1"], capsys)[0] == 3
    assert run(["mms", "--exact", "x +"], capsys)[0] == 3


def test_invalid_exit_1(capsys):
    assert run(["parse", str(FIXTURES / "incompatible.prob")], capsys)[0] == 1
    assert run(["sweep", str(FIXTURES / "degenerate_dirichlet.prob"), "--eps-list", "0.1"], capsys)[0] == 1


def test_divergence_exit_2(capsys):
    code, _, err = run(["solve-thin", LAP, "--set", "solver.max_iter=1", "--set", "solver.nx=21",
                        "--set", "solver.nt=7", "--set", "solver.method=explicit"], capsys)
    assert code == 2 and "residual tail" in err


def test_parse_round_trip(capsys, tmp_path):
    code, out, _ = run(["parse", LAP], capsys)
    assert code == 0
    f = tmp_path / "norm.prob"
    f.write_text(out)
    assert run(["parse", str(f)], capsys)[1] == out


def test_counterexample_json(capsys):
    code, out, _ = run(["counterexample", "--format", "json"], capsys)
    assert code == 0
    rows = {r["eps"]: r for r in json.loads(out)["rows"]}
    assert rows[0.1]["sup_u"] == pytest.approx(11.0333, rel=0.01)


def test_sweep_csv(capsys):
    code, out, _ = run(["sweep", LAP, "--eps-list", "0.2,0.1,0.05", "--set", "solver.nx=101",
                        "--set", "solver.nt=21", "--no-timing"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "eps,sup_error,iters,residual,barrier_margin,wall_s"
    errs = [float(l.split(",")[1]) for l in lines[1:]]
    assert len(errs) == 3 and errs[0] > errs[1] > errs[2]


def test_bad_eps_list_rejected(capsys):
    with pytest.raises(SystemExit):
        main(["sweep", LAP, "--eps-list", "a,b"])
    assert run(["sweep", LAP, "--eps-list", "0.1,0.2"], capsys)[0] == 1


def test_reduce_and_solves(capsys, tmp_path):
    code, out, _ = run(["reduce", "examples/bellman_isaacs.prob", "--nx", "5"], capsys)
    assert code == 0
    header = out.splitlines()[0].split(",")
    assert header[:5] == ["x", "gamma_o", "beta_o", "b", "c"] and "sts_1_0" in header
    assert len(out.splitlines()) == 6
    dest = tmp_path / "u.csv"
    code, out, _ = run(["solve-thin", LAP, "--eps", "0.1", "--set", "solver.nx=21", "-o", str(dest)], capsys)
    assert code == 0 and out == "" and dest.read_text().startswith("x,y,u\n")
    code, out, _ = run(["solve-limit", LAP, "--format", "json", "--no-timing"], capsys)
    assert code == 0 and json.loads(out)["converged"]


def test_mms_min_order(capsys):
    assert run(["mms", "--exact", "cos(pi*x)", "--min-order", "1.5"], capsys)[0] == 0
    assert run(["mms", "--exact", "cos(pi*x)", "--min-order", "3"], capsys)[0] == 1


def test_byte_identical_reruns(tmp_path):
    outs = []
    for k in range(2):
        dest = tmp_path / f"r{k}.csv"
        proc = subprocess.run([sys.executable, "-m", "thinlimit", "sweep", LAP, "--eps-list", "0.2,0.1",
                               "--set", "solver.nx=41", "--set", "solver.nt=11", "--seed", "3",
                               "--no-timing", "-o", str(dest)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append(dest.read_bytes())
    assert outs[0] == outs[1]


def test_help_lists_subcommands():
    text = build_parser().format_help()
    for name in ("parse", "check", "reduce", "solve-thin", "solve-limit", "sweep", "counterexample", "mms"):
        assert name in text
