import csv
import json

import pytest

from targetsim.cli import main, parse_tolerances


def test_tolerance_ranges():
    assert parse_tolerances("1e-3..1e-5") == pytest.approx([1e-3, 1e-4, 1e-5])
    assert parse_tolerances("1e-3,3e-4") == [1e-3, 3e-4]
    assert len(parse_tolerances("1e-3..1e-10")) == 8


def test_solve_json(tmp_path):
    out = tmp_path / "run.json"
    assert main(["solve", "--problem", "logistic", "--tol", "1e-8", "--targets", "5", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert len(data["means"]) == 6 and len(data["targets"]) == 6
    assert data["config"]["rel_tol"] == 1e-8 and data["config"]["abs_tol"] == pytest.approx(1e-11)


def test_solve_check_and_stdout(capsys):
    assert main(["solve", "--problem", "logistic", "--tol", "1e-6", "--check"]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0] == "t,u0" and len(text.splitlines()) == 7


def test_workprecision_csv(tmp_path):
    out = tmp_path / "wp.csv"
    code = main(["bench", "workprecision", "--problem", "rigid-body", "--tols", "1e-3..1e-5",
                 "--repetitions", "1", "--out", str(out), "--check"])
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 4 * 3
    assert {r["solver"] for r in rows} == {"ats", "as-oracle", "rk-bosh3", "rk-dopri5"}


def test_memory_csv(tmp_path):
    out = tmp_path / "mem.csv"
    assert main(["bench", "memory", "--d", "2,4", "--targets", "10", "--tol", "1e-5", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 4
    assert all(r["stored_floats"] and r["as_estimate_floats"] for r in rows)
    # the ratio check cannot hold at this size, so --check reports a failure
    assert main(["bench", "memory", "--d", "2", "--targets", "10", "--tol", "1e-5",
                 "--out", str(out), "--check"]) == 1


def test_stepcount_and_trace(tmp_path):
    out, trace = tmp_path / "sc.json", tmp_path / "trace.csv"
    assert main(["bench", "stepcount", "--problem", "logistic", "--tol", "1e-3", "--out", str(out),
                 "--trace", str(trace)]) == 0
    assert len(json.loads(out.read_text())["records"]) == 3
    assert trace.read_text().splitlines()[0] == "t,dt"


def test_sampling(tmp_path, capsys):
    assert main(["bench", "sampling", "--problem", "logistic", "--tols", "1e-3,1e-5", "--samples", "3",
                 "--targets", "4", "--format", "json", "--check"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert len(data["records"]) == 4


@pytest.mark.parametrize("argv", [
    ["solve", "--bogus"],
    ["bench"],
    ["bench", "nope"],
    ["solve", "--problem", "unknown"],
    ["solve", "--tol", "-1"],
    ["bench", "workprecision", "--tols", "1e-3..3e-5"],
    ["bench", "workprecision", "--solvers", "euler"],
    ["solve", "--targets", "0"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_help_exits_cleanly(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "bench" in capsys.readouterr().out
