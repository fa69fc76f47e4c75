import json
import subprocess
import sys

import numpy as np
import pytest

from opfgrad.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_golden(capsys):
    code, out, _ = run(capsys, "solve", "--case", "case9.json", "--load", "4=1.0", "7=1.0")
    assert code == 0
    d = json.loads(out)
    assert d["status"] == "Optimal"
    assert np.allclose(d["sg"], [0.1392, 1.68520046, 2.32559954], atol=1e-8)
    assert d["uniqueness"] == "Unique"
    assert d["regularity"]["binding_count"] == 2
    assert d["residuals"]["duality_gap"] <= 1e-8


def test_negative_load_is_usage_error(capsys):
    code, out, err = run(capsys, "solve", "--case", "case9.json", "--load", "4=-1")
    assert code == 1
    assert "load must be positive" in err and out == ""


def test_unknown_flag_and_missing_case(capsys):
    code, _, err = run(capsys, "solve", "--case", "case9", "--bogus")
    assert code == 1 and "usage" in err
    code, _, err = run(capsys, "solve", "--case", "nowhere.json")
    assert code == 1 and "no such case" in err
    code, _, _ = run(capsys, "frobnicate")
    assert code == 1


def test_infeasible_solve_exits_2(capsys):
    loads = [f"{b}=2.0" for b in range(4, 10)]
    code, out, _ = run(capsys, "solve", "--case", "case9", "--load", *loads)
    assert code == 2
    assert json.loads(out)["status"] == "Infeasible"


def test_sensitivity(capsys):
    code, out, _ = run(capsys, "sensitivity", "--case", "case9.json", "--gen", "1", "--load-bus", "9")
    assert code == 0
    (row,) = json.loads(out)
    assert row["gen"] == 1 and row["load_bus"] == 9
    assert row["value"] >= 0 and len(row["S_G"]) + len(row["S_B"]) == 2
    code, out, _ = run(capsys, "sensitivity", "--case", "case9", "--format", "csv")
    assert code == 0 and len(out.splitlines()) == 19
    code, _, _ = run(capsys, "sensitivity", "--case", "case9", "--gen", "4")
    assert code == 1


def test_jacobian_and_fd_check(capsys):
    code, out, _ = run(capsys, "jacobian", "--case", "case9")
    J = np.array(json.loads(out)["J"])
    assert code == 0 and J.shape == (3, 6)
    assert np.allclose(J.sum(axis=0), 1.0)
    code, out, _ = run(capsys, "jacobian", "--case", "case9", "--format", "csv")
    assert out.splitlines()[0].startswith("gen,load_bus_4")
    code, out, _ = run(capsys, "fd-check", "--case", "case9")
    assert code == 0 and json.loads(out)["max_abs_diff"] <= 1e-6


def test_conic_diff(capsys):
    code, out, _ = run(capsys, "conic-diff", "--case", "case9")
    assert code == 0
    J = np.array(json.loads(out)["J"])
    code, out, _ = run(capsys, "conic-diff", "--case", "case9", "--dload", "4=1.0,7=0.5")
    d = json.loads(out)
    assert code == 0
    assert np.allclose(d["dsg"], J[:, 0] + 0.5 * J[:, 3], atol=1e-6)
    code, _, _ = run(capsys, "conic-diff", "--case", "case9", "--dload", "2=1.0")
    assert code == 1


def test_enumerate(capsys):
    code, out, _ = run(capsys, "enumerate", "--case", "case9")
    d = json.loads(out)
    assert code == 0 and d["count"] == 66 and d["independent"] == 60
    code, _, err = run(capsys, "enumerate", "--case", "case9", "--budget", "5")
    assert code == 2 and "BudgetExceeded" in err


def test_construct(capsys, tmp_path):
    out_file = tmp_path / "built.json"
    code, _, _ = run(capsys, "construct", "--case", "case9", "--S-G", "1", "--S-B", "7",
                     "--out", str(out_file))
    assert code == 0
    built = json.loads(out_file.read_text())
    assert built["binding"]["generators"][0]["gen"] == 1
    # the constructed case is itself a valid input
    code, out, _ = run(capsys, "solve", "--case", str(out_file))
    assert code == 0
    code, out, _ = run(capsys, "construct", "--case", "case9", "--S-G", "1")
    assert code == 2 and json.loads(out)["status"] == "DimensionError"


def test_scans_and_path(capsys):
    code, out, _ = run(capsys, "scan-load", "--case", "case9", "--axes", "4", "7",
                       "--x-range", "0", "6", "--y-range", "0", "6", "--resolution", "12")
    d = json.loads(out)
    assert code == 0 and d["resolution"] == [12, 12] and d["feasible_cells"] > 0
    code, out, _ = run(capsys, "scan-load", "--case", "case9", "--axes", "4", "7",
                       "--x-range", "5", "6", "--y-range", "5", "6", "--resolution", "3")
    assert code == 2
    code, out, _ = run(capsys, "scan-limit", "--case", "case9", "--branch", "7", "--lower", "-3", "-1",
                       "--upper", "1", "3", "--resolution", "3", "--samples", "8",
                       "--free-buses", "4", "7", "--format", "csv")
    assert code == 0 and len(out.splitlines()) == 10
    code, out, _ = run(capsys, "path", "--case", "case9", "--waypoint", "4=0.5,7=0.5",
                       "--waypoint", "4=3.3,7=2.3", "--samples", "20")
    d = json.loads(out)
    assert code == 0 and len(d["samples"]) == 20 and d["changes"]
    code, _, _ = run(capsys, "path", "--case", "case9", "--waypoint", "4=1")
    assert code == 1


def test_case_info(capsys):
    code, out, _ = run(capsys, "case-info", "--case", "case9")
    d = json.loads(out)
    assert code == 0
    assert d["load_buses"] == [4, 5, 6, 7, 8, 9]
    assert d["edge_list"][6]["from"] == 2 and d["edge_list"][6]["to"] == 8
    assert d["combinations"]["total"] == 66


@pytest.mark.parametrize("argv", [
    ["solve", "--case", "case9"],
    ["sensitivity", "--case", "case9", "--format", "csv"],
    ["scan-limit", "--case", "case9", "--branch", "7", "--lower", "-3", "-1", "--upper", "1", "3",
     "--resolution", "2", "--samples", "8", "--seed", "5"],
])
def test_byte_identical_reruns(capsys, tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--out", str(a)]) == main(argv + ["--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "opfgrad", "case-info", "--case", "case9"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["generators"] == 3
