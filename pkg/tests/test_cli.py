import json
import subprocess
import sys

import pytest

from ddr_divdiv import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_dof_single_shape(capsys):
    code, out, _ = run(capsys, "dof", "--shape", "square", "--k", "3")
    assert code == 0
    assert "PASS gain.square.k3: 60 → 48, 20.0%" in out
    assert "PASSED: 1/1 checks" in out


def test_k_below_three_is_usage_error(capsys):
    code, _, err = run(capsys, "check", "--k", "2")
    assert code == 2
    assert "k >= 3" in err


def test_missing_mesh_is_input_error(capsys, tmp_path):
    code, _, err = run(capsys, "check", "--mesh", str(tmp_path / "nope.json"))
    assert code == 2 and "input error" in err


def test_bad_flag_values_exit_two(capsys):
    assert run(capsys, "check", "--theta", "1.5")[0] == 2
    assert run(capsys, "check", "--levels", "0")[0] == 2
    assert run(capsys, "check", "--family", "pentagon")[0] == 2
    assert run(capsys, "frobnicate")[0] == 2


def test_mesh_and_family_are_exclusive(capsys, tmp_path):
    assert run(capsys, "check", "--mesh", "m.json", "--family", "tri")[0] == 2


def test_family_study_rejects_mesh(capsys, tmp_path):
    from ddr_divdiv.mesh import family_mesh, save_mesh

    p = tmp_path / "m.json"
    save_mesh(family_mesh("square", 2), p)
    code, _, err = run(capsys, "converge", "--mesh", str(p))
    assert code == 2 and "--family" in err


def test_help_lists_flags():
    out = subprocess.run([sys.executable, "-m", "ddr_divdiv", "check", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for flag in ("--mesh", "--family", "--k", "--theta", "--levels", "--start", "--seed", "--tol",
                 "--out", "--workers", "--mode", "--draws"):
        assert flag in out


def test_check_writes_json_and_csv(capsys, tmp_path):
    out = tmp_path / "r.json"
    code, stdout, _ = run(capsys, "check", "--family", "square", "--k", "3", "--draws", "3", "--out", str(out))
    assert code == 0
    d = json.loads(out.read_text())
    assert d["passed"] is True and d["checks"]
    csv = out.with_suffix(".csv").read_text().splitlines()
    assert len(csv) == len(d["checks"]) + 1
    assert sorted(p.name for p in tmp_path.iterdir()) == ["r.csv", "r.json"]


def test_tol_override_can_fail_a_run(capsys):
    code, out, _ = run(capsys, "check", "--family", "square", "--mode", "full", "--draws", "2", "--tol", "0")
    assert code == 1
    assert "FAILED" in out


def test_check_on_mesh_file(capsys, tmp_path):
    from ddr_divdiv.mesh import family_mesh, save_mesh

    p = tmp_path / "m.json"
    save_mesh(family_mesh("hex", 2), p)
    code, out, _ = run(capsys, "check", "--mesh", str(p), "--mode", "full", "--draws", "2")
    assert code == 0


def test_poincare_on_mesh_file(capsys, tmp_path):
    from ddr_divdiv.mesh import family_mesh, save_mesh

    p = tmp_path / "m.json"
    save_mesh(family_mesh("square", 2), p)
    code, out, _ = run(capsys, "poincare", "--mesh", str(p))
    assert code == 0
    assert "poincare_V" in out and "inf_sup" in out


def test_workers_do_not_change_results(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path, w in ((a, "1"), (b, "2")):
        assert run(capsys, "plate", "--start", "2", "--levels", "2", "--workers", w, "--out", str(path))[0] in (0, 1)
    ca = [c["value"] for c in json.loads(a.read_text())["checks"]]
    cb = [c["value"] for c in json.loads(b.read_text())["checks"]]
    assert ca == cb


def test_module_entry_point_exit_code():
    r = subprocess.run([sys.executable, "-m", "ddr_divdiv", "check", "--k", "2"], capture_output=True, text=True)
    assert r.returncode == 2
