import os
import subprocess
import sys

import numpy as np
import pytest

from dgiga.analysis import read_csv
from dgiga.cli import LINECUT_POINTS, main


def run(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def kv(text):
    out = {}
    for line in text.splitlines():
        for tok in line.split():
            if "=" in tok:
                k, v = tok.split("=", 1)
                out[k] = v
    return out


def test_solve_example1_level0(capsys, tmp_path):
    code, out, _ = run(capsys, "solve", "--config", "example1", "--out", str(tmp_path))
    assert code == 0
    assert abs(float(kv(out)["lambda_1"]) + 1.51501061) <= 5e-2
    lines = (tmp_path / "example1_L0_linecut.csv").read_text().splitlines()
    assert lines[0] == "# dgiga-csv v1"
    assert len(lines) == LINECUT_POINTS + 2
    assert (tmp_path / "example1_L0_eigen.csv").exists()


def test_solve_box2d_fine(capsys, tmp_path):
    code, out, _ = run(capsys, "solve", "--config", "box2d", "--out", str(tmp_path), "--level", "3")
    assert code == 0
    assert abs(float(kv(out)["lambda_1"]) - np.pi ** 2 / 4) <= 1e-6


def test_overlapping_boxes_exit_2(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("name = bad\nkind = linear\ndomain = 0:2 0:1\n"
                   "patch.0.box = 0:1.2 0:1\npatch.0.elements = 2 2\n"
                   "patch.1.box = 1:2 0:1\npatch.1.elements = 2 2\n")
    code, _, err = run(capsys, "solve", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 2
    assert "[0:1.2, 0:1]" in err and "[1:2, 0:1]" in err


def test_malformed_config_reports_line(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("name = bad\nkind = linear\nnot a key value line\n")
    code, _, err = run(capsys, "solve", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 2 and "line 3" in err


def test_converge_deterministic_csv(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        code, out, _ = run(capsys, "converge", "--config", "box2d", "--out", str(d),
                           "--deterministic", "--levels", "3")
        assert code == 0
    ta = (a / "box2d_converge.csv").read_bytes()
    assert ta == (b / "box2d_converge.csv").read_bytes()
    cols = read_csv(a / "box2d_converge.csv")
    assert cols["eoc_lambda_1"][-1] > 3.5


def test_converge_needs_three_levels(capsys, tmp_path):
    code, _, err = run(capsys, "converge", "--config", "box1d", "--out", str(tmp_path),
                       "--levels", "2")
    assert code == 2 and "refine.levels" in err


def test_converge_example1_p1(capsys, tmp_path):
    code, out, _ = run(capsys, "converge", "--config", "example1", "--out", str(tmp_path),
                       "--degree", "1", "--levels", "3", "--level", "1", "--deterministic")
    assert code == 0
    cols = read_csv(tmp_path / "example1_converge.csv")
    assert 1.7 <= cols["eoc_lambda_1"][-1] <= 2.3


def test_scf_example3(capsys, tmp_path):
    code, out, _ = run(capsys, "scf", "--config", "example3", "--out", str(tmp_path))
    assert code == 0
    res = kv(out.splitlines()[-2])
    assert int(res["iterations"]) <= 60
    assert float(kv(out)["lambda_1_error"]) <= 1e-2
    assert (tmp_path / "example3_L0_density.csv").exists()


def test_scf_without_interaction_matches_solve(capsys, tmp_path):
    from dgiga.config import load_config, serialize_config
    text = serialize_config(load_config("example3")).replace("scf.interaction = 1\n", "")
    cfg = tmp_path / "gp0.cfg"
    cfg.write_text(text + "scf.interaction = 0\n")
    code, out, _ = run(capsys, "scf", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 0
    _, ref, _ = run(capsys, "solve", "--config", "example1", "--out", str(tmp_path))
    assert float(kv(out)["lambda_1"]) == pytest.approx(float(kv(ref)["lambda_1"]), rel=1e-10)


def test_scf_rejects_linear(capsys, tmp_path):
    code, _, err = run(capsys, "scf", "--config", "example1", "--out", str(tmp_path))
    assert code == 2


def test_scf_failure_exit_1(capsys, tmp_path):
    from dgiga.config import load_config, serialize_config
    cfg = tmp_path / "short.cfg"
    cfg.write_text(serialize_config(load_config("example3")).replace("scf.max_iter", "x.unused")
                   + "scf.max_iter = 2\n")
    code, _, err = run(capsys, "scf", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 1 and "last deltas" in err


def test_oracle_2d(capsys, tmp_path):
    code, out, _ = run(capsys, "oracle", "--config", "example2", "--out", str(tmp_path))
    assert code == 0
    assert float(kv(out)["max_rel_eigenvalue_diff"]) <= 1e-9


def test_oracle_refuses_large_3d(capsys, tmp_path):
    code, _, err = run(capsys, "oracle", "--config", "example5", "--out", str(tmp_path))
    assert code == 3 and "refused" in err


def test_module_entry_point_and_env(tmp_path):
    env = dict(os.environ, DGIGA_LOG="INFO")
    res = subprocess.run([sys.executable, "-m", "dgiga", "scf", "--config", "example3", "--out",
                          str(tmp_path), "--threads", "1"], capture_output=True, text=True,
                         env=env, timeout=300)
    assert res.returncode == 0
    assert "INFO dgiga.scf" in res.stderr


def test_source_kind(capsys, tmp_path):
    cfg = tmp_path / "src.cfg"
    cfg.write_text("name = src\nkind = source\ndomain = 0:1\ndegree = 2\n"
                   "patch.0.box = 0:0.5\npatch.0.elements = 2\n"
                   "patch.1.box = 0.5:1\npatch.1.elements = 3\nsource.value = 1\n")
    code, out, _ = run(capsys, "solve", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 0
    # -w''/2 = 1 gives w = x (1 - x), whose L2 norm is sqrt(1/30)
    assert float(kv(out)["l2_norm"]) == pytest.approx(np.sqrt(1 / 30), rel=1e-6)
