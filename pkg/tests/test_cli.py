import json
import subprocess
import sys

import pytest

from dualtarget.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    cap = capsys.readouterr()
    values = dict(line.split("=", 1) for line in cap.out.splitlines() if "=" in line and " " not in line)
    return code, values, cap.err


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(
        "[lattice]\nn_space = 81\nn_time = 40\n"
        "[verify]\nn_paths = 300\ntol = 0.5\n"
        "[bsde]\na = 4\nn_paths = 2000\n"
        "[qv]\nn_steps = 2000\n"
        "[tree]\ndepth = 2\n"
    )
    return p


def test_dual_prints_value(capsys, tmp_path):
    code, out, _ = run(capsys, "dual", "--out", str(tmp_path))
    assert code == 0
    assert float(out["v0"]) == pytest.approx(0.7958923738718, abs=1e-12)
    assert out["check"] == "pass"
    for name in ("value_surface.csv", "k_process.csv", "config.cfg", "run_manifest.json"):
        assert (tmp_path / name).exists()
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["command"] == "dual" and set(manifest["outputs"]) >= {"value_surface.csv", "config.cfg"}


def test_oracle_matches_dp(capsys, tmp_path):
    code, out, _ = run(capsys, "oracle", "--depth", "3", "--a0", "1,4", "--out", str(tmp_path))
    assert code == 0
    assert float(out["oracle"]) == pytest.approx(float(out["dp"]), abs=1e-12)
    assert "A0 = [1,4]" in (tmp_path / "config.cfg").read_text()


@pytest.mark.parametrize("command", ["bsde", "pde", "verify", "qv"])
def test_other_commands_run(capsys, tmp_path, small_cfg, command):
    code, out, err = run(capsys, command, "--config", str(small_cfg), "--out", str(tmp_path))
    assert code == 0, err
    assert "check" in out
    assert (tmp_path / "run_manifest.json").exists()


def test_reruns_are_byte_identical(capsys, tmp_path, small_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(capsys, "verify", "--config", str(small_cfg), "--seed", "5", "--out", str(d))[0] == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    assert "[run]\nseed = 5\n" in (a / "config.cfg").read_text()


def test_empty_control_set_is_an_input_error(capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[controls]\nA0 = []\n")
    code, _, err = run(capsys, "dual", "--config", str(bad), "--out", str(tmp_path / "o"))
    assert code == 2
    assert "bad.cfg:2: [controls] A0: must contain at least one diffusion value" in err
    assert not (tmp_path / "o").exists()


def test_unknown_key_is_an_input_error(capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[lattice]\nn_spce = 3\n")
    code, _, err = run(capsys, "dual", "--config", str(bad), "--out", str(tmp_path))
    assert code == 2 and "n_spce" in err


def test_failed_check_exits_one(capsys, tmp_path):
    # a superhedging price far below the dual value cannot pass
    cfg = tmp_path / "low.cfg"
    cfg.write_text("[lattice]\nn_space = 81\nn_time = 40\n[verify]\ny0 = -1\nn_paths = 200\ntol = 0.01\n")
    code, out, err = run(capsys, "verify", "--config", str(cfg), "--out", str(tmp_path), "--assert")
    assert code == 1 and out["check"] == "fail" and "check failed" in err
    code, out, _ = run(capsys, "verify", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 0 and out["check"] == "fail"


def test_output_dir_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("DUALTARGET_OUT", str(tmp_path / "env"))
    assert run(capsys, "oracle", "--depth", "2")[0] == 0
    assert (tmp_path / "env" / "oracle.csv").exists()


def test_suite_subset(capsys, tmp_path):
    code, out, _ = run(capsys, "suite", "--only", "7", "--out", str(tmp_path), "--assert")
    assert code == 0 and out["passed"] == "1"
    rows = (tmp_path / "acceptance.csv").read_text().splitlines()
    assert rows[0] == "criterion,name,passed,value,detail" and len(rows) == 2


def test_bad_flags(capsys, tmp_path):
    assert run(capsys, "suite", "--only", "x", "--out", str(tmp_path))[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["dual", "--threads", "0"])
    assert exc.value.code == 2


def test_console_entry_point_with_threads(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "dualtarget.cli", "oracle", "--depth", "2", "--threads", "1", "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert "check=pass" in proc.stdout
    assert json.loads((tmp_path / "run_manifest.json").read_text())["threads"] == 1
