import json
import math
import shutil
import subprocess

import numpy as np
import pytest

from lssweep import cli, fieldio

SMALL = ["--omega-over-2pi", "4", "--ppw", "8", "--b", "4"]


def run(tmp_path, *args):
    return cli.main([*args, "--out", str(tmp_path)])


def test_solve_zero_field(tmp_path, capsys):
    assert run(tmp_path, "solve", *SMALL, "--field", "homogeneous") == 0
    u, header = fieldio.read_lsf(tmp_path / "u.lsf")
    assert not u.any() and header["nx"] == 31
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["iterations"] == 0 and rep["N_iter"] == 0 and rep["N"] == 31**2
    total, _ = fieldio.read_lsf(tmp_path / "total.lsf")
    np.testing.assert_allclose(np.abs(total), 1, atol=1e-14)
    for name in ("u_abs", "u_real", "total_real", "velocity"):
        assert (tmp_path / f"{name}.pgm").exists() and (tmp_path / f"{name}.pgm.json").exists()


def test_solve_same_seed_bit_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(out, "solve", *SMALL, "--field", "iv", "--seed", "11") == 0
    assert (a / "u.lsf").read_bytes() == (b / "u.lsf").read_bytes()
    assert run(tmp_path / "c", "solve", *SMALL, "--field", "iv", "--seed", "12") == 0
    assert (a / "u.lsf").read_bytes() != (tmp_path / "c" / "u.lsf").read_bytes()
    rep = json.loads((a / "report.json").read_text())
    assert rep["converged"] and rep["true_residual"] <= 1e-5


def test_field_i_report(tmp_path):
    # [PAPER] 5 iterations at 16 waves, +-2
    assert run(tmp_path, "solve", "--field", "i") == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert abs(rep["iterations"] - 5) <= 2
    assert {"N", "N_iter", "T_setup", "T_apply", "T_solve"} <= set(rep)


def test_config_file_and_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"omega_over_2pi": 4, "b": 4, "velocity": {"kind": "homogeneous"}}))
    assert run(tmp_path / "o", "solve", "--config", str(cfg)) == 0
    cfg.write_text(json.dumps({"omega_over_2pi": 4, "wavelength": 3}))
    assert run(tmp_path / "o", "solve", "--config", str(cfg)) == 2
    assert "unknown config keys" in capsys.readouterr().err
    cfg.write_text(json.dumps({"velocity": {"kind": "gaussian", "sharpness": 1}}))
    assert run(tmp_path / "o", "solve", "--config", str(cfg)) == 2


@pytest.mark.parametrize("bad", [{"fronts": 3}, {"b": 1}, {"solver": {"tol": 2}}, {"schemes": ["fd"]}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        cli.RunConfig.from_dict(bad)


def test_threads_env_overrides(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    args = cli.build_parser().parse_args(["solve", "--threads", "1"])
    assert cli.resolve_config(args).threads == 3


def test_stencil_eval_outputs(tmp_path):
    assert run(tmp_path, "stencil-eval", "--omega-over-2pi", "16") == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert len(summary["runs"]) == 6
    for scheme in ("sparsify", "qsfem"):
        for p in (3, 4, 5):
            delta, _ = fieldio.read_lsf(tmp_path / f"phase_{scheme}_ppw{p}.lsf")
            assert np.isfinite(delta).all()
            assert (tmp_path / f"phase_{scheme}_ppw{p}.pgm").exists()
        errs = {r["ppw"]: r["max_abs_phase_error"] for r in summary["runs"] if r["scheme"] == scheme}
        assert errs[5] < errs[3]


def test_stencil_eval_exact_green_is_zero(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"omega_over_2pi": 16, "schemes": ["sparsify"], "ppw_list": [4], "exact_green": True}))
    assert run(tmp_path, "stencil-eval", "--config", str(cfg)) == 0
    delta, _ = fieldio.read_lsf(tmp_path / "phase_sparsify_ppw4.lsf")
    assert np.abs(delta).max() <= 1e-15


def test_calibrate_pml(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"C_list": [0, 10], "b_list": [4, 8]}))
    assert run(tmp_path, "calibrate-pml", "--config", str(cfg)) == 0
    cal = json.loads((tmp_path / "calibration.json").read_text())
    proxy = {(r["b"], r["C_pml"]): r["reflection_proxy"] for r in cal["runs"]}
    assert proxy[(8, 0.0)] > 0.1
    assert proxy[(8, 10.0)] < proxy[(4, 10.0)]
    assert cal["recommended_C_pml"] == 10.0 and cal["b"] == 8
    first = (tmp_path / "calibration.json").read_text()
    assert run(tmp_path, "calibrate-pml", "--config", str(cfg)) == 0
    assert (tmp_path / "calibration.json").read_text() == first


def test_selftest_pass_and_fault_injection(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "all checks passed" in out and "FAIL" not in out
    assert cli.main(["selftest", "--corrupt-kernel"]) == 1
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("FAIL") and "FFT" in line for line in lines)


@pytest.mark.skipif(shutil.which("lssweep") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["lssweep", "--help"], capture_output=True, text=True, timeout=60)
    assert res.returncode == 0
    for sub in ("solve", "stencil-eval", "calibrate-pml", "selftest"):
        assert sub in res.stdout
