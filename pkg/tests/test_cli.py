import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cavsme.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main
from cavsme.config import PRESETS


def test_presets_list(capsys):
    assert main(["presets", "list"]) == EXIT_OK
    assert capsys.readouterr().out.split() == sorted(PRESETS)


def test_presets_show(capsys):
    assert main(["presets", "show", "fig3_zeno"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "g_s = 0.001" in out and "[params]" in out
    assert main(["presets", "show", "nope"]) == EXIT_CONFIG


def test_simulate_preset_writes_summary_and_files(tmp_path, capsys):
    code = main(["simulate", "--preset", "fig3_rabi", "--trajectories", "2", "--t-end", "1",
                 "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    cap = capsys.readouterr()
    summary = json.loads(cap.out)
    assert summary["trajectories"] == 2
    assert sorted(os.listdir(tmp_path)) == ["fig3_rabi_final.csv", "fig3_rabi_series.csv"]
    assert "2/2 trajectories" in cap.err


def test_simulate_config_file_and_env_directory(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("name = short\npreset = empty_cavity\nt_end = 2\n[params]\nbeta = 0.1\n")
    out = tmp_path / "env_out"
    monkeypatch.setenv("CAVSME_OUTPUT_DIR", str(out))
    assert main(["simulate", str(cfg), "--set", "record_stride=10"]) == EXIT_OK
    capsys.readouterr()
    assert sorted(os.listdir(out)) == ["short_final.csv", "short_series.csv"]
    text = (out / "short_series.csv").read_text()
    assert "# beta = 0.1" in text and "# record_stride = 10" in text


@pytest.mark.parametrize("argv", [
    ["simulate"],
    ["simulate", "--preset", "nope"],
    ["simulate", "--preset", "fig3_rabi", "--set", "eta=2"],
    ["simulate", "--preset", "fig3_rabi", "--set", "oops"],
    ["oracle", "upq", "--mu", "-1"],
    ["analytic", "fig2", "--r2t", "0"],
])
def test_configuration_errors_exit_2(argv, capsys):
    assert main(argv) == EXIT_CONFIG
    assert capsys.readouterr().err


def test_config_error_reports_line(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("preset = fig3_rabi\n\n[params]\ndt = fast\n")
    assert main(["simulate", str(cfg)]) == EXIT_CONFIG
    assert f"{cfg}:4:" in capsys.readouterr().err


def test_io_errors_exit_4(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "missing.cfg")]) == EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--preset", "fig3_rabi", "--t-end", "0.1",
                 "--output-dir", str(blocker / "sub")]) == EXIT_IO


def test_numerical_abort_exits_3(tmp_path, capsys):
    code = main(["simulate", "--preset", "fig3_rabi", "--set", "equation=linear",
                 "--set", "scheme=euler", "--set", "dt=0.9", "--set", "beta=50",
                 "--set", "n_photons=8", "--trajectories", "1", "--t-end", "20000",
                 "--output-dir", str(tmp_path)])
    assert code == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "trajectory 0" in err and "step" in err


def test_oracle_table(capsys):
    assert main(["oracle", "upq", "--mu", "8"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0] == "k,u00,re_u10,im_u10,u11,re_u20,im_u20"
    rows = np.array([[float(x) for x in ln.split(",")] for ln in body[1:]])
    assert rows[:, 1].sum() == pytest.approx(1.0)
    assert rows[rows[:, 0] == 0, 2:4] == pytest.approx(0.0, abs=1e-14)


def test_analytic_fig2(capsys):
    assert main(["analytic", "fig2", "--r2t", "50"]) == EXIT_OK
    cap = capsys.readouterr()
    assert "# local_maxima = 5" in cap.out
    assert cap.err.startswith("5 local maxima")


def test_console_script_runs():
    res = subprocess.run([sys.executable, "-m", "cavsme.cli", "presets", "list"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "dicke_fig2" in res.stdout.split()
