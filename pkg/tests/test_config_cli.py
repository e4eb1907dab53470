import json
import math
import os

import numpy as np
import pytest

from dtngrating import cli
from dtngrating.adapt import IterationLog
from dtngrating.config import load_config, parse_config
from dtngrating.errors import ConfigError

HERE = os.path.dirname(__file__)
CONFIGS = os.path.join(HERE, os.pardir, "configs")

SMALL = """
[geometry]
L1 = 0.5
L2 = 0.5
b1 = 0.3
b2 = -0.3

[materials]
layout = flat
eps_top = 1.0
eps_bottom = 2.25

[incidence]
wavelength = 1.0
theta1 = 30
theta2 = 30
polarization = te

[adaptivity]
tol = 1e-3
max_iter = 3
initial_h = 0.25
N1 = 3
N2 = 3

[output]
directory = out
prefix = small
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def test_shipped_configs_parse():
    c1 = load_config(os.path.join(CONFIGS, "example1.ini"))
    assert c1.layout == "flat"
    assert c1.wave.theta1 == pytest.approx(math.pi / 6)
    assert c1.scene.bottom.eps == 2.25
    assert c1.adapt.max_dofs == 200_000
    c2 = load_config(os.path.join(CONFIGS, "example2.ini"))
    assert c2.layout == "checkerboard"
    assert c2.scene.L1 == pytest.approx(1.25 * math.sqrt(2))
    assert c2.wave.p == pytest.approx((1.0, 1.0, 0.0))
    assert os.path.isabs(c2.output.directory)


def test_config_values_and_relative_output(tmp_path, small_config):
    cfg = load_config(small_config)
    assert cfg.adapt.truncation == (3, 3)
    assert cfg.adapt.initial_h == 0.25
    assert cfg.output.directory == str(tmp_path / "out")
    assert cfg.output.vtk is True


def test_complex_permittivity_and_auto_polarization():
    text = SMALL.replace("eps_bottom = 2.25", "eps_bottom = 2.25+0.1j").replace(
        "polarization = te", "polarization = 1, 0, auto"
    )
    cfg = parse_config(text)
    assert cfg.scene.bottom.eps == 2.25 + 0.1j
    q = np.array([*cfg.wave.alpha, -cfg.wave.beta])
    assert abs(q @ np.asarray(cfg.wave.p)) < 1e-12


def test_boxes_layout():
    text = SMALL.replace("layout = flat", "layout = boxes\nbox.a = 0 0 0 0.5 0.5 0.3 1.0\nbox.b = 0 0 -0.3 0.5 0.5 0 2.25")
    cfg = parse_config(text)
    assert len(cfg.scene.regions) == 2


@pytest.mark.parametrize(
    "old, new",
    [
        ("L1 = 0.5\n", ""),
        ("layout = flat", "layout = spiral"),
        ("N2 = 3\n", ""),
        ("tol = 1e-3", "tol = 1e-3\ntau = 1.5"),
        ("polarization = te", "polarization = 1, 2"),
        ("b2 = -0.3", "b2 = 0.4"),
        ("L1 = 0.5", "L1 = half"),
        ("[output]", "[output\n"),
    ],
)
def test_invalid_configs(old, new):
    assert old in SMALL
    with pytest.raises(ConfigError):
        parse_config(SMALL.replace(old, new))


def test_modes_table_n1(capsys):
    assert cli.main(["modes", "--config", os.path.join(CONFIGS, "example1.ini"), "--N", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4
    rows = [ln.split()[:2] for ln in lines[1:]]
    assert sorted(rows) == sorted([["0", "0"], ["-1", "0"], ["0", "-1"]])
    assert lines[1].endswith("propagating")


def test_format_mode_table_rows():
    from dtngrating.quasi_fourier import build_mode_set

    cfg = load_config(os.path.join(CONFIGS, "example1.ini"))
    ms = build_mode_set(cfg.wave, cfg.scene.media, 0.5, 0.5, 2, 2)
    assert len(cli.format_mode_table(ms).splitlines()) == len(ms.modes(1)) + 1


def test_missing_config_exits_2(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["solve", "--config", "does/not/exist.ini"])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_bad_config_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(SMALL.replace("layout = flat", "layout = spiral"))
    assert cli.main(["modes", "--config", str(path)]) == 1
    assert "unknown layout" in capsys.readouterr().err


def test_solve_adaptive_and_uniform_write_distinct_logs(tmp_path, small_config):
    out = tmp_path / "runs"
    assert cli.main(["solve", "--config", str(small_config), "--output-dir", str(out)]) == 0
    assert cli.main(["solve", "--config", str(small_config), "--output-dir", str(out), "--uniform"]) == 0
    a, u = out / "small_adaptive_log.csv", out / "small_uniform_log.csv"
    assert a.exists() and u.exists()
    assert a.read_text() != u.read_text()
    la, lu = IterationLog.read_csv(a), IterationLog.read_csv(u)
    assert len(la) == len(lu) == 3
    assert lu.column("elements")[1] == 8 * lu.column("elements")[0]
    summary = json.loads((out / "small_adaptive_summary.json").read_text())
    assert summary["stop_reason"] == "max_iterations"
    assert summary["r_exact"] == pytest.approx([-0.24035, 0.0], abs=1e-4)
    assert summary["efficiency_total"] == pytest.approx(1.0, abs=1e-8)
    vtk = (out / "small_adaptive.vtk").read_text()
    assert vtk.startswith("# vtk DataFile Version")
    assert "E_amplitude" in vtk and "eta" in vtk


def test_solve_overrides(tmp_path, small_config):
    out = tmp_path / "runs"
    args = ["solve", "--config", str(small_config), "--output-dir", str(out),
            "--tau", "0.5", "--max-dofs", "2000", "--solver", "iterative"]
    assert cli.main(args) == 0
    summary = json.loads((out / "small_adaptive_summary.json").read_text())
    assert summary["dofs"] <= 2000


def test_study_writes_comparison(tmp_path, small_config, capsys):
    out = tmp_path / "study"
    assert cli.main(["study", "--config", str(small_config), "--output-dir", str(out)]) == 0
    study = json.loads((out / "small_study.json").read_text())
    assert study["error_measure"] == "true_error"
    assert set(study["slopes_last5"]) == {"adaptive", "uniform"}
    for row in study["matched_levels"]:
        assert row["adaptive_fewer"] == (row["adaptive_dofs"] < row["uniform_dofs"])
    assert "adaptive:" in capsys.readouterr().out


def test_audit_mesh(small_config, capsys):
    rc = cli.main(["audit-mesh", "--config", str(small_config), "--refine-steps", "20", "--batch", "3", "--seed", "1"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "audit: ok" in out
