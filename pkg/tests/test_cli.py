import subprocess
import sys

import pytest

from porofem import cli
from porofem.stepper import StepError


def test_defaults():
    cmd, cfg, _ = cli.parse_config(["run"])
    assert cmd == "run"
    assert (cfg.scenario, cfg.params, cfg.n, cfg.theta, cfg.dt) == ("test1", "test1-soft", 6, 1, None)
    mesh, dt = cli._mesh_and_dt(cfg)
    assert dt == pytest.approx(1 / 36)


def test_flag_overrides_file(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\nscenario = test2\nn = 4\n[params]\nlambda = 5\n")
    _, cfg, _ = cli.parse_config(["run", "--config", str(ini), "--lambda", "1e3", "--n", "3"])
    assert cfg.scenario == "test2" and cfg.n == 3
    assert cfg.model_params().lam == 1e3
    _, cfg, _ = cli.parse_config(["run", "--config", str(ini)])
    assert cfg.model_params().lam == 5.0


def test_empty_file_gives_defaults(tmp_path):
    ini = tmp_path / "empty.ini"
    ini.write_text("")
    _, cfg, _ = cli.parse_config(["study", "--config", str(ini), "--mesh-list", "3,6,12,24"])
    assert cfg.mesh_list == (3, 6, 12, 24) and cfg.params == "test1-soft"


@pytest.mark.parametrize(
    "text",
    [
        "[run]\ncolour = red\n",
        "[run]\nn = six\n",
        "[run]\ntheta = 2\n",
        "[params]\nlambda = -1\n",
        "[params]\ng = 1\n",
        "[extras]\na = 1\n",
        "no section header\n",
    ],
)
def test_bad_config(tmp_path, text, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text(text)
    assert cli.main(["run", "--config", str(ini), "--output-dir", str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_mesh_list_conflicts_with_run(tmp_path):
    assert cli.main(["run", "--mesh-list", "3,6", "--output-dir", str(tmp_path)]) == 2


def test_run_outputs(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--output-dir", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["monitors.csv", "solution_t1.vtk"]
    vtk = (out / "solution_t1.vtk").read_text().splitlines()
    assert vtk[0] == "# vtk DataFile Version 3.0" and "POINT_DATA 49" in vtk
    for field in ("VECTORS u double", "SCALARS p double 1", "SCALARS xi double 1", "SCALARS eta double 1"):
        assert field in vtk
    lines = (out / "monitors.csv").read_text().splitlines()
    assert lines[0].startswith("step,t,newton_iterations") and len(lines) == 37
    first = (out / "monitors.csv").read_bytes()
    assert cli.main(["run", "--output-dir", str(out)]) == 0
    assert (out / "monitors.csv").read_bytes() == first


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("PF_OUTPUT_DIR", str(tmp_path / "env"))
    assert cli.main(["run", "--n", "2", "--no-vtk"]) == 0
    assert (tmp_path / "env" / "monitors.csv").exists()


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["run", "--n", "2", "--output-dir", str(blocker / "sub")]) == 3
    assert str(blocker) in capsys.readouterr().err
    assert sorted(p.name for p in tmp_path.iterdir()) == ["file"]


def test_failure_leaves_nothing(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise StepError("Newton did not converge", 1.0)

    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["run", "--n", "2", "--output-dir", str(tmp_path)]) == 1
    assert list(tmp_path.iterdir()) == []
    assert "step failed" in capsys.readouterr().err


def test_study(tmp_path, capsys):
    assert cli.main(["study", "--mesh-list", "2,3", "--output-dir", str(tmp_path), "--pretty"]) == 0
    text = (tmp_path / "rates.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "h,L2_u,rate,H1_u,rate,L2_p,rate,H1_p,rate"
    assert len(lines) == 3 and lines[1].split(",")[2] == ""
    cap = capsys.readouterr()
    assert "L2_p" in cap.out and "no interpolation error" in cap.err
    assert cli.main(["study", "--mesh-list", "2,3", "--output-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "rates.csv").read_bytes() == text.encode()


def test_study_single_level(tmp_path, capsys):
    assert cli.main(["study", "--mesh-list", "4", "--output-dir", str(tmp_path)]) == 2
    assert "at least 2" in capsys.readouterr().err


def test_audit(capsys):
    assert cli.main(["audit", "--scenario", "test2", "--params", "test2-soft", "--points", "3"]) == 0
    out = capsys.readouterr().out
    assert "f1" in out and "phi" in out


def test_energy(tmp_path):
    args = ["energy", "--scenario", "pure-flux", "--params", "test2-soft", "--n", "3", "--dt", "0.05", "--T", "0.25"]
    assert cli.main(args + ["--random-init", "1e-3", "--output-dir", str(tmp_path), "--C1", "1"]) == 0
    lines = (tmp_path / "energy.csv").read_text().splitlines()
    assert lines[0].startswith("step,t,J,S") and len(lines) == 6


def test_entry_point():
    res = subprocess.run([sys.executable, "-m", "porofem.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "study" in res.stdout
