import json

import pytest

from storage.snapshots import write_state
from viscolab.main import main, setup_parser
from viscolab.services.constitutive import ModelParams
from viscolab.services.dynamics import equilibrium_state
from viscolab.services.fields import Grid

SMALL_RUN = {"grid": {"n": 16}, "end_time": 0.002, "cadence": 1}


@pytest.fixture
def finished_run(tmp_path, config_file, capsys):
    path = config_file(SMALL_RUN)
    out = tmp_path / "out"
    assert main(["run", "--config", str(path), "--out", str(out)]) == 0
    status = json.loads(capsys.readouterr().out)
    assert status["status"] == "complete"
    return out


def test_subcommand_is_required():
    with pytest.raises(SystemExit):
        setup_parser().parse_args([])


def test_run_writes_outputs(finished_run):
    assert (finished_run / "status.json").exists()
    assert (finished_run / "timeseries.csv").exists()
    assert (finished_run / "snapshots" / "rho_000002.bin").exists()


def test_run_with_rejected_parameter(tmp_path, config_file):
    path = config_file(SMALL_RUN)
    code = main(["run", "--config", str(path), "--out", str(tmp_path / "bad"), "--override", "params.r=2.0"])
    assert code == 2
    assert not (tmp_path / "bad" / "status.json").exists()


def test_run_with_missing_config(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_check_passes_on_equilibrium(finished_run, capsys):
    assert main(["check", str(finished_run / "snapshots")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["violations"] == []
    assert summary["positivity"]["min_eig_T"] == pytest.approx(1.0)
    assert summary["trace_log"]["sigma"] == 0.1


def test_check_reports_violation(tmp_path, capsys):
    grid = Grid(dim=2, n=8)
    state = equilibrium_state(1.0, 1.0, ModelParams(), grid)
    write_state(state.replace(rho=state.rho * -1.0), tmp_path, 0)
    assert main(["check", str(tmp_path)]) == 4
    summary = json.loads(capsys.readouterr().out)
    assert len(summary["violations"]) == 1


def test_entropy_of_run_against_itself(finished_run, capsys):
    snapshots = str(finished_run / "snapshots")
    assert main(["entropy", snapshots, snapshots, "--step", "1", "--ref-step", "1"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["total"] == 0.0


def test_entropy_on_missing_snapshots(tmp_path):
    assert main(["entropy", str(tmp_path), str(tmp_path)]) == 1


def test_plot(finished_run, capsys):
    png = finished_run / "ledger.png"
    assert main(["plot", str(finished_run / "timeseries.csv"), "--png", str(png)]) == 0
    assert capsys.readouterr().out.strip() == str(png)
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
