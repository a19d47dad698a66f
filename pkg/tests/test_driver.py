import json

import numpy as np
import pytest

from storage.models import GridSpec, RunConfig
from storage.snapshots import available_steps, read_state, read_timeseries
from viscolab.exceptions import BarrierError, DomainError, NonconvergenceError
from viscolab.services import driver
from viscolab.services.driver import Integrator, initial_state, run
from viscolab.services.dynamics import StepConfig
from viscolab.services.twin_run import fine_config, refinement_study, twin_run


def _config(tmp_path, name="run", **changes) -> RunConfig:
    defaults = dict(
        grid=GridSpec(n=16),
        end_time=0.02,
        cadence=5,
        step=StepConfig(dt=1e-3),
        output=str(tmp_path / name),
    )
    defaults.update(changes)
    return RunConfig(**defaults)


def test_equilibrium_run(tmp_path):
    run_config = _config(tmp_path)
    result = run(run_config)
    assert result.status == "complete"
    assert result.steps_completed == 20
    assert result.exit_code == 0

    output = tmp_path / "run"
    status = json.loads((output / "status.json").read_text())
    assert status["status"] == "complete"
    assert (output / "config.json").exists()

    data = read_timeseries(output / "timeseries.csv")
    assert data["step"].tolist() == [0.0, 5.0, 10.0, 15.0, 20.0]
    assert np.allclose(data["time"], [0.0, 0.005, 0.01, 0.015, 0.02], atol=1e-15)
    assert np.allclose(data["kinetic"], 0.0, atol=1e-20)

    assert available_steps(output / "snapshots") == [0, 5, 10, 15, 20]
    first, last = read_state(output / "snapshots", 0), read_state(output / "snapshots")
    for name in ("rho", "u", "eta", "T"):
        assert np.abs(getattr(last, name).values - getattr(first, name).values).max() <= 1e-11


def test_output_times_do_not_depend_on_step_count(tmp_path):
    run_config = _config(tmp_path, end_time=0.012)
    integrator = Integrator(initial_state(run_config), run_config.step, run_config.end_time, run_config.cadence)
    times = [sample.state.time for sample in integrator.samples()]
    assert times == pytest.approx([0.0, 0.005, 0.01, 0.012], abs=1e-15)
    assert integrator.steps == 12


def test_runs_are_deterministic(tmp_path):
    outputs = []
    for name in ("a", "b"):
        run_config = _config(tmp_path, name, scenario="random-smooth", seed=3, end_time=0.004, cadence=2)
        assert run(run_config).status == "complete"
        outputs.append((tmp_path / name / "timeseries.csv").read_bytes())
    assert outputs[0] == outputs[1]


@pytest.mark.parametrize(
    "error, code",
    [
        (NonconvergenceError("synthetic", 50, 1.0), 3),
        (BarrierError("synthetic"), 4),
    ],
)
def test_failed_run_writes_status(tmp_path, monkeypatch, error, code):
    calls = []
    real_step = driver.step

    def failing(state, step_config, max_dt=None):
        calls.append(state.time)
        if len(calls) == 3:
            raise error
        return real_step(state, step_config, max_dt=max_dt)

    monkeypatch.setattr(driver, "step", failing)
    result = run(_config(tmp_path, cadence=1))

    assert result.status == "incomplete"
    assert result.exit_code == code
    assert result.step_index == 3
    assert result.steps_completed == 2

    status = json.loads((tmp_path / "run" / "status.json").read_text())
    assert status["status"] == "incomplete"
    assert status["step_index"] == 3
    assert "synthetic" in status["message"]
    assert read_timeseries(tmp_path / "run" / "timeseries.csv")["step"].tolist() == [0.0, 1.0, 2.0]


def test_fine_config_refines_grid_and_step(tmp_path):
    fine = fine_config(_config(tmp_path), factor=2, dt_divisor=4)
    assert fine.grid.n == 32
    assert fine.step.dt == 2.5e-4
    assert fine.cadence == 20


def test_twin_run_starts_from_identical_data(tmp_path):
    run_config = _config(tmp_path, scenario="twin-run", seed=2, end_time=0.002, cadence=1)
    result = twin_run(run_config)
    assert len(result.coarse) == len(result.fine) == len(result.reports) == 3
    assert result.reports[0].total <= 1e-12
    assert [s.state.time for s in result.fine] == pytest.approx([0.0, 0.001, 0.002], abs=1e-15)
    assert all(np.isfinite(r.total) and r.total >= -1e-12 for r in result.reports)


def test_twin_run_output(tmp_path):
    run_config = _config(tmp_path, scenario="random-smooth", twin=True, end_time=0.002, cadence=1)
    result = run(run_config)
    assert result.status == "complete"
    output = tmp_path / "run"
    data = read_timeseries(output / "timeseries.csv")
    assert "total" in data and len(data["total"]) == 3
    assert available_steps(output / "snapshots_fine") == [0, 4, 8]
    assert read_state(output / "snapshots_fine").grid.n == 32


def test_failed_twin_run_keeps_partial_output(tmp_path, monkeypatch):
    calls = []
    real_step = driver.step

    def failing_on_coarse(state, step_config, max_dt=None):
        if state.grid.n == 16:
            calls.append(state.time)
            if len(calls) == 3:
                raise BarrierError("synthetic")
        return real_step(state, step_config, max_dt=max_dt)

    monkeypatch.setattr(driver, "step", failing_on_coarse)
    run_config = _config(tmp_path, scenario="random-smooth", twin=True, end_time=0.005, cadence=1)
    result = run(run_config)

    assert result.status == "incomplete"
    assert result.exit_code == 4
    assert result.step_index == 3
    assert result.steps_completed == 2

    output = tmp_path / "run"
    status = json.loads((output / "status.json").read_text())
    assert status["status"] == "incomplete"
    assert "synthetic" in status["message"]
    assert read_timeseries(output / "timeseries.csv")["step"].tolist() == [0.0, 1.0, 2.0]
    assert available_steps(output / "snapshots") == [0, 1, 2]
    assert 0 in available_steps(output / "snapshots_fine")


def test_twin_run_raises_when_a_leg_fails(tmp_path, monkeypatch):
    def failing(state, step_config, max_dt=None):
        raise NonconvergenceError("synthetic", 50, 1.0)

    monkeypatch.setattr(driver, "step", failing)
    with pytest.raises(NonconvergenceError):
        twin_run(_config(tmp_path, end_time=0.002, cadence=1))


def test_refinement_study_at_matched_step(tmp_path):
    run_config = _config(tmp_path, scenario="random-smooth", seed=5, end_time=0.002, cadence=2)
    gaps = refinement_study(run_config, coarse_sizes=[16], reference_n=32)
    assert list(gaps) == [16]
    assert np.isfinite(gaps[16].total) and gaps[16].total >= 0.0


def test_refinement_study_needs_a_finer_reference(tmp_path):
    with pytest.raises(DomainError):
        refinement_study(_config(tmp_path), coarse_sizes=[16, 32], reference_n=32)
