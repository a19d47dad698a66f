"""
Оркестрация прогона: пресет -> шаги -> CSV + снапшоты -> status.json.
"""
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

import numpy as np

from storage.models import RunConfig, config_to_dict
from storage.snapshots import TimeSeriesWriter, timeseries_columns, write_state
from viscolab.exceptions import ViscoLabError, exit_code_for
from viscolab.services.diagnostics import RelEntropyReport, energy_ledger, positivity_report
from viscolab.services.dynamics import State, StepConfig, StepReport, step
from viscolab.services.fields import div_array
from viscolab.services.presets import preset

logger = logging.getLogger(__name__)

STATUS_COMPLETE = "complete"
STATUS_INCOMPLETE = "incomplete"


@dataclass(frozen=True, eq=False)
class Sample:
    """Состояние в момент вывода; previous — состояние перед последним шагом"""

    step: int
    state: State
    report: StepReport
    previous: Optional[State] = None


@dataclass(frozen=True)
class RunResult:
    status: str
    steps_completed: int
    wall_time: float
    time: float
    message: str = ""
    step_index: Optional[int] = None
    exit_code: int = 0

    def to_status(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("exit_code")
        return data


def initial_report(state: State) -> StepReport:
    margin = state.params.barrier_limit - float(np.abs(div_array(state.u.values, state.grid)).max())
    return StepReport(picard_iterations=0, final_residual=0.0, dt_used=0.0, barrier_margin=margin)


class Integrator:
    """
    Шагает от state до end_time, выдавая выборки в моменты j·cadence·dt.
    Шаг может быть меньше dt (адаптивность), но моменты вывода не зависят от этого.
    """

    def __init__(self, state: State, step_config: StepConfig, end_time: float, cadence: int):
        self.state = state
        self.step_config = step_config
        self.end_time = end_time
        self.interval = cadence * step_config.dt
        self.steps = 0

    def samples(self) -> Iterator[Sample]:
        yield Sample(0, self.state, initial_report(self.state))
        eps = 1e-9 * self.interval
        j = 1
        while self.state.time < self.end_time - eps:
            target = min(j * self.interval, self.end_time)
            previous, report = self.state, None
            while target - self.state.time > eps:
                previous = self.state
                try:
                    self.state, report = step(self.state, self.step_config, max_dt=target - self.state.time)
                except ViscoLabError as e:
                    e.step_index = self.steps + 1
                    raise
                self.steps += 1
                logger.debug(f"step {self.steps}: t={self.state.time:.6g} dt={report.dt_used:.3e}")
            if report is not None:
                yield Sample(self.steps, self.state, report, previous)
            j += 1


def sample_row(sample: Sample, entropy: Optional[RelEntropyReport] = None) -> Dict[str, Any]:
    row: Dict[str, Any] = {"step": sample.step}
    row.update(energy_ledger(sample.state).as_dict())
    row.update(positivity_report(sample.state).as_dict())
    row.update(asdict(sample.report))
    if entropy is not None:
        row.update(entropy.as_dict())
    return row


def write_status(result: RunResult, output: Path):
    output.mkdir(parents=True, exist_ok=True)
    (output / "status.json").write_text(json.dumps(result.to_status(), indent=2), encoding="utf-8")


def prepare_output(run_config: RunConfig) -> Path:
    output = Path(run_config.output)
    output.mkdir(parents=True, exist_ok=True)
    (output / "config.json").write_text(json.dumps(config_to_dict(run_config), indent=2), encoding="utf-8")
    return output


def initial_state(run_config: RunConfig) -> State:
    return preset(
        run_config.scenario,
        run_config.grid.to_grid(),
        run_config.params,
        seed=run_config.seed,
        initial=run_config.initial,
        forcing=run_config.forcing,
    )


def run(run_config: RunConfig) -> RunResult:
    """Один прогон; для двойного режима делегирует в twin_run"""
    if run_config.is_twin:
        from viscolab.services.twin_run import run_twin
        return run_twin(run_config)

    output = prepare_output(run_config)
    logger.info(f"Run started: scenario={run_config.scenario}, output={output}")
    started = time.perf_counter()
    state = initial_state(run_config)
    integrator = Integrator(state, run_config.step, run_config.end_time, run_config.cadence)
    error: Optional[BaseException] = None

    with TimeSeriesWriter(output / "timeseries.csv", timeseries_columns(twin=False)) as writer:
        try:
            for sample in integrator.samples():
                writer.write_row(sample_row(sample))
                write_state(sample.state, output / "snapshots", sample.step)
        except ViscoLabError as e:
            error = e
            logger.error(f"Run aborted at step {e.step_index}: {e}")
        except Exception as e:
            error = e
            logger.error(f"Run crashed after {integrator.steps} steps: {e}")

    result = finish(error, integrator.steps, integrator.state.time, started)
    write_status(result, output)
    return result


def finish(error: Optional[BaseException], steps: int, t: float, started: float) -> RunResult:
    wall_time = time.perf_counter() - started
    if error is None:
        logger.info(f"Run complete: {steps} steps, t={t:.6g}, wall time {wall_time:.2f}s")
        return RunResult(STATUS_COMPLETE, steps, wall_time, t)
    return RunResult(
        status=STATUS_INCOMPLETE,
        steps_completed=steps,
        wall_time=wall_time,
        time=t,
        message=str(error),
        step_index=getattr(error, "step_index", None),
        exit_code=exit_code_for(error),
    )
