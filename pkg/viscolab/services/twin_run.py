"""
Двойной прогон: грубая сетка против мелкой (n·factor, dt/divisor) из одних и тех же
начальных данных. Мелкое решение служит «сильным» эталоном для относительной энтропии.
"""
import asyncio
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from config import config
from storage.models import GridSpec, RunConfig
from storage.snapshots import TimeSeriesWriter, timeseries_columns, write_state
from viscolab.exceptions import DomainError, ViscoLabError
from viscolab.services.diagnostics import RelEntropyReport, relative_entropy
from viscolab.services.driver import (
    Integrator,
    RunResult,
    Sample,
    finish,
    initial_state,
    prepare_output,
    sample_row,
    write_status,
)
from viscolab.services.dynamics import State
from viscolab.services.fields import Grid, resample

logger = logging.getLogger(__name__)

# строка CSV для выборки грубого прогона, у которой нет пары в мелком
UNPAIRED = RelEntropyReport(math.nan, math.nan, math.nan)


@dataclass(frozen=True, eq=False)
class TwinResult:
    coarse: List[Sample]
    fine: List[Sample]
    reports: List[RelEntropyReport]


@dataclass(eq=False)
class Leg:
    """Одна ветка двойного прогона; samples пополняется по мере счёта"""

    run_config: RunConfig
    samples: List[Sample] = field(default_factory=list)
    steps: int = 0
    time: float = 0.0
    error: Optional[BaseException] = None

    @property
    def n(self) -> int:
        return self.run_config.grid.n


def fine_config(run_config: RunConfig, factor: Optional[int] = None, dt_divisor: Optional[int] = None) -> RunConfig:
    factor = factor or config.twin.fine_factor
    dt_divisor = dt_divisor or config.twin.dt_divisor
    if factor < 1 or dt_divisor < 1:
        raise DomainError(f"refinement factors must be >= 1, got {factor}, {dt_divisor}")
    return run_config.replace(
        grid=_regrid(run_config.grid, run_config.grid.n * factor),
        step=run_config.step.replace(dt=run_config.step.dt / dt_divisor),
        cadence=run_config.cadence * dt_divisor,
    )


def _regrid(grid: GridSpec, n: int) -> GridSpec:
    return GridSpec(dim=grid.dim, n=n, length=grid.length)


def restrict(state: State, grid: Grid) -> State:
    """Спектральное сужение всех полей на сетку grid"""
    return state.replace(
        rho=resample(state.rho, grid),
        u=resample(state.u, grid),
        eta=resample(state.eta, grid),
        T=resample(state.T, grid),
    )


# ==================== ВЕТКИ ====================

def _collect(leg: Leg, stop: threading.Event):
    """Считает ветку; при ошибке оставляет собранные выборки и поднимает stop"""
    integrator = None
    try:
        integrator = Integrator(initial_state(leg.run_config), leg.run_config.step,
                                leg.run_config.end_time, leg.run_config.cadence)
        for sample in integrator.samples():
            leg.samples.append(sample)
            leg.steps, leg.time = sample.step, sample.state.time
            if stop.is_set():
                logger.warning(f"Twin leg n={leg.n} stopped after {integrator.steps} steps: other leg failed")
                return
    except Exception as e:
        leg.error = e
        stop.set()
        if integrator is not None:
            leg.steps, leg.time = integrator.steps, integrator.state.time
        logger.error(f"Twin leg n={leg.n} failed: {e}")
        return
    logger.info(f"Twin leg n={leg.n} finished: {integrator.steps} steps")


async def _run_legs(legs: Iterable[Leg]):
    # ветки ничего не разделяют, поэтому идут в отдельных потоках
    stop = threading.Event()
    await asyncio.gather(*(asyncio.to_thread(_collect, leg, stop) for leg in legs))


def run_legs(coarse: RunConfig, fine: RunConfig) -> Tuple[Leg, Leg]:
    legs = Leg(coarse), Leg(fine)
    asyncio.run(_run_legs(legs))
    return legs


def compare(coarse: List[Sample], fine: List[Sample]) -> List[RelEntropyReport]:
    reports = []
    for c, f in zip(coarse, fine):
        reports.append(relative_entropy(c.state, restrict(f.state, c.state.grid)))
    return reports


def twin_run(run_config: RunConfig, factor: Optional[int] = None, dt_divisor: Optional[int] = None) -> TwinResult:
    coarse, fine = run_legs(run_config, fine_config(run_config, factor, dt_divisor))
    for leg in (coarse, fine):
        if leg.error is not None:
            raise leg.error
    if len(coarse.samples) != len(fine.samples):
        logger.warning(f"Twin legs produced {len(coarse.samples)} and {len(fine.samples)} samples")
    return TwinResult(coarse.samples, fine.samples, compare(coarse.samples, fine.samples))


# ==================== СХОДИМОСТЬ ПО СЕТКЕ ====================

def _final_state(run_config: RunConfig) -> State:
    integrator = Integrator(initial_state(run_config), run_config.step, run_config.end_time, run_config.cadence)
    *_, last = integrator.samples()
    return last.state


async def _final_states(configs: List[RunConfig]) -> List[State]:
    return await asyncio.gather(*(asyncio.to_thread(_final_state, c) for c in configs))


def refinement_study(run_config: RunConfig, coarse_sizes: Iterable[int], reference_n: int) -> Dict[int, RelEntropyReport]:
    """
    Относительная энтропия в end_time для нескольких грубых сеток против одной мелкой.
    Все прогоны идут с одним dt, поэтому зазор определяется только пространственной ошибкой.
    """
    sizes = list(coarse_sizes)
    if any(n >= reference_n for n in sizes):
        raise DomainError(f"coarse sizes {sizes} must be below the reference n={reference_n}")
    configs = [run_config.replace(grid=_regrid(run_config.grid, n)) for n in [reference_n] + sizes]
    reference, *finals = asyncio.run(_final_states(configs))

    gaps = {}
    for n, state in zip(sizes, finals):
        gaps[n] = relative_entropy(state, restrict(reference, state.grid))
        logger.info(f"Refinement n={n} vs n={reference_n}: total={gaps[n].total:.3e}")
    return gaps


# ==================== ВЫВОД ====================

def _write_outputs(output: Path, coarse: Leg, fine: Leg):
    reports = compare(coarse.samples, fine.samples)
    with TimeSeriesWriter(output / "timeseries.csv", timeseries_columns(twin=True)) as writer:
        for i, sample in enumerate(coarse.samples):
            writer.write_row(sample_row(sample, reports[i] if i < len(reports) else UNPAIRED))
            write_state(sample.state, output / "snapshots", sample.step)
    for sample in fine.samples:
        write_state(sample.state, output / "snapshots_fine", sample.step)


def run_twin(run_config: RunConfig) -> RunResult:
    output = prepare_output(run_config)
    fine = fine_config(run_config)
    logger.info(f"Twin run started: n={run_config.grid.n} vs n={fine.grid.n}")
    started = time.perf_counter()

    coarse_leg, fine_leg = run_legs(run_config, fine)
    error = coarse_leg.error or fine_leg.error
    try:
        _write_outputs(output, coarse_leg, fine_leg)
    except Exception as e:
        logger.error(f"Twin outputs could not be written: {e}")
        error = error or e
    if isinstance(error, ViscoLabError):
        logger.error(f"Twin run aborted at step {error.step_index}: {error}")

    final = finish(error, coarse_leg.steps, coarse_leg.time, started)
    write_status(final, Path(output))
    return final
