"""
Начальные состояния сценариев.

Случайные данные строятся из блока коэффициентов, не зависящего от сетки,
поэтому пресет с одинаковым seed на грубой и мелкой сетке задаёт одни и те же
непрерывные поля (нужно для двойного прогона).
"""
import logging
from typing import Optional

import numpy as np

from storage.models import ForcingKind, ForcingSpec, InitialSpec, Scenario
from viscolab.exceptions import DomainError
from viscolab.services.constitutive import ModelParams
from viscolab.services.dynamics import (
    Forcing,
    State,
    equilibrium_state,
    momentum_rate,
    rhs_continuity,
    rhs_eta,
    rhs_stress,
)
from viscolab.services.fields import (
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
    mollify,
    random_coefficients,
    random_smooth_field,
    resample,
    solenoidal_projection,
)
from viscolab.utils.tensor_calculus import TRIU, full_to_sym

logger = logging.getLogger(__name__)

SHEAR_AMPLITUDE = 1e-2
# доля kη_min, которую может занять случайное возмущение T
STRESS_PERTURBATION_SHARE = 0.5


def _identity_full(grid: Grid, scale) -> np.ndarray:
    full = np.zeros((grid.dim, grid.dim) + grid.shape)
    for i in range(grid.dim):
        full[i, i] = scale
    return full


# ==================== СЛУЧАЙНЫЕ ГЛАДКИЕ ДАННЫЕ ====================

def _random_velocity(grid: Grid, seed: int, spec: InitialSpec) -> VectorField:
    components = [
        random_smooth_field(
            grid, seed + i, decay=spec.decay, amplitude=spec.amplitude, max_wavenumber=spec.max_wavenumber
        ).values
        for i in range(grid.dim)
    ]
    return VectorField(grid, np.stack(components), name="u")


def _random_stress(grid: Grid, seed: int, eta: ScalarField, params: ModelParams, spec: InitialSpec) -> SymTensorField:
    """kηI + симметричное возмущение, ограниченное так, что T остаётся SPD"""
    entries = []
    bound = 0.0
    for c, _ in enumerate(TRIU[grid.dim]):
        s = seed + c
        coeffs = random_coefficients(grid.dim, s, spec.decay, spec.max_wavenumber)
        rms = np.sqrt(np.sum(np.abs(coeffs) ** 2))
        entries.append(
            random_smooth_field(grid, s, decay=spec.decay, amplitude=1.0, max_wavenumber=spec.max_wavenumber).values
        )
        # max|entry| ≤ Σ|ĉ|/rms при единичной амплитуде
        bound += (np.sum(np.abs(coeffs)) / rms) ** 2 if rms > 0 else 0.0

    # спектральная норма ≤ норма Фробениуса ≤ sqrt(2·Σ max|entry|²)
    frobenius_bound = np.sqrt(2.0 * bound)
    scale = STRESS_PERTURBATION_SHARE * params.k * spec.floor / frobenius_bound
    perturbation = scale * np.stack(entries)
    base = full_to_sym(_identity_full(grid, params.k * eta.values), grid.dim)
    return SymTensorField(grid, base + perturbation, name="T")


def random_smooth_state(grid: Grid, params: ModelParams, seed: int, spec: Optional[InitialSpec] = None) -> State:
    spec = spec or InitialSpec()
    rho = random_smooth_field(
        grid, seed, decay=spec.decay, amplitude=spec.amplitude, floor=spec.floor,
        max_wavenumber=spec.max_wavenumber, name="rho",
    )
    eta = random_smooth_field(
        grid, seed + 101, decay=spec.decay, amplitude=spec.amplitude, floor=spec.floor,
        max_wavenumber=spec.max_wavenumber, name="eta",
    )
    u = _random_velocity(grid, seed + 202, spec)
    T = _random_stress(grid, seed + 303, eta, params, spec)
    return State(time=0.0, rho=rho, u=u, eta=eta, T=T, params=params)


def shear_perturbation_state(grid: Grid, params: ModelParams, seed: int, spec: Optional[InitialSpec] = None) -> State:
    """Равновесие + малое соленоидальное возмущение скорости"""
    spec = spec or InitialSpec()
    base = equilibrium_state(spec.rho_bar, spec.eta_bar, params, grid)
    u = solenoidal_projection(_random_velocity(grid, seed, spec))
    peak = float(np.sqrt(np.sum(u.values ** 2, axis=0)).max())
    if peak > 0:
        u = u * (SHEAR_AMPLITUDE / peak)
    return base.replace(u=u)


# ==================== ТЕСТОВОЕ РЕШЕНИЕ ====================

def manufactured_fields(grid: Grid, params: ModelParams) -> State:
    """Стационарные тригонометрические поля (без источников)"""
    coords = grid.coordinates()
    x, y = coords[0], coords[1]
    rho = 1.0 + 0.2 * np.sin(x) * np.cos(y)
    u = [0.3 * np.sin(x) + 0.1 * np.cos(y), 0.1 * np.sin(y) + 0.1 * np.cos(x)]
    eta = 1.0 + 0.2 * np.cos(x + y)

    full = _identity_full(grid, params.k * eta)
    bump = {
        (0, 0): np.cos(y),
        (0, 1): 0.5 * np.sin(x),
        (1, 1): np.sin(x + y),
    }
    if grid.dim == 3:
        z = coords[2]
        u.append(0.1 * np.sin(z))
        bump.update({(0, 2): 0.5 * np.cos(z), (1, 2): 0.5 * np.sin(z), (2, 2): np.cos(x)})
    for (i, j), values in bump.items():
        full[i, j] = full[i, j] + 0.05 * values
        if i != j:
            full[j, i] = full[i, j]

    return State(
        time=0.0,
        rho=ScalarField(grid, rho, name="rho"),
        u=VectorField(grid, np.stack(u), name="u"),
        eta=ScalarField(grid, eta, name="eta"),
        T=SymTensorField(grid, full_to_sym(full, grid.dim), name="T"),
        params=params,
    )


def manufactured_forcing(grid: Grid, params: ModelParams) -> Forcing:
    """
    Источники, делающие тестовые поля стационарным решением.
    Считаются на мелкой сетке и спектрально переносятся на рабочую.
    """
    fine = Grid(dim=grid.dim, n=128 if grid.dim == 2 else max(2 * grid.n, 32), length=grid.length)
    exact = manufactured_fields(fine, params)
    force = -momentum_rate(exact).values / exact.rho.values
    return Forcing(
        force=resample(VectorField(fine, force, name="f"), grid),
        mass_source=resample(-rhs_continuity(exact.rho, exact.u), grid),
        eta_source=resample(-rhs_eta(exact.eta, exact.u, params), grid),
        stress_source=resample(-rhs_stress(exact.T, exact.u, exact.eta, params), grid),
    )


def manufactured_state(grid: Grid, params: ModelParams) -> State:
    return manufactured_fields(grid, params).replace(forcing=manufactured_forcing(grid, params))


# ==================== ВНЕШНЯЯ СИЛА ====================

def body_force(grid: Grid, spec: ForcingSpec) -> Optional[VectorField]:
    if spec.amplitude == 0:
        return None
    coords = grid.coordinates()
    if spec.kind == ForcingKind.SHEAR.value:
        # f = A (sin y, sin z, sin x), бездивергентная
        components = [np.sin(coords[(i + 1) % grid.dim]) for i in range(grid.dim)]
    elif spec.kind == ForcingKind.COMPRESSIVE.value:
        # f = A (sin x, sin y, ...), градиентная, сжимает среду
        components = [np.sin(coords[i]) for i in range(grid.dim)]
    else:
        raise DomainError(f"unknown forcing kind {spec.kind!r}")
    return VectorField(grid, spec.amplitude * np.stack(components), name="f")


# ==================== ДИСПЕТЧЕР ====================

def _regularize(state: State, shift_stress: bool = True) -> State:
    """Θ-сглаживание данных и α-сдвиг начального напряжения"""
    params = state.params
    if params.theta > 0:
        state = state.replace(
            rho=mollify(state.rho, params.theta),
            u=mollify(state.u, params.theta),
            eta=mollify(state.eta, params.theta),
            T=mollify(state.T, params.theta),
        )
    if shift_stress and params.alpha > 0:
        state = state.replace(T=state.T + SymTensorField.identity(state.grid, params.alpha))
    return state


def preset(
    scenario: str,
    grid: Grid,
    params: ModelParams,
    seed: int = 0,
    initial: Optional[InitialSpec] = None,
    forcing: Optional[ForcingSpec] = None,
) -> State:
    initial = initial or InitialSpec()
    logger.info(f"Building {scenario} preset on {grid.dim}D grid n={grid.n} (seed={seed})")

    if scenario == Scenario.EQUILIBRIUM.value:
        state = equilibrium_state(initial.rho_bar, initial.eta_bar, params, grid)
    elif scenario == Scenario.SHEAR_PERTURBATION.value:
        # равновесное T уже содержит сдвиг k·α
        state = _regularize(shear_perturbation_state(grid, params, seed, initial), shift_stress=False)
    elif scenario in (Scenario.RANDOM_SMOOTH.value, Scenario.TWIN_RUN.value):
        state = _regularize(random_smooth_state(grid, params, seed, initial))
    elif scenario == Scenario.MANUFACTURED.value:
        return manufactured_state(grid, params)
    else:
        raise DomainError(f"unknown scenario {scenario!r}")

    force = body_force(grid, forcing) if forcing is not None else None
    if force is not None:
        state = state.replace(forcing=Forcing(force=force))
    return state
