"""
Проверки аналитической структуры модели на численных состояниях:
баланс энергии, баланс следа, относительная энтропия, выпуклость
потенциалов, отношение Корна и мониторы положительности.
"""
import logging
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from viscolab.exceptions import DegenerateFieldError, DomainError, GridMismatchError
from viscolab.services.constitutive import (
    ModelParams,
    barrier,
    fluid_pressure,
    polymer_laws,
    power_law_factor,
)
from viscolab.services.dynamics import State
from viscolab.services.fields import (
    SymTensorField,
    TensorField,
    VectorField,
    grad_array,
    lp_norm,
    product_array,
)
from viscolab.utils.tensor_calculus import (
    apply_fn_batch,
    chi_sigma_batch,
    deviatoric_batch,
    eig_batch,
    min_eig_batch,
    to_leading,
    to_trailing,
)

logger = logging.getLogger(__name__)

# Показатель нормы L^{3+a} для T (a = 0.75)
STRESS_NORM_EXPONENT = 3.75


# ==================== ТИПЫ ОТЧЁТОВ ====================

@dataclass(frozen=True)
class EnergyLedger:
    time: float
    kinetic: float
    pressure_potential: float
    polymer: float
    stress_trace: float
    eta_dissipation: float
    viscous_dissipation: float
    barrier_dissipation: float
    stress_relaxation: float
    forcing: float
    eta_source: float
    barrier_work: float

    @property
    def energy(self) -> float:
        return self.kinetic + self.pressure_potential + self.polymer + self.stress_trace

    def dissipation(self, exact: bool = False) -> float:
        barrier_term = self.barrier_work if exact else self.barrier_dissipation
        return self.eta_dissipation + self.viscous_dissipation + barrier_term + self.stress_relaxation

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class RelEntropyReport:
    E1: float
    E2: float
    stress_gap: float

    @property
    def total(self) -> float:
        return self.E1 + self.E2 + self.stress_gap

    def as_dict(self) -> Dict[str, float]:
        return {"E1": self.E1, "E2": self.E2, "stress_gap": self.stress_gap, "total": self.total}

    @classmethod
    def columns(cls) -> List[str]:
        return ["E1", "E2", "stress_gap", "total"]


@dataclass(frozen=True)
class PositivityReport:
    min_rho: float
    min_eta: float
    min_eig_T: float
    max_div_u_b: float
    stress_norm: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]


# ==================== ЭНЕРГИЯ ====================

def _integral(values: np.ndarray, grid) -> float:
    return float(values.mean() * grid.volume)


def _deviatoric_strain(u: np.ndarray, grid) -> Tuple[np.ndarray, np.ndarray]:
    """Dᵈ(u) в виде (*grid, d, d) и div u"""
    G = to_trailing(grad_array(u, grid))
    return deviatoric_batch(G), np.trace(G, axis1=-2, axis2=-1)


def energy_ledger(state: State) -> EnergyLedger:
    grid, params = state.grid, state.params
    rho, u, eta = state.rho.values, state.u.values, state.eta.values
    T_full = state.T.full()
    d = grid.dim

    Dd, divu = _deviatoric_strain(u, grid)
    dd_sq = np.sum(Dd ** 2, axis=(-2, -1))
    lam = barrier(divu, params, regularized=params.regularized)
    grad_eta_sq = np.sum(grad_array(eta, grid) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        weight = np.where(eta > 0, params.k * params.L / np.where(eta > 0, eta, 1.0), 0.0) + 2.0 * params.zeta
    trace_T = np.trace(T_full, axis1=0, axis2=1)

    if state.forcing.force is not None:
        forcing = _integral(rho * np.sum(state.forcing.force.values * u, axis=0), grid)
    else:
        forcing = 0.0

    return EnergyLedger(
        time=state.time,
        kinetic=_integral(0.5 * rho * np.sum(u ** 2, axis=0), grid),
        pressure_potential=_integral(fluid_pressure(rho, params).P, grid),
        polymer=_integral(polymer_laws(eta, params).G, grid),
        stress_trace=_integral(0.5 * trace_T, grid),
        eta_dissipation=_integral(params.epsilon * weight * grad_eta_sq, grid),
        viscous_dissipation=_integral(2.0 * params.mu0 * power_law_factor(dd_sq, params) * dd_sq, grid),
        barrier_dissipation=_integral(lam.Lam, grid),
        stress_relaxation=_integral(trace_T, grid) / (4.0 * params.lam),
        forcing=forcing,
        eta_source=d * params.k / (4.0 * params.lam) * _integral(eta + params.alpha, grid),
        barrier_work=_integral(lam.Lam_prime * divu, grid),
    )


LedgerLike = Union[EnergyLedger, State]


def _as_ledger(item: LedgerLike) -> EnergyLedger:
    return item if isinstance(item, EnergyLedger) else energy_ledger(item)


def energy_budget_residual(prev: LedgerLike, next: LedgerLike, dt: float, exact: bool = False) -> float:
    """
    [E(next) − E(prev)]/dt + D(next) − forcing − eta_source.
    По умолчанию барьер входит как ∫Λ(div u) (неравенство, невязка ≤ O(dt)),
    с exact=True — как ∫Λ'(div u) div u (тождество первого порядка).
    """
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    a, b = _as_ledger(prev), _as_ledger(next)
    return (b.energy - a.energy) / dt + b.dissipation(exact) - b.forcing - b.eta_source


def trace_balance_residual(prev: State, next: State, dt: float) -> float:
    """d/dt ½∫Tr T + (1/4λ)∫Tr T − (dk/4λ)∫(η+α) − ∫T:∇u"""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    grid, params = next.grid, next.params
    tr_prev = _integral(np.trace(prev.T.full(), axis1=0, axis2=1), grid)
    T_full = next.T.full()
    tr_next = _integral(np.trace(T_full, axis1=0, axis2=1), grid)
    G = grad_array(next.u.values, grid)
    work = _integral(product_array(T_full, G, grid).sum(axis=(0, 1)), grid)
    source = grid.dim * params.k / (4.0 * params.lam) * _integral(next.eta.values + params.alpha, grid)
    return 0.5 * (tr_next - tr_prev) / dt + tr_next / (4.0 * params.lam) - source - work


# ==================== ОТНОСИТЕЛЬНАЯ ЭНТРОПИЯ ====================

def relative_entropy(state: State, ref: State) -> RelEntropyReport:
    if state.grid != ref.grid:
        raise GridMismatchError(f"states live on different grids: {state.grid} vs {ref.grid}")
    grid, params = state.grid, state.params
    rho, rho_ref = state.rho.values, ref.rho.values
    eta, eta_ref = state.eta.values, ref.eta.values

    H, H_ref = fluid_pressure(rho, params), fluid_pressure(rho_ref, params)
    kinetic = 0.5 * rho * np.sum((state.u.values - ref.u.values) ** 2, axis=0)
    E1 = _integral(kinetic + H.P - H_ref.P - H_ref.Hp * (rho - rho_ref), grid)

    G, G_ref = polymer_laws(eta, params), polymer_laws(eta_ref, params)
    with np.errstate(invalid="ignore"):
        linear = np.where(eta == eta_ref, 0.0, G_ref.Gp * (eta - eta_ref))
    E2 = _integral(G.G - G_ref.G - linear, grid)

    gap = state.T.full() - ref.T.full()
    stress_gap = 0.5 * _integral(np.sum(gap ** 2, axis=(0, 1)), grid)
    return RelEntropyReport(E1=E1, E2=E2, stress_gap=stress_gap)


def convexity_gap(
    x,
    x_ref,
    which: str,
    params: Optional[ModelParams] = None,
    bounds: Optional[Tuple[float, float]] = None,
):
    """
    Брегманов зазор F(x) − F(x_ref) − F'(x_ref)(x − x_ref) для F = H (fluid)
    или F = G (polymer) и квадратичная оценка снизу ½·min_{[m,M]} F''·(x − x_ref)².
    По умолчанию [m, M] — отрезок между x и x_ref.
    """
    params = params or ModelParams()
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    if np.any(x <= 0) or np.any(x_ref <= 0):
        raise DomainError("convexity gap is defined for positive arguments only")

    if bounds is None:
        lo, hi = np.minimum(x, x_ref), np.maximum(x, x_ref)
    else:
        lo, hi = float(bounds[0]), float(bounds[1])
        if not 0 < lo <= hi:
            raise DomainError(f"invalid interval {bounds}")

    if which == "fluid":
        laws, ref = fluid_pressure(x, params), fluid_pressure(x_ref, params)
        F, F_ref, Fp_ref = laws.P, ref.P, ref.Hp
        curvature = np.minimum(fluid_pressure(lo, params).Hpp, fluid_pressure(hi, params).Hpp)
    elif which == "polymer":
        laws, ref = polymer_laws(x, params), polymer_laws(x_ref, params)
        F, F_ref, Fp_ref = laws.G, ref.G, ref.Gp
        curvature = np.minimum(polymer_laws(lo, params).Gpp, polymer_laws(hi, params).Gpp)
    else:
        raise DomainError(f"unknown potential {which!r}, expected 'fluid' or 'polymer'")

    gap = F - F_ref - Fp_ref * (x - x_ref)
    bound = 0.5 * curvature * (x - x_ref) ** 2
    if gap.ndim == 0:
        return float(gap), float(bound)
    return gap, bound


# ==================== НЕРАВЕНСТВА ====================

def korn_ratio(v: VectorField, p: float = 2.0) -> float:
    """‖v‖_{1,p} / ‖Dᵈ(v)‖_p для периодического поля с нулевым средним"""
    grid = v.grid
    values = v.values
    mean = values.mean(axis=grid.axes)
    if np.max(np.abs(mean)) > 1e-12 * (1.0 + np.abs(values).max()):
        raise DomainError(f"korn_ratio needs a mean-zero field, mean = {mean}")

    grad = grad_array(values, grid)
    Dd = to_leading(deviatoric_batch(to_trailing(grad)))
    denominator = lp_norm(TensorField(grid, Dd), p)
    if denominator < 1e-14:
        raise DegenerateFieldError(f"deviatoric strain vanishes (‖Dᵈ‖ = {denominator:.3e})")

    if np.isinf(p):
        numerator = max(lp_norm(v, p), lp_norm(TensorField(grid, grad), p))
    else:
        numerator = (lp_norm(v, p) ** p + lp_norm(TensorField(grid, grad), p) ** p) ** (1.0 / p)
    return numerator / denominator


def trace_log_inequality_check(P: SymTensorField, sigma: float) -> Tuple[float, float, float]:
    """
    lhs = −∫∇P :: ∇[χ_σ(P)]⁻¹, rhs = (1/d)∫|∇ Tr log χ_σ(P)|².
    Возвращает (lhs, rhs, lhs − rhs).
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    grid = P.grid
    chi = chi_sigma_batch(P.matrices(), sigma)
    inverse = to_leading(apply_fn_batch(lambda s: 1.0 / s, chi))
    vals, _ = eig_batch(chi)
    trace_log = np.log(vals).sum(axis=-1)

    grad_P = grad_array(P.full(), grid)
    grad_inv = grad_array(inverse, grid)
    lhs = -_integral(np.sum(grad_P * grad_inv, axis=(0, 1, 2)), grid)
    rhs = _integral(np.sum(grad_array(trace_log, grid) ** 2, axis=0), grid) / grid.dim
    return lhs, rhs, lhs - rhs


def positivity_report(state: State) -> PositivityReport:
    grid = state.grid
    mats = state.T.matrices()
    vals, _ = eig_batch(mats)
    spectral_norm = np.abs(vals).max(axis=-1)
    q = STRESS_NORM_EXPONENT
    stress_norm = float((np.sum(spectral_norm ** q) * grid.cell_volume) ** (1.0 / q))
    divu = np.trace(grad_array(state.u.values, grid), axis1=0, axis2=1)
    return PositivityReport(
        min_rho=float(state.rho.values.min()),
        min_eta=float(state.eta.values.min()),
        min_eig_T=float(min_eig_batch(mats).min()),
        max_div_u_b=float(np.abs(divu).max() * state.params.b),
        stress_norm=stress_norm,
    )
