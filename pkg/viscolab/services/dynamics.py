"""
Эволюция (ϱ, u, η, T): правые части уравнений и шаг по времени.

Шаг повторяет схему неподвижной точки w ↦ (ϱ, η) ↦ T ↦ u:
перенос явно, диффузия и релаксация — экспоненциальным интегратором по модам,
импульс — неявно, нелинейность напряжения разрешается демпфированным Пикаром
по полям коэффициентов.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from config import config
from viscolab.exceptions import (
    AdmissibilityError,
    BarrierError,
    DomainError,
    NonconvergenceError,
    PositivityError,
)
from viscolab.services.constitutive import (
    ModelParams,
    barrier,
    fluid_pressure,
    polymer_laws,
    power_law_factor,
)
from viscolab.services.fields import (
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
    dealias_array,
    div_array,
    grad_array,
    l2_array,
    laplacian_array,
    product_array,
    to_physical,
    to_spectral,
)
from viscolab.utils.tensor_calculus import (
    chi_sigma_batch,
    eig_batch,
    full_to_sym,
    to_leading,
    to_trailing,
)

logger = logging.getLogger(__name__)


# ==================== ТИПЫ ====================

@dataclass(frozen=True, eq=False)
class Forcing:
    """Внешняя сила f (входит как ϱf) и источники для тестовых решений"""

    force: Optional[VectorField] = None
    mass_source: Optional[ScalarField] = None
    eta_source: Optional[ScalarField] = None
    stress_source: Optional[SymTensorField] = None

    @property
    def is_zero(self) -> bool:
        return all(
            f is None
            for f in (self.force, self.mass_source, self.eta_source, self.stress_source)
        )


@dataclass(frozen=True, eq=False)
class State:
    time: float
    rho: ScalarField
    u: VectorField
    eta: ScalarField
    T: SymTensorField
    params: ModelParams
    forcing: Forcing = field(default_factory=Forcing)

    @property
    def grid(self) -> Grid:
        return self.rho.grid

    def replace(self, **changes) -> "State":
        return replace(self, **changes)

    def check_invariants(self):
        """Положительность плотностей и барьер по дивергенции"""
        if self.rho.values.min() <= 0:
            raise PositivityError(f"density lost positivity: min = {self.rho.values.min():.6g}")
        if self.eta.values.min() < 0:
            raise PositivityError(f"polymer density negative: min = {self.eta.values.min():.6g}")
        max_div = float(np.abs(_divergence(self.u.values, self.grid)).max())
        if max_div >= self.params.barrier_limit:
            raise BarrierError(
                f"max|div u| = {max_div:.6g} reached the barrier 1/b = {self.params.barrier_limit:.6g}"
            )


@dataclass(frozen=True)
class StepConfig:
    dt: float = 1e-3
    picard_tol: float = 1e-10
    picard_max: int = 50
    damping: float = 0.7
    max_halvings: int = config.solver.max_halvings

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not self.picard_tol > 0:
            raise DomainError(f"picard_tol must be positive, got {self.picard_tol}")
        if self.picard_max < 1:
            raise DomainError(f"picard_max must be >= 1, got {self.picard_max}")
        if not 0 < self.damping <= 1:
            raise DomainError(f"damping must lie in (0, 1], got {self.damping}")
        if self.max_halvings < 0:
            raise DomainError(f"max_halvings must be >= 0, got {self.max_halvings}")

    def replace(self, **changes) -> "StepConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class StepReport:
    picard_iterations: int
    final_residual: float
    dt_used: float
    barrier_margin: float
    momentum_iterations: int = 0
    halvings: int = 0


# ==================== ТОЧЕЧНЫЕ ВЕЛИЧИНЫ ====================

def _identity(grid: Grid) -> np.ndarray:
    return np.eye(grid.dim).reshape((grid.dim, grid.dim) + (1,) * grid.dim)


def _divergence(u: np.ndarray, grid: Grid) -> np.ndarray:
    return div_array(u, grid)


def _strain(u: np.ndarray, grid: Grid) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """∇u ([i, j] = ∂_j u_i), Dᵈ(u) и div u"""
    G = grad_array(u, grid)
    divu = np.trace(G, axis1=0, axis2=1)
    Dd = 0.5 * (G + np.swapaxes(G, 0, 1)) - divu / grid.dim * _identity(grid)
    return G, Dd, divu


def stress_hat(T_full: np.ndarray, params: ModelParams) -> np.ndarray:
    """T̂ = T при σ = 0, иначе χ_σ(Tˢ)"""
    if params.sigma <= 0:
        return T_full
    Ts = 0.5 * (T_full + np.swapaxes(T_full, 0, 1))
    return to_leading(chi_sigma_batch(to_trailing(Ts), params.sigma))


def _trace_log(T_hat: np.ndarray) -> np.ndarray:
    vals, _ = eig_batch(to_trailing(T_hat))
    if np.any(vals <= 0):
        raise DomainError(
            f"Tr log T needs a positive definite stress, min eigenvalue = {vals.min():.6g}"
        )
    return np.log(vals).sum(axis=-1)


def _coefficients(u: np.ndarray, params: ModelParams, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Поля коэффициентов: степенной множитель и секущая барьера β = Λ'(z)/z"""
    _, Dd, divu = _strain(u, grid)
    c = power_law_factor(np.sum(Dd ** 2, axis=(0, 1)), params)
    beta = barrier(divu, params, regularized=params.regularized).beta
    return c, beta


def _viscous_stress_full(u: np.ndarray, c: np.ndarray, beta: np.ndarray, params: ModelParams, grid: Grid) -> np.ndarray:
    """S = 2μ₀ c Dᵈ + (β div u) I с деалиазингом произведений"""
    _, Dd, divu = _strain(u, grid)
    deviatoric = 2.0 * params.mu0 * product_array(c, Dd, grid)
    isotropic = product_array(beta, divu, grid)
    return deviatoric + isotropic * _identity(grid)


def _pressure_gradient(rho: np.ndarray, eta: np.ndarray, T_hat: np.ndarray, params: ModelParams, grid: Grid) -> np.ndarray:
    """∇p(ϱ) + ∇q(η) + (α/2)∇Tr log T̂"""
    scalar = fluid_pressure(rho, params).p + polymer_laws(eta, params).q
    if params.alpha > 0:
        scalar = scalar + 0.5 * params.alpha * _trace_log(T_hat)
    return grad_array(dealias_array(scalar, grid), grid)


def _forcing_arrays(state: State):
    grid = state.grid
    forcing = state.forcing
    m = len(state.T.data)
    zero_scalar = np.zeros(grid.shape)
    return (
        forcing.force.values if forcing.force is not None else np.zeros((grid.dim,) + grid.shape),
        forcing.mass_source.values if forcing.mass_source is not None else zero_scalar,
        forcing.eta_source.values if forcing.eta_source is not None else zero_scalar,
        forcing.stress_source.values if forcing.stress_source is not None else np.zeros((m,) + grid.shape),
    )


# ==================== ПРАВЫЕ ЧАСТИ ====================

def _transport_rate(scalar: np.ndarray, u: np.ndarray, grid: Grid) -> np.ndarray:
    """−div(s u) в консервативной форме"""
    return -div_array(product_array(scalar, u, grid), grid)


def rhs_continuity(rho: ScalarField, u: VectorField) -> ScalarField:
    return rho.with_values(_transport_rate(rho.values, u.values, rho.grid), name="rho_t")


def rhs_eta(eta: ScalarField, u: VectorField, params: ModelParams) -> ScalarField:
    grid = eta.grid
    values = _transport_rate(eta.values, u.values, grid) + params.epsilon * laplacian_array(eta.values, grid)
    return eta.with_values(values, name="eta_t")


def _stress_explicit(
    T_full: np.ndarray,
    T_hat: np.ndarray,
    u: np.ndarray,
    eta: np.ndarray,
    params: ModelParams,
    grid: Grid,
) -> np.ndarray:
    """
    Всё, кроме εΔT − (1/2λ)T:
    −Div(u T̂) + (∇u T̂ + T̂ ∇ᵀu) + (k/2λ)(η+α) I − (1/2λ)(T̂ − T)
    """
    G = grad_array(u, grid)
    flux = product_array(T_hat[:, :, None], u[None, None], grid)
    transport = -div_array(flux, grid)
    M = product_array(G[:, :, None], T_hat[None, :, :], grid).sum(axis=1)
    stretch = M + np.swapaxes(M, 0, 1)
    source = (params.k / (2.0 * params.lam)) * (eta + params.alpha) * _identity(grid)
    correction = -(T_hat - T_full) / (2.0 * params.lam)
    return transport + stretch + source + correction


def rhs_stress(T: SymTensorField, u: VectorField, eta: ScalarField, params: ModelParams) -> SymTensorField:
    grid = T.grid
    T_full = T.full()
    T_hat = stress_hat(T_full, params)
    rate = (
        _stress_explicit(T_full, T_hat, u.values, eta.values, params, grid)
        + params.epsilon * laplacian_array(T_full, grid)
        - T_full / (2.0 * params.lam)
    )
    return T.with_values(full_to_sym(rate, grid.dim), name="T_t")


def rhs_renormalized(
    z: ScalarField,
    rho: ScalarField,
    u: VectorField,
    b: Callable[[np.ndarray], np.ndarray],
    b_prime: Callable[[np.ndarray], np.ndarray],
) -> ScalarField:
    """Перенормированное уравнение неразрывности для z = b(ϱ):
    ∂z/∂t = −div(z u) − (ϱb'(ϱ) − b(ϱ)) div u"""
    grid = z.grid
    r = rho.values
    divu = _divergence(u.values, grid)
    values = _transport_rate(z.values, u.values, grid) - product_array(r * b_prime(r) - b(r), divu, grid)
    return z.with_values(values, name="renormalized_t")


def momentum_rate(state: State) -> VectorField:
    """∂(ϱu)/∂t, вычисленная явно"""
    grid, params = state.grid, state.params
    rho, u, eta = state.rho.values, state.u.values, state.eta.values
    force = _forcing_arrays(state)[0]
    T_hat = stress_hat(state.T.full(), params)

    m = product_array(rho, u, grid)
    convective = div_array(product_array(m[:, None], u[None], grid), grid)
    c, beta = _coefficients(u, params, grid)
    S = _viscous_stress_full(u, c, beta, params, grid)
    rate = (
        -convective
        - _pressure_gradient(rho, eta, T_hat, params, grid)
        + div_array(S, grid)
        + div_array(T_hat, grid)
        + product_array(rho, force, grid)
    )
    return state.u.with_values(dealias_array(rate, grid), name="momentum_t")


def _solve_mass(rho: np.ndarray, rhs: np.ndarray, grid: Grid, x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Решает P(ϱ·a) = rhs на сохраняемых модах"""
    shape = rhs.shape
    size = rhs.size
    mask = grid.dealias_mask
    rho_bar = float(rho.mean())

    def matvec(x):
        return product_array(rho, x.reshape(shape), grid).ravel()

    def precond(x):
        return to_physical(mask * to_spectral(x.reshape(shape), grid), grid).ravel() / rho_bar

    A = LinearOperator((size, size), matvec=matvec, dtype=float)
    M = LinearOperator((size, size), matvec=precond, dtype=float)
    start = None if x0 is None else x0.ravel()
    x, info = cg(A, rhs.ravel(), x0=start, rtol=config.solver.cg_rtol, atol=0.0,
                 maxiter=config.solver.cg_maxiter, M=M)
    if info > 0:
        logger.warning(f"Mass solve did not reach tolerance in {info} iterations")
    return x.reshape(shape)


def velocity_rate(state: State) -> VectorField:
    """∂u/∂t из P(ϱ ∂u/∂t) = ∂(ϱu)/∂t − P(u ∂ϱ/∂t)"""
    grid = state.grid
    _, mass_source, _, _ = _forcing_arrays(state)
    rho_t = _transport_rate(state.rho.values, state.u.values, grid) + mass_source
    rhs = momentum_rate(state).values - product_array(rho_t, state.u.values, grid)
    accel = _solve_mass(state.rho.values, dealias_array(rhs, grid), grid)
    return state.u.with_values(accel, name="u_t")


def explicit_rates(state: State) -> Dict[str, np.ndarray]:
    """Скорости изменения всех полей, включая источники"""
    _, mass_source, eta_source, stress_source = _forcing_arrays(state)
    params = state.params
    return {
        "rho": rhs_continuity(state.rho, state.u).values + mass_source,
        "u": velocity_rate(state).values,
        "eta": rhs_eta(state.eta, state.u, params).values + eta_source,
        "T": rhs_stress(state.T, state.u, state.eta, params).values + stress_source,
    }


# ==================== РЕШАТЕЛЬ ИМПУЛЬСА ====================

class MomentumOperator:
    """
    Линейный оператор с замороженными коэффициентами:
    A u = P(ϱu)/dt − div(2μ₀ P(c Dᵈ u) + P(β div u) I).
    Симметричен и положительно определён на сохраняемых модах.
    """

    def __init__(self, rho: np.ndarray, c: np.ndarray, beta: np.ndarray, dt: float, params: ModelParams, grid: Grid):
        self.rho = rho
        self.c = c
        self.beta = beta
        self.dt = dt
        self.params = params
        self.grid = grid
        self.shape = (grid.dim,) + grid.shape

        # константные коэффициенты для предобуславливателя
        mu = params.mu0 * float(c.mean())
        self._a = float(rho.mean()) / dt + mu * grid.k2
        self._g = mu * (1.0 - 2.0 / grid.dim) + float(beta.mean())

    def apply(self, u: np.ndarray) -> np.ndarray:
        mass = product_array(self.rho, u, self.grid) / self.dt
        S = _viscous_stress_full(u, self.c, self.beta, self.params, self.grid)
        return mass - div_array(S, self.grid)

    def precondition(self, r: np.ndarray) -> np.ndarray:
        """Точный обратный по модам для постоянных коэффициентов (Шерман–Моррисон)"""
        grid = self.grid
        coeffs = to_spectral(r, grid)
        kvec = grid.wavevector
        kdot = np.sum(kvec * coeffs, axis=0)
        out = (coeffs - self._g * kvec * kdot / (self._a + self._g * grid.k2)) / self._a
        return to_physical(grid.dealias_mask * out, grid)

    def solve(self, rhs: np.ndarray, x0: np.ndarray) -> np.ndarray:
        size = rhs.size
        A = LinearOperator((size, size), matvec=lambda x: self.apply(x.reshape(self.shape)).ravel(), dtype=float)
        M = LinearOperator((size, size), matvec=lambda x: self.precondition(x.reshape(self.shape)).ravel(), dtype=float)
        x, info = cg(A, rhs.ravel(), x0=x0.ravel(), rtol=config.solver.cg_rtol, atol=0.0,
                     maxiter=config.solver.cg_maxiter, M=M)
        if info > 0:
            logger.warning(f"Momentum CG stopped after {info} iterations without reaching tolerance")
        return x.reshape(self.shape)


def _momentum_rhs(state: State, previous: State, w: np.ndarray, dt: float) -> np.ndarray:
    grid, params = state.grid, state.params
    force = _forcing_arrays(state)[0]
    T_hat = stress_hat(state.T.full(), params)
    m_old = product_array(previous.rho.values, previous.u.values, grid)
    convective = div_array(product_array(m_old[:, None], w[None], grid), grid)
    rhs = (
        m_old / dt
        - convective
        - _pressure_gradient(state.rho.values, state.eta.values, T_hat, params, grid)
        + div_array(T_hat, grid)
        + product_array(state.rho.values, force, grid)
    )
    return dealias_array(rhs, grid)


def _solve_momentum(
    state: State,
    u_guess: VectorField,
    dt: float,
    step_config: StepConfig,
    previous: State,
    advecting: np.ndarray,
) -> Tuple[np.ndarray, float, int]:
    grid, params = state.grid, state.params
    rhs = _momentum_rhs(state, previous, advecting, dt)
    rho = state.rho.values

    u = dealias_array(u_guess.values, grid)
    c, beta = _coefficients(u, params, grid)
    theta = step_config.damping
    residual = float("inf")

    for iteration in range(1, step_config.picard_max + 1):
        operator = MomentumOperator(rho, c, beta, dt, params, grid)
        u_new = operator.solve(rhs, x0=u)
        residual = l2_array(u_new - u, grid)
        u = u_new
        logger.debug(f"momentum Picard {iteration}: residual={residual:.3e}")
        if residual <= step_config.picard_tol:
            return u, residual, iteration

        # BarrierError отсюда, если итерация вышла за 1/b
        c_new, beta_new = _coefficients(u, params, grid)
        c = (1.0 - theta) * c + theta * c_new
        beta = (1.0 - theta) * beta + theta * beta_new

    raise NonconvergenceError("momentum Picard iteration failed", step_config.picard_max, residual)


def solve_momentum(
    state: State,
    u_guess: VectorField,
    dt: float,
    step_config: Optional[StepConfig] = None,
    previous: Optional[State] = None,
    advecting: Optional[VectorField] = None,
) -> Tuple[VectorField, float]:
    """
    Неявный шаг импульса на сохраняемых модах:
    P(ϱⁿ⁺¹uⁿ⁺¹ − ϱⁿuⁿ)/dt + div(ϱⁿ w⊗uⁿ) + ∇p(ϱⁿ⁺¹) − div S(uⁿ⁺¹)
        − div T̂ + ∇q(η) + (α/2)∇Tr log T̂ − ϱⁿ⁺¹f = 0.
    `state` несёт ϱⁿ⁺¹, η, T и uⁿ; `previous` — состояние на слое n
    (по умолчанию само `state`), `advecting` — переносящая скорость w.
    """
    step_config = step_config or StepConfig(dt=dt)
    previous = previous or state
    w = (advecting or previous.u).values
    u, residual, _ = _solve_momentum(state, u_guess, dt, step_config, previous, w)
    return state.u.with_values(u, name="u"), residual


# ==================== ШАГ ПО ВРЕМЕНИ ====================

def _exponential_factors(L: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """exp(−L dt) и dt·φ₁(−L dt) = (1 − exp(−L dt))/L"""
    E = np.exp(-L * dt)
    safe = np.where(L > 0, L, 1.0)
    phi_dt = np.where(L > 0, -np.expm1(-L * dt) / safe, dt)
    return E, phi_dt


def _advance(state: State, dt: float, step_config: StepConfig):
    grid, params = state.grid, state.params
    rho_n, u_n, eta_n = state.rho.values, state.u.values, state.eta.values
    T_n = state.T.full()
    T_hat_n = stress_hat(T_n, params)
    _, mass_source, eta_source, stress_source = _forcing_arrays(state)
    stress_source_full = SymTensorField(grid, stress_source).full()

    E_eta, phi_eta = _exponential_factors(params.epsilon * grid.k2, dt)
    E_T, phi_T = _exponential_factors(params.epsilon * grid.k2 + 1.0 / (2.0 * params.lam), dt)
    eta_n_hat = to_spectral(eta_n, grid)
    T_n_hat = to_spectral(T_n, grid)

    w = dealias_array(u_n, grid)
    residual = float("inf")
    momentum_iterations = 0

    for iteration in range(1, step_config.picard_max + 1):
        # (i) плотности с текущей скоростью w
        rho = rho_n + dt * (_transport_rate(rho_n, w, grid) + mass_source)
        if rho.min() <= 0:
            raise PositivityError(f"density lost positivity: min = {rho.min():.6g}")
        eta_rate = _transport_rate(eta_n, w, grid) + eta_source
        eta = to_physical(E_eta * eta_n_hat + phi_eta * to_spectral(eta_rate, grid), grid)
        if eta.min() < 0:
            raise PositivityError(f"polymer density negative: min = {eta.min():.6g}")

        # (ii) напряжение
        T_rate = _stress_explicit(T_n, T_hat_n, w, eta, params, grid) + stress_source_full
        T = to_physical(E_T * T_n_hat + phi_T * to_spectral(T_rate, grid), grid)

        # (iii) импульс
        mid = state.replace(
            rho=state.rho.with_values(rho),
            eta=state.eta.with_values(eta),
            T=state.T.with_values(full_to_sym(T, grid.dim)),
        )
        u, _, inner = _solve_momentum(mid, state.u.with_values(w), dt, step_config, state, w)
        momentum_iterations += inner

        # (iv) неподвижная точка по w
        residual = l2_array(u - w, grid)
        w = u
        logger.debug(f"fixed point {iteration}: residual={residual:.3e}")
        if residual <= step_config.picard_tol:
            break
    else:
        raise NonconvergenceError("fixed-point iteration of the step failed", step_config.picard_max, residual)

    new_state = mid.replace(time=state.time + dt, u=state.u.with_values(w))
    margin = params.barrier_limit - float(np.abs(_divergence(w, grid)).max())
    if margin <= 0:
        raise BarrierError(f"step left the admissible divergence interval (margin {margin:.3e})")
    report = StepReport(
        picard_iterations=iteration,
        final_residual=residual,
        dt_used=dt,
        barrier_margin=margin,
        momentum_iterations=momentum_iterations,
    )
    return new_state, report


def dt_candidates(state: State, step_config: StepConfig) -> Dict[str, float]:
    """Кандидаты шага: заданный, CFL и барьерный"""
    grid, params = state.grid, state.params
    candidates = {"config": step_config.dt}

    u = state.u.values
    max_speed = float(np.sqrt(np.sum(u ** 2, axis=0)).max())
    if max_speed > 0:
        candidates["cfl"] = config.solver.cfl_safety * grid.spacing / max_speed

    # в покое барьер не ограничивает шаг; выход за него ловит step
    max_div = float(np.abs(_divergence(u, grid)).max())
    if max_div > 0:
        margin = params.barrier_limit - max_div
        rate = float(np.abs(_divergence(velocity_rate(state).values, grid)).max())
        if rate > 0:
            candidates["barrier"] = config.solver.barrier_safety * max(margin, 0.0) / rate
    return candidates


def adaptive_dt(state: State, step_config: StepConfig) -> float:
    candidates = dt_candidates(state, step_config)
    dt = min(candidates.values())
    floor = step_config.dt / 2 ** step_config.max_halvings
    if dt < step_config.dt:
        limiting = min(candidates, key=candidates.get)
        logger.info(f"dt reduced to {max(dt, floor):.3e} by {limiting} bound")
    return max(dt, floor)


def step(state: State, step_config: StepConfig, max_dt: Optional[float] = None) -> Tuple[State, StepReport]:
    """Один шаг; при выходе из допустимого множества dt делится пополам.
    max_dt ограничивает шаг сверху (попадание в моменты вывода)."""
    dt = adaptive_dt(state, step_config)
    if max_dt is not None:
        dt = min(dt, max_dt)
    halvings = 0
    while True:
        try:
            new_state, report = _advance(state, dt, step_config)
            break
        except AdmissibilityError as e:
            if halvings >= step_config.max_halvings:
                logger.error(f"Step rejected after {halvings} halvings: {e}")
                raise
            halvings += 1
            dt *= 0.5
            logger.warning(f"Step rejected ({e}); retrying with dt={dt:.3e}")
    return new_state, replace(report, halvings=halvings)


def equilibrium_state(rho_bar: float, eta_bar: float, params: ModelParams, grid: Grid) -> State:
    """Стационарный баланс: T = k(η̄ + α) I, u = 0"""
    if not (rho_bar > 0 and eta_bar > 0):
        raise DomainError(f"equilibrium needs positive densities, got {rho_bar}, {eta_bar}")
    return State(
        time=0.0,
        rho=ScalarField(grid, np.full(grid.shape, float(rho_bar)), name="rho"),
        u=VectorField.zeros(grid, name="u"),
        eta=ScalarField(grid, np.full(grid.shape, float(eta_bar)), name="eta"),
        T=SymTensorField.identity(grid, params.k * (eta_bar + params.alpha), name="T"),
        params=params,
    )
