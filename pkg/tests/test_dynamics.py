import numpy as np
import pytest

from viscolab.exceptions import BarrierError, DomainError, NonconvergenceError, PositivityError
from viscolab.services import dynamics
from viscolab.services.constitutive import ModelParams
from viscolab.services.diagnostics import positivity_report
from viscolab.services.dynamics import (
    Forcing,
    StepConfig,
    adaptive_dt,
    dt_candidates,
    equilibrium_state,
    explicit_rates,
    rhs_continuity,
    rhs_eta,
    rhs_renormalized,
    rhs_stress,
    solve_momentum,
    step,
)
from viscolab.services.fields import Grid, ScalarField, SymTensorField, VectorField, integrate, mollify
from viscolab.services.presets import manufactured_fields, manufactured_state, preset, random_smooth_state

FIELDS = ("rho", "u", "eta", "T")


def _vector(grid, *components):
    return VectorField(grid, np.stack(components), name="u")


def _distance(a, b) -> float:
    return max(float(np.abs(getattr(a, name).values - getattr(b, name).values).max()) for name in FIELDS)


# ==================== ПРАВЫЕ ЧАСТИ ====================

def test_rhs_continuity_example(grid16):
    x, y = grid16.coordinates()
    rho = ScalarField(grid16, np.full(grid16.shape, 2.0))
    rate = rhs_continuity(rho, _vector(grid16, np.sin(x), np.zeros_like(x)))
    assert np.allclose(rate.values, -2.0 * np.cos(x), atol=1e-13)


def test_rhs_eta_is_pure_diffusion_at_rest(grid16, params):
    x, _ = grid16.coordinates()
    eta = ScalarField(grid16, 1.0 + np.sin(x))
    rate = rhs_eta(eta, VectorField.zeros(grid16), params)
    assert np.allclose(rate.values, -params.epsilon * np.sin(x), atol=1e-13)


def test_rhs_stress_in_shear(grid16, params):
    x, y = grid16.coordinates()
    c = 2.0
    T = SymTensorField.identity(grid16, c)
    eta = ScalarField(grid16, np.full(grid16.shape, c / params.k))
    rate = rhs_stress(T, _vector(grid16, np.sin(y), np.zeros_like(y)), eta, params)
    assert np.allclose(rate.values[0], 0.0, atol=1e-13)
    assert np.allclose(rate.values[1], c * np.cos(y), atol=1e-13)
    assert np.allclose(rate.values[2], 0.0, atol=1e-13)


def test_rhs_stress_vanishes_at_equilibrium(grid16):
    params = ModelParams(alpha=0.3)
    state = equilibrium_state(1.0, 2.0, params, grid16)
    rate = rhs_stress(state.T, state.u, state.eta, params)
    assert np.abs(rate.values).max() <= 1e-12


def test_renormalized_rate_for_square_density(grid16):
    x, y = grid16.coordinates()
    rho = ScalarField(grid16, 1.0 + 0.2 * np.sin(x) * np.cos(y))
    u = _vector(grid16, 0.1 * np.sin(x), 0.1 * np.cos(y))
    z = rho.with_values(rho.values ** 2)
    rate = rhs_renormalized(z, rho, u, lambda r: r ** 2, lambda r: 2.0 * r)
    expected = 2.0 * rho.values * rhs_continuity(rho, u).values
    assert np.allclose(rate.values, expected, atol=1e-13)


def test_renormalized_evolution_tracks_square_density(grid16):
    x, y = grid16.coordinates()
    rho = ScalarField(grid16, 1.0 + 0.2 * np.sin(x) * np.cos(y))
    u = _vector(grid16, 0.1 * np.sin(x), 0.1 * np.cos(y))
    z = rho.with_values(rho.values ** 2)
    dt = 1e-3
    for _ in range(100):
        z = z + dt * rhs_renormalized(z, rho, u, lambda r: r ** 2, lambda r: 2.0 * r).values
        rho = rho + dt * rhs_continuity(rho, u).values
    assert np.abs(z.values - rho.values ** 2).max() < 1e-5


# ==================== ИМПУЛЬС ====================

def test_momentum_solve_at_equilibrium(grid16, params):
    state = equilibrium_state(1.0, 1.0, params, grid16)
    u, residual = solve_momentum(state, state.u, dt=1e-3)
    assert np.abs(u.values).max() <= 1e-14
    assert residual <= 1e-12


@pytest.mark.parametrize("kind", ["shear", "compressive"])
def test_linear_stokes_response(grid16, kind):
    # r = 2 и малая амплитуда: оператор линеен с β = 2
    params = ModelParams(r=2.0)
    dt, amplitude = 0.1, 1e-4
    x, y = grid16.coordinates()
    if kind == "shear":
        profile = np.sin(y)
        factor = 1.0 / dt + params.mu0
    else:
        profile = np.sin(x)
        factor = 1.0 / dt + params.mu0 + 2.0
    force = _vector(grid16, amplitude * profile, np.zeros_like(x))
    state = equilibrium_state(1.0, 1.0, params, grid16).replace(forcing=Forcing(force=force))

    u, _ = solve_momentum(state, VectorField.zeros(grid16), dt)
    assert np.allclose(u.values[0], amplitude / factor * profile, rtol=0.0, atol=1e-12)
    assert np.allclose(u.values[1], 0.0, atol=1e-12)


# ==================== ШАГ ====================

def test_equilibrium_is_a_fixed_point(grid16):
    params = ModelParams(alpha=0.2)
    state = equilibrium_state(1.0, 1.0, params, grid16)
    start = state
    step_config = StepConfig(dt=1e-3)
    for _ in range(100):
        state, report = step(state, step_config)
    assert report.dt_used == 1e-3
    assert state.time == pytest.approx(0.1, rel=1e-12)
    assert _distance(state, start) <= 1e-11


def test_mass_is_conserved(grid16, params):
    state = random_smooth_state(grid16, params, seed=5)
    mass, polymer = integrate(state.rho), integrate(state.eta)
    for _ in range(10):
        state, _ = step(state, StepConfig(dt=1e-3))
    assert integrate(state.rho) == pytest.approx(mass, rel=1e-12)
    assert integrate(state.eta) == pytest.approx(polymer, rel=1e-12)


def test_step_is_first_order_consistent(grid16, params):
    """Локальная ошибка шага относительно явного Эйлера — O(dt²)"""
    state = random_smooth_state(grid16, params, seed=11)
    rates = explicit_rates(state)
    errors = []
    for dt in (2e-3, 1e-3):
        new, report = step(state, StepConfig(dt=dt, picard_tol=1e-12))
        assert report.dt_used == dt
        errors.append(max(
            float(np.abs(getattr(new, name).values - (getattr(state, name).values + dt * rates[name])).max())
            for name in FIELDS
        ))
    assert 3.0 <= errors[0] / errors[1] <= 5.0


def test_manufactured_solution_converges_spectrally(params):
    step_config = StepConfig(dt=1e-3, picard_tol=1e-12)
    errors = []
    for n in (16, 32):
        grid = Grid(dim=2, n=n)
        state = manufactured_state(grid, params)
        for _ in range(10):
            state, _ = step(state, step_config)
        errors.append(_distance(state, manufactured_fields(grid, params)))
    assert errors[0] >= 1e2 * errors[1]


def test_adaptive_dt_keeps_configured_step_at_rest(grid16, params):
    state = equilibrium_state(1.0, 1.0, params, grid16)
    assert adaptive_dt(state, StepConfig(dt=1e-3)) == 1e-3


def test_adaptive_dt_keeps_configured_step_at_rest_off_equilibrium(grid16, params):
    # ненулевое ускорение от градиента давления, но u = 0
    state = random_smooth_state(grid16, params, seed=6).replace(u=VectorField.zeros(grid16))
    step_config = StepConfig(dt=1e-2)
    assert "barrier" not in dt_candidates(state, step_config)
    assert adaptive_dt(state, step_config) == 1e-2


def test_cfl_bound_scales_with_speed(grid16, params):
    x, y = grid16.coordinates()
    base = equilibrium_state(1.0, 1.0, params, grid16)
    slow = base.replace(u=_vector(grid16, 0.5 * np.sin(y), np.zeros_like(y)))
    fast = base.replace(u=_vector(grid16, np.sin(y), np.zeros_like(y)))
    step_config = StepConfig(dt=1e-3)
    ratio = dt_candidates(slow, step_config)["cfl"] / dt_candidates(fast, step_config)["cfl"]
    assert ratio == pytest.approx(2.0, rel=1e-12)


def test_adaptive_dt_shrinks_near_the_barrier(grid16, params):
    x, _ = grid16.coordinates()
    state = equilibrium_state(1.0, 1.0, params, grid16).replace(
        u=_vector(grid16, 0.95 * np.sin(x), np.zeros_like(x))
    )
    step_config = StepConfig(dt=1e-2)
    candidates = dt_candidates(state, step_config)
    assert min(candidates, key=candidates.get) == "barrier"
    assert adaptive_dt(state, step_config) < step_config.dt


def test_step_halves_dt_after_rejection(grid16, params, monkeypatch):
    state = equilibrium_state(1.0, 1.0, params, grid16)
    attempts = []
    advance = dynamics._advance

    def flaky(state, dt, step_config):
        attempts.append(dt)
        if len(attempts) <= 2:
            raise BarrierError("synthetic rejection")
        return advance(state, dt, step_config)

    monkeypatch.setattr(dynamics, "_advance", flaky)
    new, report = step(state, StepConfig(dt=1e-3))
    assert attempts == [1e-3, 5e-4, 2.5e-4]
    assert report.halvings == 2
    assert report.dt_used == 2.5e-4
    assert new.time == 2.5e-4


def test_step_gives_up_after_max_halvings(grid16, params, monkeypatch):
    state = equilibrium_state(1.0, 1.0, params, grid16)
    attempts = []

    def rejecting(state, dt, step_config):
        attempts.append(dt)
        raise PositivityError("synthetic rejection")

    monkeypatch.setattr(dynamics, "_advance", rejecting)
    with pytest.raises(PositivityError):
        step(state, StepConfig(dt=1e-3, max_halvings=3))
    assert len(attempts) == 4


def test_step_reports_nonconvergence(grid16, params):
    state = random_smooth_state(grid16, params, seed=2)
    with pytest.raises(NonconvergenceError):
        step(state, StepConfig(dt=1e-3, picard_max=1))


def test_step_config_validation():
    with pytest.raises(DomainError):
        StepConfig(dt=0.0)
    with pytest.raises(DomainError):
        StepConfig(damping=1.5)


def test_equilibrium_state(grid16):
    params = ModelParams(k=2.0, alpha=0.5)
    state = equilibrium_state(1.0, 1.5, params, grid16)
    assert np.allclose(state.T.full()[0, 0], 4.0)
    assert np.allclose(state.T.full()[0, 1], 0.0)
    with pytest.raises(DomainError):
        equilibrium_state(0.0, 1.0, params, grid16)


def test_check_invariants(grid16, params):
    state = equilibrium_state(1.0, 1.0, params, grid16)
    state.check_invariants()
    with pytest.raises(PositivityError):
        state.replace(rho=state.rho * -1.0).check_invariants()
    x, _ = grid16.coordinates()
    with pytest.raises(BarrierError):
        state.replace(u=_vector(grid16, 1.5 * np.sin(x), np.zeros_like(x))).check_invariants()


# ==================== РЕГУЛЯРИЗАЦИИ ====================

@pytest.mark.parametrize(
    "params",
    [
        ModelParams(alpha=0.2, sigma=0.1),
        ModelParams(delta=0.1),
        ModelParams(alpha=0.1, sigma=0.05, delta=0.2),
    ],
)
def test_regularized_models_step_cleanly(grid16, params):
    state = random_smooth_state(grid16, params, seed=9)
    mass = integrate(state.rho)
    for _ in range(5):
        state, report = step(state, StepConfig(dt=1e-3))
        assert report.barrier_margin > 0
    assert all(np.all(np.isfinite(getattr(state, name).values)) for name in FIELDS)
    assert positivity_report(state).min_eig_T > 0
    assert integrate(state.rho) == pytest.approx(mass, rel=1e-12)


def test_cutoff_changes_the_stress_update(grid16):
    # при σ > 0 поправка −(1/2λ)(χ_σ(Tˢ) − T) включается только на собственных числах ниже σ
    base = ModelParams(alpha=0.6)
    state = random_smooth_state(grid16, base, seed=9)
    values = state.T.values.copy()
    values[:, :4, :4] *= 0.1
    state = state.replace(T=state.T.with_values(values))
    plain, _ = step(state, StepConfig(dt=1e-3))
    cut, _ = step(state.replace(params=base.replace(sigma=0.5)), StepConfig(dt=1e-3))
    assert np.abs(cut.T.values - plain.T.values).max() > 0


def test_mollified_preset(grid16):
    params = ModelParams(theta=0.05)
    smooth = preset("random-smooth", grid16, params, seed=4)
    raw = preset("random-smooth", grid16, ModelParams(), seed=4)
    for name in FIELDS:
        expected = mollify(getattr(raw, name), 0.05).values
        assert np.allclose(getattr(smooth, name).values, expected, rtol=0.0, atol=1e-13)
    assert positivity_report(smooth).min_eig_T > 0


def test_manufactured_run_is_first_order_in_time(grid16, params):
    # возмущённое тестовое решение; эталон — тот же прогон с dt/8
    x, y = grid16.coordinates()
    start = manufactured_state(grid16, params)
    start = start.replace(u=start.u + np.stack([0.05 * np.sin(y), 0.05 * np.sin(x)]))
    end_time = 0.01

    finals = {}
    for dt in (1e-3, 5e-4, 1.25e-4):
        state = start
        for _ in range(round(end_time / dt)):
            state, report = step(state, StepConfig(dt=dt, picard_tol=1e-12))
            assert report.dt_used == dt
        finals[dt] = state
    errors = [_distance(finals[dt], finals[1.25e-4]) for dt in (1e-3, 5e-4)]
    assert 1.8 <= errors[0] / errors[1] <= 2.9
