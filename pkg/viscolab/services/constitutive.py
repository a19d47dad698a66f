import logging
from dataclasses import dataclass, fields, replace
from typing import List, NamedTuple, Tuple

import numpy as np

from viscolab.exceptions import BarrierError, DomainError
from viscolab.utils.tensor_calculus import SymMat, frobenius_sq

logger = logging.getLogger(__name__)

# Минимальный показатель, при котором замыкаются оценки существования
R_EXISTENCE_THRESHOLD = 2.5
# Наименьший показатель давления, допустимый в конфигурации прогона
GAMMA_MODEL_THRESHOLD = 2.0


@dataclass(frozen=True)
class ModelParams:
    """Физические константы модели и уровни регуляризации"""

    r: float = 3.0
    b: float = 1.0
    mu0: float = 0.1
    a: float = 1.0
    gamma: float = 2.0
    k: float = 1.0
    L: float = 1.0
    lam: float = 1.0
    zeta: float = 1.0
    epsilon: float = 0.05
    alpha: float = 0.0
    sigma: float = 0.0
    delta: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            name, message = problems[0]
            raise DomainError(f"{name}: {message}")

    def problems(self) -> List[Tuple[str, str]]:
        """Список нарушенных инвариантов (имя поля, сообщение)"""
        found = []
        for name in ("b", "mu0", "a", "k", "L", "lam", "zeta", "epsilon"):
            if not getattr(self, name) > 0:
                found.append((name, f"must be > 0, got {getattr(self, name)}"))
        for name in ("alpha", "sigma", "delta", "theta"):
            if not getattr(self, name) >= 0:
                found.append((name, f"must be >= 0, got {getattr(self, name)}"))
        if not self.r >= 2.0:
            found.append(("r", f"must be >= 2, got {self.r}"))
        if not self.gamma > 1.0:
            found.append(("gamma", f"must be > 1, got {self.gamma}"))
        if self.b > 0 and self.delta >= 1.0 / self.b:
            found.append(("delta", f"must be < 1/b = {1.0 / self.b}, got {self.delta}"))
        if self.sigma > 0 and self.sigma >= max(self.alpha, self.theta):
            found.append(("sigma", "must be < max(alpha, theta) when the cutoff is active"))
        return found

    @property
    def meets_existence_threshold(self) -> bool:
        return self.r >= R_EXISTENCE_THRESHOLD

    @property
    def barrier_limit(self) -> float:
        return 1.0 / self.b

    @property
    def regularized(self) -> bool:
        return self.delta > 0

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


class PressureLaws(NamedTuple):
    p: np.ndarray
    P: np.ndarray
    Hp: np.ndarray
    Hpp: np.ndarray


class PolymerLaws(NamedTuple):
    q: np.ndarray
    G: np.ndarray
    Gp: np.ndarray
    Gpp: np.ndarray


class BarrierLaws(NamedTuple):
    Lam: np.ndarray
    Lam_prime: np.ndarray
    beta: np.ndarray


# ==================== ДАВЛЕНИЕ ЖИДКОСТИ ====================

def fluid_pressure(rho, params: ModelParams) -> PressureLaws:
    """
    p = aϱ^γ, потенциал P(ϱ) = H(ϱ) = aϱ^γ/(γ−1).
    Тождество p = ϱH' − H выполняется точно.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise DomainError(f"density must be positive, min = {rho.min()}")
    a, g = params.a, params.gamma
    p = a * rho ** g
    H = p / (g - 1.0)
    Hp = a * g * rho ** (g - 1.0) / (g - 1.0)
    Hpp = a * g * rho ** (g - 2.0)
    return PressureLaws(p, H, Hp, Hpp)


# ==================== ПОЛИМЕРНОЕ ДАВЛЕНИЕ ====================

def polymer_laws(eta, params: ModelParams) -> PolymerLaws:
    """
    q(η) = kLη + ζη², G(η) = kLη log η + ζη², q = ηG' − G.
    В нуле η log η продолжается нулём.
    """
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        raise DomainError(f"polymer density must be nonnegative, min = {eta.min()}")
    kL, zeta = params.k * params.L, params.zeta
    positive = eta > 0
    with np.errstate(divide="ignore"):
        log_eta = np.where(positive, np.log(np.where(positive, eta, 1.0)), -np.inf)
        q = kL * eta + zeta * eta ** 2
        G = np.where(positive, kL * eta * np.where(positive, log_eta, 0.0), 0.0) + zeta * eta ** 2
        Gp = kL * (log_eta + 1.0) + 2.0 * zeta * eta
        Gpp = np.where(positive, kL / np.where(positive, eta, 1.0), np.inf) + 2.0 * zeta
    return PolymerLaws(q, G, Gp, Gpp)


# ==================== БАРЬЕР ПО ДИВЕРГЕНЦИИ ====================

def _barrier_exact(z: np.ndarray, b: float):
    bz2 = (b * z) ** 2
    Lam = -np.log1p(-bz2) / b ** 2
    beta = 2.0 / (1.0 - bz2)
    return Lam, z * beta, beta


def barrier(z, params: ModelParams, regularized: bool = False) -> BarrierLaws:
    """
    Λ(z) = −b⁻² log(1 − b²z²), Λ'(z) = zβ(z), β(z) = 2/(1 − b²z²).
    В регуляризованном режиме — Λ_δ: совпадает с Λ при |z| ≤ 1/b − δ,
    дальше касательная.
    """
    z = np.asarray(z, dtype=float)
    b = params.b
    limit = 1.0 / b

    if not regularized or params.delta <= 0:
        if np.any(np.abs(z) >= limit):
            raise BarrierError(
                f"divergence {np.abs(z).max():.6g} outside the admissible interval (-{limit:.6g}, {limit:.6g})"
            )
        return BarrierLaws(*_barrier_exact(z, b))

    seam = limit - params.delta
    inside = np.abs(z) <= seam
    zc = np.clip(z, -seam, seam)
    Lam_c, Lam_pc, beta_c = _barrier_exact(zc, b)
    Lam = np.where(inside, Lam_c, Lam_c + Lam_pc * (z - zc))
    Lam_prime = Lam_pc
    safe_z = np.where(inside, 1.0, z)
    beta = np.where(inside, beta_c, Lam_pc / safe_z)
    return BarrierLaws(Lam, Lam_prime, beta)


# ==================== ВЯЗКОЕ НАПРЯЖЕНИЕ ====================

def power_law_factor(dd_norm_sq, params: ModelParams):
    """(1 + |Dᵈ|²)^{(r−2)/2}"""
    return (1.0 + np.asarray(dd_norm_sq, dtype=float)) ** (0.5 * (params.r - 2.0))


def viscous_stress(Dd: SymMat, divu: float, params: ModelParams, regularized: bool = False) -> SymMat:
    """S = 2μ₀(1+|Dᵈ|²)^{(r−2)/2} Dᵈ + Λ'(div u) I"""
    D = Dd.to_matrix()
    factor = power_law_factor(frobenius_sq(D), params)
    lam_prime = barrier(divu, params, regularized=regularized).Lam_prime
    S = 2.0 * params.mu0 * factor * D + float(lam_prime) * np.eye(Dd.dim)
    return SymMat.from_matrix(S)
