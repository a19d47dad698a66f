"""
Периодические поля на торе [0, L)^d с псевдоспектральным дифференцированием.

Спектральные коэффициенты — полный fftn, нормированный на число точек
(нулевая мода = среднее). Производные обнуляются на индексе Найквиста,
лапласиан — композиция тех же производных.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import ClassVar, Optional, Tuple, Type

import numpy as np

from viscolab.exceptions import DomainError, GridMismatchError
from viscolab.utils.tensor_calculus import full_to_sym, sym_size, sym_to_full, to_trailing

logger = logging.getLogger(__name__)

PHYSICAL = "physical"
SPECTRAL = "spectral"

GRADIENT = "gradient"
DIVERGENCE = "divergence"
LAPLACIAN = "laplacian"
TENSOR_DIVERGENCE = "tensor-divergence"


@dataclass(frozen=True)
class Grid:
    dim: int = 2
    n: int = 32
    length: float = 2 * np.pi

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise DomainError(f"grid dim must be 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2:
            raise DomainError(f"grid n must be even and >= 8, got {self.n}")
        if not self.length > 0:
            raise DomainError(f"grid length must be positive, got {self.length}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def axes(self) -> Tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @property
    def points(self) -> int:
        return self.n ** self.dim

    @property
    def volume(self) -> float:
        return self.length ** self.dim

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def cell_volume(self) -> float:
        return self.volume / self.points

    @property
    def cutoff(self) -> int:
        """Последняя сохраняемая мода по правилу 2/3"""
        return self.n // 3

    @cached_property
    def mode_index(self) -> np.ndarray:
        """Целые номера мод по каждой оси, форма (dim, n, ..., n)"""
        m = np.fft.fftfreq(self.n, d=1.0 / self.n).round().astype(int)
        return np.stack(np.meshgrid(*([m] * self.dim), indexing="ij"))

    @cached_property
    def wavevector(self) -> np.ndarray:
        """Волновые векторы для производных (ноль на Найквисте)"""
        k = self.mode_index * (2 * np.pi / self.length)
        return np.where(np.abs(self.mode_index) == self.n // 2, 0.0, k)

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.wavevector ** 2, axis=0)

    @cached_property
    def k2_full(self) -> np.ndarray:
        return np.sum((self.mode_index * (2 * np.pi / self.length)) ** 2, axis=0)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        return np.all(np.abs(self.mode_index) <= self.cutoff, axis=0)

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        x = self.length * np.arange(self.n) / self.n
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))


# ==================== ПРЕОБРАЗОВАНИЯ МАССИВОВ ====================

def to_spectral(values: np.ndarray, grid: Grid) -> np.ndarray:
    return np.fft.fftn(values, axes=grid.axes) / grid.points


def to_physical(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    return np.real(np.fft.ifftn(coeffs * grid.points, axes=grid.axes))


def grad_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Градиент: новая ось производной встаёт перед осями сетки.
    Для вектора u результат [i, j] = ∂_j u_i."""
    coeffs = to_spectral(values, grid)
    parts = [to_physical(1j * grid.wavevector[j] * coeffs, grid) for j in range(grid.dim)]
    return np.stack(parts, axis=-(grid.dim + 1))


def div_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Свёртка последней компонентной оси с производной: Σ_j ∂_j v_{..j}"""
    coeffs = to_spectral(values, grid)
    lead = coeffs.ndim - grid.dim - 1
    total = sum(
        1j * grid.wavevector[j] * coeffs[(slice(None),) * lead + (j,)]
        for j in range(grid.dim)
    )
    return to_physical(total, grid)


def laplacian_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    return to_physical(-grid.k2 * to_spectral(values, grid), grid)


def dealias_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    return to_physical(grid.dealias_mask * to_spectral(values, grid), grid)


def product_array(x: np.ndarray, y: np.ndarray, grid: Grid) -> np.ndarray:
    """Произведение по правилу 2/3: усечь сомножители, перемножить, усечь"""
    return dealias_array(dealias_array(x, grid) * dealias_array(y, grid), grid)


def l2_array(values: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(np.sum(values ** 2) * grid.cell_volume))


# ==================== ПОЛЯ ====================

@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    data: np.ndarray
    representation: str = PHYSICAL
    name: str = ""

    rank: ClassVar[str] = "field"

    def __post_init__(self):
        if self.representation not in (PHYSICAL, SPECTRAL):
            raise DomainError(f"unknown representation {self.representation!r}")
        expected = self.component_shape(self.grid) + self.grid.shape
        data = np.asarray(self.data)
        if data.shape != expected:
            raise DomainError(f"{type(self).__name__} expects shape {expected}, got {data.shape}")
        dtype = float if self.representation == PHYSICAL else complex
        object.__setattr__(self, "data", data.astype(dtype, copy=False))

    @staticmethod
    def component_shape(grid: Grid) -> Tuple[int, ...]:
        return ()

    @classmethod
    def component_count(cls, grid: Grid) -> int:
        return int(np.prod(cls.component_shape(grid), dtype=int))

    @property
    def values(self) -> np.ndarray:
        if self.representation == PHYSICAL:
            return self.data
        return to_physical(self.data, self.grid)

    @property
    def coeffs(self) -> np.ndarray:
        if self.representation == SPECTRAL:
            return self.data
        return to_spectral(self.data, self.grid)

    def physical(self) -> "Field":
        return transform(self, PHYSICAL)

    def spectral(self) -> "Field":
        return transform(self, SPECTRAL)

    def with_values(self, values: np.ndarray, name: Optional[str] = None) -> "Field":
        return type(self)(self.grid, values, PHYSICAL, self.name if name is None else name)

    @classmethod
    def zeros(cls, grid: Grid, name: str = "") -> "Field":
        return cls(grid, np.zeros(cls.component_shape(grid) + grid.shape), PHYSICAL, name)

    def _check(self, other: "Field"):
        if not isinstance(other, Field) or other.grid != self.grid or type(other) is not type(self):
            raise GridMismatchError(f"incompatible fields: {self!r} and {other!r}")

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)

    def __mul__(self, scalar):
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, grid={self.grid}, {self.representation})"


class ScalarField(Field):
    rank = "scalar"


class VectorField(Field):
    rank = "vector"

    @staticmethod
    def component_shape(grid: Grid) -> Tuple[int, ...]:
        return (grid.dim,)


class TensorField(Field):
    """Полный (несимметричный) тензор, например ∇u"""

    rank = "tensor"

    @staticmethod
    def component_shape(grid: Grid) -> Tuple[int, ...]:
        return (grid.dim, grid.dim)


class SymTensorField(Field):
    """Симметричный тензор, хранится верхним треугольником"""

    rank = "symtensor"

    @staticmethod
    def component_shape(grid: Grid) -> Tuple[int, ...]:
        return (sym_size(grid.dim),)

    def full(self) -> np.ndarray:
        """(d, d, *grid)"""
        return sym_to_full(self.values, self.grid.dim)

    def matrices(self) -> np.ndarray:
        """(*grid, d, d)"""
        return to_trailing(self.full())

    @classmethod
    def identity(cls, grid: Grid, scale=1.0, name: str = "") -> "SymTensorField":
        full = np.zeros((grid.dim, grid.dim) + grid.shape)
        for i in range(grid.dim):
            full[i, i] = scale
        return cls(grid, full_to_sym(full, grid.dim), PHYSICAL, name)


FIELD_TYPES = {cls.rank: cls for cls in (ScalarField, VectorField, TensorField, SymTensorField)}


def field_type_for(grid: Grid, component_count: int) -> Type[Field]:
    if component_count == 1:
        return ScalarField
    if component_count == grid.dim:
        return VectorField
    if component_count == sym_size(grid.dim):
        return SymTensorField
    if component_count == grid.dim ** 2:
        return TensorField
    raise DomainError(f"no field type with {component_count} components in {grid.dim}D")


# ==================== ОПЕРАЦИИ ====================

def transform(f: Field, target: str) -> Field:
    if target == f.representation:
        return f
    if target == SPECTRAL:
        return type(f)(f.grid, to_spectral(f.data, f.grid), SPECTRAL, f.name)
    if target == PHYSICAL:
        return type(f)(f.grid, to_physical(f.data, f.grid), PHYSICAL, f.name)
    raise DomainError(f"unknown representation {target!r}")


def differentiate(f: Field, kind: str) -> Field:
    grid = f.grid
    if kind == GRADIENT:
        if isinstance(f, ScalarField):
            return VectorField(grid, grad_array(f.values, grid))
        if isinstance(f, VectorField):
            return TensorField(grid, grad_array(f.values, grid))
        raise DomainError(f"gradient of {f.rank} field is not supported")
    if kind == DIVERGENCE:
        if isinstance(f, VectorField):
            return ScalarField(grid, div_array(f.values, grid))
        if isinstance(f, (SymTensorField, TensorField)):
            return differentiate(f, TENSOR_DIVERGENCE)
        raise DomainError(f"divergence of {f.rank} field is not supported")
    if kind == TENSOR_DIVERGENCE:
        if isinstance(f, SymTensorField):
            return VectorField(grid, div_array(f.full(), grid))
        if isinstance(f, TensorField):
            return VectorField(grid, div_array(f.values, grid))
        raise DomainError(f"tensor-divergence of {f.rank} field is not supported")
    if kind == LAPLACIAN:
        return f.with_values(laplacian_array(f.values, grid))
    raise DomainError(f"unknown derivative kind {kind!r}")


def dealias(f: Field) -> Field:
    """Обнуляет моды с какой-либо компонентой |m| > n/3"""
    coeffs = f.coeffs * f.grid.dealias_mask
    return type(f)(f.grid, coeffs, SPECTRAL, f.name)


def integrate(f: Field):
    """Нулевая мода × объём; для многокомпонентных полей — покомпонентно"""
    mean = f.values.mean(axis=f.grid.axes)
    value = mean * f.grid.volume
    return float(value) if np.ndim(value) == 0 else value


def pointwise_magnitude(f: Field) -> np.ndarray:
    if isinstance(f, ScalarField):
        return np.abs(f.values)
    if isinstance(f, SymTensorField):
        return np.sqrt(np.sum(f.full() ** 2, axis=(0, 1)))
    v = f.values.reshape((-1,) + f.grid.shape)
    return np.sqrt(np.sum(v ** 2, axis=0))


def lp_norm(f: Field, p: float = 2.0) -> float:
    if not p >= 1:
        raise DomainError(f"lp_norm needs p in [1, inf], got {p}")
    mag = pointwise_magnitude(f)
    if np.isinf(p):
        return float(mag.max())
    return float((np.sum(mag ** p) * f.grid.cell_volume) ** (1.0 / p))


def mollify(f: Field, theta: float) -> Field:
    """Сглаживание начальных данных тепловым ядром exp(−Θ|k|²)"""
    if theta <= 0:
        return f
    coeffs = f.coeffs * np.exp(-theta * f.grid.k2_full)
    return type(f)(f.grid, to_physical(coeffs, f.grid), PHYSICAL, f.name)


def resample(f: Field, grid: Grid) -> Field:
    """Спектральное усечение или дополнение нулями на другую сетку"""
    if grid.dim != f.grid.dim or not np.isclose(grid.length, f.grid.length):
        raise GridMismatchError(f"cannot resample {f.grid} onto {grid}")
    if grid == f.grid:
        return f
    keep = min(grid.n, f.grid.n) // 2 - 1
    m = np.arange(-keep, keep + 1)
    src = np.ix_(*([m % f.grid.n] * grid.dim))
    dst = np.ix_(*([m % grid.n] * grid.dim))
    coeffs = np.zeros(type(f).component_shape(grid) + grid.shape, dtype=complex)
    coeffs[(Ellipsis,) + dst] = f.coeffs[(Ellipsis,) + src]
    return type(f)(grid, to_physical(coeffs, grid), PHYSICAL, f.name)


def random_coefficients(
    dim: int,
    seed: int,
    decay: float,
    max_wavenumber: int,
) -> np.ndarray:
    """Эрмитово-симметричный блок коэффициентов с номерами −K..K по каждой оси.
    Не зависит от разрешения сетки."""
    rng = np.random.default_rng(seed)
    shape = (2 * max_wavenumber + 1,) * dim
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    m = np.arange(-max_wavenumber, max_wavenumber + 1)
    mm = np.meshgrid(*([m] * dim), indexing="ij")
    kmag = np.sqrt(sum(x.astype(float) ** 2 for x in mm))
    with np.errstate(divide="ignore"):
        profile = np.where(kmag > 0, kmag ** (-decay), 0.0)
    c = c * profile
    flipped = c[(slice(None, None, -1),) * dim]
    return 0.5 * (c + np.conj(flipped))


def random_smooth_field(
    grid: Grid,
    seed: int,
    decay: float = 4.0,
    amplitude: float = 1.0,
    floor: Optional[float] = None,
    max_wavenumber: Optional[int] = None,
    name: str = "",
) -> ScalarField:
    """
    Детерминированное гладкое поле: |ĉ_k| ~ |k|^{−decay}, среднеквадратичное
    значение = amplitude. С floor — сдвиг на оценку max|f| через сумму |ĉ|,
    поэтому минимум ≥ floor на любой сетке.
    """
    if not decay > 1:
        raise DomainError(f"decay rate must exceed 1, got {decay}")
    kmax = grid.cutoff if max_wavenumber is None else int(max_wavenumber)
    if kmax < 1 or 2 * kmax + 1 > grid.n - 1:
        raise DomainError(f"max_wavenumber {kmax} does not fit on a grid with n={grid.n}")

    c = random_coefficients(grid.dim, seed, decay, kmax)
    rms = np.sqrt(np.sum(np.abs(c) ** 2))
    if rms > 0:
        c = c * (amplitude / rms)

    m = np.arange(-kmax, kmax + 1)
    coeffs = np.zeros(grid.shape, dtype=complex)
    coeffs[np.ix_(*([m % grid.n] * grid.dim))] = c
    values = to_physical(coeffs, grid)
    if floor is not None:
        values = values + floor + np.sum(np.abs(c))
    return ScalarField(grid, values, PHYSICAL, name)


def solenoidal_projection(u: VectorField) -> VectorField:
    """Leray-проекция: û − k(k·û)/|k|²"""
    grid = u.grid
    coeffs = u.coeffs
    kvec = grid.wavevector
    k2 = np.where(grid.k2 > 0, grid.k2, 1.0)
    kdotu = np.sum(kvec * coeffs, axis=0)
    projected = coeffs - kvec * kdotu / k2
    return VectorField(grid, to_physical(projected, grid), PHYSICAL, u.name)


def galerkin_projection(f: Field) -> Field:
    """Проекция на сохраняемые моды (аналог P_n)"""
    return f.with_values(dealias_array(f.values, f.grid))
