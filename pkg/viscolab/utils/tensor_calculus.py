"""
Функции от малых симметричных матриц (d = 2, 3).

Все операции существуют в двух видах: для одной матрицы SymMat и пакетные
(`*_batch`) для массивов формы (..., d, d) — последние используются полями
на сетке.
"""
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from viscolab.exceptions import DomainError

JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 50

# Порядок хранения верхнего треугольника
TRIU: Dict[int, List[Tuple[int, int]]] = {
    2: [(0, 0), (0, 1), (1, 1)],
    3: [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)],
}


def sym_size(dim: int) -> int:
    return dim * (dim + 1) // 2


@dataclass(frozen=True)
class SymMat:
    """Симметричная матрица, хранится верхним треугольником"""

    dim: int
    entries: Tuple[float, ...]

    def __post_init__(self):
        if self.dim not in TRIU:
            raise DomainError(f"SymMat dim must be 2 or 3, got {self.dim}")
        if len(self.entries) != sym_size(self.dim):
            raise DomainError(
                f"SymMat of dim {self.dim} needs {sym_size(self.dim)} entries, "
                f"got {len(self.entries)}"
            )
        object.__setattr__(self, "entries", tuple(float(x) for x in self.entries))

    @classmethod
    def from_matrix(cls, matrix) -> "SymMat":
        m = np.asarray(matrix, dtype=float)
        dim = m.shape[0]
        if m.shape != (dim, dim) or dim not in TRIU:
            raise DomainError(f"expected a 2x2 or 3x3 matrix, got shape {m.shape}")
        return cls(dim, tuple(m[i, j] for i, j in TRIU[dim]))

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "SymMat":
        return cls.from_matrix(scale * np.eye(dim))

    @classmethod
    def diag(cls, *values: float) -> "SymMat":
        return cls.from_matrix(np.diag(values))

    def to_matrix(self) -> np.ndarray:
        m = np.zeros((self.dim, self.dim))
        for value, (i, j) in zip(self.entries, TRIU[self.dim]):
            m[i, j] = value
            m[j, i] = value
        return m

    def __getitem__(self, index: Tuple[int, int]) -> float:
        i, j = sorted(index)
        return self.entries[TRIU[self.dim].index((i, j))]

    @property
    def trace(self) -> float:
        return float(sum(self[i, i] for i in range(self.dim)))


@dataclass(frozen=True, eq=False)
class SpectralDecomp:
    eigvals: np.ndarray  # по убыванию
    eigvecs: np.ndarray  # столбцы: собственные векторы

    def reconstruct(self) -> np.ndarray:
        return (self.eigvecs * self.eigvals[..., None, :]) @ np.swapaxes(self.eigvecs, -1, -2)


# ==================== ХРАНЕНИЕ ====================

def sym_to_full(components: np.ndarray, dim: int) -> np.ndarray:
    """(m, ...) -> (d, d, ...)"""
    components = np.asarray(components)
    full = np.empty((dim, dim) + components.shape[1:], dtype=components.dtype)
    for c, (i, j) in enumerate(TRIU[dim]):
        full[i, j] = components[c]
        full[j, i] = components[c]
    return full


def full_to_sym(full: np.ndarray, dim: int) -> np.ndarray:
    """(d, d, ...) -> (m, ...) с симметризацией ½(A + Aᵀ)"""
    return np.stack([0.5 * (full[i, j] + full[j, i]) for i, j in TRIU[dim]])


def to_trailing(full: np.ndarray) -> np.ndarray:
    """(d, d, ...) -> (..., d, d)"""
    return np.moveaxis(full, (0, 1), (-2, -1))


def to_leading(mats: np.ndarray) -> np.ndarray:
    """(..., d, d) -> (d, d, ...)"""
    return np.moveaxis(mats, (-2, -1), (0, 1))


# ==================== СПЕКТРАЛЬНОЕ РАЗЛОЖЕНИЕ ====================

def _eig_2x2(mats: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = mats[..., 0, 0]
    b = 0.5 * (mats[..., 0, 1] + mats[..., 1, 0])
    c = mats[..., 1, 1]
    mean = 0.5 * (a + c)
    radius = np.hypot(0.5 * (a - c), b)
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    cos, sin = np.cos(theta), np.sin(theta)

    vals = np.stack([mean + radius, mean - radius], axis=-1)
    vecs = np.empty(mats.shape)
    vecs[..., 0, 0] = cos
    vecs[..., 1, 0] = sin
    vecs[..., 0, 1] = -sin
    vecs[..., 1, 1] = cos
    return vals, vecs


def _eig_jacobi(mats: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Циклический метод Якоби, векторизованный по пакету"""
    a = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    dim = a.shape[-1]
    v = np.broadcast_to(np.eye(dim), a.shape).copy()
    scale = np.maximum(1.0, np.abs(a).max(axis=(-2, -1)))
    pairs = [(p, q) for p in range(dim) for q in range(p + 1, dim)]

    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(sum(a[..., p, q] ** 2 for p, q in pairs))
        if np.all(off <= JACOBI_TOL * scale):
            break
        for p, q in pairs:
            apq = a[..., p, q]
            active = apq != 0.0
            safe = np.where(active, apq, 1.0)
            with np.errstate(over="ignore"):
                tau = (a[..., q, q] - a[..., p, p]) / (2.0 * safe)
                sign = np.where(tau >= 0.0, 1.0, -1.0)
                t = sign / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(active & np.isfinite(t), t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            rot = np.broadcast_to(np.eye(dim), a.shape).copy()
            rot[..., p, p] = c
            rot[..., q, q] = c
            rot[..., p, q] = s
            rot[..., q, p] = -s
            a = np.swapaxes(rot, -1, -2) @ a @ rot
            a = 0.5 * (a + np.swapaxes(a, -1, -2))
            v = v @ rot

    vals = np.diagonal(a, axis1=-2, axis2=-1).copy()
    return vals, v


def eig_batch(mats: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Собственные числа (по убыванию) и векторы для массива (..., d, d)"""
    mats = np.asarray(mats, dtype=float)
    dim = mats.shape[-1]
    if dim == 2:
        vals, vecs = _eig_2x2(mats)
    elif dim == 3:
        vals, vecs = _eig_jacobi(mats)
    else:
        raise DomainError(f"only 2x2 and 3x3 matrices are supported, got {dim}x{dim}")

    order = np.argsort(-vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[..., None, :], axis=-1)
    return vals, vecs


def eig_sym(P: SymMat) -> SpectralDecomp:
    vals, vecs = eig_batch(P.to_matrix())
    return SpectralDecomp(eigvals=vals, eigvecs=vecs)


# ==================== ФУНКЦИИ ОТ МАТРИЦ ====================

def _evaluate(g: Callable, values: np.ndarray) -> np.ndarray:
    try:
        with np.errstate(all="ignore"):
            try:
                out = np.asarray(g(values), dtype=float)
            except TypeError:
                # скалярная функция вроде math.log
                out = np.vectorize(g, otypes=[float])(values)
    except (ValueError, ZeroDivisionError, OverflowError) as e:
        raise DomainError(f"matrix function undefined on spectrum: {e}") from e

    out = np.broadcast_to(out, values.shape)
    if not np.all(np.isfinite(out)):
        bad = values[~np.isfinite(out)]
        raise DomainError(f"matrix function undefined at eigenvalue(s) {bad[:3]}")
    return out


def _compose(vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    out = (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def apply_fn_batch(g: Callable, mats: np.ndarray) -> np.ndarray:
    """g(P) := Q g(D) Qᵀ для каждой матрицы пакета"""
    vals, vecs = eig_batch(mats)
    return _compose(_evaluate(g, vals), vecs)


def apply_fn(g: Callable, P: SymMat) -> SymMat:
    return SymMat.from_matrix(apply_fn_batch(g, P.to_matrix()))


def chi_sigma_batch(mats: np.ndarray, sigma: float) -> np.ndarray:
    """Срезка собственных чисел снизу: max{σ, λ}"""
    mats = np.asarray(mats, dtype=float)
    vals, vecs = eig_batch(mats)
    floored = _compose(np.maximum(vals, sigma), vecs)
    keep = (vals.min(axis=-1) >= sigma)[..., None, None]
    return np.where(keep, mats, floored)


def chi_sigma(P: SymMat, sigma: float) -> SymMat:
    return SymMat.from_matrix(chi_sigma_batch(P.to_matrix(), sigma))


def G_sigma(s, sigma: float):
    """Регуляризованный логарифм: G_σ' = 1/χ_σ, класс C¹ в точке s = σ"""
    if sigma <= 0:
        raise DomainError(f"G_sigma needs sigma > 0, got {sigma}")
    s = np.asarray(s, dtype=float)
    upper = np.log(np.maximum(s, sigma))
    lower = s / sigma + math.log(sigma) - 1.0
    return np.where(s >= sigma, upper, lower)


def trace_G_sigma_batch(mats: np.ndarray, sigma: float) -> np.ndarray:
    vals, _ = eig_batch(mats)
    return G_sigma(vals, sigma).sum(axis=-1)


def trace_G_sigma(P: SymMat, sigma: float) -> float:
    return float(trace_G_sigma_batch(P.to_matrix(), sigma))


def deviatoric_batch(grads: np.ndarray) -> np.ndarray:
    """½(G + Gᵀ) − (1/N) tr(G) I для массива (..., N, N)"""
    grads = np.asarray(grads, dtype=float)
    dim = grads.shape[-1]
    sym = 0.5 * (grads + np.swapaxes(grads, -1, -2))
    tr = np.trace(grads, axis1=-2, axis2=-1)
    return sym - (tr / dim)[..., None, None] * np.eye(dim)


def deviatoric(G) -> SymMat:
    return SymMat.from_matrix(deviatoric_batch(np.asarray(G, dtype=float)))


def min_eig_batch(mats: np.ndarray) -> np.ndarray:
    vals, _ = eig_batch(mats)
    return vals[..., -1]


def min_eig(P: SymMat) -> float:
    return float(min_eig_batch(P.to_matrix()))


def frobenius_sq(mats: np.ndarray) -> np.ndarray:
    return np.sum(np.asarray(mats) ** 2, axis=(-2, -1))
