"""
量子核心：带维数标签的稠密复算符代数

约定：ħ = K = k_B = 1，所有量均无量纲；单比特基 |0⟩ 为激发态（能量 +E/2），
|1⟩ 为基态（能量 −E/2）。
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from app.core.errors import StateError

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = -1e-8

# 单比特算符（|0⟩ = 激发态）
IDENTITY2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)   # |0⟩⟨1|，升到激发态
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)  # |1⟩⟨0|


@dataclass(frozen=True)
class HilbertLayout:
    """张量积空间的因子维数列表"""
    factor_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.factor_dims)
        if not dims:
            raise StateError("layout needs at least one factor")
        if any(d < 2 for d in dims):
            raise StateError(f"every factor dimension must be >= 2, got {dims}")
        object.__setattr__(self, "factor_dims", dims)

    @classmethod
    def qubits(cls, n: int) -> HilbertLayout:
        return cls((2,) * n)

    @property
    def total_dim(self) -> int:
        return math.prod(self.factor_dims)

    @property
    def n_factors(self) -> int:
        return len(self.factor_dims)

    def concat(self, other: HilbertLayout) -> HilbertLayout:
        return HilbertLayout(self.factor_dims + other.factor_dims)

    def subset(self, keep: Iterable[int]) -> HilbertLayout:
        return HilbertLayout(tuple(self.factor_dims[i] for i in sorted(keep)))


@dataclass(frozen=True, eq=False)
class Operator:
    """作用在 layout 上的方阵；构造后只读"""
    layout: HilbertLayout
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        d = self.layout.total_dim
        if m.shape != (d, d):
            raise StateError(f"entries of shape {m.shape} do not match layout dimension {d}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    def dagger(self) -> Operator:
        return Operator(self.layout, self.entries.conj().T)

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.conj().T), initial=0.0) <= tol)

    def require_hermitian(self, tol: float = HERMITIAN_TOL) -> None:
        if not self.is_hermitian(tol):
            raise StateError("operator is not Hermitian")

    def commutator(self, other: Operator) -> Operator:
        self._check_layout(other)
        return Operator(self.layout, self.entries @ other.entries - other.entries @ self.entries)

    def _check_layout(self, other: Operator) -> None:
        if self.layout != other.layout:
            raise StateError(f"layout mismatch: {self.layout.factor_dims} vs {other.layout.factor_dims}")

    def __add__(self, other: Operator) -> Operator:
        self._check_layout(other)
        return Operator(self.layout, self.entries + other.entries)

    def __sub__(self, other: Operator) -> Operator:
        self._check_layout(other)
        return Operator(self.layout, self.entries - other.entries)

    def __matmul__(self, other: Operator) -> Operator:
        self._check_layout(other)
        return Operator(self.layout, self.entries @ other.entries)

    def __mul__(self, scalar: complex) -> Operator:
        return Operator(self.layout, self.entries * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class DensityMatrix(Operator):
    """厄米、单位迹、半正定的密度矩阵"""
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        super().__post_init__()
        if self.check:
            problem = self.violation()
            if problem:
                raise StateError(f"invalid density matrix: {problem}")

    def violation(self) -> str | None:
        """返回第一个被违反的不变量描述，满足时返回 None"""
        if not self.is_hermitian(HERMITIAN_TOL):
            return "not Hermitian"
        if abs(self.trace_residual) > TRACE_TOL:
            return f"trace residual {self.trace_residual:.3e}"
        if self.min_eigenvalue < POSITIVITY_TOL:
            return f"negative eigenvalue {self.min_eigenvalue:.3e}"
        return None

    @property
    def trace_residual(self) -> float:
        return float(np.trace(self.entries).real - 1.0)

    @property
    def min_eigenvalue(self) -> float:
        hermitian = 0.5 * (self.entries + self.entries.conj().T)
        return float(linalg.eigvalsh(hermitian)[0])

    @property
    def max_offdiagonal(self) -> float:
        off = self.entries - np.diag(np.diag(self.entries))
        return float(np.max(np.abs(off), initial=0.0))

    def purity(self) -> float:
        return float(np.real(np.trace(self.entries @ self.entries)))

    def population(self, index: int) -> float:
        return float(self.entries[index, index].real)

    @classmethod
    def from_ket(cls, layout: HilbertLayout, ket: Sequence[complex]) -> DensityMatrix:
        psi = np.asarray(ket, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(layout, np.outer(psi, psi.conj()))


def as_density(op: Operator, check: bool = True) -> DensityMatrix:
    return DensityMatrix(op.layout, op.entries, check=check)


def tensor(a: Operator, b: Operator) -> Operator:
    """Kronecker 积，因子列表按顺序拼接"""
    layout = a.layout.concat(b.layout)
    entries = np.kron(a.entries, b.entries)
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(layout, entries)
    return Operator(layout, entries)


def tensor_all(ops: Sequence[Operator]) -> Operator:
    return reduce(tensor, ops)


def embed(op: np.ndarray | Operator, at: int, layout: HilbertLayout) -> Operator:
    """把 2×2 算符放到 layout 的第 at 个因子上，其余因子为单位阵"""
    small = op.entries if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    if not 0 <= at < layout.n_factors:
        raise StateError(f"subsystem index {at} out of range for {layout.n_factors} factors")
    if small.shape != (layout.factor_dims[at],) * 2:
        raise StateError(f"operator of shape {small.shape} cannot act on factor {at}")
    before = math.prod(layout.factor_dims[:at])
    after = math.prod(layout.factor_dims[at + 1:])
    entries = np.kron(np.kron(np.eye(before), small), np.eye(after))
    return Operator(layout, entries)


def partial_trace(rho: Operator, keep: Iterable[int]) -> DensityMatrix:
    """保留 keep 中的子系统（按原顺序），对其余因子求迹"""
    keep_set = set(keep)
    layout = rho.layout
    if not keep_set:
        raise StateError("partial trace needs a nonempty keep set")
    if any(i < 0 or i >= layout.n_factors for i in keep_set):
        raise StateError(f"keep indices {sorted(keep_set)} out of range")
    dims = layout.factor_dims
    t = rho.entries.reshape(dims + dims)
    n = len(dims)
    # 从大到小逐个求迹，前面的轴号保持不变
    for axis in sorted(set(range(len(dims))) - keep_set, reverse=True):
        t = np.trace(t, axis1=axis, axis2=axis + n)
        n -= 1
    kept = layout.subset(keep_set)
    d = kept.total_dim
    return DensityMatrix(kept, t.reshape(d, d), check=isinstance(rho, DensityMatrix) and rho.check)


def thermal_state(h: Operator, beta: float) -> DensityMatrix:
    """Gibbs 态 exp(−βh)/Tr；β=+∞ 时返回（非简并）基态投影"""
    h.require_hermitian()
    if beta < 0 or math.isnan(beta):
        raise StateError(f"inverse temperature must be >= 0, got {beta}")
    evals, evecs = linalg.eigh(h.entries)
    if math.isinf(beta):
        if len(evals) > 1 and evals[1] - evals[0] < 1e-12:
            raise StateError("ground space is degenerate; zero-temperature state is not unique")
        weights = np.zeros_like(evals)
        weights[0] = 1.0
    else:
        # 以最小本征值为零点平移，防止大 β 溢出
        weights = np.exp(-beta * (evals - evals[0]))
        weights /= weights.sum()
    entries = (evecs * weights) @ evecs.conj().T
    return DensityMatrix(h.layout, entries)


def unitary_propagator(h: Operator, t: float) -> Operator:
    """exp(−i h t)，谱分解实现"""
    h.require_hermitian()
    evals, evecs = linalg.eigh(h.entries)
    return Operator(h.layout, (evecs * np.exp(-1j * evals * t)) @ evecs.conj().T)


def basis_ket(bits: str) -> np.ndarray:
    """计算基矢，例如 '010' -> |010⟩"""
    psi = np.zeros(2 ** len(bits), dtype=complex)
    psi[int(bits, 2)] = 1.0
    return psi


def ketbra(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.outer(a, np.conj(b))
