from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from app.core.errors import ModelError
from app.core.quantum import DensityMatrix, HilbertLayout, Operator


class EnvKind(str, enum.Enum):
    MARKOVIAN = "markovian"
    FINITE = "finite"


class NoiseModel(str, enum.Enum):
    AMPLITUDE_DAMPING = "I"
    DEPOLARIZING = "II"


class TwoQubitVariant(str, enum.Enum):
    EQUAL = "i"      # E1 = E2, 交换 |01⟩↔|10⟩
    OPPOSITE = "ii"  # E1 = −E2, 交换 |00⟩↔|11⟩


class PropagationMethod(str, enum.Enum):
    AUTO = "auto"
    SPECTRAL = "spectral"
    RK = "rk"


class ScenarioFamily(str, enum.Enum):
    REFRIGERATOR = "refrigerator"
    WITNESS = "witness"
    RHP = "rhp"


@dataclass(frozen=True, eq=False)
class JumpTerm:
    """一个跃迁算符及其跃迁频率 ω′ 与衰减率 γ(ω′)"""
    op: Operator
    freq: float
    rate: float = 0.0
    channel: str = ""  # "1"/"2"/"3" 为热库通道，"N1"/"N2x" 等为噪声通道

    def __post_init__(self):
        if self.rate < 0 or math.isnan(self.rate):
            raise ModelError(f"jump rate must be >= 0, got {self.rate}")
        if not np.any(np.abs(self.op.entries) > 0):
            raise ModelError("jump operator is zero")

    def with_rate(self, rate: float) -> JumpTerm:
        return JumpTerm(self.op, self.freq, rate, self.channel)

    def adjoint(self) -> JumpTerm:
        """L^{−ω′} = L^{ω′†}"""
        return JumpTerm(self.op.dagger(), -self.freq, self.rate, self.channel)


@dataclass(frozen=True, eq=False)
class GKSLGenerator:
    """系统哈密顿量 + 跃迁项列表"""
    h_sys: Operator
    jumps: tuple[JumpTerm, ...] = ()

    def __post_init__(self):
        self.h_sys.require_hermitian()
        object.__setattr__(self, "jumps", tuple(self.jumps))
        for term in self.jumps:
            if term.op.layout != self.h_sys.layout:
                raise ValueError("jump operator layout differs from the Hamiltonian layout")

    @property
    def layout(self) -> HilbertLayout:
        return self.h_sys.layout


@dataclass(frozen=True, eq=False)
class HybridModel:
    """联合空间（系统因子在前，有限环境自旋在后）上的混合模型"""
    joint_layout: HilbertLayout
    h_joint: Operator
    lifted_jumps: tuple[JumpTerm, ...]
    partition: dict[int, tuple[int, ...]]  # 系统比特 -> 环境因子下标
    n_system: int

    @property
    def is_closed(self) -> bool:
        return not self.lifted_jumps

    @property
    def system_factors(self) -> tuple[int, ...]:
        return tuple(range(self.n_system))

    def as_generator(self) -> GKSLGenerator:
        """联合空间动力学本身就是一个 GKSL 生成元"""
        return GKSLGenerator(self.h_joint, self.lifted_jumps)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    qubits: tuple[int, ...]
    reduced_states: tuple[tuple[DensityMatrix, ...], ...]  # [时间][比特]
    trace_residual: np.ndarray
    min_eig: np.ndarray
    max_offdiag: np.ndarray
    # 连续求值器：t -> 各比特约化态（谱/闭合路径可用，RK 路径为 None）
    evaluator: Callable[[float], Sequence[DensityMatrix]] | None = field(default=None, repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or (len(times) > 1 and np.any(np.diff(times) <= 0)):
            raise ValueError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return len(self.times)

    def excited_population(self, qubit: int) -> np.ndarray:
        k = self.qubits.index(qubit)
        return np.array([states[k].population(0) for states in self.reduced_states])


@dataclass(frozen=True)
class TemperaturePoint:
    t: float
    r_excited: float
    temperature: float  # 无定义时为 NaN
    valid: bool
    inverted: bool = False  # r > 1/2，粒子数反转


@dataclass(frozen=True)
class WitnessResult:
    t: float
    lambda_nm: float
    lambda_m_best: float
    t_nm: float
    t_m_best: float
    mc: float
    grid_spec: str
    flagged: bool = False  # 测试通道温度无定义


@dataclass(frozen=True)
class FeatureReport:
    transient_min: tuple[float, float]  # (t*, T*)
    steady: tuple[float, float] | None  # (t_s, T_s)
    refrigerates: bool
    oscillation_envelope: tuple[tuple[float, float, float], ...]  # (窗口起点, min, max)
    undefined_points: int = 0


@dataclass(frozen=True)
class SweepPoint:
    strength: float
    t_probe: float
    delta_probe: float
    delta_half: float
    min_temperature: float
    refrigerates: bool


@dataclass(frozen=True)
class ThresholdEstimate:
    value: float | None  # 越界时为 None
    bracket: tuple[float, float] | None
    in_range: bool


@dataclass(frozen=True)
class RegressionOutcome:
    preset: str
    quantity: str
    expected: float
    tolerance: float
    computed: float | None
    passed: bool
