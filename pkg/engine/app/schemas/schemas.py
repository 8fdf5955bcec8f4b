import logging
import math
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models import NoiseModel, PropagationMethod, ScenarioFamily, TwoQubitVariant

logger = logging.getLogger(__name__)

OBSERVABLES = ("temperature", "features", "analytic")
REGRESSION_QUANTITIES = (
    "transient_min",
    "transient_time",
    "steady",
    "steady_time",
    "refrigerates",
    "envelope_min",
    "envelope_max",
)


class SpectralDensity(BaseModel):
    """欧姆谱密度 J(ω) = α ω e^{−ω/Ω}"""
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(..., ge=0)
    omega_cut: float = Field(default=1e3, gt=0)

    def __call__(self, omega: float) -> float:
        return self.alpha * omega * math.exp(-omega / self.omega_cut)


class MarkovianEnv(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["markovian"] = "markovian"
    spectral: SpectralDensity
    tau: float = Field(..., gt=0)

    @property
    def beta(self) -> float:
        return 1.0 / self.tau


class FiniteSpinEnv(BaseModel):
    """自旋星型有限环境：N 个无相互作用自旋，XY 交换耦合到中心比特"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["finite"] = "finite"
    n_spins: int = Field(default=2, ge=1)
    nu: float = Field(default=1.0, gt=0)
    alpha0: float = Field(default=0.5, ge=0)
    tau: float = Field(..., gt=0)

    @property
    def beta(self) -> float:
        return 1.0 / self.tau


EnvSpec = Annotated[Union[MarkovianEnv, FiniteSpinEnv], Field(discriminator="kind")]


class NoiseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: NoiseModel
    strength: float = Field(..., ge=0)
    env: MarkovianEnv


class RefrigeratorModel(BaseModel):
    """
    1~3 个比特的系统模型。三比特为吸收式制冷机，两比特为条件 (i)/(ii)
    的交换耦合，单比特只与环境耦合。envs[i] 为 None 表示第 i 个比特不接环境。
    """
    model_config = ConfigDict(frozen=True)

    energies: List[float] = Field(..., min_length=1, max_length=3)
    g: float = Field(default=0.0, ge=0)
    variant: Optional[TwoQubitVariant] = None
    self_contained: bool = True
    envs: List[Optional[EnvSpec]]
    # 各比特初始温度；缺省时取所接环境的温度（不接环境的比特必须显式给出）
    initial_taus: Optional[List[Optional[float]]] = None
    noise: Optional[NoiseSpec] = None

    @property
    def n_qubits(self) -> int:
        return len(self.energies)

    @model_validator(mode="after")
    def _check_consistency(self):
        n = self.n_qubits
        if len(self.envs) != n:
            raise ValueError(f"envs has {len(self.envs)} entries for {n} qubits")
        if n == 2:
            if self.variant is None:
                raise ValueError("two-qubit model needs variant 'i' or 'ii'")
            e1, e2 = self.energies
            if self.variant is TwoQubitVariant.EQUAL and not math.isclose(e1, e2, abs_tol=1e-12):
                raise ValueError(f"condition (i) requires E1 = E2, got {e1}, {e2}")
            if self.variant is TwoQubitVariant.OPPOSITE and not math.isclose(e1, -e2, abs_tol=1e-12):
                raise ValueError(f"condition (ii) requires E1 = -E2, got {e1}, {e2}")
            if e1 <= 0:
                raise ValueError("E1 must be positive")
        elif any(e <= 0 for e in self.energies):
            raise ValueError(f"energies must be positive, got {self.energies}")
        if n == 3:
            e1, e2, e3 = self.energies
            if e2 != e1 + e3:
                if self.self_contained:
                    raise ValueError(f"self-contained refrigerator requires E2 = E1 + E3, got {self.energies}")
                logger.warning("E2 != E1 + E3 (%s); the refrigerator is not self-contained", self.energies)
        if self.initial_taus is not None and len(self.initial_taus) != n:
            raise ValueError(f"initial_taus has {len(self.initial_taus)} entries for {n} qubits")
        for i in range(n):
            self.qubit_temperature(i)
        if self.noise is not None and n != 3:
            raise ValueError("noise models act on the three-qubit refrigerator only")
        return self

    @property
    def finite_qubits(self) -> List[int]:
        return [i for i, env in enumerate(self.envs) if isinstance(env, FiniteSpinEnv)]

    @property
    def markovian_qubits(self) -> List[int]:
        return [i for i, env in enumerate(self.envs) if isinstance(env, MarkovianEnv)]

    def qubit_temperature(self, qubit: int) -> float:
        """比特的初始温度：显式给出的优先，否则取所接环境的温度"""
        if self.initial_taus is not None and self.initial_taus[qubit] is not None:
            tau = self.initial_taus[qubit]
            if tau <= 0:
                raise ValueError(f"initial temperature must be positive, got {tau}")
            return tau
        env = self.envs[qubit]
        if env is None:
            raise ValueError(f"qubit {qubit + 1} has no environment and no initial temperature")
        return env.tau


class GridSpec(BaseModel):
    """采样网格：[0, dense_until] 上步长 dense_step 的均匀段，之后 points 个点到 horizon"""
    model_config = ConfigDict(frozen=True)

    dense_until: float = Field(default=20.0, ge=0)
    dense_step: float = Field(default=0.005, gt=0)
    points: int = Field(default=2000, ge=0)
    spacing: Literal["linear", "log"] = "log"

    def build(self, horizon: float) -> np.ndarray:
        if horizon <= 0:
            raise ValueError(f"horizon must be positive, got {horizon}")
        until = min(self.dense_until, horizon)
        n = max(1, int(math.ceil(until / self.dense_step - 1e-9)))
        dense = np.linspace(0.0, until, n + 1)
        if until >= horizon or self.points == 0:
            if dense[-1] < horizon:
                dense = np.append(dense, horizon)
            return dense
        if self.spacing == "log" and until > 0:
            tail = np.geomspace(until, horizon, self.points + 1)[1:]
        else:
            tail = np.linspace(until, horizon, self.points + 1)[1:]
        times = np.concatenate([dense, tail])
        times[-1] = horizon
        return times


class ToleranceSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: PropagationMethod = PropagationMethod.AUTO
    rk_atol: float = Field(default=1e-9, gt=0)
    trace_drift: float = Field(default=1e-10, gt=0)
    steady_window: float = Field(default=0.1, gt=0, le=1)
    steady_tol: float = Field(default=1e-3, gt=0)
    envelope_windows: int = Field(default=20, ge=1)


class WitnessFamilySpec(BaseModel):
    """见证量的马尔可夫通道族：α 取对数网格，Ω 固定"""
    model_config = ConfigDict(frozen=True)

    alpha_min: float = Field(default=1e-5, gt=0)
    alpha_max: float = Field(default=1e-1, gt=0)
    points: int = Field(default=50, ge=1)
    omega_cut: float = Field(default=1e3, gt=0)

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.alpha_max < self.alpha_min:
            raise ValueError("alpha_max must be >= alpha_min")
        return self

    def alphas(self) -> np.ndarray:
        return np.geomspace(self.alpha_min, self.alpha_max, self.points)

    def describe(self) -> str:
        return f"alpha=logspace({self.alpha_min:g},{self.alpha_max:g},{self.points});omega_cut={self.omega_cut:g}"


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    schema_version: Literal[1] = 1
    name: str = Field(..., min_length=1)
    aliases: List[str] = []
    family: ScenarioFamily = ScenarioFamily.REFRIGERATOR
    description: str = ""
    model: RefrigeratorModel
    horizon: float = Field(..., gt=0)
    grid: GridSpec = GridSpec()
    tolerances: ToleranceSpec = ToleranceSpec()
    observables: List[str] = ["temperature", "features"]
    witness: Optional[WitnessFamilySpec] = None

    @field_validator("observables")
    @classmethod
    def _known_observables(cls, v):
        unknown = sorted(set(v) - set(OBSERVABLES))
        if unknown:
            raise ValueError(f"unknown observables: {unknown}")
        return v

    @model_validator(mode="after")
    def _check_family(self):
        if self.family is not ScenarioFamily.REFRIGERATOR:
            if self.model.n_qubits != 1 or not self.model.finite_qubits:
                raise ValueError(f"{self.family.value} scenarios need a single qubit with a finite environment")
        if "analytic" in self.observables:
            env = self.model.envs[0]
            if self.model.n_qubits != 1 or not isinstance(env, FiniteSpinEnv) or env.n_spins != 1:
                raise ValueError("the analytic column needs a single qubit with an N=1 spin environment")
        return self

    def times(self) -> np.ndarray:
        return self.grid.build(self.horizon)


class SweepSpec(BaseModel):
    """噪声阈值扫描：在 base 预设上叠加噪声，逐个强度运行"""
    model_config = ConfigDict(frozen=True)

    model: NoiseModel
    env: MarkovianEnv
    strengths: List[float] = Field(..., min_length=1)
    base: str = "A1-S3"
    t_probe: Optional[float] = Field(default=None, gt=0)
    refine_steps: int = Field(default=6, ge=0)

    @field_validator("strengths")
    @classmethod
    def _ascending(cls, v):
        if any(s < 0 for s in v):
            raise ValueError("noise strengths must be nonnegative")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("noise strengths must be strictly ascending")
        return v


class RegressionTarget(BaseModel):
    preset: str
    quantity: Literal[
        "transient_min",
        "transient_time",
        "steady",
        "steady_time",
        "refrigerates",
        "envelope_min",
        "envelope_max",
    ]
    expected: float
    tolerance: float = Field(..., ge=0)


class TargetsFile(BaseModel):
    schema_version: Literal[1] = 1
    targets: List[RegressionTarget] = []


# HTTP 响应
class PresetSummary(BaseModel):
    name: str
    aliases: List[str]
    family: ScenarioFamily
    horizon: float
    description: str


class HealthResponse(BaseModel):
    status: str
    presets: int
