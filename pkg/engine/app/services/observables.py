"""
可观测量：局域温度、单比特解析温度、Wootters 共生纠缠度、非马尔可夫见证量与轨迹特征
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
from scipy import linalg, optimize

from app.core.config import settings
from app.core.errors import ModelError, StateError
from app.core.quantum import (
    SIGMA_X,
    SIGMA_Y,
    DensityMatrix,
    HilbertLayout,
    Operator,
    basis_ket,
    embed,
    tensor,
    thermal_state,
)
from app.models import FeatureReport, GKSLGenerator, TemperaturePoint, Trajectory, WitnessResult
from app.schemas import FiniteSpinEnv, MarkovianEnv, ToleranceSpec
from app.services.builder import (
    derive_jump_operators,
    local_hamiltonian,
    spin_star_hamiltonian,
    spin_star_interaction,
    with_rates,
)
from app.services.dynamics import UnitaryEvolution, propagate_gksl

logger = logging.getLogger(__name__)

DIAGONAL_TOL = 1e-9
HALF_MARGIN = 1e-12
RISE_THRESHOLD = 1e-6


def local_temperature(rho1: Operator, E: float, t: float = 0.0) -> TemperaturePoint:
    """
    T = |E| / ln((1−r)/r)，r 为上能级布居；E < 0 时上能级为 |1⟩。
    r ≥ 1/2 时温度无定义，r > 1/2 另标记为粒子数反转。
    """
    if rho1.dim != 2:
        raise StateError(f"local temperature needs a single-qubit state, got dimension {rho1.dim}")
    off = abs(rho1.entries[0, 1])
    if off > DIAGONAL_TOL:
        raise StateError(f"single-qubit state is not diagonal in the energy basis (|ρ01| = {off:.3e})")
    if E == 0:
        raise ModelError("level spacing must be nonzero")
    r = float(rho1.entries[0, 0].real if E > 0 else rho1.entries[1, 1].real)
    inverted = r > 0.5 + HALF_MARGIN
    if r >= 0.5 - HALF_MARGIN:
        return TemperaturePoint(t, r, math.nan, False, inverted)
    if r <= 0:
        return TemperaturePoint(t, r, 0.0, True, False)
    return TemperaturePoint(t, r, abs(E) / math.log((1 - r) / r), True, False)


def analytic_single_qubit_temperature(t, E1: float, tau1: float):
    """
    单比特接 N=1 自旋环境（ν=1, α₀=1/2）的闭式温度，余弦宗量取 √(E₁²+4)·t。
    接受标量或数组。
    """
    t = np.asarray(t, dtype=float)
    a = math.exp(1.0 / tau1)
    b = math.exp(E1 / tau1)
    omega2 = E1 ** 2 + 4
    p = 2 * (1 - np.cos(np.sqrt(omega2) * t)) / omega2
    r = ((1 + a) + p * (b - a)) / ((1 + a) * (1 + b))
    with np.errstate(divide="ignore", invalid="ignore"):
        temp = np.where(r < 0.5 - HALF_MARGIN, E1 / np.log((1 - r) / r), np.nan)
    return float(temp) if temp.ndim == 0 else temp


def concurrence(rho: Operator) -> float:
    """Wootters：C = max{0, λ1−λ2−λ3−λ4}，λ 为 ρ(σy⊗σy)ρ*(σy⊗σy) 本征值的平方根（降序）"""
    if rho.dim != 4:
        raise StateError(f"concurrence needs a two-qubit state, got dimension {rho.dim}")
    m = rho.entries
    yy = np.kron(SIGMA_Y, SIGMA_Y)
    r = m @ yy @ m.conj() @ yy
    lam = np.sort(np.sqrt(np.abs(linalg.eigvals(r).real)))[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def _excited_population_series(env: MarkovianEnv, E: float, rho0: DensityMatrix, times) -> np.ndarray:
    h = local_hamiltonian((E,))
    jumps = with_rates(derive_jump_operators(h, embed(SIGMA_X, 0, h.layout), "M"), env)
    traj = propagate_gksl(GKSLGenerator(h, jumps), rho0, times)
    return traj.excited_population(0)


def witness_mc(times, lambda_nm: Sequence[float], family: Sequence[MarkovianEnv], E_plus: float,
               E_minus: float, rho0: DensityMatrix, grid_spec: str = "") -> list[WitnessResult]:
    """
    M_C(t) = max{0, min_M T_M(t) − T_NM(t)}：族内每个马尔可夫通道从同一 rho0 出发
    并发演化；无定义温度不参与最小化，并在结果中标记。
    """
    if not family:
        raise ModelError("witness needs a nonempty Markovian family")
    E = E_plus - E_minus
    if E <= 0:
        raise ModelError(f"E+ must exceed E-, got {E_plus}, {E_minus}")
    times = np.asarray(times, dtype=float)
    lambda_nm = np.asarray(lambda_nm, dtype=float)
    if lambda_nm.shape != times.shape:
        raise StateError("test-channel series and time grid differ in length")

    with ThreadPoolExecutor(max_workers=settings.max_workers) as pool:
        series = list(pool.map(lambda env: _excited_population_series(env, E, rho0, times), family))
    lambda_m = np.vstack(series)

    def temp(r: float) -> float:
        return local_temperature(DensityMatrix(rho0.layout, np.diag([r, 1 - r]), check=False), E).temperature

    results = []
    for k, t in enumerate(times):
        t_nm = temp(lambda_nm[k])
        t_m = np.array([temp(r) for r in lambda_m[:, k]])
        defined = ~np.isnan(t_m)
        flagged = math.isnan(t_nm) or not defined.all()
        if math.isnan(t_nm) or not defined.any():
            results.append(WitnessResult(float(t), float(lambda_nm[k]), math.nan, t_nm, math.nan, 0.0,
                                         grid_spec, True))
            continue
        best = int(np.argmin(np.where(defined, t_m, np.inf)))
        mc = max(0.0, float(t_m[best]) - t_nm)
        results.append(WitnessResult(float(t), float(lambda_nm[k]), float(lambda_m[best, k]), t_nm,
                                     float(t_m[best]), mc, grid_spec, flagged))
    return results


def rhp_nonmonotonicity(series: Sequence[float]) -> tuple[bool, float]:
    """total_rise = Σ max{0, C(t_{k+1}) − C(t_k)}"""
    values = np.asarray(series, dtype=float)
    if values.size < 2:
        raise StateError("non-monotonicity needs at least two points")
    rise = float(np.sum(np.clip(np.diff(values), 0.0, None)))
    return rise > RISE_THRESHOLD, rise


def rhp_concurrence_series(E: float, env: FiniteSpinEnv, times) -> np.ndarray:
    """
    |φ⁺⟩ 置于（系统比特, 无动力学的辅助比特）上，系统比特接自旋星环境闭合演化，
    返回每个时刻系统-辅助约化态的共生纠缠度。
    """
    layout = HilbertLayout.qubits(2 + env.n_spins)
    h = embed(local_hamiltonian((E,)).entries, 0, layout)
    h = h + spin_star_interaction(0, range(2, 2 + env.n_spins), env, layout)
    phi_plus = (basis_ket("00") + basis_ket("11")) / math.sqrt(2)
    pair = DensityMatrix.from_ket(HilbertLayout.qubits(2), phi_plus)
    rho0 = tensor(pair, thermal_state(spin_star_hamiltonian(env), env.beta))
    evolve = UnitaryEvolution(h, rho0, (0, 1))
    pair_layout = HilbertLayout.qubits(2)
    return np.array([concurrence(Operator(pair_layout, evolve(float(t)))) for t in np.asarray(times, dtype=float)])


def temperature_series(traj: Trajectory, qubit: int, E: float) -> list[TemperaturePoint]:
    k = traj.qubits.index(qubit)
    return [local_temperature(states[k], E, float(t)) for t, states in zip(traj.times, traj.reduced_states)]


def _refine_minimum(traj: Trajectory, k: int, i: int, E: float, t_min: float, best: float) -> tuple[float, float]:
    times = traj.times
    if traj.evaluator is None or i == 0 or i == len(times) - 1:
        return t_min, best

    def objective(t: float) -> float:
        t = min(max(t, times[i - 1]), times[i + 1])
        value = local_temperature(traj.evaluator(t)[k], E).temperature
        return math.inf if math.isnan(value) else value

    try:
        res = optimize.minimize_scalar(objective, bracket=(times[i - 1], times[i], times[i + 1]),
                                       method="golden", options={"xtol": 1e-10})
    except ValueError:
        return t_min, best
    if times[i - 1] <= res.x <= times[i + 1] and res.fun < best:
        return float(res.x), float(res.fun)
    return t_min, best


def _transient_index(temps: np.ndarray, valid: np.ndarray, stop: int, rise: float) -> int | None:
    """
    [0, stop) 内最低的、其后温度回升超过 rise 的局部极小点；
    没有这样的点时取该段的最小值。
    """
    seg = np.where(valid[:stop], temps[:stop], np.inf)
    finite = np.isfinite(seg)
    if not finite.any():
        return None
    padded = np.concatenate(([np.inf], seg, [np.inf]))
    local = finite & (seg <= padded[:-2]) & (seg <= padded[2:])
    # later_max[i] = max(seg[i+1:])
    highs = np.maximum.accumulate(np.where(finite, seg, -np.inf)[::-1])[::-1]
    later_max = np.append(highs[1:], -np.inf)
    dips = local & (later_max - seg > rise)
    pool = dips if dips.any() else finite
    return int(np.argmin(np.where(pool, seg, np.inf)))


def extract_features(traj: Trajectory, tau1: float, E: float, tolerances: ToleranceSpec | None = None,
                     qubit: int = 0) -> FeatureReport:
    """
    瞬态最低温、稳态检测、是否制冷以及分窗振荡包络。

    检测到稳态时，瞬态最低温只在稳态起点之前的瞬态段里找：取其后温度回升超过
    steady_tol 的最低局部极小（即真正的瞬态凹陷），没有凹陷时取该段最小值。
    无稳态时取整条轨迹的最小值。
    """
    tol = tolerances or ToleranceSpec()
    if len(traj) == 0:
        raise StateError("empty trajectory")
    k = traj.qubits.index(qubit)
    times = traj.times
    temps = np.array([p.temperature for p in temperature_series(traj, qubit, E)])
    valid = ~np.isnan(temps)

    # 稳态：最后 steady_window 比例的时间窗内温度起伏小于 steady_tol
    steady = None
    stop = len(times)
    t0, t_end = float(times[0]), float(times[-1])
    window = times >= t_end - tol.steady_window * (t_end - t0)
    if window.sum() >= 2 and valid[window].all():
        w = temps[window]
        if w.max() - w.min() < tol.steady_tol:
            t_s_value = float(w.mean())
            off = np.where(~valid | (np.abs(temps - t_s_value) >= tol.steady_tol))[0]
            start = 0 if off.size == 0 else int(off[-1]) + 1
            steady = (float(times[start]), t_s_value)
            stop = start if start > 0 else len(times)

    i = _transient_index(temps, valid, stop, tol.steady_tol) if steady else None
    if i is None and valid.any():
        i = int(np.argmin(np.where(valid, temps, np.inf)))
    if i is not None:
        transient = _refine_minimum(traj, k, i, E, float(times[i]), float(temps[i]))
    else:
        transient = (math.nan, math.nan)

    refrigerates = bool(np.any(valid & (temps < tau1 - 1e-9)))

    edges = np.linspace(t0, t_end, tol.envelope_windows + 1)
    envelope = []
    for j in range(tol.envelope_windows):
        upper = times <= edges[j + 1] if j == tol.envelope_windows - 1 else times < edges[j + 1]
        mask = valid & (times >= edges[j]) & upper
        if mask.any():
            envelope.append((float(edges[j]), float(temps[mask].min()), float(temps[mask].max())))

    return FeatureReport(
        transient_min=transient,
        steady=steady,
        refrigerates=refrigerates,
        oscillation_envelope=tuple(envelope),
        undefined_points=int((~valid).sum()),
    )
