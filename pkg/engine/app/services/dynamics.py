"""
演化引擎：纯 GKSL、带有限环境的闭合演化、马尔可夫热库与有限环境并存的混合演化

超算符采用列堆叠约定 vec(ρ) = ρ.reshape(-1, order="F")，
vec(AXB) = (Bᵀ ⊗ A) vec(X)。
"""
from __future__ import annotations

import logging
import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy import integrate, linalg

from app.core.config import settings
from app.core.errors import PropagationError, StateError, SteadyStateError
from app.core.quantum import (
    POSITIVITY_TOL,
    TRACE_TOL,
    DensityMatrix,
    HilbertLayout,
    Operator,
    as_density,
    partial_trace,
)
from app.models import GKSLGenerator, HybridModel, JumpTerm, PropagationMethod, Trajectory
from app.services.builder import lift_jump

logger = logging.getLogger(__name__)

NULL_TOL = 1e-10
HERMITICITY_LIMIT = 1e-9
# 初态中小于 max|ρ₀|·SUPPORT_RTOL 的矩阵元视为零
SUPPORT_RTOL = 1e-14


def _vec(m: np.ndarray) -> np.ndarray:
    return m.reshape(-1, order="F")


def _unvec(v: np.ndarray, d: int) -> np.ndarray:
    return v.reshape(d, d, order="F")


def _active(jumps: Iterable[JumpTerm]) -> list[JumpTerm]:
    return [t for t in jumps if t.rate > 0]


def gksl_rhs(gen: GKSLGenerator, rho: Operator) -> Operator:
    """−i[H, ρ] + Σ_k γ_k (L_k ρ L_k† − ½{L_k†L_k, ρ})"""
    if rho.layout != gen.layout:
        raise StateError(f"state layout {rho.layout.factor_dims} does not match generator layout "
                         f"{gen.layout.factor_dims}")
    h = gen.h_sys.entries
    r = rho.entries
    out = -1j * (h @ r - r @ h)
    for term in _active(gen.jumps):
        op = term.op.entries
        op_dag = op.conj().T
        n = op_dag @ op
        out = out + term.rate * (op @ r @ op_dag - 0.5 * (n @ r + r @ n))
    return Operator(rho.layout, out)


def coupled_support(gen: GKSLGenerator, rho0: Operator) -> np.ndarray:
    """
    ρ₀ 的非零矩阵元在生成元作用下可达的全部矩阵元（列堆叠下标，升序）。
    这些下标张成的子空间对演化不变，其余矩阵元恒为零。
    """
    h = gen.h_sys.entries
    pattern = np.abs(h) > 0
    jump_patterns = []
    for term in _active(gen.jumps):
        op = term.op.entries
        jump_patterns.append((np.abs(op) > 0).astype(np.int64))
        pattern |= np.abs(op.conj().T @ op) > 0
    gen_pattern = pattern.astype(np.int64)
    r = rho0.entries
    mask = np.abs(r) > SUPPORT_RTOL * float(np.max(np.abs(r)))
    while True:
        m = mask.astype(np.int64)
        grown = mask | (gen_pattern @ m > 0) | (m @ gen_pattern > 0)
        for p in jump_patterns:
            grown |= p @ m @ p.T > 0
        if np.array_equal(grown, mask):
            break
        mask = grown
    return np.flatnonzero(_vec(mask))


def liouvillian(gen: GKSLGenerator, support: np.ndarray | None = None) -> np.ndarray:
    """
    d² × d² 刘维尔超算符；给定 support 时只返回这些矩阵元之间的块
    （support 须对演化不变，见 coupled_support）。
    """
    h = gen.h_sys.entries
    d = h.shape[0]
    if support is None:
        eye = np.eye(d)
        superop = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
        for term in _active(gen.jumps):
            op = term.op.entries
            n = op.conj().T @ op
            superop += term.rate * (np.kron(op.conj(), op) - 0.5 * np.kron(eye, n) - 0.5 * np.kron(n.T, eye))
        return superop

    rows, cols = support % d, support // d
    h_eff = np.array(h, dtype=complex)
    for term in _active(gen.jumps):
        op = term.op.entries
        h_eff -= 0.5j * term.rate * (op.conj().T @ op)
    # (i,j) ← (k,l)：−i H_eff[i,k] δ_jl + i δ_ik conj(H_eff[j,l]) + Σ γ L[i,k] conj(L[j,l])
    superop = -1j * h_eff[np.ix_(rows, rows)] * (cols[:, None] == cols[None, :])
    superop += 1j * h_eff.conj()[np.ix_(cols, cols)] * (rows[:, None] == rows[None, :])
    for term in _active(gen.jumps):
        op = term.op.entries
        superop += term.rate * op[np.ix_(rows, rows)] * op.conj()[np.ix_(cols, cols)]
    return superop


class DefectiveLiouvillian(PropagationError):
    """本征向量矩阵病态，谱分解不可靠"""


class SpectralEvolution:
    """
    ρ(t) = V e^{Λt} V⁻¹ vec ρ(0)。构造时把每个本征向量约化到系统因子上，
    之后每个时刻只需在系统空间做一次矩阵-向量乘法。
    superop 可以只是不变子空间 support 上的块。
    """

    def __init__(self, superop: np.ndarray, rho0: Operator, keep: Sequence[int],
                 condition_limit: float | None = None, support: np.ndarray | None = None):
        limit = condition_limit or settings.defect_condition_limit
        w, v = linalg.eig(superop)
        cond = np.linalg.cond(v)
        if not np.isfinite(cond) or cond > limit:
            raise DefectiveLiouvillian(f"eigenvector matrix condition number {cond:.3e} exceeds {limit:.1e}")
        if np.max(w.real) > 1e-8:
            logger.warning("Liouvillian eigenvalue with positive real part %.3e", np.max(w.real))
        # 零本征值的舍入残差在 t ~ 1e8 时会转动稳态分量
        w = np.where(np.abs(w) < NULL_TOL, 0.0, w)
        self.rates = np.minimum(w.real, 0.0) + 1j * w.imag
        layout = rho0.layout
        d = layout.total_dim
        vec0 = _vec(rho0.entries)
        self.coeffs = linalg.solve(v, vec0 if support is None else vec0[support])
        self.keep = tuple(keep)
        self.layout = layout.subset(self.keep)
        full = self.keep == tuple(range(layout.n_factors))
        if support is None and full:
            self.modes = v
        elif full:
            self.modes = np.zeros((d * d, v.shape[1]), dtype=complex)
            self.modes[support] = v
        else:
            self.modes = np.column_stack([self._reduce(v[:, k], layout, support) for k in range(v.shape[1])])
        logger.debug("spectral evolution: %d modes, condition number %.3e", len(w), cond)

    def _reduce(self, mode: np.ndarray, layout: HilbertLayout, support: np.ndarray | None) -> np.ndarray:
        d = layout.total_dim
        if support is not None:
            buf = np.zeros(d * d, dtype=complex)
            buf[support] = mode
            mode = buf
        return _vec(partial_trace(Operator(layout, _unvec(mode, d)), self.keep).entries)

    def __call__(self, t: float) -> np.ndarray:
        m = _unvec(self.modes @ (np.exp(self.rates * t) * self.coeffs), self.layout.total_dim)
        return 0.5 * (m + m.conj().T)


class UnitaryEvolution:
    """闭合演化：h_joint 只做一次 eigh，能量本征基下 ρ̃_jk(t) = ρ̃_jk(0) e^{−i(e_j−e_k)t}"""

    def __init__(self, h_joint: Operator, rho0: Operator, keep: Sequence[int]):
        h_joint.require_hermitian()
        if rho0.layout != h_joint.layout:
            raise StateError("initial state and Hamiltonian act on different spaces")
        self.energies, self.basis = linalg.eigh(h_joint.entries)
        self.rho_eig = self.basis.conj().T @ rho0.entries @ self.basis
        self.gaps = self.energies[:, None] - self.energies[None, :]
        self.layout = h_joint.layout
        self.keep = tuple(keep)

    def joint(self, t: float) -> np.ndarray:
        rotated = self.rho_eig * np.exp(-1j * self.gaps * t)
        return self.basis @ rotated @ self.basis.conj().T

    def __call__(self, t: float) -> np.ndarray:
        return partial_trace(Operator(self.layout, self.joint(t)), self.keep).entries


# ---------------------------------------------------------------- 自适应 Runge–Kutta

class MasterEquationSolver:
    """
    scipy solve_ivp（默认 DOP853）按采样时刻分段积分，逐个产出状态。
    误差只按绝对容差控制（相对容差压到可忽略），相邻采样之间的迹漂移超过
    trace_drift 视为容差失败；步长下溢报 PropagationError。
    """

    def __init__(self, rhs: Callable[[np.ndarray], np.ndarray], atol: float = 1e-9,
                 trace_drift: float = 1e-10, method: str = "DOP853", chunk: int = 256):
        self.rhs = rhs
        self.atol = atol
        self.rtol = max(atol * 1e-3, 1e-13)
        self.trace_drift = trace_drift
        self.method = method
        self.chunk = chunk
        self.evaluations = 0

    def integrate(self, y0: np.ndarray, times: np.ndarray) -> Iterator[np.ndarray]:
        times = np.asarray(times, dtype=float)
        y = np.array(y0, dtype=complex)
        shape = y.shape
        t = min(0.0, float(times[0]))
        trace = np.trace(y).real

        def fun(_t: float, flat: np.ndarray) -> np.ndarray:
            self.evaluations += 1
            return self.rhs(flat.reshape(shape)).ravel()

        for start in range(0, len(times), self.chunk):
            block = times[start:start + self.chunk]
            if block[-1] <= t:
                states = [y.ravel()] * len(block)
            else:
                sol = integrate.solve_ivp(fun, (t, float(block[-1])), y.ravel(), method=self.method,
                                          t_eval=block, atol=self.atol, rtol=self.rtol)
                if sol.status < 0:
                    raise PropagationError(f"step size underflow in [{t:.6g}, {block[-1]:.6g}]: {sol.message}")
                states = list(sol.y.T)
            for t_k, flat in zip(block, states):
                state = flat.reshape(shape)
                if not np.all(np.isfinite(state)):
                    raise PropagationError(f"non-finite state at t={t_k:.6g}")
                drift = abs(np.trace(state).real - trace)
                if drift > self.trace_drift:
                    raise PropagationError(f"tolerance failure: trace drift {drift:.3e} at t={t_k:.6g}")
                trace = np.trace(state).real
                yield state.copy()
            y = states[-1].reshape(shape)
            t = max(t, float(block[-1]))
        logger.debug("%s: %d right-hand side evaluations", self.method, self.evaluations)


def _matrix_rhs(h: np.ndarray, jumps: Sequence[JumpTerm]) -> Callable[[np.ndarray], np.ndarray]:
    """dρ/dt = −i(H_eff ρ − ρ H_eff†) + Σ A ρ A†，H_eff = H − (i/2) Σ γ L†L，A = √γ L"""
    active = _active(jumps)
    h_eff = np.array(h, dtype=complex)
    if active:
        stacked = np.array([math.sqrt(t.rate) * t.op.entries for t in active])
        stacked_dag = stacked.conj().transpose(0, 2, 1)
        h_eff = h_eff - 0.5j * np.sum(stacked_dag @ stacked, axis=0)
    h_eff_dag = h_eff.conj().T

    def rhs(rho: np.ndarray) -> np.ndarray:
        out = -1j * (h_eff @ rho - rho @ h_eff_dag)
        if active:
            out = out + np.sum(stacked @ rho @ stacked_dag, axis=0)
        return out

    return rhs


# ---------------------------------------------------------------- 轨迹组装

def _build_trajectory(times: np.ndarray, system_states: Iterable[np.ndarray], layout: HilbertLayout,
                      qubits: Sequence[int], evaluator=None) -> Trajectory:
    reduced: list[tuple[DensityMatrix, ...]] = []
    trace_res, min_eig, max_off = [], [], []
    for t, m in zip(times, system_states):
        rho_s = DensityMatrix(layout, m, check=False)
        herm = float(np.max(np.abs(m - m.conj().T)))
        problem = None
        if abs(rho_s.trace_residual) > TRACE_TOL:
            problem = f"trace residual {rho_s.trace_residual:.3e}"
        elif herm > HERMITICITY_LIMIT:
            problem = f"Hermiticity defect {herm:.3e}"
        elif rho_s.min_eigenvalue < POSITIVITY_TOL:
            problem = f"negative eigenvalue {rho_s.min_eigenvalue:.3e}"
        if problem:
            raise PropagationError(f"system state at t={t:.6g} violates density-matrix invariants: {problem}")
        singles = tuple(_single(rho_s, q) for q in qubits)
        reduced.append(singles)
        trace_res.append(rho_s.trace_residual)
        min_eig.append(rho_s.min_eigenvalue)
        max_off.append(max(s.max_offdiagonal for s in singles))
    return Trajectory(
        times=times,
        qubits=tuple(qubits),
        reduced_states=tuple(reduced),
        trace_residual=np.array(trace_res),
        min_eig=np.array(min_eig),
        max_offdiag=np.array(max_off),
        evaluator=evaluator,
    )


def _single(rho_s: DensityMatrix, qubit: int) -> DensityMatrix:
    if rho_s.layout.n_factors == 1:
        return rho_s
    return partial_trace(rho_s, {qubit})


def _evaluator(evolve: Callable[[float], np.ndarray], layout: HilbertLayout, qubits: Sequence[int]):
    def evaluate(t: float) -> tuple[DensityMatrix, ...]:
        rho_s = DensityMatrix(layout, evolve(t), check=False)
        return tuple(_single(rho_s, q) for q in qubits)
    return evaluate


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise StateError("times must be a nonempty 1-d sequence")
    if np.any(np.diff(times) <= 0):
        raise StateError("times must be strictly increasing")
    return times


def _require_valid(rho0: Operator) -> DensityMatrix:
    rho = as_density(rho0, check=False)
    problem = rho.violation()
    if problem:
        raise StateError(f"invalid initial state: {problem}")
    return rho


# ---------------------------------------------------------------- 传播子

def _spectral(gen: GKSLGenerator, rho0: Operator, keep: Sequence[int],
              support: np.ndarray | None = None) -> SpectralEvolution:
    if support is None:
        support = coupled_support(gen, rho0)
    return SpectralEvolution(liouvillian(gen, support), rho0, keep, support=support)


def propagate_gksl(gen: GKSLGenerator, rho0: Operator, times, qubits: Sequence[int] | None = None,
                   method: PropagationMethod | str = PropagationMethod.AUTO,
                   atol: float = 1e-9, trace_drift: float = 1e-10) -> Trajectory:
    """
    纯 GKSL 演化。默认走刘维尔算符谱分解，在每个采样时刻精确求值；
    本征向量矩阵病态时退回 Runge–Kutta 积分。
    """
    times = _check_times(times)
    rho0 = _require_valid(rho0)
    if rho0.layout != gen.layout:
        raise StateError("initial state and generator act on different spaces")
    method = PropagationMethod(method)
    layout = gen.layout
    keep = tuple(range(layout.n_factors))
    qubits = tuple(keep if qubits is None else qubits)
    if method is not PropagationMethod.RK:
        try:
            evolve = _spectral(gen, rho0, keep)
        except DefectiveLiouvillian as exc:
            if method is PropagationMethod.SPECTRAL:
                raise
            logger.info("falling back to Runge-Kutta integration: %s", exc)
        else:
            logger.info("GKSL spectral propagation: dim %d, %d samples", layout.total_dim, len(times))
            states = (evolve(t) for t in times)
            return _build_trajectory(times, states, layout, qubits, _evaluator(evolve, layout, qubits))
    logger.info("GKSL Runge-Kutta propagation: dim %d, %d samples", layout.total_dim, len(times))
    solver = MasterEquationSolver(_matrix_rhs(gen.h_sys.entries, gen.jumps), atol, trace_drift)
    states = solver.integrate(rho0.entries, times)
    return _build_trajectory(times, states, layout, qubits)


def steady_state(gen: GKSLGenerator) -> DensityMatrix:
    """刘维尔算符零空间（绝对容差 NULL_TOL），归一化并厄米化"""
    superop = liouvillian(gen)
    _, s, vh = linalg.svd(superop)
    null = vh[s <= NULL_TOL]
    if null.shape[0] != 1:
        raise SteadyStateError(f"steady state is not unique: null space dimension {null.shape[0]}",
                               null_dim=null.shape[0])
    d = gen.h_sys.dim
    m = _unvec(null[0].conj(), d)
    m = 0.5 * (m + m.conj().T)
    m = m / np.trace(m).real
    rho = DensityMatrix(gen.layout, m, check=False)
    residual = float(np.max(np.abs(gksl_rhs(gen, rho).entries)))
    if residual > NULL_TOL:
        logger.warning("steady-state residual %.3e exceeds %.0e", residual, NULL_TOL)
    problem = rho.violation()
    if problem:
        raise SteadyStateError(f"steady state is not a valid density matrix: {problem}", null_dim=1)
    return rho


def propagate_closed(h_joint: Operator, rho_joint0: Operator, times, keep: Iterable[int],
                     qubits: Sequence[int] | None = None) -> Trajectory:
    """
    ρ_s(t) = Tr_B[e^{−iHt} ρ(0) e^{iHt}]，keep 为系统因子下标（按原顺序）
    """
    times = _check_times(times)
    rho0 = _require_valid(rho_joint0)
    keep = tuple(sorted(keep))
    evolve = UnitaryEvolution(h_joint, rho0, keep)
    layout = h_joint.layout.subset(keep)
    qubits = tuple(range(len(keep)) if qubits is None else qubits)
    logger.info("closed propagation: joint dim %d, %d samples", h_joint.dim, len(times))
    states = (evolve(t) for t in times)
    return _build_trajectory(times, states, layout, qubits, _evaluator(evolve, layout, qubits))


def propagate_hybrid(model: HybridModel, rho_joint0: Operator, times,
                     method: PropagationMethod | str = PropagationMethod.AUTO,
                     atol: float = 1e-9, trace_drift: float = 1e-10,
                     qubits: Sequence[int] | None = None) -> Trajectory:
    """
    联合空间上 dρ/dt = −i[h_joint, ρ] + Σ 提升后的耗散项，再对环境因子求迹。
    auto：无马尔可夫项时走闭合演化；初态可达的耦合矩阵元不超过 spectral_max_entries
    时在该不变块上做谱分解；否则 Runge–Kutta。
    """
    times = _check_times(times)
    rho0 = _require_valid(rho_joint0)
    if rho0.layout != model.joint_layout:
        raise StateError("initial state does not live on the joint layout")
    method = PropagationMethod(method)
    keep = model.system_factors
    layout = model.joint_layout.subset(keep)
    qubits = tuple(keep if qubits is None else qubits)
    dim = model.joint_layout.total_dim

    if method is PropagationMethod.AUTO and model.is_closed:
        return propagate_closed(model.h_joint, rho0, times, keep, qubits)
    gen = model.as_generator()
    if method is not PropagationMethod.RK:
        support = coupled_support(gen, rho0)
        use_spectral = method is PropagationMethod.SPECTRAL or support.size <= settings.spectral_max_entries
        if not use_spectral:
            logger.info("%d coupled entries exceed spectral_max_entries=%d", support.size,
                        settings.spectral_max_entries)
        else:
            try:
                evolve = _spectral(gen, rho0, keep, support)
            except DefectiveLiouvillian as exc:
                if method is PropagationMethod.SPECTRAL:
                    raise
                logger.info("falling back to Runge-Kutta integration: %s", exc)
            else:
                logger.info("hybrid spectral propagation: joint dim %d, %d coupled entries, %d samples",
                            dim, support.size, len(times))
                states = (evolve(t) for t in times)
                return _build_trajectory(times, states, layout, qubits, _evaluator(evolve, layout, qubits))

    logger.info("hybrid Runge-Kutta propagation: joint dim %d, %d samples", dim, len(times))
    solver = MasterEquationSolver(_matrix_rhs(model.h_joint.entries, model.lifted_jumps), atol, trace_drift)
    joint_states = solver.integrate(rho0.entries, times)
    states = (partial_trace(Operator(model.joint_layout, m), keep).entries for m in joint_states)
    return _build_trajectory(times, states, layout, qubits)


def attach_noise(target: GKSLGenerator | HybridModel, noise_jumps: Sequence[JumpTerm]):
    """把噪声跃迁项并入生成元；混合模型中噪声算符提升为 L ⊗ I_env。全零衰减率时原样返回"""
    active = _active(noise_jumps)
    if not active:
        return target
    if isinstance(target, GKSLGenerator):
        for term in active:
            if term.op.layout != target.layout:
                raise StateError("noise operator does not act on the system space")
        return GKSLGenerator(target.h_sys, tuple(target.jumps) + tuple(active))
    system_layout = target.joint_layout.subset(target.system_factors)
    for term in active:
        if term.op.layout != system_layout:
            raise StateError("noise operator does not act on the system space")
    lifted = tuple(lift_jump(t, target.joint_layout) for t in active)
    return HybridModel(
        joint_layout=target.joint_layout,
        h_joint=target.h_joint,
        lifted_jumps=tuple(target.lifted_jumps) + lifted,
        partition=target.partition,
        n_system=target.n_system,
    )
