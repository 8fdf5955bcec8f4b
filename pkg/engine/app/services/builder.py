"""
模型构建：哈密顿量、自旋星型环境、跃迁算符与衰减率、初始态

三比特基按 |q1 q2 q3⟩ 排列，下标为 int(bits, 2)；|0⟩ 为激发态。
"""
from __future__ import annotations

import logging
import math
from typing import Iterable

import numpy as np
from scipy import linalg

from app.core.config import settings
from app.core.errors import ModelError
from app.core.quantum import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Z,
    DensityMatrix,
    HilbertLayout,
    Operator,
    basis_ket,
    embed,
    ketbra,
    tensor_all,
    thermal_state,
)
from app.models import GKSLGenerator, HybridModel, JumpTerm, NoiseModel, TwoQubitVariant
from app.schemas import FiniteSpinEnv, MarkovianEnv, RefrigeratorModel

logger = logging.getLogger(__name__)

GAP_MERGE_TOL = 1e-9
ZERO_OPERATOR_TOL = 1e-12
THREE_QUBITS = HilbertLayout.qubits(3)


def _require_positive(**energies: float) -> None:
    for name, value in energies.items():
        if not value > 0:
            raise ModelError(f"{name} must be positive, got {value}")


def local_hamiltonian(energies: Iterable[float]) -> Operator:
    """Σ (E_i/2) σ_z^i"""
    energies = list(energies)
    layout = HilbertLayout.qubits(len(energies))
    entries = sum(0.5 * e * embed(SIGMA_Z, i, layout).entries for i, e in enumerate(energies))
    return Operator(layout, entries)


def build_three_qubit_hamiltonian(E1: float, E2: float, E3: float, g: float,
                                  self_contained: bool = True) -> Operator:
    _require_positive(E1=E1, E2=E2, E3=E3)
    if E2 != E1 + E3:
        if self_contained:
            raise ModelError(f"self-contained refrigerator requires E2 = E1 + E3, got ({E1}, {E2}, {E3})")
        logger.warning("E2 != E1 + E3 for (%s, %s, %s); the refrigerator is not self-contained", E1, E2, E3)
    swap = ketbra(basis_ket("010"), basis_ket("101"))
    h_int = g * (swap + swap.conj().T)
    return local_hamiltonian((E1, E2, E3)) + Operator(THREE_QUBITS, h_int)


def build_two_qubit_hamiltonian(E1: float, E2: float, g: float,
                                variant: TwoQubitVariant | str) -> Operator:
    variant = TwoQubitVariant(variant)
    if variant is TwoQubitVariant.EQUAL:
        if not math.isclose(E1, E2, abs_tol=1e-12):
            raise ModelError(f"condition (i) requires E1 = E2, got {E1}, {E2}")
        swap = ketbra(basis_ket("01"), basis_ket("10"))
    else:
        if not math.isclose(E1, -E2, abs_tol=1e-12):
            raise ModelError(f"condition (ii) requires E1 = -E2, got {E1}, {E2}")
        swap = ketbra(basis_ket("00"), basis_ket("11"))
    _require_positive(E1=E1)
    layout = HilbertLayout.qubits(2)
    return local_hamiltonian((E1, E2)) + Operator(layout, g * (swap + swap.conj().T))


def build_system_hamiltonian(model: RefrigeratorModel) -> Operator:
    """按比特数分派到一/二/三比特哈密顿量"""
    if model.n_qubits == 3:
        E1, E2, E3 = model.energies
        return build_three_qubit_hamiltonian(E1, E2, E3, model.g, model.self_contained)
    if model.n_qubits == 2:
        E1, E2 = model.energies
        return build_two_qubit_hamiltonian(E1, E2, model.g, model.variant)
    _require_positive(E1=model.energies[0])
    return local_hamiltonian(model.energies)


# ---------------------------------------------------------------- 衰减率

def bose_einstein(omega: float, beta: float) -> float:
    """f(ω, β) = 1/(e^{βω} − 1)，ω > 0"""
    x = beta * omega
    if x > 700:
        return 0.0
    return 1.0 / math.expm1(x)


def decay_rate(freq: float, env: MarkovianEnv, zero_policy: str | None = None) -> float:
    """
    γ(ω′) = J(ω′)[1 + f(ω′)]（ω′ > 0），J(|ω′|) f(|ω′|)（ω′ < 0）

    ω′ = 0 时按 zero_policy 处理：ohmic_limit 取极限 lim J(ω)f(ω) = α·τ，
    zero 取 0，forbid 报错。
    """
    spectral = env.spectral
    if spectral.alpha == 0:
        return 0.0
    if freq == 0:
        policy = zero_policy or settings.zero_frequency_policy
        if policy == "ohmic_limit":
            return spectral.alpha * env.tau
        if policy == "zero":
            return 0.0
        raise ModelError("decay rate at zero frequency is undefined without a zero-frequency policy")
    w = abs(freq)
    n = bose_einstein(w, env.beta)
    if freq > 0:
        return spectral(w) * (1.0 + n)
    return spectral(w) * n


def with_rates(terms: Iterable[JumpTerm], env: MarkovianEnv, scale: float = 1.0) -> list[JumpTerm]:
    return [t.with_rate(scale * decay_rate(t.freq, env)) for t in terms]


# ---------------------------------------------------------------- 跃迁算符

def _plus_minus() -> tuple[np.ndarray, np.ndarray]:
    k101, k010 = basis_ket("101"), basis_ket("010")
    return (k101 + k010) / math.sqrt(2), (k101 - k010) / math.sqrt(2)


def _with_adjoints(terms: list[JumpTerm]) -> list[JumpTerm]:
    return terms + [t.adjoint() for t in terms]


def _channel_one_operators(g: float, E1: float) -> list[tuple[float, np.ndarray]]:
    plus, minus = _plus_minus()
    k = basis_ket
    r2 = math.sqrt(2)
    return [
        (E1, ketbra(k("111"), k("011")) + ketbra(k("100"), k("000"))),
        (E1 + g, (ketbra(k("110"), plus) + ketbra(minus, k("001"))) / r2),
        (E1 - g, (ketbra(plus, k("001")) - ketbra(k("110"), minus)) / r2),
    ]


def tabulated_jump_set(E1: float, E2: float, E3: float, g: float) -> list[JumpTerm]:
    """
    三比特制冷机的全局跃迁算符表：每个通道 3 个算符及其伴随（频率取负），
    |±⟩ = (|101⟩ ± |010⟩)/√2。rate 置 0，由所接热库填充。
    """
    _require_positive(E1=E1, E2=E2, E3=E3)
    if not math.isclose(E2, E1 + E3, abs_tol=1e-12):
        raise ModelError("the tabulated jump operators assume E2 = E1 + E3")
    plus, minus = _plus_minus()
    k = basis_ket
    r2 = math.sqrt(2)
    listed = {
        "1": _channel_one_operators(g, E1),
        "2": [
            (E2, ketbra(k("110"), k("100")) + ketbra(k("011"), k("001"))),
            (E2 + g, (ketbra(k("111"), plus) - ketbra(minus, k("000"))) / r2),
            (E2 - g, (ketbra(plus, k("000")) + ketbra(k("111"), minus)) / r2),
        ],
        "3": [
            (E3, ketbra(k("111"), k("110")) + ketbra(k("001"), k("000"))),
            (E3 + g, (ketbra(k("011"), plus) + ketbra(minus, k("100"))) / r2),
            (E3 - g, (ketbra(plus, k("100")) - ketbra(k("011"), minus)) / r2),
        ],
    }
    terms: list[JumpTerm] = []
    for channel, ops in listed.items():
        forward = [JumpTerm(Operator(THREE_QUBITS, m), w, 0.0, channel) for w, m in ops]
        terms.extend(_with_adjoints(forward))
    return terms


def derive_jump_operators(h_sys: Operator, coupling: Operator, channel: str = "") -> list[JumpTerm]:
    """
    A(ω′) = Σ_{ε′−ε=ω′} Π(ε) A Π(ε′)：在 h_sys 本征基下分解耦合算符，
    相同能隙（容差 GAP_MERGE_TOL）归为同一个算符，数值为零的丢弃。
    """
    h_sys.require_hermitian()
    coupling.require_hermitian()
    if coupling.layout != h_sys.layout:
        raise ModelError("coupling and Hamiltonian act on different spaces")
    evals, evecs = linalg.eigh(h_sys.entries)
    # 能级分组
    levels: list[tuple[float, np.ndarray]] = []
    start = 0
    for i in range(1, len(evals) + 1):
        if i == len(evals) or evals[i] - evals[i - 1] > GAP_MERGE_TOL:
            vecs = evecs[:, start:i]
            levels.append((float(np.mean(evals[start:i])), vecs @ vecs.conj().T))
            start = i
    blocks: list[tuple[float, np.ndarray]] = []
    a = coupling.entries
    for e_low, p_low in levels:
        for e_high, p_high in levels:
            block = p_low @ a @ p_high
            if np.max(np.abs(block)) > ZERO_OPERATOR_TOL:
                blocks.append((e_high - e_low, block))
    blocks.sort(key=lambda item: item[0])
    merged: list[tuple[float, np.ndarray]] = []
    for freq, block in blocks:
        if merged and freq - merged[-1][0] <= GAP_MERGE_TOL:
            merged[-1] = (merged[-1][0], merged[-1][1] + block)
        else:
            merged.append((freq, block))
    terms = []
    for freq, matrix in merged:
        if np.max(np.abs(matrix)) <= ZERO_OPERATOR_TOL:
            continue
        # 近零能隙吸附到 0
        freq = 0.0 if abs(freq) <= GAP_MERGE_TOL else freq
        terms.append(JumpTerm(Operator(h_sys.layout, matrix), freq, 0.0, channel))
    return terms


def thermal_jump_set(model: RefrigeratorModel, h_sys: Operator, qubit: int) -> list[JumpTerm]:
    """比特 qubit 所接马尔可夫热库的跃迁项（带衰减率）"""
    env = model.envs[qubit]
    if not isinstance(env, MarkovianEnv):
        raise ModelError(f"qubit {qubit + 1} is not attached to a Markovian bath")
    channel = str(qubit + 1)
    e = model.energies
    if model.n_qubits == 3 and model.g > 0 and e[1] == e[0] + e[2]:
        ops = [t for t in tabulated_jump_set(*model.energies, model.g) if t.channel == channel]
    else:
        ops = derive_jump_operators(h_sys, embed(SIGMA_X, qubit, h_sys.layout), channel)
    return with_rates(ops, env)


def noise_jump_set(model: NoiseModel | str, E1: float, E2: float, E3: float, g: float,
                   noise_env: MarkovianEnv, strength: float) -> list[JumpTerm]:
    """
    作用在冷比特上的附加马尔可夫噪声：
    I  振幅阻尼，复用通道 1 的算符，衰减率乘 g1；
    II 去极化，x 型为通道 1 的算符，y 型为其 i 倍，z 型为 L⁰ 与 L^{±2g}，衰减率乘 g2。
    """
    try:
        model = NoiseModel(model)
    except ValueError:
        raise ModelError(f"unknown noise model {model!r}") from None
    if strength < 0:
        raise ModelError(f"noise strength must be >= 0, got {strength}")
    _require_positive(E1=E1, E2=E2, E3=E3)
    x_type = [JumpTerm(Operator(THREE_QUBITS, m), w, 0.0, "") for w, m in _channel_one_operators(g, E1)]
    if model is NoiseModel.AMPLITUDE_DAMPING:
        terms = [JumpTerm(t.op, t.freq, 0.0, "N1") for t in _with_adjoints(x_type)]
        return with_rates(terms, noise_env, strength)

    terms = [JumpTerm(t.op, t.freq, 0.0, "N2x") for t in _with_adjoints(x_type)]
    y_type = [JumpTerm(1j * t.op, t.freq, 0.0, "N2y") for t in x_type]
    terms += _with_adjoints(y_type)
    plus, minus = _plus_minus()
    diag = np.zeros(8)
    for bits, sign in (("000", 1), ("001", 1), ("011", 1), ("100", -1), ("110", -1), ("111", -1)):
        diag[int(bits, 2)] = sign
    terms.append(JumpTerm(Operator(THREE_QUBITS, np.diag(diag)), 0.0, 0.0, "N2z"))
    if g > 0:
        flip = JumpTerm(Operator(THREE_QUBITS, -ketbra(minus, plus)), 2 * g, 0.0, "N2z")
        terms += [flip, flip.adjoint()]
    return with_rates(terms, noise_env, strength)


# ---------------------------------------------------------------- 自旋星型环境

def collective_operators(n_spins: int) -> tuple[Operator, Operator]:
    """J⁺ = Σ_k σ_k⁺, J⁻ = Σ_k σ_k⁻"""
    layout = HilbertLayout.qubits(n_spins)
    j_plus = sum(embed(SIGMA_PLUS, k, layout).entries for k in range(n_spins))
    j_minus = sum(embed(SIGMA_MINUS, k, layout).entries for k in range(n_spins))
    return Operator(layout, j_plus), Operator(layout, j_minus)


def spin_star_hamiltonian(env: FiniteSpinEnv) -> Operator:
    """H_B = ν J⁺J⁻，只用于制备环境初始热态"""
    if env.n_spins < 1:
        raise ModelError("spin environment needs at least one spin")
    j_plus, j_minus = collective_operators(env.n_spins)
    return env.nu * (j_plus @ j_minus)


def spin_star_interaction(qubit_index: int, env_factors: Iterable[int], env: FiniteSpinEnv,
                          layout: HilbertLayout) -> Operator:
    """H_SB = 2α₀(σ⁺J⁻ + σ⁻J⁺)，J^± 只作用在 env_factors 上"""
    env_factors = tuple(env_factors)
    if len(env_factors) != env.n_spins:
        raise ModelError(f"environment has {env.n_spins} spins but {len(env_factors)} factors were given")
    s_plus = embed(SIGMA_PLUS, qubit_index, layout).entries
    s_minus = embed(SIGMA_MINUS, qubit_index, layout).entries
    j_plus = sum(embed(SIGMA_PLUS, k, layout).entries for k in env_factors)
    j_minus = sum(embed(SIGMA_MINUS, k, layout).entries for k in env_factors)
    entries = 2 * env.alpha0 * (s_plus @ j_minus + s_minus @ j_plus)
    return Operator(layout, entries)


# ---------------------------------------------------------------- 初始态与组装

def build_initial_state(model: RefrigeratorModel) -> tuple[HilbertLayout, DensityMatrix, dict[int, tuple[int, ...]]]:
    """
    ρ(0) = ⊗_i exp(−β_i H_i)/Z_i ⊗ 各有限环境的热态

    系统因子在前，有限环境按比特顺序排在后面；partition 给出比特到环境因子下标的映射。
    """
    factors: list[DensityMatrix] = []
    for i, energy in enumerate(model.energies):
        h_i = local_hamiltonian((energy,))
        factors.append(thermal_state(h_i, 1.0 / model.qubit_temperature(i)))
    partition: dict[int, tuple[int, ...]] = {}
    next_factor = model.n_qubits
    for i in model.finite_qubits:
        env = model.envs[i]
        factors.append(thermal_state(spin_star_hamiltonian(env), env.beta))
        partition[i] = tuple(range(next_factor, next_factor + env.n_spins))
        next_factor += env.n_spins
    rho0 = tensor_all(factors)
    return rho0.layout, rho0, partition


def lift_jump(term: JumpTerm, joint_layout: HilbertLayout) -> JumpTerm:
    """L ⊗ I_env"""
    env_dim = joint_layout.total_dim // term.op.dim
    lifted = Operator(joint_layout, np.kron(term.op.entries, np.eye(env_dim)))
    return JumpTerm(lifted, term.freq, term.rate, term.channel)


def build_hybrid_model(model: RefrigeratorModel) -> GKSLGenerator | HybridModel:
    """
    全部为马尔可夫热库（或不接环境）时返回 GKSLGenerator；否则返回联合空间上的
    HybridModel，无马尔可夫热库时其 lifted_jumps 为空，走闭合演化。
    噪声不在这里加，由 dynamics.attach_noise 叠加。
    """
    h_sys = build_system_hamiltonian(model)
    jumps: list[JumpTerm] = []
    for i in model.markovian_qubits:
        jumps.extend(thermal_jump_set(model, h_sys, i))
    if not model.finite_qubits:
        logger.debug("pure GKSL model with %d jump terms", len(jumps))
        return GKSLGenerator(h_sys, jumps)

    layout, _, partition = build_initial_state(model)
    env_dim = layout.total_dim // h_sys.dim
    h_joint = np.kron(h_sys.entries, np.eye(env_dim))
    for qubit, env_factors in partition.items():
        h_joint = h_joint + spin_star_interaction(qubit, env_factors, model.envs[qubit], layout).entries
    lifted = tuple(lift_jump(t, layout) for t in jumps)
    logger.debug("hybrid model: joint dim %d, %d lifted jumps, finite qubits %s",
                 layout.total_dim, len(lifted), sorted(partition))
    return HybridModel(
        joint_layout=layout,
        h_joint=Operator(layout, h_joint),
        lifted_jumps=lifted,
        partition=partition,
        n_system=model.n_qubits,
    )
