import numpy as np
import pytest

from app.core.errors import PropagationError, StateError, SteadyStateError
from app.core.quantum import Operator, partial_trace, thermal_state
from app.models import GKSLGenerator
from app.schemas import RefrigeratorModel
from app.services import presets
from app.services.builder import build_hybrid_model, build_initial_state, local_hamiltonian, noise_jump_set
from app.services.dynamics import (
    DefectiveLiouvillian,
    MasterEquationSolver,
    SpectralEvolution,
    UnitaryEvolution,
    attach_noise,
    coupled_support,
    gksl_rhs,
    liouvillian,
    propagate_closed,
    propagate_gksl,
    propagate_hybrid,
    steady_state,
)


def _states(traj, qubit=0):
    k = traj.qubits.index(qubit)
    return np.array([s[k].entries for s in traj.reduced_states])


@pytest.fixture
def s1():
    model = RefrigeratorModel.model_validate(presets._three_qubit("S1"))
    _, rho0, _ = build_initial_state(model)
    return build_hybrid_model(model), rho0


def test_liouvillian_matches_rhs(s1):
    gen, rho0 = s1
    rng = np.random.default_rng(7)
    m = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    rho = Operator(gen.layout, m @ m.conj().T)
    lhs = liouvillian(gen) @ rho.entries.reshape(-1, order="F")
    rhs = gksl_rhs(gen, rho).entries.reshape(-1, order="F")
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_gksl_trajectory_keeps_density_matrix_invariants(s1):
    gen, rho0 = s1
    traj = propagate_gksl(gen, rho0, np.linspace(0.0, 200.0, 401))
    assert np.max(np.abs(traj.trace_residual)) <= 1e-9
    assert np.min(traj.min_eig) >= -1e-8
    assert np.max(traj.max_offdiag) <= 1e-9
    assert traj.qubits == (0, 1, 2)
    assert traj.evaluator is not None


def test_spectral_and_integrated_gksl_agree(s1):
    gen, rho0 = s1
    times = np.linspace(0.0, 5.0, 11)
    spectral = propagate_gksl(gen, rho0, times, method="spectral")
    integrated = propagate_gksl(gen, rho0, times, method="rk", atol=1e-12)
    assert integrated.evaluator is None
    for q in range(3):
        assert np.max(np.abs(_states(spectral, q) - _states(integrated, q))) <= 1e-8


def test_steady_state_is_fixed_point_of_evolution():
    model = RefrigeratorModel.model_validate(presets._three_qubit("S3"))
    gen = build_hybrid_model(model)
    rho = steady_state(gen)
    assert np.max(np.abs(gksl_rhs(gen, rho).entries)) <= 1e-9
    _, rho0, _ = build_initial_state(model)
    late = propagate_gksl(gen, rho0, [0.0, 1e7, 1e8])
    assert np.max(late.max_offdiag) <= 1e-9
    for states in late.reduced_states[1:]:
        assert np.allclose(states[0].entries, partial_trace(rho, {0}).entries, atol=1e-6)


def test_null_mode_is_stationary():
    model = RefrigeratorModel.model_validate(presets._three_qubit("S3"))
    gen = build_hybrid_model(model)
    _, rho0, _ = build_initial_state(model)
    evolve = SpectralEvolution(liouvillian(gen), rho0, (0, 1, 2))
    assert np.count_nonzero(evolve.rates == 0) == 1
    m = evolve(1e8)
    assert np.max(np.abs(m - m.conj().T)) == 0.0
    assert np.allclose(m, evolve(1e9), atol=1e-9)


@pytest.mark.parametrize("regime", ["S1", "S2", "S3"])
def test_liouvillian_is_dissipative_with_one_null_mode(regime):
    gen = build_hybrid_model(RefrigeratorModel.model_validate(presets._three_qubit(regime)))
    w = np.linalg.eigvals(liouvillian(gen))
    assert np.max(w.real) <= 1e-9
    assert np.count_nonzero(np.abs(w) < 1e-9) == 1


def test_rhs_is_trace_free_and_hermitian(s1):
    gen, _ = s1
    rng = np.random.default_rng(11)
    for _ in range(100):
        m = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        out = gksl_rhs(gen, Operator(gen.layout, m + m.conj().T)).entries
        assert abs(np.trace(out)) <= 1e-11
        assert np.allclose(out, out.conj().T, atol=1e-12)


def test_steady_state_without_dissipation_is_not_unique():
    gen = GKSLGenerator(local_hamiltonian((1.0, 2.0, 1.0)), [])
    with pytest.raises(SteadyStateError) as excinfo:
        steady_state(gen)
    assert excinfo.value.null_dim > 1


def test_invalid_initial_state_is_rejected(s1):
    gen, _ = s1
    bad = Operator(gen.layout, np.eye(8))
    with pytest.raises(StateError):
        propagate_gksl(gen, bad, [0.0, 1.0])


def test_times_must_increase(s1):
    gen, rho0 = s1
    with pytest.raises(StateError):
        propagate_gksl(gen, rho0, [0.0, 2.0, 1.0])


def test_defective_superoperator_is_detected():
    jordan = np.diag(np.ones(3), k=1).astype(complex)
    rho0 = thermal_state(local_hamiltonian((1.0,)), 1.0)
    with pytest.raises(DefectiveLiouvillian):
        SpectralEvolution(jordan, rho0, (0,))


def test_integrator_matches_rabi_rotation():
    h = np.array([[0.5, 0.3], [0.3, -0.5]], dtype=complex)
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    solver = MasterEquationSolver(lambda r: -1j * (h @ r - r @ h), atol=1e-12)
    times = np.linspace(0.0, 10.0, 6)
    states = list(solver.integrate(rho0, times))
    assert len(states) == len(times)
    evals, evecs = np.linalg.eigh(h)
    for t, state in zip(times, states):
        u = (evecs * np.exp(-1j * evals * t)) @ evecs.conj().T
        assert np.allclose(state, u @ rho0 @ u.conj().T, atol=1e-9)


def test_integrator_reports_step_underflow():
    # dy/dt = y², y(0) = 1 在 t = 1 处爆破
    solver = MasterEquationSolver(lambda r: r @ r, atol=1e-9)
    with pytest.raises(PropagationError, match="underflow"):
        list(solver.integrate(np.ones((1, 1), dtype=complex), np.array([0.0, 2.0])))


def test_integrator_rejects_trace_drift():
    solver = MasterEquationSolver(lambda r: 0.1 * r, atol=1e-9)
    with pytest.raises(PropagationError, match="trace drift"):
        list(solver.integrate(np.diag([1.0, 0.0]).astype(complex), np.array([0.0, 1.0])))


def test_hybrid_reduces_to_gksl_without_system_bath_coupling(bath, spin_env):
    alphas = presets.REGIMES["S1"]
    envs = [None, bath(alphas[1], 1.0), bath(alphas[2], 2.0)]
    pure = RefrigeratorModel(energies=[1.0, 2.0, 1.0], g=0.8, envs=envs, initial_taus=[1.0, None, None])
    hybrid = RefrigeratorModel(energies=[1.0, 2.0, 1.0], g=0.8, envs=[spin_env(alpha0=0.0)] + envs[1:])
    times = np.linspace(0.0, 10.0, 11)

    _, rho_s, _ = build_initial_state(pure)
    reference = propagate_gksl(build_hybrid_model(pure), rho_s, times)
    _, rho_joint, _ = build_initial_state(hybrid)
    traj = propagate_hybrid(build_hybrid_model(hybrid), rho_joint, times, method="rk", atol=1e-12)
    for q in range(3):
        assert np.max(np.abs(_states(traj, q) - _states(reference, q))) <= 1e-8


def test_hybrid_reduces_to_closed_without_markovian_rates(bath, spin_env):
    model = RefrigeratorModel(energies=[1.0, 2.0, 1.0], g=0.8,
                              envs=[spin_env(), bath(0.0, 1.0), bath(0.0, 2.0)])
    hybrid = build_hybrid_model(model)
    assert not hybrid.is_closed
    _, rho_joint, _ = build_initial_state(model)
    times = np.linspace(0.0, 10.0, 11)
    closed = propagate_closed(hybrid.h_joint, rho_joint, times, hybrid.system_factors)
    traj = propagate_hybrid(hybrid, rho_joint, times, method="rk", atol=1e-12)
    for q in range(3):
        assert np.max(np.abs(_states(traj, q) - _states(closed, q))) <= 1e-8


def test_closed_evolution_keeps_invariants(spin_env):
    model = RefrigeratorModel(energies=[0.5], envs=[spin_env(n_spins=2)])
    hybrid = build_hybrid_model(model)
    assert hybrid.is_closed
    _, rho_joint, _ = build_initial_state(model)
    traj = propagate_hybrid(hybrid, rho_joint, np.linspace(0.0, 50.0, 501))
    assert np.max(np.abs(traj.trace_residual)) <= 1e-9
    assert np.min(traj.min_eig) >= -1e-8
    assert np.max(traj.max_offdiag) <= 1e-9


def test_attach_noise_without_strength_is_identity(s1, bath):
    gen, _ = s1
    noise = noise_jump_set("I", 1.0, 2.0, 1.0, 0.8, bath(), 0.0)
    assert attach_noise(gen, noise) is gen


def test_attach_noise_lifts_onto_joint_space(bath, regime_model):
    hybrid = build_hybrid_model(regime_model("S3", {0}))
    noisy = attach_noise(hybrid, noise_jump_set("I", 1.0, 2.0, 1.0, 0.8, bath(), 1e-3))
    assert len(noisy.lifted_jumps) == len(hybrid.lifted_jumps) + 6
    assert all(t.op.layout == hybrid.joint_layout for t in noisy.lifted_jumps)


def test_attach_noise_rejects_foreign_operators(bath):
    gen = GKSLGenerator(local_hamiltonian((1.0,)), [])
    noise = noise_jump_set("I", 1.0, 2.0, 1.0, 0.8, bath(), 1e-3)
    with pytest.raises(StateError):
        attach_noise(gen, noise)


# ---------------------------------------------------------------- 不变块

def _assert_support_block(gen, rho0):
    support = coupled_support(gen, rho0)
    full = liouvillian(gen)
    outside = np.setdiff1d(np.arange(full.shape[0]), support)
    assert np.allclose(liouvillian(gen, support), full[np.ix_(support, support)], atol=1e-14)
    assert np.max(np.abs(full[np.ix_(outside, support)]), initial=0.0) == 0.0
    vec0 = rho0.entries.reshape(-1, order="F")
    assert np.max(np.abs(vec0[outside]), initial=0.0) == 0.0
    return support


def test_restricted_liouvillian_is_an_invariant_block(s1, regime_model):
    gen, rho0 = s1
    _assert_support_block(gen, rho0)
    model = regime_model("S3", {0})
    _, rho_joint, _ = build_initial_state(model)
    _assert_support_block(build_hybrid_model(model).as_generator(), rho_joint)


def test_support_spectral_matches_integration(regime_model):
    model = regime_model("S3", {0})
    hybrid = build_hybrid_model(model)
    _, rho_joint, _ = build_initial_state(model)
    times = np.linspace(0.0, 20.0, 21)
    spectral = propagate_hybrid(hybrid, rho_joint, times, method="spectral")
    integrated = propagate_hybrid(hybrid, rho_joint, times, method="rk", atol=1e-12)
    assert spectral.evaluator is not None
    for q in range(3):
        assert np.max(np.abs(_states(spectral, q) - _states(integrated, q))) <= 1e-8


def test_two_finite_environments_have_a_small_coupled_block(regime_model):
    model = regime_model("S1", {0, 2})
    hybrid = build_hybrid_model(model)
    _, rho_joint, _ = build_initial_state(model)
    support = coupled_support(hybrid.as_generator(), rho_joint)
    assert hybrid.joint_layout.total_dim == 128
    assert support.size < 128 ** 2 // 4


def test_hybrid_integration_converges_when_tolerance_is_halved(regime_model):
    model = regime_model("S3", {0})
    hybrid = build_hybrid_model(model)
    _, rho_joint, _ = build_initial_state(model)
    times = np.linspace(0.0, 20.0, 11)
    coarse = propagate_hybrid(hybrid, rho_joint, times, method="rk", atol=1e-9)
    fine = propagate_hybrid(hybrid, rho_joint, times, method="rk", atol=5e-10)
    for q in range(3):
        assert np.max(np.abs(_states(coarse, q) - _states(fine, q))) <= 1e-6


# ---------------------------------------------------------------- 闭合演化

def test_closed_evolution_preserves_joint_spectrum(spin_env):
    model = RefrigeratorModel(energies=[1.0, 2.0, 1.0], g=0.8, envs=[spin_env(), None, None],
                              initial_taus=[None, 1.0, 2.0])
    hybrid = build_hybrid_model(model)
    _, rho_joint, _ = build_initial_state(model)
    evolve = UnitaryEvolution(hybrid.h_joint, rho_joint, hybrid.system_factors)
    before = np.linalg.eigvalsh(rho_joint.entries)
    for t in (0.3, 7.0, 120.0):
        assert np.allclose(np.linalg.eigvalsh(evolve.joint(t)), before, atol=1e-12)


def test_two_spin_environment_exchanges_excitation_at_rabi_frequency(spin_env):
    # 单比特接 N=2 自旋环境：|g,T+⟩↔|e,T0⟩ 与 |g,T0⟩↔|e,T−⟩ 两个二能级块，
    # 耦合 √2、失谐 E，单重态不参与
    E, tau = 0.5, 1.0
    model = RefrigeratorModel(energies=[E], envs=[spin_env(tau=tau, n_spins=2)])
    _, rho_joint, _ = build_initial_state(model)
    times = np.linspace(0.0, 20.0, 201)
    traj = propagate_hybrid(build_hybrid_model(model), rho_joint, times)
    p = partial_trace(rho_joint, {0}).population(0)
    a = np.exp(-2.0 / tau)
    omega = np.sqrt(E ** 2 + 8)
    s = 8 / omega ** 2 * np.sin(omega * times / 2) ** 2
    expected = p - s * (p / 2 - (1 - p) * a / (1 + a))
    assert np.allclose(traj.excited_population(0), expected, atol=1e-9)
