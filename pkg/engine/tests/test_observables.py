import math

import numpy as np
import pytest

from app.core.errors import ModelError, StateError
from app.core.quantum import SIGMA_X, DensityMatrix, HilbertLayout, basis_ket, embed
from app.models import GKSLGenerator, Trajectory
from app.schemas import RefrigeratorModel, ToleranceSpec
from app.services.builder import (
    build_hybrid_model,
    build_initial_state,
    derive_jump_operators,
    local_hamiltonian,
    with_rates,
)
from app.services.dynamics import propagate_gksl, propagate_hybrid
from app.services.observables import (
    analytic_single_qubit_temperature,
    concurrence,
    extract_features,
    local_temperature,
    rhp_concurrence_series,
    rhp_nonmonotonicity,
    temperature_series,
    witness_mc,
)

QUBIT = HilbertLayout.qubits(1)
PAIR = HilbertLayout.qubits(2)


def _excited(E: float, T: float) -> float:
    return 1.0 / (1.0 + math.exp(E / T))


def _diag(r: float) -> DensityMatrix:
    return DensityMatrix(QUBIT, np.diag([r, 1 - r]))


def _trajectory(times, temps, E=1.0) -> Trajectory:
    rs = [0.5 if math.isnan(T) else _excited(E, T) for T in temps]
    n = len(times)
    return Trajectory(
        times=np.asarray(times),
        qubits=(0,),
        reduced_states=tuple((_diag(r),) for r in rs),
        trace_residual=np.zeros(n),
        min_eig=np.zeros(n),
        max_offdiag=np.zeros(n),
    )


def _random_unitary(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


# ---------------------------------------------------------------- 局域温度

@pytest.mark.parametrize("E,T", [(1.0, 0.7), (0.5, 1.0), (2.0, 3.5)])
def test_local_temperature_inverts_gibbs_populations(E, T):
    point = local_temperature(_diag(_excited(E, T)), E, t=1.5)
    assert point.valid and not point.inverted
    assert point.temperature == pytest.approx(T, rel=1e-12)
    assert point.t == 1.5


def test_negative_level_spacing_uses_upper_level():
    r = _excited(0.5, 0.8)
    point = local_temperature(DensityMatrix(QUBIT, np.diag([1 - r, r])), -0.5)
    assert point.temperature == pytest.approx(0.8, rel=1e-12)


def test_half_population_is_undefined():
    point = local_temperature(_diag(0.5), 1.0)
    assert math.isnan(point.temperature)
    assert not point.valid
    assert not point.inverted


def test_population_inversion_is_flagged():
    point = local_temperature(_diag(0.6), 1.0)
    assert math.isnan(point.temperature)
    assert point.inverted


def test_local_temperature_input_checks():
    coherent = DensityMatrix(QUBIT, np.array([[0.5, 0.1], [0.1, 0.5]]))
    with pytest.raises(StateError):
        local_temperature(coherent, 1.0)
    with pytest.raises(StateError):
        local_temperature(DensityMatrix(PAIR, np.eye(4) / 4), 1.0)
    with pytest.raises(ModelError):
        local_temperature(_diag(0.3), 0.0)


def test_local_temperature_increases_with_excited_population():
    temps = [local_temperature(_diag(r), 1.0).temperature for r in np.linspace(0.01, 0.49, 49)]
    assert np.all(np.diff(temps) > 0)


# ---------------------------------------------------------------- 单比特解析温度

def test_analytic_temperature_starts_at_initial_temperature():
    assert analytic_single_qubit_temperature(0.0, 0.5, 1.0) == pytest.approx(1.0)
    values = analytic_single_qubit_temperature(np.array([0.0, 1.0]), 0.5, 1.0)
    assert values.shape == (2,)


@pytest.mark.parametrize("E", [0.5, 1.0])
def test_closed_single_qubit_evolution_matches_analytic_temperature(E, spin_env):
    model = RefrigeratorModel(energies=[E], envs=[spin_env(n_spins=1)])
    _, rho0, _ = build_initial_state(model)
    times = np.linspace(0.0, 20.0, 200)
    traj = propagate_hybrid(build_hybrid_model(model), rho0, times)
    numeric = np.array([p.temperature for p in temperature_series(traj, 0, E)])
    analytic = analytic_single_qubit_temperature(times, E, 1.0)
    assert np.allclose(numeric, analytic, atol=1e-6, rtol=0, equal_nan=True)


# ---------------------------------------------------------------- 共生纠缠度

def test_concurrence_of_bell_and_product_states():
    bell = DensityMatrix.from_ket(PAIR, basis_ket("00") + basis_ket("11"))
    assert concurrence(bell) == pytest.approx(1.0)
    product = DensityMatrix.from_ket(PAIR, basis_ket("01"))
    assert concurrence(product) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("p", [0.2, 0.5, 0.9])
def test_concurrence_of_werner_states(p):
    phi = (basis_ket("00") + basis_ket("11")) / math.sqrt(2)
    werner = DensityMatrix(PAIR, p * np.outer(phi, phi.conj()) + (1 - p) * np.eye(4) / 4)
    assert concurrence(werner) == pytest.approx(max(0.0, (3 * p - 1) / 2), abs=1e-9)


def test_concurrence_is_local_unitary_invariant():
    rng = np.random.default_rng(11)
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    psi = (basis_ket("00") + 0.6 * basis_ket("11")) / math.sqrt(1.36)
    rho = 0.8 * np.outer(psi, psi.conj()) + 0.2 * (m @ m.conj().T) / np.trace(m @ m.conj().T).real
    u = np.kron(_random_unitary(rng), _random_unitary(rng))
    before = concurrence(DensityMatrix(PAIR, rho))
    after = concurrence(DensityMatrix(PAIR, u @ rho @ u.conj().T))
    assert after == pytest.approx(before, abs=1e-9)


def test_concurrence_needs_two_qubits():
    with pytest.raises(StateError):
        concurrence(_diag(0.3))


# ---------------------------------------------------------------- RHP 与见证量

def test_rhp_nonmonotonicity_verdicts():
    assert rhp_nonmonotonicity([1.0, 0.8, 0.5, 0.1]) == (False, 0.0)
    assert rhp_nonmonotonicity([0.4, 0.4, 0.4]) == (False, 0.0)
    nonmonotonic, rise = rhp_nonmonotonicity([1.0, 0.2, 0.5, 0.3, 0.6])
    assert nonmonotonic
    assert rise == pytest.approx(0.6)
    with pytest.raises(StateError):
        rhp_nonmonotonicity([1.0])


def test_spin_environment_revives_system_ancilla_entanglement(spin_env):
    series = rhp_concurrence_series(0.5, spin_env(n_spins=2), np.arange(0.0, 20.0 + 1e-9, 0.01))
    assert series[0] == pytest.approx(1.0)
    nonmonotonic, rise = rhp_nonmonotonicity(series)
    assert nonmonotonic
    assert rise > 1e-3


def _markovian_population(env, E, rho0, times):
    h = local_hamiltonian((E,))
    jumps = with_rates(derive_jump_operators(h, embed(SIGMA_X, 0, h.layout)), env)
    return propagate_gksl(GKSLGenerator(h, jumps), rho0, times).excited_population(0)


def test_witness_vanishes_for_a_family_member(bath, thermal_qubit):
    E = 0.5
    rho0 = thermal_qubit(E, 2.0)
    family = [bath(alpha=a) for a in (1e-3, 1e-2, 1e-1)]
    times = np.linspace(0.0, 20.0, 41)
    lambda_nm = _markovian_population(family[1], E, rho0, times)
    results = witness_mc(times, lambda_nm, family, E / 2, -E / 2, rho0, "test-grid")
    assert len(results) == len(times)
    assert all(r.mc == pytest.approx(0.0, abs=1e-12) for r in results)
    assert all(r.grid_spec == "test-grid" for r in results)
    assert not any(r.flagged for r in results)


def test_witness_never_grows_with_a_larger_family(bath, thermal_qubit):
    E = 0.5
    rho0 = thermal_qubit(E, 2.0)
    times = np.linspace(0.0, 20.0, 41)
    lambda_nm = 0.3 + 0.02 * np.sin(times)
    previous = None
    for n in range(1, 4):
        family = [bath(alpha=a) for a in (1e-3, 1e-2, 1e-1)[:n]]
        mc = np.array([r.mc for r in witness_mc(times, lambda_nm, family, E / 2, -E / 2, rho0)])
        if previous is not None:
            assert np.all(mc <= previous + 1e-12)
        previous = mc


def test_witness_flags_undefined_test_temperature(bath, thermal_qubit):
    rho0 = thermal_qubit(0.5, 1.0)
    results = witness_mc([0.0, 1.0], [0.5, 0.5], [bath()], 0.25, -0.25, rho0)
    assert all(r.flagged and r.mc == 0.0 for r in results)


def test_witness_input_checks(bath, thermal_qubit):
    rho0 = thermal_qubit(0.5, 1.0)
    with pytest.raises(ModelError):
        witness_mc([0.0], [0.3], [], 0.25, -0.25, rho0)
    with pytest.raises(ModelError):
        witness_mc([0.0], [0.3], [bath()], -0.25, 0.25, rho0)
    with pytest.raises(StateError):
        witness_mc([0.0, 1.0], [0.3], [bath()], 0.25, -0.25, rho0)


# ---------------------------------------------------------------- 轨迹特征

def _cooling_profile(t: float) -> float:
    if t <= 2.0:
        return 1.0 - 0.15 * t
    if t <= 5.0:
        return 0.7 + 0.1 * (t - 2.0) / 3.0
    return 0.8


def test_features_of_transient_dip_then_steady_state():
    times = np.round(np.arange(0.0, 10.0 + 1e-9, 0.1), 10)
    report = extract_features(_trajectory(times, [_cooling_profile(t) for t in times]), 1.0, 1.0)
    assert report.transient_min[0] == pytest.approx(2.0)
    assert report.transient_min[1] == pytest.approx(0.7)
    assert report.steady is not None
    assert report.steady[0] == pytest.approx(5.0)
    assert report.steady[1] == pytest.approx(0.8)
    assert report.refrigerates
    assert report.undefined_points == 0
    assert len(report.oscillation_envelope) == ToleranceSpec().envelope_windows
    start, low, high = report.oscillation_envelope[-1]
    assert low == pytest.approx(0.8) and high == pytest.approx(0.8)


def _dip_then_deeper_steady(t: float) -> float:
    if t <= 2.0:
        return 1.0 - 0.09 * t
    if t <= 4.0:
        return 0.82 + 0.04 * (t - 2.0)
    if t <= 8.0:
        return 0.90 - 0.04 * (t - 4.0)
    return 0.74


def test_transient_dip_is_found_before_a_deeper_steady_state():
    times = np.round(np.arange(0.0, 20.0, 0.1), 10)
    report = extract_features(_trajectory(times, [_dip_then_deeper_steady(t) for t in times]), 1.0, 1.0)
    assert report.transient_min[0] == pytest.approx(2.0)
    assert report.transient_min[1] == pytest.approx(0.82)
    assert report.steady[0] == pytest.approx(8.0)
    assert report.steady[1] == pytest.approx(0.74)
    assert report.steady[1] < report.transient_min[1]


def test_monotone_cooling_keeps_transient_above_steady_value():
    times = np.linspace(0.0, 40.0, 401)
    report = extract_features(_trajectory(times, 0.74 + 0.26 * np.exp(-times)), 1.0, 1.0)
    assert report.steady is not None
    assert report.transient_min[0] < report.steady[0]
    assert report.steady[1] < report.transient_min[1]


def test_features_of_persistent_oscillation():
    times = np.linspace(0.0, 50.0, 501)
    temps = 0.9 + 0.1 * np.cos(times)
    report = extract_features(_trajectory(times, temps), 1.0, 1.0, ToleranceSpec(envelope_windows=5))
    assert report.steady is None
    assert report.refrigerates
    assert report.transient_min[1] == pytest.approx(0.8, abs=1e-3)
    lows = [w[1] for w in report.oscillation_envelope]
    assert max(lows) == pytest.approx(min(lows), abs=0.02)


def test_undefined_points_are_counted_and_skipped():
    times = np.linspace(0.0, 1.0, 5)
    report = extract_features(_trajectory(times, [1.2, math.nan, 1.1, math.nan, 1.3]), 1.0, 1.0)
    assert report.undefined_points == 2
    assert report.transient_min[1] == pytest.approx(1.1)
    assert not report.refrigerates
    assert report.steady is None


def test_transient_minimum_is_refined_between_samples(spin_env):
    E = 0.5
    model = RefrigeratorModel(energies=[E], envs=[spin_env(n_spins=1)])
    _, rho0, _ = build_initial_state(model)
    traj = propagate_hybrid(build_hybrid_model(model), rho0, np.linspace(0.0, 20.0, 41))
    report = extract_features(traj, 1.0, E)
    omega = math.sqrt(E ** 2 + 4)
    t_star, coldest = report.transient_min
    assert math.cos(omega * t_star) == pytest.approx(-1.0, abs=1e-8)
    assert coldest == pytest.approx(analytic_single_qubit_temperature(math.pi / omega, E, 1.0), abs=1e-9)
