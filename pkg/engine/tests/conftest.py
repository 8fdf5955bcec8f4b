import pytest

from app.core.config import settings
from app.core.quantum import HilbertLayout, thermal_state
from app.schemas import FiniteSpinEnv, MarkovianEnv, RefrigeratorModel, SpectralDensity
from app.services import presets
from app.services.builder import local_hamiltonian


@pytest.fixture(autouse=True)
def out_dir(tmp_path, monkeypatch):
    """所有写盘操作落在临时目录"""
    target = tmp_path / "out"
    monkeypatch.setattr(settings, "out_dir", target)
    return target


@pytest.fixture
def qubit():
    return HilbertLayout.qubits(1)


@pytest.fixture
def bath():
    def make(alpha: float = 1e-3, tau: float = 1.0, omega_cut: float = 1e3) -> MarkovianEnv:
        return MarkovianEnv(spectral=SpectralDensity(alpha=alpha, omega_cut=omega_cut), tau=tau)
    return make


@pytest.fixture
def spin_env():
    def make(tau: float = 1.0, n_spins: int = 2, alpha0: float = 0.5) -> FiniteSpinEnv:
        return FiniteSpinEnv(n_spins=n_spins, alpha0=alpha0, tau=tau)
    return make


@pytest.fixture
def regime_model():
    """三比特制冷机模型（S1/S2/S3），可选把若干比特换成 N=2 自旋环境"""
    def make(regime: str = "S1", finite_qubits=()) -> RefrigeratorModel:
        return RefrigeratorModel.model_validate(presets._three_qubit(regime, finite_qubits))
    return make


@pytest.fixture
def thermal_qubit():
    def make(E: float, tau: float):
        return thermal_state(local_hamiltonian((E,)), 1.0 / tau)
    return make
