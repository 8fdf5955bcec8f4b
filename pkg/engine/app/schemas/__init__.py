from .schemas import (
    OBSERVABLES,
    REGRESSION_QUANTITIES,
    SpectralDensity,
    MarkovianEnv,
    FiniteSpinEnv,
    EnvSpec,
    NoiseSpec,
    RefrigeratorModel,
    GridSpec,
    ToleranceSpec,
    WitnessFamilySpec,
    ScenarioConfig,
    SweepSpec,
    RegressionTarget,
    TargetsFile,
    PresetSummary,
    HealthResponse,
)

__all__ = [
    "OBSERVABLES",
    "REGRESSION_QUANTITIES",
    "SpectralDensity",
    "MarkovianEnv",
    "FiniteSpinEnv",
    "EnvSpec",
    "NoiseSpec",
    "RefrigeratorModel",
    "GridSpec",
    "ToleranceSpec",
    "WitnessFamilySpec",
    "ScenarioConfig",
    "SweepSpec",
    "RegressionTarget",
    "TargetsFile",
    "PresetSummary",
    "HealthResponse",
]
