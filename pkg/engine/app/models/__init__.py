from .models import (
    EnvKind,
    NoiseModel,
    TwoQubitVariant,
    PropagationMethod,
    ScenarioFamily,
    JumpTerm,
    GKSLGenerator,
    HybridModel,
    Trajectory,
    TemperaturePoint,
    WitnessResult,
    FeatureReport,
    SweepPoint,
    ThresholdEstimate,
    RegressionOutcome,
)

__all__ = [
    "EnvKind",
    "NoiseModel",
    "TwoQubitVariant",
    "PropagationMethod",
    "ScenarioFamily",
    "JumpTerm",
    "GKSLGenerator",
    "HybridModel",
    "Trajectory",
    "TemperaturePoint",
    "WitnessResult",
    "FeatureReport",
    "SweepPoint",
    "ThresholdEstimate",
    "RegressionOutcome",
]
