"""
场景执行：运行预设、批量并发、噪声阈值扫描、见证量、RHP 与稳态报告，结果写成 CSV
"""
from __future__ import annotations

import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import ConfigError, QFridgeError
from app.core.quantum import partial_trace, thermal_state
from app.models import (
    FeatureReport,
    GKSLGenerator,
    NoiseModel,
    ScenarioFamily,
    SweepPoint,
    ThresholdEstimate,
    Trajectory,
    WitnessResult,
)
from app.schemas import MarkovianEnv, NoiseSpec, ScenarioConfig, SpectralDensity, SweepSpec, WitnessFamilySpec
from app.services import presets
from app.services.builder import build_hybrid_model, build_initial_state, local_hamiltonian, noise_jump_set
from app.services.dynamics import attach_noise, propagate_gksl, propagate_hybrid, steady_state
from app.services.observables import (
    analytic_single_qubit_temperature,
    extract_features,
    local_temperature,
    rhp_concurrence_series,
    rhp_nonmonotonicity,
    temperature_series,
    witness_mc,
)

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["t", "T1", "r1", "valid", "T2", "T3", "trace_residual", "min_eig"]
FLOAT_FORMAT = "%.12g"
# 扫描点全部仍在制冷时，向上按倍数追加强度以求括住阈值
BRACKET_GROWTH = 2.0
MAX_EXTENSIONS = 8


@dataclass
class RunResult:
    config: ScenarioConfig
    trajectory: Trajectory
    frame: pd.DataFrame
    features: FeatureReport | None = None
    paths: dict[str, Path] = field(default_factory=dict)


def write_csv_atomic(frame: pd.DataFrame, path: Path) -> Path:
    """先写同目录临时文件，再 os.replace 到目标路径"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT, na_rep="NaN", lineterminator="\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.info("wrote %s", path)
    return path


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return "NaN" if math.isnan(value) else FLOAT_FORMAT % value
    return str(value)


def _out_dir(out_dir: Path | str | None) -> Path:
    return Path(out_dir) if out_dir is not None else settings.out_dir


def _resolve(name_or_config: str | ScenarioConfig, overrides: Mapping[str, Any] | Iterable[str] = ()) -> ScenarioConfig:
    if isinstance(name_or_config, ScenarioConfig):
        return name_or_config
    return presets.resolve_preset(name_or_config, overrides)


def simulate(config: ScenarioConfig, times: Sequence[float] | None = None) -> Trajectory:
    """按环境类型选择传播子：纯 GKSL / 闭合 / 混合"""
    model = config.model
    target = build_hybrid_model(model)
    if model.noise is not None:
        E1, E2, E3 = model.energies
        noise = noise_jump_set(model.noise.model, E1, E2, E3, model.g, model.noise.env, model.noise.strength)
        target = attach_noise(target, noise)
    _, rho0, _ = build_initial_state(model)
    times = config.times() if times is None else np.asarray(times, dtype=float)
    tol = config.tolerances
    if isinstance(target, GKSLGenerator):
        return propagate_gksl(target, rho0, times, method=tol.method, atol=tol.rk_atol,
                              trace_drift=tol.trace_drift)
    return propagate_hybrid(target, rho0, times, method=tol.method, atol=tol.rk_atol,
                            trace_drift=tol.trace_drift)


def trajectory_frame(config: ScenarioConfig, traj: Trajectory) -> pd.DataFrame:
    """列 t, T1, r1, valid, T2, T3, trace_residual, min_eig（比特不足时 T2/T3 为 NaN）"""
    model = config.model
    columns: dict[str, Any] = {"t": traj.times}
    for q in range(3):
        if q < model.n_qubits:
            points = temperature_series(traj, q, model.energies[q])
            columns[f"T{q + 1}"] = [p.temperature for p in points]
            if q == 0:
                columns["r1"] = [p.r_excited for p in points]
                columns["valid"] = [int(p.valid) for p in points]
        else:
            columns[f"T{q + 1}"] = np.full(len(traj), np.nan)
    columns["trace_residual"] = traj.trace_residual
    columns["min_eig"] = traj.min_eig
    frame = pd.DataFrame(columns)[TRAJECTORY_COLUMNS]
    if "analytic" in config.observables:
        frame["analytic"] = analytic_single_qubit_temperature(traj.times, model.energies[0],
                                                              model.qubit_temperature(0))
    return frame


def feature_frame(report: FeatureReport) -> pd.DataFrame:
    """quantity,value 两列；无稳态时 steady 写 NONE"""
    t_star, temp_star = report.transient_min
    rows = [
        ("transient_time", t_star),
        ("transient_min", temp_star),
        ("steady_time", report.steady[0] if report.steady else "NONE"),
        ("steady", report.steady[1] if report.steady else "NONE"),
        ("refrigerates", int(report.refrigerates)),
        ("undefined_points", report.undefined_points),
    ]
    if report.oscillation_envelope:
        rows.append(("envelope_min", min(w[1] for w in report.oscillation_envelope)))
        rows.append(("envelope_max", max(w[2] for w in report.oscillation_envelope)))
    return pd.DataFrame({"quantity": [k for k, _ in rows], "value": [_fmt(v) for _, v in rows]})


def envelope_frame(report: FeatureReport) -> pd.DataFrame:
    return pd.DataFrame(list(report.oscillation_envelope), columns=["window_start", "min", "max"])


def run_preset(name: str | ScenarioConfig, overrides: Mapping[str, Any] | Iterable[str] = (),
               out_dir: Path | str | None = None, write: bool = True) -> RunResult:
    config = _resolve(name, overrides)
    # 别名按请求的名字落盘，内容与其规范条目逐字节相同
    label = name if isinstance(name, str) else config.name
    if config.family is not ScenarioFamily.REFRIGERATOR:
        raise ConfigError(f"preset {label!r} is a {config.family.value} scenario; use the {config.family.value} command")
    logger.info("running preset %s (horizon %g)", label, config.horizon)
    traj = simulate(config)
    frame = trajectory_frame(config, traj)
    result = RunResult(config, traj, frame)
    if "features" in config.observables:
        result.features = extract_features(traj, config.model.qubit_temperature(0), config.model.energies[0],
                                           config.tolerances)
    if write:
        target = _out_dir(out_dir)
        result.paths["trajectory"] = write_csv_atomic(frame, target / f"{label}.csv")
        if result.features is not None:
            result.paths["features"] = write_csv_atomic(feature_frame(result.features),
                                                        target / f"{label}_features.csv")
            result.paths["envelope"] = write_csv_atomic(envelope_frame(result.features),
                                                        target / f"{label}_envelope.csv")
    logger.info("finished preset %s", label)
    return result


def run_batch(names: Sequence[str], overrides: Mapping[str, Any] | Iterable[str] = (),
              out_dir: Path | str | None = None, write: bool = True) -> tuple[dict[str, RunResult], int]:
    """并发运行多个预设；单个失败不影响其余，返回最高的退出码"""
    if not isinstance(overrides, Mapping):
        overrides = presets.parse_overrides(overrides)
    results: dict[str, RunResult] = {}
    exit_code = 0
    with ThreadPoolExecutor(max_workers=settings.max_workers) as pool:
        futures = {name: pool.submit(run_preset, name, overrides, out_dir, write) for name in names}
        for name, future in futures.items():
            try:
                results[name] = future.result()
            except QFridgeError as exc:
                logger.error("preset %s failed: %s", name, exc)
                exit_code = max(exit_code, exc.exit_code)
            except Exception:
                logger.exception("preset %s failed unexpectedly", name)
                exit_code = max(exit_code, 1)
    return results, exit_code


# ---------------------------------------------------------------- 噪声阈值扫描

def _probe(config: ScenarioConfig, noise: NoiseSpec | None, t_probe: float) -> tuple[float, float]:
    """(T1(t_probe/2), T1(t_probe))，无定义温度记为 +inf"""
    model = config.model.model_copy(update={"noise": noise})
    traj = simulate(config.model_copy(update={"model": model}), [0.0, t_probe / 2, t_probe])
    temps = [p.temperature for p in temperature_series(traj, 0, model.energies[0])[1:]]
    return tuple(math.inf if math.isnan(v) else v for v in temps)


def sweep_noise(model: NoiseModel | str, strengths: Sequence[float] | None = None, base: str | None = None,
                t_probe: float | None = None, out_dir: Path | str | None = None,
                write: bool = True) -> tuple[pd.DataFrame, ThresholdEstimate]:
    """
    ΔT = T1(t) − T1^s(无噪声) 于 t_probe 与 t_probe/2；阈值为两探测时刻上 min T1 ≥ τ1
    的最小强度，在相邻的扫描点之间二分细化。所有扫描点都仍制冷时先向上几何外推；
    仍括不住时报告 out-of-range 而不报错。
    """
    try:
        model = NoiseModel(model)
    except ValueError:
        raise ConfigError(f"unknown noise model {model!r}") from None
    spec = presets.NOISE_SWEEPS[model]
    update: dict[str, Any] = {}
    if strengths is not None:
        update["strengths"] = list(strengths)
    if base is not None:
        update["base"] = base
    if t_probe is not None:
        update["t_probe"] = t_probe
    try:
        spec = SweepSpec.model_validate({**spec.model_dump(), **update})
    except ValueError as exc:
        raise ConfigError(f"invalid sweep: {exc}") from exc
    config = presets.resolve_preset(spec.base)
    if config.model.n_qubits != 3:
        raise ConfigError(f"noise sweeps need a three-qubit base preset, got {spec.base!r}")
    probe_t = spec.t_probe or config.horizon
    tau1 = config.model.qubit_temperature(0)
    _, steady_ref = _probe(config, None, probe_t)
    logger.info("noise sweep %s on %s: t_probe=%g, noiseless T1=%.6g", model.value, spec.base, probe_t, steady_ref)

    def evaluate(strength: float) -> SweepPoint:
        half, full = _probe(config, NoiseSpec(model=model, strength=strength, env=spec.env), probe_t)
        lowest = min(half, full)
        return SweepPoint(strength, probe_t, full - steady_ref, half - steady_ref, lowest, lowest < tau1)

    with ThreadPoolExecutor(max_workers=settings.max_workers) as pool:
        points = list(pool.map(evaluate, spec.strengths))
    points.extend(_extend_bracket(points, evaluate))

    estimate = _threshold(points, evaluate, spec.refine_steps)
    frame = pd.DataFrame({
        "strength": [p.strength for p in points],
        "t_probe": [p.t_probe for p in points],
        "delta_probe": [p.delta_probe for p in points],
        "delta_half": [p.delta_half for p in points],
        "min_temperature": [p.min_temperature for p in points],
        "refrigerates": [int(p.refrigerates) for p in points],
    }).replace([np.inf], np.nan)
    if write:
        target = _out_dir(out_dir)
        write_csv_atomic(frame, target / f"sweep-{model.value}.csv")
        write_csv_atomic(threshold_frame(estimate), target / f"sweep-{model.value}_threshold.csv")
    return frame, estimate


def _extend_bracket(points: Sequence[SweepPoint], evaluate) -> list[SweepPoint]:
    """最后一个扫描点仍制冷且没有任何点失效时，按 BRACKET_GROWTH 几何外推，直到失效或次数用尽"""
    if not points or any(not p.refrigerates for p in points):
        return []
    extra: list[SweepPoint] = []
    last = points[-1]
    while last.refrigerates and last.strength > 0 and len(extra) < MAX_EXTENSIONS:
        last = evaluate(last.strength * BRACKET_GROWTH)
        extra.append(last)
    logger.info("noise sweep extended to strength %g (%d extra points)", last.strength, len(extra))
    return extra


def _threshold(points: Sequence[SweepPoint], evaluate, refine_steps: int) -> ThresholdEstimate:
    first = next((i for i, p in enumerate(points) if not p.refrigerates), None)
    if first is None or first == 0:
        logger.info("noise threshold not bracketed by the sweep")
        return ThresholdEstimate(None, None, False)
    lo, hi = points[first - 1].strength, points[first].strength
    for _ in range(refine_steps):
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
        if evaluate(mid).refrigerates:
            lo = mid
        else:
            hi = mid
    return ThresholdEstimate(hi, (lo, hi), True)


def threshold_frame(estimate: ThresholdEstimate) -> pd.DataFrame:
    lo, hi = estimate.bracket or (math.nan, math.nan)
    value = _fmt(estimate.value) if estimate.value is not None else "OUT_OF_RANGE"
    return pd.DataFrame({"quantity": ["threshold", "bracket_low", "bracket_high"],
                         "value": [value, _fmt(lo), _fmt(hi)]})


# ---------------------------------------------------------------- 见证量与 RHP

def witness(name: str | ScenarioConfig = "witness", overrides: Mapping[str, Any] | Iterable[str] = (),
            out_dir: Path | str | None = None, write: bool = True) -> tuple[pd.DataFrame, list[WitnessResult]]:
    config = _resolve(name, overrides)
    if config.family is not ScenarioFamily.WITNESS:
        raise ConfigError(f"preset {config.name!r} is not a witness scenario")
    family_spec = config.witness or WitnessFamilySpec()
    E = config.model.energies[0]
    tau1 = config.model.qubit_temperature(0)
    traj = simulate(config)
    family = [MarkovianEnv(spectral=SpectralDensity(alpha=float(a), omega_cut=family_spec.omega_cut), tau=tau1)
              for a in family_spec.alphas()]
    rho0 = thermal_state(local_hamiltonian((E,)), 1.0 / tau1)
    results = witness_mc(traj.times, traj.excited_population(0), family, E / 2, -E / 2, rho0,
                         family_spec.describe())
    frame = pd.DataFrame({
        "t": [r.t for r in results],
        "lambda_nm": [r.lambda_nm for r in results],
        "lambda_m_opt": [r.lambda_m_best for r in results],
        "T_nm": [r.t_nm for r in results],
        "T_m_opt": [r.t_m_best for r in results],
        "mc": [r.mc for r in results],
        "flagged": [int(r.flagged) for r in results],
        "alpha_min": family_spec.alpha_min,
        "alpha_max": family_spec.alpha_max,
        "family_points": family_spec.points,
    })
    if write:
        write_csv_atomic(frame, _out_dir(out_dir) / f"{config.name}.csv")
    return frame, results


def rhp(name: str | ScenarioConfig = "rhp", overrides: Mapping[str, Any] | Iterable[str] = (),
        out_dir: Path | str | None = None, write: bool = True) -> tuple[pd.DataFrame, tuple[bool, float]]:
    config = _resolve(name, overrides)
    if config.family is not ScenarioFamily.RHP:
        raise ConfigError(f"preset {config.name!r} is not an rhp scenario")
    times = config.times()
    series = rhp_concurrence_series(config.model.energies[0], config.model.envs[0], times)
    verdict = rhp_nonmonotonicity(series)
    frame = pd.DataFrame({"t": times, "concurrence": series})
    if write:
        target = _out_dir(out_dir)
        write_csv_atomic(frame, target / f"{config.name}.csv")
        write_csv_atomic(pd.DataFrame({"quantity": ["nonmonotonic", "total_rise"],
                                       "value": [_fmt(int(verdict[0])), _fmt(verdict[1])]}),
                         target / f"{config.name}_verdict.csv")
    return frame, verdict


# ---------------------------------------------------------------- 稳态

def steady(name: str | ScenarioConfig, overrides: Mapping[str, Any] | Iterable[str] = (),
           out_dir: Path | str | None = None, write: bool = True) -> pd.DataFrame:
    """纯 GKSL 预设的刘维尔零空间稳态及各比特温度"""
    config = _resolve(name, overrides)
    model = config.model
    gen = build_hybrid_model(model)
    if not isinstance(gen, GKSLGenerator):
        raise ConfigError(f"preset {config.name!r} has finite environments; its steady state is not a GKSL fixed point")
    if model.noise is not None:
        E1, E2, E3 = model.energies
        gen = attach_noise(gen, noise_jump_set(model.noise.model, E1, E2, E3, model.g,
                                               model.noise.env, model.noise.strength))
    rho = steady_state(gen)
    rows = []
    for q, energy in enumerate(model.energies):
        reduced = partial_trace(rho, {q}) if model.n_qubits > 1 else rho
        point = local_temperature(reduced, energy)
        rows.append({"qubit": q + 1, "E": energy, "r": point.r_excited, "T": point.temperature,
                     "valid": int(point.valid)})
    frame = pd.DataFrame(rows)
    if write:
        label = name if isinstance(name, str) else config.name
        write_csv_atomic(frame, _out_dir(out_dir) / f"{label}_steady.csv")
    return frame
