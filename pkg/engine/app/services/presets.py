"""
预设目录：每个预设是一份嵌入的场景文档，经 ScenarioConfig 校验后使用。
参数完全相同的配置合并为一个规范条目，其余名字作为别名。
"""
from __future__ import annotations

import copy
import fnmatch
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Mapping

from pydantic import ValidationError

from app.core.errors import ConfigError
from app.models import NoiseModel, ScenarioFamily
from app.schemas import MarkovianEnv, PresetSummary, ScenarioConfig, SpectralDensity, SweepSpec

logger = logging.getLogger(__name__)

OMEGA_CUT = 1e3
ENERGIES = [1.0, 2.0, 1.0]
G = 0.8
TAUS = [1.0, 1.0, 2.0]
REGIMES = {
    "S1": [1e-3, 1e-4, 1e-2],
    "S2": [1e-4, 1e-4, 1e-2],
    "S3": [1e-4, 1e-3, 1e-2],
}
# 替换为有限自旋环境的比特（0 起）
ALTERED = {
    "A1": {0},
    "A2": {2},
    "A3": {0, 2},
    "A4": {1, 2},
    "A3-swap": {0, 1},
}

OVERRIDABLE = (
    "horizon",
    "grid.*",
    "tolerances.*",
    "model.g",
    "model.envs.*.n_spins",
    "model.noise.strength",
)

MARKOV_GRID = {"dense_until": 20.0, "dense_step": 0.005, "points": 2000, "spacing": "log"}
FINITE_GRID = {"dense_until": 5.0, "dense_step": 0.005, "points": 2250, "spacing": "linear"}
UNIFORM_GRID = {"dense_until": 50.0, "dense_step": 0.005, "points": 0, "spacing": "linear"}
# 两个有限环境时振荡持续，包络需要较长的均匀采样
LONG_GRID = {"dense_until": 20.0, "dense_step": 0.005, "points": 39600, "spacing": "linear"}


def markov(alpha: float, tau: float) -> dict:
    return {"kind": "markovian", "spectral": {"alpha": alpha, "omega_cut": OMEGA_CUT}, "tau": tau}


def finite(tau: float, n_spins: int = 2) -> dict:
    return {"kind": "finite", "n_spins": n_spins, "nu": 1.0, "alpha0": 0.5, "tau": tau}


def _three_qubit(regime: str, finite_qubits: Iterable[int] = ()) -> dict:
    finite_qubits = set(finite_qubits)
    alphas = REGIMES[regime]
    envs = [finite(TAUS[i]) if i in finite_qubits else markov(alphas[i], TAUS[i]) for i in range(3)]
    return {"energies": list(ENERGIES), "g": G, "envs": envs}


def _catalog() -> dict[str, dict]:
    presets: dict[str, dict] = {}

    for regime in REGIMES:
        presets[regime] = {
            "name": regime,
            "description": f"三个马尔可夫热库，参数区 {regime}",
            "model": _three_qubit(regime),
            "horizon": 2e5,
            "grid": MARKOV_GRID,
        }

    bare = _three_qubit("S1")
    bare["envs"][0] = None
    bare["initial_taus"] = [TAUS[0], None, None]
    presets["S1-bare-cold"] = {
        "name": "S1-bare-cold",
        "description": "冷比特不接环境，另两个比特为 S1 马尔可夫热库",
        "model": bare,
        "horizon": 2e5,
        "grid": MARKOV_GRID,
    }

    for config, finite_qubits in ALTERED.items():
        horizon, grid = (2e5, MARKOV_GRID) if len(finite_qubits) == 1 else (2000.0, LONG_GRID)
        canonical: list[dict] = []
        for regime in REGIMES:
            name = f"{config}-{regime}"
            model = _three_qubit(regime, finite_qubits)
            same = next((doc for doc in canonical if doc["model"] == model), None)
            if same is not None:
                same["aliases"].append(name)
                continue
            labels = "".join("N" if i in finite_qubits else "M" for i in range(3))
            doc = {
                "name": name,
                "aliases": [],
                "description": f"环境配置 {labels}（N=有限自旋环境，M=马尔可夫），参数取自 {regime}",
                "model": model,
                "horizon": horizon,
                "grid": grid,
            }
            canonical.append(doc)
            presets[name] = doc

    presets["all-finite"] = {
        "name": "all-finite",
        "description": "三比特制冷机，三个环境均为 N=2 自旋环境",
        "model": _three_qubit("S1", {0, 1, 2}),
        "horizon": 50.0,
        "grid": FINITE_GRID,
    }

    presets["single-qubit-N1"] = {
        "name": "single-qubit-N1",
        "description": "单比特接 N=1 自旋环境，附解析温度列",
        "model": {"energies": [1.0], "envs": [finite(1.0, 1)]},
        "horizon": 50.0,
        "grid": UNIFORM_GRID,
        "observables": ["temperature", "features", "analytic"],
    }
    presets["single-qubit-N2"] = {
        "name": "single-qubit-N2",
        "description": "单比特接 N=2 自旋环境",
        "model": {"energies": [0.5], "envs": [finite(1.0, 2)]},
        "horizon": 50.0,
        "grid": UNIFORM_GRID,
    }

    two_qubit = {
        "Q1": ("i", [markov(1e-4, 1.0), finite(1.0)], "冷比特接马尔可夫热库，另一比特接自旋环境"),
        "Q2": ("i", [finite(1.0), markov(1e-4, 1.0)], "冷比特接自旋环境，另一比特接马尔可夫热库"),
        "Q1-ii": ("ii", [markov(1e-4, 1.0), finite(1.0)], "Q1，条件 (ii)"),
        "Q2-ii": ("ii", [finite(1.0), markov(1e-4, 1.0)], "Q2，条件 (ii)"),
    }
    for name, (variant, envs, description) in two_qubit.items():
        energies = [0.5, 0.5] if variant == "i" else [0.5, -0.5]
        presets[name] = {
            "name": name,
            "description": f"两比特，{description}",
            "model": {"energies": energies, "g": G, "variant": variant, "envs": envs},
            "horizon": 50.0,
            "grid": UNIFORM_GRID,
        }
    presets["two-qubit-NN"] = {
        "name": "two-qubit-NN",
        "description": "两比特，条件 (i)，E=0.1，两个 N=2 自旋环境",
        "model": {"energies": [0.1, 0.1], "g": G, "variant": "i", "envs": [finite(1.0), finite(1.0)]},
        "horizon": 50.0,
        "grid": UNIFORM_GRID,
    }

    for tag, alpha, strength in (("N1", 1e-3, 1e-4), ("N2", 1e-2, 1e-4)):
        model = _three_qubit("S3", {0})
        model["noise"] = {"model": "I" if tag == "N1" else "II", "strength": strength,
                          "env": markov(alpha, 1.0)}
        presets[f"{tag}-A1-S3"] = {
            "name": f"{tag}-A1-S3",
            "description": f"A1-S3 叠加噪声模型 {'I（振幅阻尼）' if tag == 'N1' else 'II（去极化）'}",
            "model": model,
            "horizon": 2e5,
            "grid": MARKOV_GRID,
        }

    for family in (ScenarioFamily.WITNESS, ScenarioFamily.RHP):
        presets[family.value] = {
            "name": family.value,
            "family": family.value,
            "description": "见证量 M_C(t)：单比特接 N=2 自旋环境" if family is ScenarioFamily.WITNESS
            else "系统-辅助比特共生纠缠度的非单调性：单比特接 N=2 自旋环境",
            "model": {"energies": [0.5], "envs": [finite(1.0, 2)]},
            "horizon": 20.0,
            "grid": {"dense_until": 20.0, "dense_step": 0.01, "points": 0, "spacing": "linear"},
            "witness": {} if family is ScenarioFamily.WITNESS else None,
        }
    return presets


PRESETS: dict[str, dict] = _catalog()
ALIASES: dict[str, str] = {alias: name for name, doc in PRESETS.items() for alias in doc.get("aliases", [])}

NOISE_SWEEPS: dict[NoiseModel, SweepSpec] = {
    NoiseModel.AMPLITUDE_DAMPING: SweepSpec(
        model=NoiseModel.AMPLITUDE_DAMPING,
        env=MarkovianEnv(spectral=SpectralDensity(alpha=1e-3, omega_cut=OMEGA_CUT), tau=1.0),
        strengths=[1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 24.0, 32.0],
    ),
    NoiseModel.DEPOLARIZING: SweepSpec(
        model=NoiseModel.DEPOLARIZING,
        env=MarkovianEnv(spectral=SpectralDensity(alpha=1e-2, omega_cut=OMEGA_CUT), tau=1.0),
        strengths=[1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0, 1.5, 2.0],
    ),
}


def canonical_name(name: str) -> str:
    if name in PRESETS:
        return name
    if name in ALIASES:
        return ALIASES[name]
    raise ConfigError(f"unknown preset {name!r}")


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(items: Iterable[str]) -> dict[str, Any]:
    """['a.b=1', ...] -> {'a.b': 1}"""
    overrides = {}
    for item in items:
        path, sep, raw = item.partition("=")
        if not sep or not path.strip():
            raise ConfigError(f"override {item!r} is not of the form path=value")
        overrides[path.strip()] = _parse_value(raw.strip())
    return overrides


def apply_overrides(doc: dict, overrides: Mapping[str, Any]) -> dict:
    """按点路径修改原始文档（只允许 OVERRIDABLE 中的字段）"""
    doc = copy.deepcopy(doc)
    for path, value in overrides.items():
        if not any(fnmatch.fnmatchcase(path, pattern) for pattern in OVERRIDABLE):
            raise ConfigError(f"field {path!r} cannot be overridden")
        keys = path.split(".")
        node: Any = doc
        for key in keys[:-1]:
            node = _descend(node, key, path, create=True)
        last = keys[-1]
        if isinstance(node, list):
            _descend(node, last, path)
            node[int(last)] = value
        else:
            node[last] = value
    return doc


def _descend(node: Any, key: str, path: str, create: bool = False) -> Any:
    if isinstance(node, list):
        try:
            child = node[int(key)]
        except (ValueError, IndexError):
            raise ConfigError(f"override path {path!r}: no list element {key!r}") from None
    elif isinstance(node, dict):
        if key not in node or node[key] is None:
            if not create or key in ("envs", "noise"):
                raise ConfigError(f"override path {path!r}: {key!r} is not set in this scenario")
            node[key] = {}
        child = node[key]
    else:
        raise ConfigError(f"override path {path!r} does not lead to a field")
    if child is None:
        raise ConfigError(f"override path {path!r}: {key!r} is not set in this scenario")
    return child


def validate_document(doc: Mapping[str, Any]) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"invalid scenario {doc.get('name', '?')!r}: {exc}") from exc


def resolve_preset(name: str, overrides: Mapping[str, Any] | Iterable[str] = ()) -> ScenarioConfig:
    """别名解析 -> 覆盖项 -> 模式校验"""
    if not isinstance(overrides, Mapping):
        overrides = parse_overrides(overrides)
    canonical = canonical_name(name)
    if canonical != name:
        logger.debug("preset %s is an alias of %s", name, canonical)
    return validate_document(apply_overrides(PRESETS[canonical], overrides))


def load_scenario_file(path: Path, overrides: Mapping[str, Any] | Iterable[str] = ()) -> ScenarioConfig:
    if not isinstance(overrides, Mapping):
        overrides = parse_overrides(overrides)
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"scenario file {path} must contain a JSON object")
    return validate_document(apply_overrides(doc, overrides))


def list_presets() -> list[PresetSummary]:
    summaries = []
    for name in PRESETS:
        config = resolve_preset(name)
        summaries.append(PresetSummary(
            name=config.name,
            aliases=config.aliases,
            family=config.family,
            horizon=config.horizon,
            description=config.description,
        ))
    return summaries
