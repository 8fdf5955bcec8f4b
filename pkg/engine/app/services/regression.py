"""
回归对比：读取目标文件，逐项比较特征报告中的数值
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Mapping

from pydantic import ValidationError

from app.core.errors import ConfigError
from app.models import FeatureReport, RegressionOutcome
from app.schemas import RegressionTarget, TargetsFile

logger = logging.getLogger(__name__)

DEFAULT_TARGETS = Path(__file__).resolve().parent.parent / "data" / "targets.json"


def load_targets(path: Path | str | None = None) -> TargetsFile:
    path = Path(path) if path is not None else DEFAULT_TARGETS
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read targets file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"targets file {path} is not valid JSON: {exc}") from exc
    try:
        return TargetsFile.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid targets file {path}: {exc}") from exc


def quantity_value(report: FeatureReport, quantity: str) -> float:
    """从特征报告取出一个标量；不存在时返回 NaN（对比必然失败）"""
    if quantity == "transient_time":
        return report.transient_min[0]
    if quantity == "transient_min":
        return report.transient_min[1]
    if quantity == "steady_time":
        return report.steady[0] if report.steady else math.nan
    if quantity == "steady":
        return report.steady[1] if report.steady else math.nan
    if quantity == "refrigerates":
        return float(report.refrigerates)
    if quantity == "envelope_min":
        return min((w[1] for w in report.oscillation_envelope), default=math.nan)
    if quantity == "envelope_max":
        return max((w[2] for w in report.oscillation_envelope), default=math.nan)
    raise ConfigError(f"unknown regression quantity {quantity!r}")


def compare_one(target: RegressionTarget, report: FeatureReport) -> RegressionOutcome:
    computed = quantity_value(report, target.quantity)
    passed = not math.isnan(computed) and abs(computed - target.expected) <= target.tolerance
    return RegressionOutcome(target.preset, target.quantity, target.expected, target.tolerance, computed, passed)


def compare_regression(reports: Mapping[str, FeatureReport], targets: TargetsFile) -> list[RegressionOutcome]:
    """
    每个目标对应一行结果；缺少报告的预设记为失败（computed = NaN）。
    """
    outcomes = []
    for target in targets.targets:
        report = reports.get(target.preset)
        if report is None:
            outcome = RegressionOutcome(target.preset, target.quantity, target.expected, target.tolerance,
                                        math.nan, False)
        else:
            outcome = compare_one(target, report)
        if not outcome.passed:
            logger.warning("regression failed: %s %s = %s (expected %s ± %s)", outcome.preset, outcome.quantity,
                           outcome.computed, outcome.expected, outcome.tolerance)
        outcomes.append(outcome)
    return outcomes
