import math

import numpy as np
import pandas as pd
import pytest

from app.core.errors import ConfigError
from app.models import FeatureReport, SweepPoint
from app.services import runner


def test_run_preset_writes_trajectory_and_features(tmp_path):
    result = runner.run_preset("single-qubit-N1", {"horizon": 10}, out_dir=tmp_path)
    frame = pd.read_csv(result.paths["trajectory"])
    assert list(frame.columns) == runner.TRAJECTORY_COLUMNS + ["analytic"]
    assert frame["t"].iloc[-1] == 10
    assert frame["T2"].isna().all() and frame["T3"].isna().all()
    assert np.allclose(frame["T1"], frame["analytic"], atol=1e-6, equal_nan=True)
    assert (frame["trace_residual"].abs() <= 1e-9).all()

    features = pd.read_csv(result.paths["features"])
    quantities = list(features["quantity"])
    assert quantities[:4] == ["transient_time", "transient_min", "steady_time", "steady"]
    assert "refrigerates" in quantities
    assert result.paths["envelope"].exists()


def test_run_preset_uses_settings_output_directory(out_dir):
    result = runner.run_preset("single-qubit-N2", {"horizon": 2})
    assert result.paths["trajectory"] == out_dir / "single-qubit-N2.csv"
    assert result.features is not None


def test_run_preset_without_writing():
    result = runner.run_preset("Q1", {"horizon": 2}, write=False)
    assert result.paths == {}
    assert not result.frame["T2"].isna().all()


def test_run_preset_rejects_other_families():
    with pytest.raises(ConfigError, match="witness"):
        runner.run_preset("witness")


def test_feature_frame_marks_missing_steady_state():
    report = FeatureReport((1.5, 0.8), None, True, ((0.0, 0.8, 1.0),), 0)
    frame = runner.feature_frame(report)
    values = dict(zip(frame["quantity"], frame["value"]))
    assert values["steady"] == "NONE"
    assert values["transient_min"] == "0.8"
    assert values["refrigerates"] == "1"
    assert values["envelope_max"] == "1"


def test_write_csv_atomic_leaves_no_temporary_files(tmp_path):
    path = tmp_path / "nested" / "frame.csv"
    runner.write_csv_atomic(pd.DataFrame({"a": [1.0, math.nan], "b": [1 / 3, 2.0]}), path)
    assert [p.name for p in path.parent.iterdir()] == ["frame.csv"]
    assert path.read_text(encoding="utf-8").splitlines() == ["a,b", "1,0.333333333333", "NaN,2"]


def test_run_batch_isolates_failures(tmp_path):
    results, code = runner.run_batch(["single-qubit-N2", "no-such-preset"], {"horizon": 2}, tmp_path)
    assert list(results) == ["single-qubit-N2"]
    assert code == 2


def test_steady_report(tmp_path):
    frame = runner.steady("S2", out_dir=tmp_path)
    assert list(frame["qubit"]) == [1, 2, 3]
    assert frame["valid"].all()
    assert (tmp_path / "S2_steady.csv").exists()


def test_steady_report_needs_markovian_preset():
    with pytest.raises(ConfigError):
        runner.steady("A1-S1", write=False)


def test_rhp_writes_series_and_verdict(tmp_path):
    frame, (nonmonotonic, rise) = runner.rhp(overrides={"horizon": 5}, out_dir=tmp_path)
    assert list(frame.columns) == ["t", "concurrence"]
    assert frame["concurrence"].iloc[0] == pytest.approx(1.0)
    verdict = pd.read_csv(tmp_path / "rhp_verdict.csv")
    assert list(verdict["quantity"]) == ["nonmonotonic", "total_rise"]
    assert rise >= 0


def test_witness_writes_family_bounds(tmp_path):
    frame, results = runner.witness(overrides={"horizon": 1}, out_dir=tmp_path)
    assert len(frame) == len(results) == 101
    assert {"lambda_nm", "lambda_m_opt", "T_nm", "T_m_opt", "mc", "alpha_min", "alpha_max"} <= set(frame.columns)
    assert (frame["mc"] >= 0).all()
    assert (tmp_path / "witness.csv").exists()


def _point(strength: float, refrigerates: bool) -> SweepPoint:
    return SweepPoint(strength, 1.0, 0.0, 0.0, 0.9 if refrigerates else 1.1, refrigerates)


def test_threshold_is_refined_between_sweep_points():
    points = [_point(s, s < 0.3) for s in (0.1, 0.2, 0.4, 0.8)]
    estimate = runner._threshold(points, lambda s: _point(s, s < 0.3), refine_steps=30)
    assert estimate.in_range
    assert estimate.value == pytest.approx(0.3, rel=1e-6)
    lo, hi = estimate.bracket
    assert lo < 0.3 <= hi


@pytest.mark.parametrize("pattern", [[True, True, True], [False, False, False]])
def test_threshold_out_of_range(pattern):
    points = [_point(s, r) for s, r in zip((0.1, 0.2, 0.4), pattern)]
    estimate = runner._threshold(points, lambda s: _point(s, True), refine_steps=4)
    assert not estimate.in_range
    assert estimate.value is None


def test_sweep_rejects_bad_input():
    with pytest.raises(ConfigError):
        runner.sweep_noise("III")
    with pytest.raises(ConfigError):
        runner.sweep_noise("I", strengths=[1e-2, 1e-3])
    with pytest.raises(ConfigError):
        runner.sweep_noise("I", base="Q1")


def test_alias_writes_under_requested_name_with_canonical_bytes(tmp_path):
    overrides = {"horizon": 2}
    alias = runner.run_preset("A1-S2", overrides, out_dir=tmp_path / "alias")
    canonical = runner.run_preset("A1-S1", overrides, out_dir=tmp_path / "canonical")
    assert alias.paths["trajectory"].name == "A1-S2.csv"
    assert alias.paths["features"].name == "A1-S2_features.csv"
    for key in ("trajectory", "features", "envelope"):
        assert alias.paths[key].read_bytes() == canonical.paths[key].read_bytes()


def test_rerun_is_byte_identical(tmp_path):
    first = runner.run_preset("Q1", {"horizon": 2}, out_dir=tmp_path / "first")
    second = runner.run_preset("Q1", {"horizon": 2}, out_dir=tmp_path / "second")
    for key in ("trajectory", "features"):
        assert first.paths[key].read_bytes() == second.paths[key].read_bytes()


def test_sweep_extends_until_threshold_is_bracketed():
    def evaluate(strength):
        return _point(strength, strength < 5.0)

    points = [_point(s, True) for s in (0.5, 1.0, 2.0)]
    extra = runner._extend_bracket(points, evaluate)
    assert [p.strength for p in extra] == [4.0, 8.0]
    estimate = runner._threshold(points + extra, evaluate, refine_steps=40)
    assert estimate.in_range
    assert estimate.value == pytest.approx(5.0, rel=1e-6)


def test_sweep_extension_is_bounded_and_skipped_once_bracketed():
    points = [_point(s, True) for s in (0.5, 1.0)]
    extra = runner._extend_bracket(points, lambda s: _point(s, True))
    assert len(extra) == runner.MAX_EXTENSIONS
    assert extra[-1].strength == pytest.approx(1.0 * runner.BRACKET_GROWTH ** runner.MAX_EXTENSIONS)
    assert runner._extend_bracket([_point(0.1, True), _point(0.2, False)], lambda s: _point(s, True)) == []
