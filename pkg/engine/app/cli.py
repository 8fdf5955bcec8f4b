"""
命令行入口：qfridge run | sweep-noise | witness | rhp | steady | list-presets | regress

退出码：0 成功，2 配置/模型错误，3 演化失败，4 回归未通过
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any, Sequence

from tabulate import tabulate

from app.core.config import settings
from app.core.errors import ConfigError, QFridgeError, RegressionFailure
from app.core.logging import configure_logging
from app.services import presets, regression, runner

logger = logging.getLogger(__name__)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, default=None, help=f"Output directory (default: {settings.out_dir}).")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                   help="Override a scenario field, e.g. --set model.g=0.5 (repeatable).")
    p.add_argument("--grid", type=int, default=None, help="Number of samples after the dense segment.")
    p.add_argument("--horizon", type=float, default=None, help="Final time of the trajectory.")


def build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qfridge", description="Quantum absorption refrigerator simulations.")
    p.add_argument("--log-level", default=None, help=f"Logging level (default: {settings.log_level}).")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one or more refrigerator presets.")
    run.add_argument("presets", nargs="*", help="Preset names or aliases.")
    run.add_argument("--config", type=Path, default=None, help="Run a scenario document (JSON) instead.")
    _add_common(run)

    sweep = sub.add_parser("sweep-noise", help="Noise-strength sweep and refrigeration threshold.")
    sweep.add_argument("model", choices=["I", "II"], help="Noise model.")
    sweep.add_argument("--strengths", type=float, nargs="+", default=None, help="Ascending noise strengths.")
    sweep.add_argument("--base", default=None, help="Three-qubit base preset (default: A1-S3).")
    sweep.add_argument("--t-probe", type=float, default=None, help="Probe time (default: base horizon).")
    sweep.add_argument("--out", type=Path, default=None)

    witness = sub.add_parser("witness", help="Non-Markovianity witness M_C(t).")
    witness.add_argument("preset", nargs="?", default="witness")
    _add_common(witness)

    rhp = sub.add_parser("rhp", help="System-ancilla concurrence and its non-monotonicity.")
    rhp.add_argument("preset", nargs="?", default="rhp")
    _add_common(rhp)

    steady = sub.add_parser("steady", help="Null-space steady state of a Markovian preset.")
    steady.add_argument("preset")
    _add_common(steady)

    sub.add_parser("list-presets", help="List the preset catalog.")

    regress = sub.add_parser("regress", help="Compare feature reports against regression targets.")
    regress.add_argument("targets", nargs="?", type=Path, default=None,
                         help="Targets JSON (default: the shipped acceptance targets).")
    regress.add_argument("--out", type=Path, default=None)
    return p


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides = presets.parse_overrides(args.overrides)
    if args.grid is not None:
        overrides["grid.points"] = args.grid
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    return overrides


def _num(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.6g}"


def cmd_run(args: argparse.Namespace) -> int:
    overrides = _overrides(args)
    if args.config is not None:
        if args.presets:
            raise ConfigError("give either preset names or --config, not both")
        config = presets.load_scenario_file(args.config, overrides)
        results = {config.name: runner.run_preset(config, out_dir=args.out)}
        code = 0
    else:
        if not args.presets:
            raise ConfigError("no preset given; see `qfridge list-presets`")
        results, code = runner.run_batch(args.presets, overrides, args.out)
    rows = []
    for name, result in results.items():
        report = result.features
        if report is None:
            rows.append([name, "-", "-", "-", "-"])
            continue
        rows.append([
            name,
            _num(report.transient_min[0]),
            _num(report.transient_min[1]),
            _num(report.steady[1]) if report.steady else "NONE",
            "yes" if report.refrigerates else "no",
        ])
    if rows:
        print(tabulate(rows, headers=["preset", "t*", "T1 min", "T1 steady", "refrigerates"]))
    return code


def cmd_sweep(args: argparse.Namespace) -> int:
    frame, estimate = runner.sweep_noise(args.model, args.strengths, args.base, args.t_probe, args.out)
    print(tabulate(frame, headers="keys", showindex=False, floatfmt=".6g"))
    if estimate.in_range:
        lo, hi = estimate.bracket
        print(f"threshold ≈ {estimate.value:.6g} (bracket [{lo:.6g}, {hi:.6g}])")
    else:
        print("threshold: out of range")
    return 0


def cmd_witness(args: argparse.Namespace) -> int:
    frame, results = runner.witness(args.preset, _overrides(args), args.out)
    positive = sum(1 for r in results if r.mc > 0)
    flagged = sum(1 for r in results if r.flagged)
    print(tabulate([[len(results), positive, flagged, _num(float(frame["mc"].max()))]],
                   headers=["samples", "M_C > 0", "flagged", "max M_C"]))
    return 0


def cmd_rhp(args: argparse.Namespace) -> int:
    frame, (nonmonotonic, rise) = runner.rhp(args.preset, _overrides(args), args.out)
    print(tabulate([[len(frame), _num(float(frame["concurrence"].iloc[-1])), _num(rise),
                     "yes" if nonmonotonic else "no"]],
                   headers=["samples", "C(t_end)", "total rise", "non-monotonic"]))
    return 0


def cmd_steady(args: argparse.Namespace) -> int:
    frame = runner.steady(args.preset, _overrides(args), args.out)
    print(tabulate(frame, headers="keys", showindex=False, floatfmt=".6g"))
    return 0


def cmd_list(args: argparse.Namespace) -> int:
    rows = [[s.name, ", ".join(s.aliases), s.family.value, _num(s.horizon), s.description]
            for s in presets.list_presets()]
    print(tabulate(rows, headers=["name", "aliases", "family", "horizon", "description"]))
    return 0


def cmd_regress(args: argparse.Namespace) -> int:
    targets = regression.load_targets(args.targets)
    names = list(dict.fromkeys(presets.canonical_name(t.preset) for t in targets.targets))
    results, code = runner.run_batch(names, out_dir=args.out, write=args.out is not None)
    reports = {name: r.features for name, r in results.items() if r.features is not None}
    for target in targets.targets:
        canonical = presets.canonical_name(target.preset)
        if canonical in reports:
            reports.setdefault(target.preset, reports[canonical])
    outcomes = regression.compare_regression(reports, targets)
    print(tabulate(
        [[o.preset, o.quantity, _num(o.expected), _num(o.tolerance), _num(o.computed), "ok" if o.passed else "FAIL"]
         for o in outcomes],
        headers=["preset", "quantity", "expected", "tolerance", "computed", "result"],
    ))
    failed = [o for o in outcomes if not o.passed]
    if failed:
        raise RegressionFailure(f"{len(failed)} of {len(outcomes)} regression targets failed")
    return code


COMMANDS = {
    "run": cmd_run,
    "sweep-noise": cmd_sweep,
    "witness": cmd_witness,
    "rhp": cmd_rhp,
    "steady": cmd_steady,
    "list-presets": cmd_list,
    "regress": cmd_regress,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except QFridgeError as exc:
        logger.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
