"""Command line interface.

Subcommands: ``simulate``, ``tune``, ``sweep``, ``report``.  Scenario
arguments accept a YAML path or a bundled preset name.  Exit code 0 on
success; validation problems exit 2 and runtime failures exit 1, both with
stage-tagged diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from .canceller import tune as tune_scenario
from .harness import StageError, emit_outputs, read_report, run_simulation, run_sweep
from .scenario import PRESET_NAMES, ScenarioError, load_scenario


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="picsim",
        description="Photonic RF interference cancellation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    scenario_help = (
        "scenario YAML path or bundled preset name "
        f"({', '.join(PRESET_NAMES)})"
    )

    p_sim = sub.add_parser("simulate", help="run one scenario end to end")
    p_sim.add_argument("scenario", help=scenario_help)
    p_sim.add_argument("--out", required=True, help="output directory")

    p_tune = sub.add_parser("tune", help="solve cancellation settings and print them")
    p_tune.add_argument("scenario", help=scenario_help)

    p_sweep = sub.add_parser("sweep", help="run a scenario along one parameter axis")
    p_sweep.add_argument("scenario", help=scenario_help)
    p_sweep.add_argument("--axis", required=True,
                         help=f"one of: {', '.join(harness.SWEEP_AXES)}")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated axis values")
    p_sweep.add_argument("--out", required=True, help="output directory")

    p_rep = sub.add_parser("report", help="re-render tables from a run directory")
    p_rep.add_argument("run_dir", help="directory written by simulate/sweep")
    return parser


def _print_metrics(metrics: dict) -> None:
    for key in ("pre_evm_percent", "post_evm_percent",
                "residual_interference_db", "suppression_min_db"):
        if key in metrics and metrics[key] is not None:
            print(f"  {key:28s} {metrics[key]:10.4f}")


def _cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    report = run_simulation(sc)
    emit_outputs(report, args.out)
    print(f"scenario {sc.name}: wrote {args.out}")
    _print_metrics(report.metrics)
    return 0


def _cmd_tune(args) -> int:
    sc = load_scenario(args.scenario)
    try:
        result = tune_scenario(sc)
    except Exception as exc:
        raise StageError("tune", exc) from exc
    print(json.dumps(harness._tune_to_dict(result), indent=2,
                     default=harness._json_default))
    return 0


def _parse_values(raw: str, axis: str) -> list:
    values = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        values.append(int(token) if axis in ("order", "num_interferers")
                      else float(token))
    if not values:
        raise ScenarioError("--values: no values given")
    return values


def _cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    values = _parse_values(args.values, args.axis)
    try:
        reports = run_sweep(sc, args.axis, values)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    from pathlib import Path

    out = Path(args.out)
    for value, report in zip(values, reports):
        tag = str(value).replace(".", "p")
        emit_outputs(report, out / f"{args.axis}_{tag}")
    print(f"swept {args.axis} over {values}: wrote {args.out}")
    for value, report in zip(values, reports):
        post = report.metrics["post_evm_percent"]
        pre = report.metrics["pre_evm_percent"]
        print(f"  {args.axis}={value}: pre-EVM {pre:.3f} %  post-EVM {post:.3f} %")
    return 0


def _cmd_report(args) -> int:
    data = read_report(args.run_dir)
    print(f"run: {data['scenario'].get('name', '?')} "
          f"(picsim {data['versions'].get('picsim', '?')})")
    _print_metrics(data["metrics"])
    freqs, psd = harness.load_psd_csv(
        f"{args.run_dir}/psd_post.csv"
    )
    total = 10.0 * np.log10(max(np.sum(10.0 ** (psd / 10.0)), 1e-300))
    print(f"  post PSD bins {len(freqs)}, integrated {total:.2f} dBFS")
    print("  manifest digests verified")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "tune": _cmd_tune,
        "sweep": _cmd_sweep,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ScenarioError as exc:
        print(f"error [stage=load]: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
