"""Command-line entry point: ipp simulate | montecarlo | moments | compare | control."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from opentelemetry.trace import Status, StatusCode

from .control import GuidanceController, closed_loop_simulate, desired_trajectory
from .errors import IppError, ScenarioError
from .export import (
    write_control_log_csv,
    write_desired_trajectory,
    write_impacts_csv,
    write_moments_csv,
    write_trajectory_csv,
)
from .instrumentation import get_tracer, setup_tracing, shutdown_tracing
from .moments import integrate_moments
from .plotting import (
    ScatterLayer,
    axis_ellipse_layer,
    ellipse_layer,
    impact_plot_svg,
)
from .records import RunReport
from .report import (
    comparison_gaps,
    ensemble_stats_block,
    export_run_report,
    finish_run_report,
    gap_warnings,
    initialize_run_report,
    moment_stats_block,
    print_run_report,
)
from .scenario import Scenario, load_scenario_file, nominal_scenario
from .sde import RandomStream, run_ensemble, simulate_trajectory
from .settings import load_environment, log_level

logger = logging.getLogger(__name__)
tracer = get_tracer(__name__)

DEFAULT_RUNS = {"montecarlo": 1000, "compare": 1000, "control": 500}


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--scenario", type=Path, default=None,
        help="scenario JSON (default: bundled nominal scenario)",
    )  # fmt: skip
    common.add_argument("--seed", type=_seed, default=0, help="base seed (u64)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output dir")
    common.add_argument("--step", type=_positive_float, default=None,
                        help="override the integration step")  # fmt: skip
    common.add_argument(
        "--random-ic", action="store_true",
        help="draw launch states from the initial distribution",
    )  # fmt: skip
    common.add_argument("--deterministic", action="store_true",
                        help="zero every diffusion amplitude")  # fmt: skip
    common.add_argument("--detailed", action="store_true",
                        help="print the detailed report")  # fmt: skip

    parser = argparse.ArgumentParser(
        prog="ipp",
        description="Impact point prediction for spin-stabilized projectiles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="integrate one trajectory")
    for name, text in (
        ("montecarlo", "Monte Carlo impact ensemble"),
        ("compare", "Monte Carlo versus mean-field moments"),
        ("control", "paired ensembles with and without canard guidance"),
    ):
        command = sub.add_parser(name, parents=[common], help=text)
        command.add_argument("--runs", type=int, default=DEFAULT_RUNS[name],
                             help="ensemble size (>= 2)")  # fmt: skip
    sub.add_parser("moments", parents=[common], help="propagate mean-field moments")
    for name in ("moments", "compare"):
        sub.choices[name].add_argument(
            "--speed-closure", choices=("frozen", "mean"), default=None,
            help="1/V closure in the moment equations",
        )  # fmt: skip
    sub.choices["control"].add_argument(
        "--desired", type=Path, default=None,
        help="desired trajectory CSV (x,y,z); default: the noise-free arc",
    )  # fmt: skip
    return parser


def _prepare_scenario(args: argparse.Namespace) -> Scenario:
    scenario = (
        load_scenario_file(args.scenario) if args.scenario else nominal_scenario()
    )
    if args.deterministic:
        scenario = scenario.deterministic()
    changes = {}
    if args.step is not None:
        changes["step"] = args.step
    if getattr(args, "speed_closure", None):
        changes["speed_closure"] = args.speed_closure
    if changes:
        try:
            scenario = scenario.with_integration(**changes)
        except ValueError as exc:
            raise ScenarioError(f"invalid integration override: {exc}") from exc
    return scenario


def cmd_simulate(args, scenario: Scenario, report: RunReport) -> None:
    trajectory = simulate_trajectory(
        scenario, RandomStream(args.seed), random_ic=args.random_ic
    )
    write_trajectory_csv(args.out / "trajectory.csv", trajectory)
    report["outputs"].append("trajectory.csv")
    report["counts"] = {
        "samples": len(trajectory.tau),
        "impacts": int(trajectory.impact is not None),
        "diverged": int(trajectory.status == "diverged"),
    }
    if trajectory.impact is not None:
        report["metrics"].update(
            impact_tau=trajectory.impact.tau,
            impact_x=trajectory.impact.x,
            impact_y=trajectory.impact.y,
        )
    else:
        report["warnings"].append(f"no impact: run ended with {trajectory.status}")


def cmd_montecarlo(args, scenario: Scenario, report: RunReport) -> None:
    result = run_ensemble(scenario, args.runs, args.seed, args.random_ic)
    write_impacts_csv(args.out / "impacts.csv", result.impacts)
    markers = impact_plot_svg(
        args.out / "montecarlo.svg",
        [ScatterLayer(result.impacts[:, 2], result.impacts[:, 3], "impacts")],
        [ellipse_layer(result.stats, "1-sigma ellipse")],
        title="Monte Carlo impact points",
    )
    report["outputs"] += ["impacts.csv", "montecarlo.svg"]
    report["counts"] = {
        "runs": result.n_runs,
        "impacts": result.stats.n,
        "markers": markers,
        "non_impacting": result.non_impacting,
        "diverged": result.diverged,
    }
    report["stats"].append(
        ensemble_stats_block("montecarlo", result.stats, "impacts.csv")
    )
    report["metrics"]["runtime_montecarlo_s"] = result.duration_seconds


def cmd_moments(args, scenario: Scenario, report: RunReport) -> None:
    run = integrate_moments(scenario, random_ic=args.random_ic)
    write_moments_csv(args.out / "moments.csv", run)
    report["outputs"].append("moments.csv")
    report["counts"] = {"samples": len(run.tau)}
    report["metrics"]["impact_tau"] = run.prediction.tau_impact
    report["metrics"]["runtime_moments_s"] = run.duration_seconds
    report["stats"].append(moment_stats_block(run.prediction, "moments.csv"))


def cmd_compare(args, scenario: Scenario, report: RunReport) -> None:
    result = run_ensemble(scenario, args.runs, args.seed, args.random_ic)
    run = integrate_moments(scenario, random_ic=args.random_ic)
    write_impacts_csv(args.out / "impacts.csv", result.impacts)
    write_moments_csv(args.out / "moments.csv", run)

    mc = ensemble_stats_block("montecarlo", result.stats, "impacts.csv")
    mf = moment_stats_block(run.prediction, "moments.csv")
    p = run.prediction
    markers = impact_plot_svg(
        args.out / "compare.svg",
        [ScatterLayer(result.impacts[:, 2], result.impacts[:, 3], "impacts")],
        [
            ellipse_layer(result.stats, "Monte Carlo 1-sigma", "tab:red"),
            axis_ellipse_layer(p.mean_x, p.mean_y, p.sd_x, p.sd_y,
                               "mean-field 1-sigma", "tab:blue"),  # fmt: skip
        ],
        title="Monte Carlo versus mean-field impact dispersion",
    )
    gaps = comparison_gaps(mc, mf, impact_range=mc["mean_x"])
    report["outputs"] += ["impacts.csv", "moments.csv", "compare.svg"]
    report["counts"] = {
        "runs": result.n_runs,
        "impacts": result.stats.n,
        "markers": markers,
        "non_impacting": result.non_impacting,
        "diverged": result.diverged,
    }
    report["stats"] += [mc, mf]
    report["metrics"].update(gaps)
    report["metrics"].update(
        runtime_montecarlo_s=result.duration_seconds,
        runtime_moments_s=run.duration_seconds,
    )
    report["warnings"] += gap_warnings(gaps)


def cmd_control(args, scenario: Scenario, report: RunReport) -> None:
    scenario = scenario.for_control()
    desired = desired_trajectory(scenario, path=args.desired)
    result = closed_loop_simulate(
        scenario, args.seed, args.runs, random_ic=args.random_ic, desired=desired
    )
    controller = GuidanceController.for_scenario(scenario, desired, record=True)
    simulate_trajectory(
        scenario, RandomStream(args.seed).spawn(0), controller,
        random_ic=args.random_ic,
    )  # fmt: skip

    write_impacts_csv(args.out / "impacts_controlled.csv", result.controlled.impacts)
    write_impacts_csv(
        args.out / "impacts_uncontrolled.csv", result.uncontrolled.impacts
    )
    write_desired_trajectory(args.out / "desired_trajectory.csv", desired)
    write_control_log_csv(args.out / "control_log.csv", controller.log)
    controlled, uncontrolled = result.controlled, result.uncontrolled
    markers = impact_plot_svg(
        args.out / "control.svg",
        [
            ScatterLayer(uncontrolled.impacts[:, 2], uncontrolled.impacts[:, 3],
                         "uncontrolled", "tab:gray"),
            ScatterLayer(controlled.impacts[:, 2], controlled.impacts[:, 3],
                         "controlled", "tab:green"),
        ],  # fmt: skip
        [
            ellipse_layer(uncontrolled.stats, "uncontrolled 1-sigma", "tab:red"),
            ellipse_layer(controlled.stats, "controlled 1-sigma", "tab:blue"),
        ],
        title="Impact dispersion with and without canard guidance",
    )
    report["outputs"] += [
        "impacts_controlled.csv", "impacts_uncontrolled.csv",
        "desired_trajectory.csv", "control_log.csv", "control.svg",
    ]  # fmt: skip
    report["counts"] = {
        "runs": args.runs,
        "impacts_controlled": controlled.stats.n,
        "impacts_uncontrolled": uncontrolled.stats.n,
        "markers": markers,
        "diverged_controlled": controlled.diverged,
        "diverged_uncontrolled": uncontrolled.diverged,
        "saturated_steps": controlled.saturated_steps,
    }
    report["stats"] += [
        ensemble_stats_block("controlled", controlled.stats, "impacts_controlled.csv"),
        ensemble_stats_block(
            "uncontrolled", uncontrolled.stats, "impacts_uncontrolled.csv"
        ),
    ]
    report["metrics"]["trace_ratio"] = result.trace_ratio
    report["metrics"]["runtime_control_s"] = (
        controlled.duration_seconds + uncontrolled.duration_seconds
    )
    print(f"trace ratio (controlled / uncontrolled): {result.trace_ratio:.6g}")
    if result.trace_ratio >= 1.0:
        report["warnings"].append(
            "guidance did not reduce dispersion; check canard alpha_sign convention"
        )


COMMANDS: Dict[str, Callable[[argparse.Namespace, Scenario, RunReport], None]] = {
    "simulate": cmd_simulate,
    "montecarlo": cmd_montecarlo,
    "moments": cmd_moments,
    "compare": cmd_compare,
    "control": cmd_control,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, 1 on a model or runtime error, 2 on a usage or
        scenario error
    """
    load_environment()
    logging.basicConfig(
        level=log_level(), format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "runs", 2) < 2:
        print(f"error: --runs must be at least 2, got {args.runs}", file=sys.stderr)
        return 2

    try:
        scenario = _prepare_scenario(args)
        if args.command == "control":
            scenario.require_control()
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    setup_tracing()
    try:
        with tracer.start_as_current_span(f"cli.{args.command}") as span:
            span.set_attribute("cli.seed", str(args.seed))
            report = initialize_run_report(
                args.command, scenario, args.seed, args.random_ic
            )
            span.set_attribute("cli.scenario_digest", report["scenario_digest"])
            try:
                args.out.mkdir(parents=True, exist_ok=True)
                COMMANDS[args.command](args, scenario, report)
            except IppError as exc:
                span.set_status(Status(StatusCode.ERROR, str(exc)))
                raise
            finish_run_report(report)
            report["outputs"].append("report.json")
            export_run_report(report, args.out / "report.json")
            for name in report["outputs"]:
                print(f"✓ wrote {args.out / name}")
            print_run_report(report, detailed=args.detailed)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IppError as exc:
        logger.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        shutdown_tracing()
    return 0


if __name__ == "__main__":
    sys.exit(main())
