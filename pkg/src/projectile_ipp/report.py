"""Run report construction, printing and export."""

import json
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional, Union

from .export import atomic_write_text
from .records import RunReport, StatsBlock
from .scenario import Scenario, scenario_digest

# Acceptance bands of the Monte Carlo / mean-field comparison.
MEAN_GAP_BAND = 0.05
SD_GAP_BAND = 0.20


def initialize_run_report(
    command: str, scenario: Scenario, seed: int, random_ic: bool = False
) -> RunReport:
    """
    Initialize a report for one CLI command.

    Args:
        command: Subcommand name
        scenario: Scenario the command runs
        seed: Base seed
        random_ic: Whether launch states are drawn

    Returns:
        RunReport with empty results

    Example:
        >>> report = initialize_run_report("montecarlo", scenario, 42)
        >>> report["run_id"]  # Format: run_20261019_143022_abc123de
    """
    now = datetime.now(timezone.utc)
    run_id = f"run_{now.strftime('%Y%m%d_%H%M%S')}_{uuid.uuid4().hex[:8]}"
    iso_timestamp = now.isoformat()
    return RunReport(
        command=command,
        run_id=run_id,
        scenario_digest=scenario_digest(scenario),
        seed=seed,
        random_ic=random_ic,
        started_at=iso_timestamp,
        finished_at=iso_timestamp,
        duration_seconds=0.0,
        counts={},
        stats=[],
        metrics={},
        outputs=[],
        warnings=[],
    )


def finish_run_report(report: RunReport) -> RunReport:
    """Stamp the finish time and wall-clock duration."""
    finished = datetime.now(timezone.utc)
    started = datetime.fromisoformat(report["started_at"])
    report["finished_at"] = finished.isoformat()
    report["duration_seconds"] = (finished - started).total_seconds()
    return report


def ensemble_stats_block(method: str, stats, source_csv: str) -> StatsBlock:
    return StatsBlock(
        method=method,
        n=int(stats.n),
        mean_x=stats.mean_x,
        mean_y=stats.mean_y,
        sd_x=stats.sd_x,
        sd_y=stats.sd_y,
        cov_xy=float(stats.cov[0, 1]),
        source_csv=source_csv,
    )


def moment_stats_block(prediction, source_csv: str) -> StatsBlock:
    return StatsBlock(
        method="moments",
        n=0,
        mean_x=prediction.mean_x,
        mean_y=prediction.mean_y,
        sd_x=prediction.sd_x,
        sd_y=prediction.sd_y,
        cov_xy=None,
        source_csv=source_csv,
    )


def comparison_gaps(
    mc: StatsBlock, mf: StatsBlock, impact_range: float
) -> Dict[str, float]:
    """
    Relative disagreement between Monte Carlo and mean-field statistics.

    Mean gaps are relative to the impact range; standard-deviation gaps are
    relative to the Monte Carlo value.
    """
    scale = max(abs(impact_range), 1e-12)

    def rel(a: float, b: float) -> float:
        return abs(a - b) / abs(b) if b else (0.0 if a == b else float("inf"))

    return {
        "mean_x_gap": abs(mf["mean_x"] - mc["mean_x"]) / scale,
        "mean_y_gap": abs(mf["mean_y"] - mc["mean_y"]) / scale,
        "sd_x_gap": rel(mf["sd_x"], mc["sd_x"]),
        "sd_y_gap": rel(mf["sd_y"], mc["sd_y"]),
    }


def gap_warnings(gaps: Dict[str, float]) -> list:
    warnings = []
    for name, value in gaps.items():
        band = MEAN_GAP_BAND if name.startswith("mean") else SD_GAP_BAND
        if value > band:
            warnings.append(f"{name} = {value:.3g} exceeds band {band:.2g}")
    return warnings


def print_run_report(report: RunReport, detailed: bool = False) -> None:
    """
    Print formatted run information.

    Args:
        report: Finished run report
        detailed: If True, also print covariance terms and source files

    Example:
        >>> print_run_report(report)
        Run:       run_20261019_143022_abc123de
        Command:   montecarlo
        ...
    """
    print("\n" + "=" * 70)
    print("RUN REPORT")
    print("=" * 70)

    print(f"\nRun ID:          {report['run_id']}")
    print(f"Command:         {report['command']}")
    print(f"Scenario:        {report['scenario_digest'][:16]}")
    print(f"Seed:            {report['seed']}")
    print(f"Random ICs:      {'yes' if report['random_ic'] else 'no'}")
    print(f"Duration:        {report['duration_seconds']:.1f}s")

    if report["counts"]:
        print(f"\n{'-' * 70}")
        print("COUNTS")
        print(f"{'-' * 70}")
        for name, value in report["counts"].items():
            print(f"{name + ':':<17}{value}")

    if report["stats"]:
        print(f"\n{'-' * 70}")
        print("IMPACT STATISTICS (ft)")
        print(f"{'-' * 70}")
        for block in report["stats"]:
            print(
                f"{block['method']:<14} mean ({block['mean_x']:.6g}, "
                f"{block['mean_y']:.6g})  sd ({block['sd_x']:.6g}, {block['sd_y']:.6g})"
            )
            if detailed:
                if block["cov_xy"] is not None:
                    print(f"{'':<14} cov_xy {block['cov_xy']:.6g}  n={block['n']}")
                print(f"{'':<14} source {block['source_csv']}")

    if report["metrics"]:
        print(f"\n{'-' * 70}")
        print("METRICS")
        print(f"{'-' * 70}")
        for name, value in report["metrics"].items():
            print(f"{name + ':':<17}{value:.6g}")

    if detailed and report["outputs"]:
        print(f"\nOutputs:         {', '.join(report['outputs'])}")

    for warning in report["warnings"]:
        print(f"\n⚠ {warning}")

    print("\n" + "=" * 70 + "\n")


def export_run_report(
    report: RunReport, path: Optional[Union[str, Path]] = None
) -> Dict:
    """
    Export a report as a JSON-serializable dictionary, optionally to a file.

    Args:
        report: Finished run report
        path: If given, the report is written there atomically as JSON

    Returns:
        Dictionary with the complete report
    """
    summary = dict(report)
    summary["stats"] = [dict(block) for block in report["stats"]]
    summary["stats_count"] = len(report["stats"])
    summary["warnings_count"] = len(report["warnings"])
    if path is not None:
        atomic_write_text(path, json.dumps(summary, indent=2, allow_nan=True) + "\n")
    return summary
