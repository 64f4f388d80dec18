"""Record definitions for run reports."""

from typing import Dict, List, Optional, TypedDict


class StatsBlock(TypedDict):
    """Impact statistics of one method, traceable to an exported CSV."""

    method: str  # "montecarlo", "moments", "controlled", "uncontrolled"
    n: int  # impact points; 0 for moment predictions
    mean_x: float
    mean_y: float
    sd_x: float
    sd_y: float
    cov_xy: Optional[float]  # None where the method does not carry it
    source_csv: str


class RunReport(TypedDict):
    """One CLI command invocation.

    One report = one command, one scenario, one seed.
    Written next to the CSV/SVG outputs as report.json.
    """

    # Run metadata
    command: str
    run_id: str
    scenario_digest: str  # sha256 of canonical scenario JSON
    seed: int
    random_ic: bool
    started_at: str  # ISO timestamp
    finished_at: str  # ISO timestamp
    duration_seconds: float

    # Ensemble bookkeeping
    counts: Dict[str, int]  # {"runs", "impacts", "non_impacting", "diverged", ...}

    # Results
    stats: List[StatsBlock]
    metrics: Dict[str, float]  # trace ratio, gaps, impact tau, runtimes
    outputs: List[str]  # file names relative to the output directory
    warnings: List[str]
