"""CSV exports. Every file is written once, atomically, with 9 significant digits."""

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from .control import CONTROL_LOG_HEADER, DESIRED_HEADER
from .dynamics import STATE_FIELDS
from .moments import moment_columns

PathLike = Union[str, Path]

IMPACT_HEADER = ["run", "tau", "x", "y"]
MOMENT_SUMMARY_HEADER = [
    "tau", "mean_x", "mean_y", "mean_z", "sd_x", "sd_y", "sd_z", "re_delta", "im_delta",
]  # fmt: skip


def format_value(value: float) -> str:
    return f"{float(value):.9g}"


def rows_to_csv(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    """Write to a temporary sibling, then rename over the target."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_trajectory_csv(path: PathLike, trajectory) -> None:
    """One row per recorded sample: tau and the twelve model states."""
    rows = [
        [format_value(t), *(format_value(v) for v in state)]
        for t, state in zip(trajectory.tau, trajectory.states)
    ]
    atomic_write_text(path, rows_to_csv(["tau", *STATE_FIELDS], rows))


def write_impacts_csv(path: PathLike, impacts: np.ndarray) -> None:
    """Impact table with columns run, tau, x, y."""
    rows = [
        [str(int(run)), format_value(tau), format_value(x), format_value(y)]
        for run, tau, x, y in np.asarray(impacts).reshape(-1, 4)
    ]
    atomic_write_text(path, rows_to_csv(IMPACT_HEADER, rows))


def write_moments_csv(path: PathLike, run) -> None:
    """Summary block followed by re/im pairs of every retained moment."""
    rows: List[List[str]] = []
    for index, tau in enumerate(run.tau):
        mu = run.at(index)
        delta = mu.mean("d+")
        summary = [
            tau,
            mu.mean("x").real, mu.mean("y").real, mu.mean("z").real,
            mu.sd("x"), mu.sd("y"), mu.sd("z"),
            delta.real, delta.imag,
        ]  # fmt: skip
        full = []
        for value in run.values[index][1:]:
            full.extend([value.real, value.imag])
        rows.append([format_value(v) for v in summary + full])
    header = MOMENT_SUMMARY_HEADER + moment_columns()
    atomic_write_text(path, rows_to_csv(header, rows))


def write_control_log_csv(path: PathLike, log: Sequence[Sequence[float]]) -> None:
    rows = []
    for entry in log:
        *values, saturated = entry
        rows.append([*(format_value(v) for v in values), str(int(saturated))])
    atomic_write_text(path, rows_to_csv(CONTROL_LOG_HEADER, rows))


def write_desired_trajectory(path: PathLike, desired) -> None:
    """Desired trajectory as an `x,y,z` CSV readable by load_desired_trajectory."""
    rows = [
        [format_value(x), format_value(y), format_value(z)]
        for x, y, z in zip(desired.x, desired.y, desired.z)
    ]
    atomic_write_text(path, rows_to_csv(DESIRED_HEADER, rows))
