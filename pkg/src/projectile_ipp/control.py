"""Canard guidance: desired trajectory, error geometry and the feedback law."""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np

from .dynamics import MlmState
from .errors import GuidanceRangeError, TrajectoryFileError
from .instrumentation import get_tracer, stats_attributes
from .kernels import pack_gains
from .scenario import CanardConfig, ControlGains, ProjectileParams, Scenario
from .sde import EnsembleResult, RandomStream, run_ensemble, simulate_trajectory

logger = logging.getLogger(__name__)
tracer = get_tracer(__name__)

DESIRED_HEADER = ["x", "y", "z"]
CONTROL_LOG_HEADER = [
    "tau", "e1", "e2", "e3", "thetaE", "psiE", "l1", "l2", "l3", "l4", "saturated",
]  # fmt: skip


@dataclass(frozen=True)
class DesiredTrajectory:
    """Reference path sampled on strictly increasing downrange x."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    tau: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or len(x) < 2:
            raise TrajectoryFileError("desired trajectory needs at least 2 samples")
        if len(self.y) != len(x) or len(self.z) != len(x):
            raise TrajectoryFileError("desired trajectory columns differ in length")
        if not np.all(np.isfinite(x)) or not np.all(np.diff(x) > 0):
            raise TrajectoryFileError("desired trajectory x must strictly increase")

    def lookup(self, x_query):
        """Interpolated (y, z) at downrange positions."""
        return np.interp(x_query, self.x, self.y), np.interp(x_query, self.x, self.z)

    def extended(self, x_end: float) -> "DesiredTrajectory":
        """Append a straight continuation of the last segment out to x_end."""
        if x_end <= self.x[-1]:
            return self
        dx = self.x[-1] - self.x[-2]
        slope_y = (self.y[-1] - self.y[-2]) / dx
        slope_z = (self.z[-1] - self.z[-2]) / dx
        run = x_end - self.x[-1]
        tau = None
        if self.tau is not None:
            slope_t = (self.tau[-1] - self.tau[-2]) / dx
            tau = np.append(self.tau, self.tau[-1] + slope_t * run)
        return DesiredTrajectory(
            x=np.append(self.x, x_end),
            y=np.append(self.y, self.y[-1] + slope_y * run),
            z=np.append(self.z, self.z[-1] + slope_z * run),
            tau=tau,
        )


class GuidanceErrors(NamedTuple):
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    theta_E: np.ndarray
    psi_E: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray


class CanardCommand(NamedTuple):
    """Clamped deflections (..., 4) and whether any channel saturated."""

    lambdas: np.ndarray
    saturated: np.ndarray
    e_phi: np.ndarray
    e_theta: np.ndarray
    e_psi: np.ndarray


@dataclass
class ClosedLoopResult:
    controlled: EnsembleResult
    uncontrolled: EnsembleResult
    trace_ratio: float
    desired: DesiredTrajectory


def load_desired_trajectory(path: Union[str, Path]) -> DesiredTrajectory:
    """
    Read a desired trajectory from a CSV file with an `x,y,z` header.

    Raises:
        TrajectoryFileError: On a missing header, bad numbers or non-monotone x.
    """
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != DESIRED_HEADER:
                raise TrajectoryFileError(
                    f"{path}: expected header x,y,z, got {header}"
                )
            rows = [[float(v) for v in row] for row in reader if row]
    except OSError as exc:
        raise TrajectoryFileError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, TrajectoryFileError):
            raise
        raise TrajectoryFileError(f"{path}: {exc}") from exc
    if any(len(row) != 3 for row in rows):
        raise TrajectoryFileError(f"{path}: every row needs exactly 3 values")
    data = np.array(rows, dtype=float).reshape(-1, 3)
    return DesiredTrajectory(x=data[:, 0], y=data[:, 1], z=data[:, 2])


def desired_trajectory(
    scenario: Scenario,
    *,
    path: Optional[Union[str, Path]] = None,
    n_points: int = 2001,
) -> DesiredTrajectory:
    """
    Reference path for guidance.

    Either loads `path`, or runs the noise-free trajectory from the mean
    launch state and resamples it on a uniform x grid. The result is extended
    in a straight line so lookups ahead of the impact point stay in range.

    Args:
        scenario: Scenario whose nominal arc defines the path
        path: Optional external CSV file
        n_points: Resampling grid size

    Returns:
        DesiredTrajectory starting at the launch point
    """
    if path is not None:
        desired = load_desired_trajectory(path)
    else:
        arc = simulate_trajectory(scenario.deterministic(), RandomStream(0))
        xs, ys, zs = arc.states[:, 0], arc.states[:, 1], arc.states[:, 2]
        taus = arc.tau
        if arc.impact is not None:
            xs = np.append(xs[:-1], arc.impact.x)
            ys = np.append(ys[:-1], arc.impact.y)
            zs = np.append(zs[:-1], 0.0)
            taus = np.append(taus[:-1], arc.impact.tau)
        keep = np.concatenate([[True], np.diff(xs) > 0])
        xs, ys, zs, taus = xs[keep], ys[keep], zs[keep], taus[keep]
        grid = np.linspace(xs[0], xs[-1], n_points)
        desired = DesiredTrajectory(
            x=grid,
            y=np.interp(grid, xs, ys),
            z=np.interp(grid, xs, zs),
            tau=np.interp(grid, xs, taus),
        )
    reach = scenario.projectile.D * scenario.integration.max_span
    lookahead = scenario.gains.lookahead if scenario.gains is not None else 0.0
    return desired.extended(reach + 2.0 * lookahead)


def compute_errors(
    s: MlmState,
    d: DesiredTrajectory,
    gains: ControlGains,
    *,
    strict: bool = True,
) -> GuidanceErrors:
    """
    Position and angle errors against the desired point one lookahead ahead.

    Args:
        s: Current state (scalar or batched)
        d: Desired trajectory
        gains: Gains carrying the lookahead distance
        strict: Raise when the target falls outside the desired trajectory;
                otherwise the lookup clamps to its end points

    Returns:
        GuidanceErrors

    Raises:
        GuidanceRangeError: If strict and the lookup is out of range.

    Example:
        >>> err = compute_errors(state, desired, gains)
        >>> err.theta_E  # alpha minus line-of-sight elevation
    """
    x_target = np.asarray(s.x) + gains.lookahead
    if strict and (np.any(x_target < d.x[0]) or np.any(x_target > d.x[-1])):
        raise GuidanceRangeError(
            f"desired point at x = {np.max(x_target):.6g} outside "
            f"[{d.x[0]:.6g}, {d.x[-1]:.6g}]"
        )
    y_target, z_target = d.lookup(x_target)
    e1 = x_target - s.x
    e2 = y_target - s.y
    e3 = z_target - s.z
    axial = np.sqrt(np.maximum(s.V**2 - s.v_t**2 - s.w_t**2, 1e-12))
    alpha = np.arctan(s.w_t / axial)
    beta = np.arctan(s.v_t / axial)
    return GuidanceErrors(
        e1=e1,
        e2=e2,
        e3=e3,
        theta_E=alpha - np.arctan(e3 / e1),
        psi_E=-beta + np.arctan(e2 / e1),
        alpha=alpha,
        beta=beta,
    )


def allocate_deflections(e_phi, e_theta, e_psi) -> np.ndarray:
    """Map roll, pitch and yaw commands onto the four canards (unclamped)."""
    return np.stack(
        np.broadcast_arrays(
            e_theta - e_phi, e_psi + e_phi, e_theta + e_phi, e_psi - e_phi
        ),
        axis=-1,
    ).astype(float)


def feedback_law(
    s: MlmState,
    err: GuidanceErrors,
    gains: ControlGains,
    params: ProjectileParams,
) -> CanardCommand:
    """
    Linear guidance law with deflection clamping.

    e_phi = Kp p_t + Kphi phi, e_theta = Ktheta theta_E and
    e_psi = Kpsi psi_E, with p_t already in rad/s. With `roll_priority` the
    roll command only gets the deflection the pitch and yaw commands leave
    free. `saturated` flags runs whose unclamped allocation exceeds the
    limit.
    """
    e_phi = gains.Kp * s.p_t + gains.Kphi * s.phi
    e_theta = gains.Ktheta * err.theta_E
    e_psi = gains.Kpsi * err.psi_E
    limit = gains.deflection_limit
    saturated = np.any(
        np.abs(allocate_deflections(e_phi, e_theta, e_psi)) > limit, axis=-1
    )
    if gains.roll_priority:
        steering = np.minimum(np.maximum(np.abs(e_theta), np.abs(e_psi)), limit)
        room = limit - steering
        e_phi = np.clip(e_phi, -room, room)
    return CanardCommand(
        lambdas=np.clip(allocate_deflections(e_phi, e_theta, e_psi), -limit, limit),
        saturated=saturated,
        e_phi=e_phi,
        e_theta=e_theta,
        e_psi=e_psi,
    )


@dataclass
class GuidanceController:
    """
    Per-step guidance loop attached to a simulation.

    Stateless apart from the optional log, so one instance can serve every
    batch of an ensemble. Set record=True only for single-run simulations.
    """

    desired: DesiredTrajectory
    gains: ControlGains
    canards: CanardConfig
    params: ProjectileParams
    record: bool = False
    log: List[List[float]] = field(default_factory=list)

    @classmethod
    def for_scenario(
        cls,
        scenario: Scenario,
        desired: Optional[DesiredTrajectory] = None,
        *,
        record: bool = False,
    ) -> "GuidanceController":
        canards, gains = scenario.require_control()
        return cls(
            desired=desired if desired is not None else desired_trajectory(scenario),
            gains=gains,
            canards=canards,
            params=scenario.projectile,
            record=record,
        )

    def kernel_inputs(self) -> Tuple[np.ndarray, ...]:
        """Desired path columns and packed gains for the compiled loop."""
        return (
            np.ascontiguousarray(self.desired.x, dtype=float),
            np.ascontiguousarray(self.desired.y, dtype=float),
            np.ascontiguousarray(self.desired.z, dtype=float),
            pack_gains(self.gains),
        )

    def __call__(self, tau: float, s: MlmState) -> CanardCommand:
        with np.errstate(all="ignore"):
            err = compute_errors(s, self.desired, self.gains, strict=False)
            command = feedback_law(s, err, self.gains, self.params)
        n_saturated = int(np.count_nonzero(command.saturated))
        if n_saturated:
            logger.debug("tau=%.6g: %d run(s) saturated", tau, n_saturated)
        if self.record:
            lambdas = np.reshape(command.lambdas, (-1, 4))[0]
            tracked = (err.e1, err.e2, err.e3, err.theta_E, err.psi_E)
            first = [float(np.ravel(v)[0]) for v in tracked]
            self.log.append(
                [tau, *first, *(float(v) for v in lambdas),
                 float(np.ravel(command.saturated)[0])]
            )  # fmt: skip
        return command


def closed_loop_simulate(
    scenario: Scenario,
    stream: Union[RandomStream, int],
    n: int,
    *,
    random_ic: bool = False,
    desired: Optional[DesiredTrajectory] = None,
    threads: Optional[int] = None,
) -> ClosedLoopResult:
    """
    Paired ensembles with and without guidance over identical substreams.

    Both ensembles integrate with the closed-loop step and scheme of
    `Scenario.for_control`.

    Args:
        scenario: Scenario with canards and gains
        stream: Base random stream or seed
        n: Ensemble size
        random_ic: Draw launch states from the initial distribution
        desired: Reference path; generated from the scenario when omitted
        threads: Worker threads for both ensembles

    Returns:
        ClosedLoopResult with trace(cov controlled) / trace(cov uncontrolled)

    Raises:
        ScenarioError: If canards or gains are missing (before any run).
    """
    scenario.require_control()
    scenario = scenario.for_control()
    seed = stream.seed if isinstance(stream, RandomStream) else int(stream)
    with tracer.start_as_current_span("control.closed_loop") as span:
        span.set_attribute("control.runs", n)
        span.set_attribute("control.step", scenario.integration.step)
        controller = GuidanceController.for_scenario(scenario, desired)
        controlled = run_ensemble(
            scenario, n, seed, random_ic, controller, threads=threads
        )
        uncontrolled = run_ensemble(scenario, n, seed, random_ic, threads=threads)

        numerator = controlled.stats.trace()
        denominator = uncontrolled.stats.trace()
        if denominator > 0:
            ratio = numerator / denominator
        else:
            ratio = 1.0 if numerator == 0 else math.inf
        span.set_attributes(stats_attributes("impact.controlled", controlled.stats))
        span.set_attributes(stats_attributes("impact.uncontrolled", uncontrolled.stats))
        span.set_attribute("control.trace_ratio", ratio)
        if controlled.saturated_steps:
            span.add_event("saturation", {"steps": controlled.saturated_steps})
    logger.info("closed-loop trace ratio %.6g over %d paired runs", ratio, n)
    if controlled.saturated_steps:
        logger.info(
            "canard saturation on %d run-steps", controlled.saturated_steps
        )
    return ClosedLoopResult(
        controlled=controlled,
        uncontrolled=uncontrolled,
        trace_ratio=ratio,
        desired=controller.desired,
    )
