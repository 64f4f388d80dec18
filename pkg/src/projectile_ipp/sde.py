"""Stochastic integration of the projectile model and Monte Carlo ensembles.

Every run owns an independent random substream derived from the base seed
and its run index, so ensemble output does not depend on thread count or on
how runs are batched. Runs are stepped by the compiled kernels in
`kernels`, one block of pre-drawn normals at a time.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, List, NamedTuple, Optional, Tuple

import numpy as np

from .dynamics import MlmState
from .errors import (
    DegenerateFlowError,
    ScenarioError,
    SingularityError,
    StatisticsError,
)
from .instrumentation import get_tracer, stats_attributes
from .kernels import (
    DIVERGED,
    FLYING,
    IMPACTED,
    LOG_WIDTH,
    STEP_DEGENERATE,
    STEP_SINGULAR,
    integrate_block,
    pack_model,
    step,
)
from .scenario import Scenario, mean_state, sample_initial_state
from .settings import ensemble_batch_size, ensemble_threads

if TYPE_CHECKING:
    from .control import GuidanceController

logger = logging.getLogger(__name__)
tracer = get_tracer(__name__)

# Standard normals drawn per run and refill.
NOISE_BLOCK = 1024

_NO_PATH = np.zeros(2)
_NO_GAINS = np.zeros(7)


class RandomStream:
    """
    Seeded random source; substreams are statistically independent.

    Example:
        >>> base = RandomStream(42)
        >>> run_7 = base.spawn(7)
        >>> run_7.generator.standard_normal()
    """

    def __init__(self, seed: int, substream: Optional[int] = None):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.substream = substream
        key = () if substream is None else (int(substream),)
        sequence = np.random.SeedSequence(self.seed, spawn_key=key)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def spawn(self, index: int) -> "RandomStream":
        return RandomStream(self.seed, index)

    def snapshot(self) -> "RandomStream":
        """Independent copy that replays the same future draws."""
        return copy.deepcopy(self)

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, substream={self.substream})"


class ImpactPoint(NamedTuple):
    tau: float
    x: float
    y: float


class Ellipse(NamedTuple):
    """One-sigma covariance ellipse; angle of the major axis in radians."""

    center_x: float
    center_y: float
    semi_major: float
    semi_minor: float
    angle: float


@dataclass(frozen=True)
class ImpactStats:
    """Sample statistics of impact points in the ground plane."""

    n: int
    mean_x: float
    mean_y: float
    cov: np.ndarray
    ellipse: Ellipse

    @property
    def sd_x(self) -> float:
        return math.sqrt(max(self.cov[0, 0], 0.0))

    @property
    def sd_y(self) -> float:
        return math.sqrt(max(self.cov[1, 1], 0.0))

    def trace(self) -> float:
        return float(self.cov[0, 0] + self.cov[1, 1])

    def standard_error(self) -> Tuple[float, float]:
        """Standard errors of the mean impact point, sd / sqrt(n)."""
        root_n = math.sqrt(self.n)
        return self.sd_x / root_n, self.sd_y / root_n


@dataclass
class Trajectory:
    """Recorded samples of one run. states has shape (n_samples, 12)."""

    tau: np.ndarray
    states: np.ndarray
    impact: Optional[ImpactPoint]
    status: str

    def state(self, index: int) -> MlmState:
        return MlmState.from_array(self.states[index])


@dataclass
class EnsembleResult:
    """Impact statistics plus the per-run impact table (run, tau, x, y)."""

    stats: ImpactStats
    impacts: np.ndarray
    n_runs: int
    non_impacting: int
    diverged: int
    saturated_steps: int = 0
    base_seed: int = 0
    random_ic: bool = False
    duration_seconds: float = 0.0


class _RunOutcome(NamedTuple):
    status: int
    impact: Tuple[float, float, float]
    saturated: int
    samples: np.ndarray
    log: np.ndarray


def wiener_increments(
    stream: RandomStream, dt: float, size: Optional[int] = None
) -> np.ndarray:
    """
    Independent Brownian increments for the x, y and z channels.

    Args:
        stream: Random stream
        dt: Step length (> 0)
        size: Number of increment triples; None returns shape (3,)

    Returns:
        Normal draws with mean 0 and variance dt
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    shape = (3,) if size is None else (size, 3)
    return stream.generator.normal(0.0, math.sqrt(dt), size=shape)


def em_step(
    s: MlmState,
    dt: float,
    stream: Optional[RandomStream],
    scenario: Scenario,
    canard_command: Any = None,
    *,
    dw: Optional[np.ndarray] = None,
    v_ref: Optional[float] = None,
) -> MlmState:
    """
    One stochastic step: a deterministic step of the scenario scheme plus
    additive noise on x, y and z.

    Schemes are "euler", "gyro-split" (Euler with the spin coupling of q_t
    and r_t applied as an exact rotation), "rk4", and "exp-rk4" (RK4 around
    the exact exponential of the fast pitch-yaw block). Canard deflections
    are held over the step.

    Args:
        s: Current state (scalar or batched)
        dt: Step in the model's independent variable (> 0)
        stream: Source of Wiener increments when dw is not supplied
        scenario: Scenario providing parameters, wind, noise and scheme
        canard_command: Deflections (array of 4) or an object with `lambdas`
        dw: Pre-drawn increments, shape (3,) or (n, 3)
        v_ref: Frozen reference speed for every 1/V factor

    Returns:
        State after the step

    Raises:
        SingularityError: If cos(theta) or V underflows during the step.
        DegenerateFlowError: If a canard root sees reversed axial flow.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    controlled = canard_command is not None
    if controlled and scenario.canards is None:
        raise ScenarioError("canard command given but the scenario has no canards")
    packed = pack_model(scenario, v_ref)
    states = np.atleast_2d(s.as_array())
    lambdas = np.zeros((len(states), 4))
    if controlled:
        lambdas[:] = np.asarray(getattr(canard_command, "lambdas", canard_command))

    stepped = np.empty_like(states)
    work = np.empty((6, 12))
    for row, lam, out in zip(states, lambdas, stepped):
        status = step(row, lam, controlled, dt, packed.scheme, packed.model,
                      packed.surfaces, packed.coefficients, out, work)  # fmt: skip
        if status == STEP_SINGULAR:
            raise SingularityError(
                "state is not regular: cos(theta) or V near zero, or non-finite"
            )
        if status == STEP_DEGENERATE:
            raise DegenerateFlowError("canard root flow u_c <= 0 during the step")

    if dw is None:
        size = None if np.ndim(s.x) == 0 else len(states)
        dw = wiener_increments(stream, dt, size)
    stepped[:, :3] += scenario.noise.amplitudes() * np.reshape(dw, (-1, 3))
    return MlmState.from_array(stepped[0] if np.ndim(s.x) == 0 else stepped)


def detect_impact(
    prev: Tuple[float, MlmState],
    nxt: Tuple[float, MlmState],
    descending: bool = True,
) -> Optional[ImpactPoint]:
    """
    Ground crossing between two consecutive samples.

    z is positive downward, so impact is prev.z < 0 <= next.z. The point is
    linearly interpolated in tau, x and y.

    Args:
        prev: (tau, state) before the step
        nxt: (tau, state) after the step
        descending: Whether the projectile is past apogee

    Returns:
        ImpactPoint, or None if there is no crossing
    """
    (tau0, s0), (tau1, s1) = prev, nxt
    if not descending or not (s0.z < 0 <= s1.z):
        return None
    frac = -s0.z / (s1.z - s0.z)
    return ImpactPoint(
        tau=float(tau0 + frac * (tau1 - tau0)),
        x=float(s0.x + frac * (s1.x - s0.x)),
        y=float(s0.y + frac * (s1.y - s0.y)),
    )


def impact_stats(points) -> ImpactStats:
    """
    Sample mean, unbiased covariance and one-sigma ellipse of impact points.

    Args:
        points: Array of shape (n, 2) holding (x, y)

    Returns:
        ImpactStats

    Raises:
        StatisticsError: If fewer than 2 points are given.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise StatisticsError(f"need at least 2 impact points, got {len(pts)}")
    mean = pts.mean(axis=0)
    cov = np.cov(pts.T, ddof=1)
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.clip(eigvals, 0.0, None)
    major = eigvecs[:, 1]
    ellipse = Ellipse(
        center_x=float(mean[0]),
        center_y=float(mean[1]),
        semi_major=float(math.sqrt(eigvals[1])),
        semi_minor=float(math.sqrt(eigvals[0])),
        angle=float(math.atan2(major[1], major[0])),
    )
    return ImpactStats(
        n=len(pts), mean_x=float(mean[0]), mean_y=float(mean[1]),
        cov=cov, ellipse=ellipse,
    )  # fmt: skip


def _integrate_run(
    scenario: Scenario,
    stream: RandomStream,
    *,
    random_ic: bool,
    guidance: Optional[Tuple[np.ndarray, ...]] = None,
    record: bool = False,
    log: bool = False,
    v_ref: Optional[float] = None,
) -> _RunOutcome:
    settings = scenario.integration
    packed = pack_model(scenario, v_ref)
    dt = settings.step
    n_steps = int(math.ceil(settings.max_span / dt - 1e-9))

    drawn = sample_initial_state(scenario.initial, stream).as_array()
    nominal = mean_state(scenario.initial).as_array()
    state = np.array(drawn if random_ic else nominal, dtype=float)

    controlled = guidance is not None
    px, py, pz, gains = guidance if controlled else (_NO_PATH,) * 3 + (_NO_GAINS,)
    sample_rows = np.empty((NOISE_BLOCK + 1 if record else 0, 13))
    log_rows = np.empty((NOISE_BLOCK if log else 0, LOG_WIDTH))
    samples = [np.concatenate([[0.0], state])[None, :]] if record else []
    logged: List[np.ndarray] = []

    k, saturated, status = 0, 0, FLYING
    impact = (math.nan, math.nan, math.nan)
    while k < n_steps:
        normals = stream.generator.standard_normal((NOISE_BLOCK, 3))
        status, k, n_samples, n_log, tau, x, y, n_saturated = integrate_block(
            state, k, n_steps, normals, dt, packed.scheme, packed.model,
            packed.surfaces, packed.coefficients, controlled, px, py, pz, gains,
            settings.record_every, sample_rows, log_rows,
        )  # fmt: skip
        saturated += n_saturated
        if n_samples:
            samples.append(sample_rows[:n_samples].copy())
        if n_log:
            logged.append(log_rows[:n_log].copy())
        if status == IMPACTED:
            impact = (tau, x, y)
        if status != FLYING:
            break

    return _RunOutcome(
        status=int(status),
        impact=impact,
        saturated=int(saturated),
        samples=np.concatenate(samples) if samples else np.empty((0, 13)),
        log=np.concatenate(logged) if logged else np.empty((0, LOG_WIDTH)),
    )


_STATUS_NAMES = {FLYING: "horizon", IMPACTED: "impact", DIVERGED: "diverged"}


def simulate_trajectory(
    scenario: Scenario,
    stream: RandomStream,
    controller: Optional["GuidanceController"] = None,
    *,
    random_ic: bool = False,
    v_ref: Optional[float] = None,
) -> Trajectory:
    """
    Integrate one run from launch to impact or horizon.

    Samples are kept every `integration.record_every` steps plus the final
    step at impact. A controller with record=True receives one log row per
    guided step.

    Args:
        scenario: Scenario to simulate
        stream: Random stream for the initial draw and the noise
        controller: Optional canard guidance controller
        random_ic: Draw the launch state instead of using the means
        v_ref: Frozen reference speed for every 1/V factor

    Returns:
        Trajectory with status "impact", "horizon" or "diverged"
    """
    guidance = controller.kernel_inputs() if controller is not None else None
    record_log = controller is not None and controller.record
    outcome = _integrate_run(
        scenario, stream, random_ic=random_ic, guidance=guidance,
        record=True, log=record_log, v_ref=v_ref,
    )  # fmt: skip
    if record_log:
        controller.log.extend(outcome.log.tolist())
    impact = None
    if outcome.status == IMPACTED:
        impact = ImpactPoint(*(float(v) for v in outcome.impact))
    return Trajectory(
        tau=outcome.samples[:, 0],
        states=outcome.samples[:, 1:],
        impact=impact,
        status=_STATUS_NAMES[outcome.status],
    )


def run_ensemble(
    scenario: Scenario,
    n: int,
    base_seed: int,
    random_ic: bool = False,
    controller: Optional["GuidanceController"] = None,
    *,
    threads: Optional[int] = None,
    batch_size: Optional[int] = None,
    v_ref: Optional[float] = None,
) -> EnsembleResult:
    """
    Monte Carlo ensemble of n runs with paired per-run substreams.

    Batches of runs go to a thread pool; the compiled run integrator releases
    the GIL, so batches step concurrently. Diverged runs are retired and
    counted rather than aborting the ensemble.

    Args:
        scenario: Scenario to simulate
        n: Number of runs (>= 2)
        base_seed: Unsigned 64-bit seed; run i uses substream i
        random_ic: Draw launch states from the initial distribution
        controller: Optional canard guidance controller
        threads: Worker threads (default IPP_THREADS)
        batch_size: Runs per batch (default IPP_BATCH_SIZE)
        v_ref: Frozen reference speed for every 1/V factor

    Returns:
        EnsembleResult ordered by run index

    Raises:
        ValueError: If n < 2.
        StatisticsError: If fewer than 2 runs impact.
    """
    if n < 2:
        raise ValueError(f"an ensemble needs at least 2 runs, got {n}")
    threads = threads or ensemble_threads()
    batch_size = batch_size or ensemble_batch_size()
    base = RandomStream(base_seed)
    batches = [range(start, min(start + batch_size, n))
               for start in range(0, n, batch_size)]  # fmt: skip
    guidance = controller.kernel_inputs() if controller is not None else None

    started = time.perf_counter()
    with tracer.start_as_current_span("sde.run_ensemble") as span:
        span.set_attribute("ensemble.runs", n)
        span.set_attribute("ensemble.seed", str(base_seed))
        span.set_attribute("ensemble.random_ic", random_ic)
        span.set_attribute("ensemble.controlled", controller is not None)
        span.set_attribute("ensemble.scheme", scenario.integration.scheme)

        def worker(runs: range) -> List[_RunOutcome]:
            with tracer.start_as_current_span("sde.batch") as batch_span:
                batch_span.set_attribute("batch.first_run", runs.start)
                batch_span.set_attribute("batch.size", len(runs))
                outcomes = [
                    _integrate_run(scenario, base.spawn(i), random_ic=random_ic,
                                   guidance=guidance, v_ref=v_ref)
                    for i in runs
                ]  # fmt: skip
            logger.debug(
                "batch from run %d done: %d impacts", runs.start,
                sum(o.status == IMPACTED for o in outcomes),
            )  # fmt: skip
            return outcomes

        with ThreadPoolExecutor(max_workers=min(threads, len(batches))) as pool:
            outcomes = [o for batch in pool.map(worker, batches) for o in batch]

        status = np.array([o.status for o in outcomes])
        impacts = np.array([o.impact for o in outcomes]).reshape(-1, 3)
        saturated = sum(o.saturated for o in outcomes)
        landed = status == IMPACTED
        table = np.column_stack([np.arange(n)[landed], impacts[landed]])

        non_impacting = int(np.count_nonzero(status == FLYING))
        diverged = int(np.count_nonzero(status == DIVERGED))
        span.set_attribute("ensemble.non_impacting", non_impacting)
        span.set_attribute("ensemble.diverged", diverged)
        if diverged:
            span.add_event("diverged_runs", {"count": diverged})
            logger.warning("%d of %d runs diverged and were retired", diverged, n)
        if non_impacting:
            logger.info("%d of %d runs reached the horizon", non_impacting, n)

        stats = impact_stats(table[:, 2:4])
        span.set_attributes(stats_attributes("impact", stats))

    duration = time.perf_counter() - started
    logger.info("ensemble of %d runs integrated in %.3g s", n, duration)
    return EnsembleResult(
        stats=stats,
        impacts=table,
        n_runs=n,
        non_impacting=non_impacting,
        diverged=diverged,
        saturated_steps=saturated,
        base_seed=base_seed,
        random_ic=random_ic,
        duration_seconds=duration,
    )
