"""Fixed-step Runge-Kutta integration and the deterministic reference arc."""

import math
from typing import Callable, Optional

import numpy as np

from .dynamics import MlmState, descent_rate, mlm_drift
from .scenario import Scenario, mean_state
from .sde import ImpactPoint, Trajectory, detect_impact


def rk4_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, h: float):
    """Classical fourth-order Runge-Kutta step for an autonomous system."""
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def deterministic_trajectory(
    scenario: Scenario,
    *,
    v_ref: Optional[float] = None,
    step: Optional[float] = None,
) -> Trajectory:
    """
    Noise-free arc from the mean launch state, integrated with RK4.

    Serves as the point-mass reference for the moment engine: with v_ref set
    to the launch speed it solves the same frozen-speed equations.

    Args:
        scenario: Scenario (noise and canards are ignored)
        v_ref: Frozen reference speed for every 1/V factor
        step: Step length; defaults to the scenario step

    Returns:
        Trajectory recorded every `integration.record_every` steps
    """
    params, wind = scenario.projectile, scenario.wind
    h = step or scenario.integration.step
    every = scenario.integration.record_every
    n_steps = int(math.ceil(scenario.integration.max_span / h - 1e-9))

    def rhs(y: np.ndarray) -> np.ndarray:
        s = MlmState.from_array(y)
        return mlm_drift(s, params, wind, v_ref=v_ref).as_array()

    y = mean_state(scenario.initial).as_array()
    taus, rows = [0.0], [y]
    impact: Optional[ImpactPoint] = None
    for k in range(n_steps):
        s0 = MlmState.from_array(y)
        y_next = rk4_step(rhs, y, h)
        falling = descent_rate(s0, params, v_ref) >= 0
        impact = detect_impact(
            (k * h, s0), ((k + 1) * h, MlmState.from_array(y_next)), falling
        )
        y = y_next
        if impact is not None or (k + 1) % every == 0:
            taus.append((k + 1) * h)
            rows.append(y)
        if impact is not None:
            break

    return Trajectory(
        tau=np.array(taus),
        states=np.array(rows),
        impact=impact,
        status="impact" if impact is not None else "horizon",
    )
