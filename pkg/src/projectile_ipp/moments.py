"""Mean-field moment propagation of the stochastic projectile model.

Pitch enters the drift through cos and sin, so the state is augmented with
d+ = exp(j theta) and d- = exp(-j theta). The drift then becomes polynomial
in the 14 states, and the Ito equations for a retained set of first and
second moments close once every remaining third-order moment is factored
into retained ones.

The retained set and the drift are compiled once per scenario into a table
of (target moment, coefficient, factor moments) rows. The march evaluates the
table in a compiled kernel; MomentSystem.rhs is the numpy form of the same
sum.
"""

import logging
import math
import time
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .dynamics import SEC_EPS, SPEED_EPS, aero_constants
from .errors import (
    HorizonExceededError,
    SingularityError,
    UnsupportedMomentOrderError,
)
from .instrumentation import get_tracer
from .kernels import (
    MARCH_HORIZON,
    MARCH_NONFINITE,
    MARCH_SEC,
    MARCH_SPEED,
    march_moments,
)
from .scenario import (
    InitialDistribution,
    NoiseModel,
    ProjectileParams,
    Scenario,
    WindModel,
)

logger = logging.getLogger(__name__)
tracer = get_tracer(__name__)

MOMENT_STATES = (
    "x", "y", "z", "phi", "theta", "psi", "V", "v", "w", "p", "q", "r", "d+", "d-",
)  # fmt: skip
X, Y, Z, PHI, THETA, PSI, V, VT, WT, P, Q, R, DP, DM = range(14)

Key = Tuple[int, ...]

_RATE_PAIRS: Tuple[Key, ...] = ((VT, P), (WT, P), (P, Q), (P, R))
_DIAGONALS: Tuple[Key, ...] = tuple((i, i) for i in range(14))
_DELTA_PAIRS: Tuple[Key, ...] = tuple(
    (s, d) for s in (PSI, WT, Q, X, Y, Z) for d in (DP, DM)
)
_COORDINATE_PAIRS: Tuple[Key, ...] = ((Y, VT), (Z, WT), (X, Z), (Y, Z))

# Greedy extraction priority for third-order moments.
EXTRACTION_ORDER = _RATE_PAIRS + _DIAGONALS + _DELTA_PAIRS + _COORDINATE_PAIRS

RETAINED: Tuple[Key, ...] = (
    tuple((i,) for i in range(14))
    + _DIAGONALS
    + _DELTA_PAIRS
    + _COORDINATE_PAIRS
    + _RATE_PAIRS
)
# Slot 0 holds the constant moment <1>.
INDEX: Dict[Key, int] = {(): 0, **{key: i + 1 for i, key in enumerate(RETAINED)}}
N_SLOTS = len(INDEX)

_MARCH_FAILURES = {
    MARCH_SEC: "1/cos(theta) mean-field term: <d+> + <d-> vanished",
    MARCH_SPEED: "reference speed vanished in 1/V terms",
    MARCH_NONFINITE: "moment state non-finite",
}


def monomial(*names: str) -> Tuple[int, ...]:
    """
    Multi-index (14 exponents) of a product of named states.

    Example:
        >>> monomial("d+", "q", "q")[12:]
        (1, 0)
    """
    exponents = [0] * 14
    for name in names:
        exponents[MOMENT_STATES.index(name)] += 1
    return tuple(exponents)


def key_name(key: Key) -> str:
    return "*".join(MOMENT_STATES[i] for i in key) or "1"


def _key_from_multi_index(exponents: Sequence[int]) -> Key:
    if len(exponents) != 14 or any(e < 0 for e in exponents):
        raise ValueError("multi-index needs 14 non-negative exponents")
    return tuple(i for i, e in enumerate(exponents) for _ in range(int(e)))


def _reduce(key: Key) -> Key:
    """Cancel d+ d- pairs, which multiply to exactly 1."""
    counts = Counter(key)
    pairs = min(counts[DP], counts[DM])
    counts[DP] -= pairs
    counts[DM] -= pairs
    return tuple(sorted(counts.elements()))


def _remove(key: Key, part: Key) -> Optional[Key]:
    rest = list(key)
    for index in part:
        if index not in rest:
            return None
        rest.remove(index)
    return tuple(rest)


@lru_cache(maxsize=None)
def factor_plan(key: Key) -> Tuple[Key, ...]:
    """
    Retained moments whose product approximates the moment of `key`.

    Raises:
        UnsupportedMomentOrderError: If the reduced order exceeds 3.
    """
    key = _reduce(tuple(sorted(key)))
    if len(key) > 3:
        raise UnsupportedMomentOrderError(
            f"moment <{key_name(key)}> has order {len(key)} > 3"
        )
    if not key:
        return ()
    if key in INDEX:
        return (key,)
    if len(key) == 2:
        return ((key[0],), (key[1],))
    for pair in EXTRACTION_ORDER:
        rest = _remove(key, pair)
        if rest is not None:
            return (pair, rest)
    return tuple((i,) for i in key)


@dataclass
class TransformedMoments:
    """Retained moments (complex) plus the frozen reference speed."""

    values: np.ndarray
    v0: float

    def moment(self, *names: str) -> complex:
        key = _reduce(tuple(sorted(MOMENT_STATES.index(n) for n in names)))
        return complex(self.values[INDEX[key]])

    def mean(self, name: str) -> complex:
        return self.moment(name)

    def variance(self, name: str) -> float:
        return float((self.moment(name, name) - self.moment(name) ** 2).real)

    def sd(self, name: str) -> float:
        return math.sqrt(max(self.variance(name), 0.0))

    def mean_cos_theta(self) -> complex:
        return 0.5 * (self.moment("d+") + self.moment("d-"))


class MomentImpactPrediction(NamedTuple):
    mean_x: float
    mean_y: float
    sd_x: float
    sd_y: float
    tau_impact: float


@dataclass
class MomentRun:
    """Recorded moment history; values has shape (n_samples, N_SLOTS)."""

    tau: np.ndarray
    values: np.ndarray
    v0: float
    prediction: MomentImpactPrediction
    duration_seconds: float = 0.0

    def at(self, index: int) -> TransformedMoments:
        return TransformedMoments(values=self.values[index], v0=self.v0)


def closure_factorize(moment: Sequence[int], current: TransformedMoments) -> complex:
    """
    Mean-field value of a moment of total order <= 3.

    Retained moments are returned as stored. Otherwise the largest retained
    factor is extracted greedily (rate pairs, then diagonals, then delta
    pairs, then coordinate pairs) and the remaining states contribute their
    means.

    Args:
        moment: Multi-index of 14 exponents, see monomial()
        current: Moment state to read from

    Returns:
        Complex moment value

    Example:
        >>> closure_factorize(monomial("d+", "q", "q"), mu)
        # == mu.moment("d+") * mu.moment("q", "q")
    """
    value = 1.0 + 0.0j
    for part in factor_plan(_key_from_multi_index(moment)):
        value *= current.values[INDEX[part]]
    return complex(value)


class _Term(NamedTuple):
    state: int
    coef: complex
    factors: Key
    inv_speed: bool = False
    sec: bool = False


def drift_terms(params: ProjectileParams, wind: WindModel) -> List[_Term]:
    """Drift of each transformed state as a sum of monomials."""
    k = aero_constants(params)
    D, g = params.D, params.g
    vw, ww = wind.vw, wind.ww
    terms: List[_Term] = []

    def add(state, coef, factors, inv_speed=False, sec=False):
        if coef != 0:
            terms.append(_Term(state, complex(coef), tuple(sorted(factors)),
                               inv_speed, sec))  # fmt: skip

    # cos(theta) = (d+ + d-)/2, sin(theta) = (d+ - d-)/(2j)
    add(X, D / 2, (DP,))
    add(X, D / 2, (DM,))
    add(Y, D / 2, (PSI, DP))
    add(Y, D / 2, (PSI, DM))
    add(Y, D, (VT,), inv_speed=True)
    add(Z, 0.5j * D, (DP,))
    add(Z, -0.5j * D, (DM,))
    add(Z, D / 2, (WT, DP), inv_speed=True)
    add(Z, D / 2, (WT, DM), inv_speed=True)
    add(PHI, D, (P,), inv_speed=True)
    add(THETA, D, (Q,), inv_speed=True)
    add(PSI, D, (R,), inv_speed=True, sec=True)
    add(V, -k.c_x, (V,))
    add(V, 0.5j * D * g, (DP,), inv_speed=True)
    add(V, -0.5j * D * g, (DM,), inv_speed=True)
    add(VT, -k.c_n, (VT,))
    add(VT, k.c_n * vw, ())
    add(VT, -D, (R,))
    add(WT, -k.c_n, (WT,))
    add(WT, k.c_n * ww, ())
    add(WT, D, (Q,))
    add(WT, D * g / 2, (DP,), inv_speed=True)
    add(WT, D * g / 2, (DM,), inv_speed=True)
    add(P, k.c_dd, (V,))
    add(P, k.c_lp, (P,))
    add(Q, k.c_magnus, (P, VT), inv_speed=True)
    add(Q, -k.c_magnus * vw, (P,), inv_speed=True)
    add(Q, k.c_mq, (Q,))
    add(Q, k.c_restore, (WT,))
    add(Q, -k.c_restore * ww, ())
    add(Q, -k.c_gyro, (P, R), inv_speed=True)
    add(R, k.c_magnus, (P, WT), inv_speed=True)
    add(R, -k.c_magnus * ww, (P,), inv_speed=True)
    add(R, k.c_mq, (R,))
    add(R, -k.c_restore, (VT,))
    add(R, k.c_restore * vw, ())
    add(R, k.c_gyro, (P, Q), inv_speed=True)
    add(DP, 1j * D, (DP, Q), inv_speed=True)
    add(DM, -1j * D, (DM, Q), inv_speed=True)
    return terms


class MomentSystem:
    """Compiled moment equations for one set of parameters, wind and noise."""

    def __init__(self, params: ProjectileParams, wind: WindModel, noise: NoiseModel):
        by_state: Dict[int, List[_Term]] = {}
        for term in drift_terms(params, wind):
            by_state.setdefault(term.state, []).append(term)

        rows = []
        for key in RETAINED:
            target = INDEX[key]
            for state, multiplicity in Counter(key).items():
                rest = list(key)
                rest.remove(state)
                for term in by_state.get(state, []):
                    plan = factor_plan(tuple(rest) + term.factors)
                    slots = [INDEX[p] for p in plan] + [0] * (3 - len(plan))
                    rows.append((target, multiplicity * term.coef,
                                 term.inv_speed, term.sec, *slots))  # fmt: skip

        # Ito correction: only the coordinate channels carry noise.
        for state, amplitude in zip((X, Y, Z), noise.amplitudes()):
            if amplitude > 0:
                diagonal = INDEX[(state, state)]
                rows.append((diagonal, amplitude**2, False, False, 0, 0, 0))

        self.target = np.array([r[0] for r in rows], dtype=int)
        self.coef = np.array([r[1] for r in rows], dtype=complex)
        self.inv_speed = np.array([r[2] for r in rows], dtype=bool)
        self.sec = np.array([r[3] for r in rows], dtype=bool)
        self.slots = np.array([r[4:7] for r in rows], dtype=int)
        logger.debug("compiled %d moment rows over %d slots", len(rows), N_SLOTS)

    def rhs(self, values: np.ndarray, v_ref: float) -> np.ndarray:
        """
        Time derivative of every retained moment.

        Raises:
            SingularityError: If <d+> + <d-> or the reference speed vanishes.
        """
        cos_sum = values[INDEX[(DP,)]] + values[INDEX[(DM,)]]
        if abs(cos_sum) < SEC_EPS:
            raise SingularityError(
                f"1/cos(theta) mean-field term: |<d+> + <d->| = {abs(cos_sum):.3e}"
            )
        if not v_ref > SPEED_EPS:
            raise SingularityError(f"reference speed {v_ref:.3e} in 1/V terms")
        sec_mean = 2.0 / cos_sum
        coef = np.where(self.inv_speed, self.coef / v_ref, self.coef)
        coef = np.where(self.sec, coef * sec_mean, coef)
        contrib = coef * values[self.slots[:, 0]] * values[self.slots[:, 1]]
        contrib *= values[self.slots[:, 2]]
        out = np.bincount(self.target, weights=contrib.real, minlength=N_SLOTS)
        out = out + 1j * np.bincount(
            self.target, weights=contrib.imag, minlength=N_SLOTS
        )
        out[0] = 0.0
        return out


@lru_cache(maxsize=16)
def compile_system(
    params: ProjectileParams, wind: WindModel, noise: NoiseModel
) -> MomentSystem:
    return MomentSystem(params, wind, noise)


def _reference_speed(values: np.ndarray, v0: float, speed_closure: str) -> float:
    if speed_closure == "mean":
        return float(values[INDEX[(V,)]].real)
    return v0


def init_moments(dist: InitialDistribution, scenario: Scenario) -> TransformedMoments:
    """
    Moments of independent Gaussian launch conditions.

    The delta means follow from the Gaussian characteristic function,
    <d+-> = exp(+-j mu_theta - sigma_theta^2 / 2). V is treated as
    independent of the other states with <V^2> = sum of the body-velocity
    second moments.

    Args:
        dist: Initial-condition distribution
        scenario: Scenario (unused beyond consistency with moment_rhs)

    Returns:
        TransformedMoments with V0 equal to the mean launch speed
    """
    mu, sd = dist.means(), dist.sds()
    (mx, my, mz, mphi, mth, mpsi, mu_u, mu_v, mu_w, mp, mq, mr) = mu
    (sx, sy, sz, sphi, sth, spsi, su, sv, sw, sp, sq, sr) = sd

    mean = np.zeros(14, dtype=complex)
    second = np.zeros(14, dtype=complex)
    speed = math.sqrt(mu_u**2 + mu_v**2 + mu_w**2)
    for i, (m, s) in enumerate(zip(
        (mx, my, mz, mphi, mth, mpsi, speed, mu_v, mu_w, mp, mq, mr),
        (sx, sy, sz, sphi, sth, spsi, 0.0, sv, sw, sp, sq, sr),
    )):  # fmt: skip
        mean[i] = m
        second[i] = m * m + s * s
    second[V] = (mu_u**2 + su**2) + (mu_v**2 + sv**2) + (mu_w**2 + sw**2)
    mean[DP] = np.exp(1j * mth - 0.5 * sth**2)
    mean[DM] = np.exp(-1j * mth - 0.5 * sth**2)
    second[DP] = np.exp(2j * mth - 2.0 * sth**2)
    second[DM] = np.exp(-2j * mth - 2.0 * sth**2)

    values = np.zeros(N_SLOTS, dtype=complex)
    values[0] = 1.0
    for key, slot in INDEX.items():
        if len(key) == 1:
            values[slot] = mean[key[0]]
        elif len(key) == 2:
            a, b = key
            values[slot] = second[a] if a == b else mean[a] * mean[b]
    return TransformedMoments(values=values, v0=speed)


def moment_rhs(mu: TransformedMoments, scenario: Scenario) -> np.ndarray:
    """
    Derivative of every retained moment under mean-field closure.

    Args:
        mu: Current moments
        scenario: Scenario providing parameters, wind, noise and speed closure

    Returns:
        Array shaped like mu.values; slot 0 (the constant) has derivative 0
    """
    system = compile_system(scenario.projectile, scenario.wind, scenario.noise)
    v_ref = _reference_speed(mu.values, mu.v0, scenario.integration.speed_closure)
    return system.rhs(mu.values, v_ref)


def _central(values: np.ndarray, a: int, b: int) -> float:
    first = values[INDEX[(a,)]] * values[INDEX[(b,)]]
    return float((values[INDEX[tuple(sorted((a, b)))]] - first).real)


def impact_prediction(
    before: np.ndarray, after: np.ndarray, tau_before: float, h: float
) -> MomentImpactPrediction:
    """
    Impact statistics from the moments on either side of the <z> crossing.

    Means and central second moments are interpolated separately to the
    crossing. The spread then follows the linearised ground intersection:
    a run whose altitude is off by dz lands dz times the descent slope
    dx/dz early or late, so Var x_imp = Var x - 2 s Cov(x, z) + s^2 Var z
    with s = dx/dz across the step, and likewise for y.

    Args:
        before: Moments before the step, with <z> < 0
        after: Moments after the step, with <z> >= 0
        tau_before: Independent variable at `before`
        h: Step length

    Returns:
        MomentImpactPrediction
    """
    z0, z1 = before[INDEX[(Z,)]].real, after[INDEX[(Z,)]].real
    frac = -z0 / (z1 - z0)

    def mean(state: int) -> float:
        a, b = before[INDEX[(state,)]].real, after[INDEX[(state,)]].real
        return a + frac * (b - a)

    def central(a: int, b: int) -> float:
        c0, c1 = _central(before, a, b), _central(after, a, b)
        return c0 + frac * (c1 - c0)

    var_z = central(Z, Z)
    spreads = []
    for state in (X, Y):
        slope = (after[INDEX[(state,)]].real - before[INDEX[(state,)]].real) / (
            z1 - z0
        )
        var = central(state, state) - 2.0 * slope * central(state, Z)
        spreads.append(math.sqrt(max(var + slope * slope * var_z, 0.0)))
    return MomentImpactPrediction(
        mean_x=mean(X),
        mean_y=mean(Y),
        sd_x=spreads[0],
        sd_y=spreads[1],
        tau_impact=tau_before + frac * h,
    )


def integrate_moments(
    scenario: Scenario,
    *,
    random_ic: bool = False,
    step: Optional[float] = None,
) -> MomentRun:
    """
    Propagate moments with RK4 until the mean altitude returns to zero.

    The march runs in a compiled kernel. Rows are recorded at the same tau
    spacing as sample paths, record_every * step.

    Args:
        scenario: Scenario to propagate
        random_ic: Use the initial standard deviations; otherwise start from
                   the point mass at the means
        step: Step length; defaults to integration.moment_step, then to
              integration.step

    Returns:
        MomentRun with the recorded history and the impact prediction

    Raises:
        HorizonExceededError: If <z> never crosses zero within max_span.
        SingularityError: If a mean-field reciprocal vanishes; the message
                          carries the tau of failure.
    """
    settings = scenario.integration
    dist = scenario.initial if random_ic else scenario.initial.point_mass()
    mu0 = init_moments(dist, scenario)
    system = compile_system(scenario.projectile, scenario.wind, scenario.noise)
    closure = settings.speed_closure
    h = step or settings.moment_step or settings.step
    every = max(1, round(settings.record_every * settings.step / h))
    n_steps = int(math.ceil(settings.max_span / h - 1e-9))
    v0 = mu0.v0

    started = time.perf_counter()
    with tracer.start_as_current_span("moments.integrate") as span:
        span.set_attribute("moments.random_ic", random_ic)
        span.set_attribute("moments.step", h)
        span.set_attribute("moments.speed_closure", closure)

        y = mu0.values.copy()
        prev = np.empty_like(y)
        history = np.empty((n_steps // every + 2, N_SLOTS), dtype=complex)
        history_tau = np.empty(n_steps // every + 2)
        status, k, n_rows = march_moments(
            y, prev, system.target, system.coef, system.inv_speed, system.sec,
            system.slots, INDEX[(DP,)], INDEX[(DM,)], INDEX[(V,)], INDEX[(Z,)],
            closure == "mean", v0, h, n_steps, every, history, history_tau,
        )  # fmt: skip

        if status in _MARCH_FAILURES:
            span.add_event("singularity", {"tau": k * h})
            raise SingularityError(f"{_MARCH_FAILURES[status]} at tau = {k * h:.6g}")
        if status == MARCH_HORIZON:
            raise HorizonExceededError(
                f"mean altitude did not return to zero within max_span = "
                f"{settings.max_span}"
            )
        prediction = impact_prediction(prev, y, (k - 1) * h, h)
        span.set_attribute("moments.tau_impact", prediction.tau_impact)
        span.set_attribute("moments.sd_x", prediction.sd_x)
        span.set_attribute("moments.sd_y", prediction.sd_y)

    duration = time.perf_counter() - started
    logger.info(
        "moment impact at tau=%.6g: mean (%.6g, %.6g) sd (%.6g, %.6g) in %.3g s",
        prediction.tau_impact, prediction.mean_x, prediction.mean_y,
        prediction.sd_x, prediction.sd_y, duration,
    )  # fmt: skip
    return MomentRun(
        tau=np.concatenate([[0.0], history_tau[:n_rows]]),
        values=np.vstack([mu0.values[None, :], history[:n_rows]]),
        v0=v0,
        prediction=prediction,
        duration_seconds=duration,
    )


def moment_columns() -> List[str]:
    """CSV columns beyond the summary block: re/im of every retained moment."""
    columns = []
    for key in RETAINED:
        name = key_name(key)
        columns.extend([f"re({name})", f"im({name})"])
    return columns
