"""Modified linear projectile model, frame kinematics and canard aerodynamics.

Every function here accepts scalar states or states whose fields are arrays
of equal shape, so a batch of runs is integrated with the same code as a
single trajectory. Derivatives are taken with respect to the model's
nondimensional independent variable tau. The angular rates p_t, q_t and r_t
are in rad/s.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import TYPE_CHECKING, Any, NamedTuple, Optional

import numpy as np

from .errors import DegenerateFlowError, SingularityError

if TYPE_CHECKING:
    from .scenario import CanardConfig, ProjectileParams, WindModel

STATE_FIELDS = (
    "x", "y", "z", "phi", "theta", "psi", "V", "v_t", "w_t", "p_t", "q_t", "r_t",
)  # fmt: skip

COS_EPS = 1e-10
SPEED_EPS = 1e-9
SEC_EPS = 1e-9


class MlmState(NamedTuple):
    """Twelve model states; fields are floats or equally shaped arrays."""

    x: Any
    y: Any
    z: Any
    phi: Any
    theta: Any
    psi: Any
    V: Any
    v_t: Any
    w_t: Any
    p_t: Any
    q_t: Any
    r_t: Any

    def as_array(self) -> np.ndarray:
        """Stack components on the last axis: shape (..., 12)."""
        return np.stack(np.broadcast_arrays(*self), axis=-1).astype(float)

    @classmethod
    def from_array(cls, values) -> "MlmState":
        values = np.asarray(values, dtype=float)
        return cls(*(values[..., i] for i in range(12)))


class FullKinematicState(NamedTuple):
    """Attitude, body velocity and body rates of the full rigid-body model."""

    phi: float
    theta: float
    psi: float
    u: float
    v: float
    w: float
    p: float
    q: float
    r: float


class AeroConstants(NamedTuple):
    """Coefficient groups shared by the state and moment equations."""

    c_x: float
    c_n: float
    c_dd: float
    c_lp: float
    c_magnus: float
    c_mq: float
    c_restore: float
    c_gyro: float


class CanardForces(NamedTuple):
    """Per-canard forces, moments and flow; arrays have a trailing axis of 4."""

    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    L: np.ndarray
    M: np.ndarray
    N: np.ndarray
    lift: np.ndarray
    drag: np.ndarray
    alpha: np.ndarray
    mach: np.ndarray

    def total_force(self) -> np.ndarray:
        return np.stack([self.X.sum(-1), self.Y.sum(-1), self.Z.sum(-1)], axis=-1)

    def total_moment(self) -> np.ndarray:
        return np.stack([self.L.sum(-1), self.M.sum(-1), self.N.sum(-1)], axis=-1)


@lru_cache(maxsize=32)
def aero_constants(params: "ProjectileParams") -> AeroConstants:
    """
    Precompute the dimensionless coefficient groups of the linear model.

    Args:
        params: Projectile parameters

    Returns:
        AeroConstants with drag, normal-force, spin-damping, Magnus,
        pitch-damping, restoring and gyroscopic groups
    """
    pr = math.pi * params.rho
    D = params.D
    return AeroConstants(
        c_x=pr * D**3 * params.CX0 / (8.0 * params.m),
        c_n=pr * D**3 * params.CNA / (8.0 * params.m),
        c_dd=pr * D**4 * params.CDD / (8.0 * params.Ixx),
        c_lp=pr * D**5 * params.CLP / (16.0 * params.Ixx),
        c_magnus=pr * D**4 * params.RMCM * params.CYPA / (16.0 * params.Iyy),
        c_mq=pr * D**5 * params.CMQ / (16.0 * params.Iyy),
        c_restore=pr * D**3 * params.RMCP * params.CNA / (8.0 * params.Iyy),
        c_gyro=params.Ixx * D / params.Iyy,
    )


def rotation_matrix(phi: float, theta: float, psi: float) -> np.ndarray:
    """Body-to-fixed direction cosine matrix for a 3-2-1 Euler sequence."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array(
        [
            [ct * cp, sf * st * cp - cf * sp, cf * st * cp + sf * sp],
            [ct * sp, sf * st * sp + cf * cp, cf * st * sp - sf * cp],
            [-st, sf * ct, cf * ct],
        ]
    )


def euler_rate_matrix(phi: float, theta: float) -> np.ndarray:
    """
    Map body rates (p, q, r) to Euler angle rates.

    Raises:
        SingularityError: If |cos(theta)| is below COS_EPS.
    """
    ct = math.cos(theta)
    if abs(ct) < COS_EPS:
        raise SingularityError(f"cos(theta) = {ct:.3e} in Euler rate matrix")
    cf, sf, tt = math.cos(phi), math.sin(phi), math.tan(theta)
    return np.array(
        [
            [1.0, sf * tt, cf * tt],
            [0.0, cf, -sf],
            [0.0, sf / ct, cf / ct],
        ]
    )


def body_rate_matrix(phi: float, theta: float) -> np.ndarray:
    """Inverse of euler_rate_matrix: Euler angle rates to body rates."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    return np.array(
        [
            [1.0, 0.0, -st],
            [0.0, cf, sf * ct],
            [0.0, -sf, cf * ct],
        ]
    )


def skew(r) -> np.ndarray:
    """Cross-product matrix: skew(r) @ f == np.cross(r, f)."""
    rx, ry, rz = r
    return np.array([[0.0, -rz, ry], [rz, 0.0, -rx], [-ry, rx, 0.0]])


def inertial_velocity(k: FullKinematicState) -> np.ndarray:
    """Fixed-frame velocity of the center of mass."""
    return rotation_matrix(k.phi, k.theta, k.psi) @ np.array([k.u, k.v, k.w])


def euler_rates(k: FullKinematicState) -> np.ndarray:
    return euler_rate_matrix(k.phi, k.theta) @ np.array([k.p, k.q, k.r])


def is_regular(s: MlmState) -> np.ndarray:
    """True where the state is finite with cos(theta) and V away from zero."""
    finite = np.all(np.isfinite(s.as_array()), axis=-1)
    with np.errstate(invalid="ignore"):
        return finite & (np.abs(np.cos(s.theta)) > COS_EPS) & (s.V > SPEED_EPS)


def advance(s: MlmState, rate: MlmState, dt: float) -> MlmState:
    """Explicit update s + rate * dt."""
    return MlmState(*(a + b * dt for a, b in zip(s, rate)))


def mlm_drift(
    s: MlmState,
    params: "ProjectileParams",
    wind: "WindModel",
    *,
    v_ref: Optional[float] = None,
    gyroscopic: bool = True,
) -> MlmState:
    """
    Deterministic right-hand side of the modified linear model.

    Args:
        s: Current state (scalar or batched)
        params: Projectile parameters
        wind: Fixed-frame wind
        v_ref: If given, replaces V in every 1/V factor (frozen-speed form)
        gyroscopic: Include the spin coupling between q_t and r_t. The
                    gyro-split integrator turns it off and rotates exactly.

    Returns:
        Derivatives with respect to the independent variable tau, as an MlmState

    Raises:
        SingularityError: If cos(theta) or V underflows anywhere in the batch.
    """
    if not np.all(is_regular(s)):
        raise SingularityError(
            "state is not regular: cos(theta) or V near zero, or non-finite"
        )
    k = aero_constants(params)
    D, g = params.D, params.g
    inv_v = 1.0 / (s.V if v_ref is None else v_ref)
    ct, st = np.cos(s.theta), np.sin(s.theta)
    dv = s.v_t - wind.vw
    dw = s.w_t - wind.ww
    gyro = k.c_gyro * inv_v * s.p_t if gyroscopic else 0.0
    return MlmState(
        x=D * ct,
        y=D * ct * s.psi + D * inv_v * s.v_t,
        z=-D * st + D * ct * inv_v * s.w_t,
        phi=D * inv_v * s.p_t,
        theta=D * inv_v * s.q_t,
        psi=D * inv_v * s.r_t / ct,
        V=-k.c_x * s.V - D * g * st * inv_v,
        v_t=-k.c_n * dv - D * s.r_t,
        w_t=-k.c_n * dw + D * s.q_t + D * g * ct * inv_v,
        p_t=k.c_dd * s.V + k.c_lp * s.p_t,
        q_t=k.c_magnus * inv_v * s.p_t * dv
        + k.c_mq * s.q_t
        + k.c_restore * dw
        - gyro * s.r_t,
        r_t=k.c_magnus * inv_v * s.p_t * dw
        + k.c_mq * s.r_t
        - k.c_restore * dv
        + gyro * s.q_t,
    )


def descent_rate(
    s: MlmState, params: "ProjectileParams", v_ref: Optional[float] = None
):
    """Altitude-channel drift dz/dtau (z points down, so >= 0 means falling)."""
    inv_v = 1.0 / (s.V if v_ref is None else v_ref)
    return params.D * (-np.sin(s.theta) + np.cos(s.theta) * inv_v * s.w_t)


def gyro_rotate(
    stepped: MlmState,
    s: MlmState,
    params: "ProjectileParams",
    dt: float,
    v_ref: Optional[float] = None,
) -> MlmState:
    """
    Rotate (q_t, r_t) of `stepped` by the gyroscopic angle accumulated over dt.

    The angle is taken from the pre-step state `s`; the rotation preserves
    q_t^2 + r_t^2 exactly.
    """
    k = aero_constants(params)
    inv_v = 1.0 / (s.V if v_ref is None else v_ref)
    angle = k.c_gyro * inv_v * s.p_t * dt
    c, sn = np.cos(angle), np.sin(angle)
    q = c * stepped.q_t - sn * stepped.r_t
    r = sn * stepped.q_t + c * stepped.r_t
    return stepped._replace(q_t=q, r_t=r)


def canard_frame_rates(s: MlmState, canards: "CanardConfig"):
    """
    Angular rates (rad/s) of the frame carrying the canards.

    "body" uses the spin p_t directly; "fixed-plane" uses the roll rate of
    the non-rolling frame, -r_t tan(theta). q_t and r_t are shared.
    """
    if canards.carrier == "fixed-plane":
        return -s.r_t * np.tan(s.theta), s.q_t, s.r_t
    return s.p_t, s.q_t, s.r_t


def canard_local_flow(
    s: MlmState, index: int, canards: "CanardConfig", params: "ProjectileParams"
):
    """
    Air velocity at a canard root: (V, v_t, w_t) + omega x r.

    Args:
        s: State
        index: Canard index 0..3 (canards 1..4)
        canards: Canard configuration
        params: Projectile parameters

    Returns:
        Tuple (u_c, v_c, w_c) in ft/s
    """
    surface = canards.surfaces[index]
    p, q, r = canard_frame_rates(s, canards)
    u = s.V + q * surface.rz - r * surface.ry
    v = s.v_t + r * surface.rx - p * surface.rz
    w = s.w_t + p * surface.ry - q * surface.rx
    return u, v, w


def canard_forces(
    s: MlmState,
    lambdas,
    canards: "CanardConfig",
    params: "ProjectileParams",
    *,
    deflection_limit: Optional[float] = None,
) -> CanardForces:
    """
    Lift, drag, forces and moments of the four canards.

    Canards 1 and 3 deflect in the x-z plane, canards 2 and 4 in the x-y
    plane. Incidence is the commanded deflection plus the local flow angle
    times the canard's alpha sign.

    Args:
        s: State
        lambdas: Deflections (rad), shape (4,) or (..., 4)
        canards: Canard configuration
        params: Projectile parameters
        deflection_limit: Optional bound on |lambda|

    Returns:
        CanardForces with a trailing axis of 4

    Raises:
        DegenerateFlowError: If any canard root flow has u_c <= 0.
        ValueError: If a deflection exceeds deflection_limit.
    """
    lam = np.asarray(lambdas, dtype=float)
    if deflection_limit is not None and np.any(np.abs(lam) > deflection_limit):
        raise ValueError(f"canard deflection exceeds limit {deflection_limit}")

    columns = {key: [] for key in CanardForces._fields}
    for index, surface in enumerate(canards.surfaces):
        u, v, w = (np.asarray(c, dtype=float) for c in
                   canard_local_flow(s, index, canards, params))  # fmt: skip
        if np.any(u <= 0):
            raise DegenerateFlowError(
                f"canard {index + 1} root flow u_c = {np.min(u):.3e} <= 0"
            )
        in_xz_plane = index % 2 == 0
        lateral = w if in_xz_plane else v
        alpha = lam[..., index] + surface.alpha_sign * np.arctan(lateral / u)

        speed2 = u * u + v * v + w * w
        dyn = 0.5 * params.rho * speed2 * surface.area
        c_lift = canards.c_l_alpha * alpha
        c_drag = canards.c_d0 + canards.c_d2 * alpha**2 + canards.c_i * c_lift**2
        lift, drag = dyn * c_lift, dyn * c_drag

        if in_xz_plane:
            norm = np.sqrt(u * u + w * w)
            fx = (lift * w - drag * u) / norm
            fy = np.zeros_like(fx)
            fz = (-lift * u - drag * w) / norm
        else:
            norm = np.sqrt(u * u + v * v)
            fx = (-lift * v - drag * u) / norm
            fy = (lift * u - drag * v) / norm
            fz = np.zeros_like(fx)

        rx, ry, rz = surface.rx, surface.ry, surface.rz
        columns["X"].append(fx)
        columns["Y"].append(fy)
        columns["Z"].append(fz)
        columns["L"].append(ry * fz - rz * fy)
        columns["M"].append(rz * fx - rx * fz)
        columns["N"].append(rx * fy - ry * fx)
        columns["lift"].append(lift)
        columns["drag"].append(drag)
        columns["alpha"].append(alpha)
        columns["mach"].append(np.sqrt(speed2) / canards.speed_of_sound)

    return CanardForces(
        **{key: np.stack(np.broadcast_arrays(*vals), axis=-1)
           for key, vals in columns.items()}  # fmt: skip
    )


def apply_canards(
    drift: MlmState,
    forces: CanardForces,
    s: MlmState,
    params: "ProjectileParams",
) -> MlmState:
    """
    Add canard force and moment contributions to a drift.

    Forces and moments are time rates; each contribution is scaled by D/V,
    the only place canard terms change to the model's independent variable.
    """
    scale = params.D / s.V
    fx, fy, fz = np.moveaxis(forces.total_force(), -1, 0)
    ml, mm, mn = np.moveaxis(forces.total_moment(), -1, 0)
    return drift._replace(
        V=drift.V + fx / params.m * scale,
        v_t=drift.v_t + fy / params.m * scale,
        w_t=drift.w_t + fz / params.m * scale,
        p_t=drift.p_t + ml / params.Ixx * scale,
        q_t=drift.q_t + mm / params.Iyy * scale,
        r_t=drift.r_t + mn / params.Iyy * scale,
    )
