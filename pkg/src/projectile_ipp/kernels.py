"""Compiled kernels for sample paths, guidance and the moment march.

Each path kernel works on one state vector in MlmState field order and
mirrors the numpy definitions in dynamics and control term for term. The run
and moment integrators release the GIL, so the ensemble thread pool steps
runs in parallel.
"""

from __future__ import annotations

import cmath
import math
from functools import lru_cache
from typing import TYPE_CHECKING, NamedTuple, Optional

import numpy as np
from numba import njit

from .dynamics import COS_EPS, SEC_EPS, SPEED_EPS, aero_constants

if TYPE_CHECKING:
    from .scenario import ControlGains, Scenario

SCHEMES = {"euler": 0, "gyro-split": 1, "rk4": 2, "exp-rk4": 3}
CARRIERS = {"body": 0, "fixed-plane": 1}

FLYING, IMPACTED, DIVERGED = 0, 1, 2
STEP_OK, STEP_SINGULAR, STEP_DEGENERATE = 0, 1, 2
MARCH_HORIZON, MARCH_CROSSED, MARCH_SEC, MARCH_SPEED, MARCH_NONFINITE = range(5)

# Layout of the packed model vector.
_D, _G, _M, _IXX, _IYY, _RHO, _VW, _WW = range(8)
_CX, _CN, _CDD, _CLP, _CMAG, _CMQ, _CRES, _CGYRO = range(8, 16)
_VREF, _A1, _A2, _A3 = range(16, 20)
MODEL_SIZE = 20

LOG_WIDTH = 11


class PackedModel(NamedTuple):
    """Scenario constants as flat arrays the kernels read."""

    model: np.ndarray
    surfaces: np.ndarray
    coefficients: np.ndarray
    scheme: int


@lru_cache(maxsize=32)
def pack_model(scenario: "Scenario", v_ref: Optional[float] = None) -> PackedModel:
    """
    Flatten parameters, wind, noise and canards for the kernels.

    `surfaces` holds (rx, ry, rz, alpha_sign, area) per canard and
    `coefficients` (c_l_alpha, c_d0, c_d2, c_i, carrier); both are zero when
    the scenario has no canards. A v_ref of 0 means no frozen speed.
    """
    params, wind, noise = scenario.projectile, scenario.wind, scenario.noise
    k = aero_constants(params)
    model = np.zeros(MODEL_SIZE)
    model[:_CX] = (params.D, params.g, params.m, params.Ixx, params.Iyy,
                   params.rho, wind.vw, wind.ww)  # fmt: skip
    model[_CX:_VREF] = k
    model[_VREF] = 0.0 if v_ref is None else v_ref
    model[_A1:] = noise.amplitudes()

    surfaces = np.zeros((4, 5))
    coefficients = np.zeros(5)
    canards = scenario.canards
    if canards is not None:
        for row, surface in zip(surfaces, canards.surfaces):
            row[:] = (surface.rx, surface.ry, surface.rz, surface.alpha_sign,
                      surface.area)  # fmt: skip
        coefficients[:] = (canards.c_l_alpha, canards.c_d0, canards.c_d2,
                           canards.c_i, CARRIERS[canards.carrier])  # fmt: skip
    return PackedModel(model, surfaces, coefficients,
                       SCHEMES[scenario.integration.scheme])  # fmt: skip


def pack_gains(gains: "ControlGains") -> np.ndarray:
    return np.array([gains.Kp, gains.Kphi, gains.Ktheta, gains.Kpsi,
                     gains.lookahead, gains.deflection_limit,
                     1.0 if gains.roll_priority else 0.0])  # fmt: skip


@njit(cache=True)
def _inv_speed(s, mp):
    return 1.0 / (s[6] if mp[_VREF] <= 0.0 else mp[_VREF])


@njit(cache=True)
def is_regular(s):
    for i in range(12):
        if not math.isfinite(s[i]):
            return False
    return abs(math.cos(s[4])) > COS_EPS and s[6] > SPEED_EPS


@njit(cache=True)
def drift(s, mp, gyroscopic, out):
    """Modified linear model rates into `out`; False if s is not regular."""
    if not is_regular(s):
        return False
    D, g = mp[_D], mp[_G]
    inv_v = _inv_speed(s, mp)
    ct, st = math.cos(s[4]), math.sin(s[4])
    dv = s[7] - mp[_VW]
    dw = s[8] - mp[_WW]
    gyro = mp[_CGYRO] * inv_v * s[9] if gyroscopic else 0.0
    out[0] = D * ct
    out[1] = D * ct * s[5] + D * inv_v * s[7]
    out[2] = -D * st + D * ct * inv_v * s[8]
    out[3] = D * inv_v * s[9]
    out[4] = D * inv_v * s[10]
    out[5] = D * inv_v * s[11] / ct
    out[6] = -mp[_CX] * s[6] - D * g * st * inv_v
    out[7] = -mp[_CN] * dv - D * s[11]
    out[8] = -mp[_CN] * dw + D * s[10] + D * g * ct * inv_v
    out[9] = mp[_CDD] * s[6] + mp[_CLP] * s[9]
    out[10] = (mp[_CMAG] * inv_v * s[9] * dv + mp[_CMQ] * s[10]
               + mp[_CRES] * dw - gyro * s[11])  # fmt: skip
    out[11] = (mp[_CMAG] * inv_v * s[9] * dw + mp[_CMQ] * s[11]
               - mp[_CRES] * dv + gyro * s[10])  # fmt: skip
    return True


@njit(cache=True)
def descent_rate(s, mp):
    return mp[_D] * (-math.sin(s[4]) + math.cos(s[4]) * _inv_speed(s, mp) * s[8])


@njit(cache=True)
def _frame_rates(s, carrier):
    if carrier == 1:
        return -s[11] * math.tan(s[4]), s[10], s[11]
    return s[9], s[10], s[11]


@njit(cache=True)
def flow_regular(s, surf, coef):
    """True when every canard root sees positive axial flow."""
    p, q, r = _frame_rates(s, int(coef[4]))
    for i in range(4):
        if not s[6] + q * surf[i, 2] - r * surf[i, 1] > 0.0:
            return False
    return True


@njit(cache=True)
def add_canards(s, lam, mp, surf, coef, out):
    """Add canard force and moment rates to `out`; False on reversed flow."""
    p, q, r = _frame_rates(s, int(coef[4]))
    fx_sum = fy_sum = fz_sum = 0.0
    l_sum = m_sum = n_sum = 0.0
    for i in range(4):
        rx, ry, rz = surf[i, 0], surf[i, 1], surf[i, 2]
        u = s[6] + q * rz - r * ry
        v = s[7] + r * rx - p * rz
        w = s[8] + p * ry - q * rx
        if not u > 0.0:
            return False
        lateral = w if i % 2 == 0 else v
        alpha = lam[i] + surf[i, 3] * math.atan(lateral / u)
        dyn = 0.5 * mp[_RHO] * (u * u + v * v + w * w) * surf[i, 4]
        c_lift = coef[0] * alpha
        lift = dyn * c_lift
        drag = dyn * (coef[1] + coef[2] * alpha * alpha + coef[3] * c_lift * c_lift)
        if i % 2 == 0:
            norm = math.sqrt(u * u + w * w)
            fx = (lift * w - drag * u) / norm
            fy = 0.0
            fz = (-lift * u - drag * w) / norm
        else:
            norm = math.sqrt(u * u + v * v)
            fx = (-lift * v - drag * u) / norm
            fy = (lift * u - drag * v) / norm
            fz = 0.0
        fx_sum += fx
        fy_sum += fy
        fz_sum += fz
        l_sum += ry * fz - rz * fy
        m_sum += rz * fx - rx * fz
        n_sum += rx * fy - ry * fx
    scale = mp[_D] / s[6]
    out[6] += fx_sum / mp[_M] * scale
    out[7] += fy_sum / mp[_M] * scale
    out[8] += fz_sum / mp[_M] * scale
    out[9] += l_sum / mp[_IXX] * scale
    out[10] += m_sum / mp[_IYY] * scale
    out[11] += n_sum / mp[_IYY] * scale
    return True


@njit(cache=True)
def rate(s, lam, controlled, gyroscopic, mp, surf, coef, out):
    if not drift(s, mp, gyroscopic, out):
        return STEP_SINGULAR
    if controlled and not add_canards(s, lam, mp, surf, coef, out):
        return STEP_DEGENERATE
    return STEP_OK


@njit(cache=True)
def _block_generator(s, mp):
    # Frozen linear part of the (q, r, v, w) dynamics in complex form.
    pv = s[9] * _inv_speed(s, mp)
    a = complex(mp[_CMQ], mp[_CGYRO] * pv)
    b = complex(mp[_CMAG] * pv, -mp[_CRES])
    c = complex(0.0, mp[_D])
    d = complex(-mp[_CN], 0.0)
    return a, b, c, d


@njit(cache=True)
def _block_exp(a, b, c, d, h):
    mid = 0.5 * (a + d)
    delta = cmath.sqrt(0.25 * (a - d) * (a - d) + b * c)
    cosh = cmath.cosh(delta * h)
    if abs(delta * h) < 1e-8:
        sinh = complex(h, 0.0)
    else:
        sinh = cmath.sinh(delta * h) / delta
    scale = cmath.exp(mid * h)
    return (scale * (cosh + sinh * (a - mid)), scale * sinh * b,
            scale * sinh * c, scale * (cosh + sinh * (d - mid)))  # fmt: skip


@njit(cache=True)
def _apply_block(e, y, vw, ww):
    xi = complex(y[10], y[11])
    eta = complex(y[7] - vw, y[8] - ww)
    top = e[0] * xi + e[1] * eta
    bottom = e[2] * xi + e[3] * eta
    y[10], y[11] = top.real, top.imag
    y[7], y[8] = bottom.real + vw, bottom.imag + ww


@njit(cache=True)
def _remainder(s, lam, controlled, mp, surf, coef, gen, out):
    status = rate(s, lam, controlled, True, mp, surf, coef, out)
    if status != STEP_OK:
        return status
    xi = complex(s[10], s[11])
    eta = complex(s[7] - mp[_VW], s[8] - mp[_WW])
    top = gen[0] * xi + gen[1] * eta
    bottom = gen[2] * xi + gen[3] * eta
    out[10] -= top.real
    out[11] -= top.imag
    out[7] -= bottom.real
    out[8] -= bottom.imag
    return STEP_OK


@njit(cache=True)
def step(s, lam, controlled, h, scheme, mp, surf, coef, out, work):
    """
    Deterministic step of length h from s into `out`.

    Schemes: 0 explicit Euler, 1 Euler with the spin coupling of (q_t, r_t)
    applied as an exact rotation, 2 classical RK4, 3 RK4 in the Lawson form
    around the exact exponential of the frozen (q, r, v, w) block.
    `work` is a (6, 12) scratch array.
    """
    k1, k2, k3, k4, tmp, acc = work[0], work[1], work[2], work[3], work[4], work[5]
    n = 12
    if scheme <= 1:
        status = rate(s, lam, controlled, scheme == 0, mp, surf, coef, k1)
        if status != STEP_OK:
            return status
        for i in range(n):
            out[i] = s[i] + h * k1[i]
        if scheme == 1:
            angle = mp[_CGYRO] * _inv_speed(s, mp) * s[9] * h
            c, sn = math.cos(angle), math.sin(angle)
            q, r = out[10], out[11]
            out[10] = c * q - sn * r
            out[11] = sn * q + c * r
        return STEP_OK

    if scheme == 2:
        status = rate(s, lam, controlled, True, mp, surf, coef, k1)
        if status != STEP_OK:
            return status
        for i in range(n):
            tmp[i] = s[i] + 0.5 * h * k1[i]
        status = rate(tmp, lam, controlled, True, mp, surf, coef, k2)
        if status != STEP_OK:
            return status
        for i in range(n):
            tmp[i] = s[i] + 0.5 * h * k2[i]
        status = rate(tmp, lam, controlled, True, mp, surf, coef, k3)
        if status != STEP_OK:
            return status
        for i in range(n):
            tmp[i] = s[i] + h * k3[i]
        status = rate(tmp, lam, controlled, True, mp, surf, coef, k4)
        if status != STEP_OK:
            return status
        for i in range(n):
            out[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        return STEP_OK

    if not is_regular(s):
        return STEP_SINGULAR
    vw, ww = mp[_VW], mp[_WW]
    gen = _block_generator(s, mp)
    full = _block_exp(gen[0], gen[1], gen[2], gen[3], h)
    half = _block_exp(gen[0], gen[1], gen[2], gen[3], 0.5 * h)

    status = _remainder(s, lam, controlled, mp, surf, coef, gen, k1)
    if status != STEP_OK:
        return status
    for i in range(n):
        tmp[i] = s[i] + 0.5 * h * k1[i]
    _apply_block(half, tmp, vw, ww)
    status = _remainder(tmp, lam, controlled, mp, surf, coef, gen, k2)
    if status != STEP_OK:
        return status
    tmp[:] = s
    _apply_block(half, tmp, vw, ww)
    for i in range(n):
        tmp[i] += 0.5 * h * k2[i]
    status = _remainder(tmp, lam, controlled, mp, surf, coef, gen, k3)
    if status != STEP_OK:
        return status
    acc[:] = k3
    _apply_block(half, acc, 0.0, 0.0)
    tmp[:] = s
    _apply_block(full, tmp, vw, ww)
    for i in range(n):
        tmp[i] += h * acc[i]
    status = _remainder(tmp, lam, controlled, mp, surf, coef, gen, k4)
    if status != STEP_OK:
        return status

    _apply_block(full, k1, 0.0, 0.0)
    for i in range(n):
        acc[i] = k2[i] + k3[i]
    _apply_block(half, acc, 0.0, 0.0)
    out[:] = s
    _apply_block(full, out, vw, ww)
    for i in range(n):
        out[i] += h / 6.0 * (k1[i] + 2.0 * acc[i] + k4[i])
    return STEP_OK


@njit(cache=True)
def command(s, px, py, pz, gains, lam, err):
    """
    Guidance deflections into `lam` and tracking errors into `err`.

    `gains` is (Kp, Kphi, Ktheta, Kpsi, lookahead, limit, priority). With
    priority set the roll command is limited to the deflection left over by
    the larger of the pitch and yaw commands. Returns whether any unclamped
    channel exceeded the limit.
    """
    limit = gains[5]
    x_target = s[0] + gains[4]
    e1 = x_target - s[0]
    e2 = np.interp(x_target, px, py) - s[1]
    e3 = np.interp(x_target, px, pz) - s[2]
    axial = math.sqrt(max(s[6] * s[6] - s[7] * s[7] - s[8] * s[8], 1e-12))
    theta_e = math.atan(s[8] / axial) - math.atan(e3 / e1)
    psi_e = -math.atan(s[7] / axial) + math.atan(e2 / e1)

    e_phi = gains[0] * s[9] + gains[1] * s[3]
    e_theta = gains[2] * theta_e
    e_psi = gains[3] * psi_e
    saturated = (
        abs(e_theta - e_phi) > limit or abs(e_psi + e_phi) > limit
        or abs(e_theta + e_phi) > limit or abs(e_psi - e_phi) > limit
    )  # fmt: skip
    if gains[6] > 0.0:
        room = limit - min(max(abs(e_theta), abs(e_psi)), limit)
        e_phi = min(max(e_phi, -room), room)
    lam[0] = min(max(e_theta - e_phi, -limit), limit)
    lam[1] = min(max(e_psi + e_phi, -limit), limit)
    lam[2] = min(max(e_theta + e_phi, -limit), limit)
    lam[3] = min(max(e_psi - e_phi, -limit), limit)
    err[0], err[1], err[2], err[3], err[4] = e1, e2, e3, theta_e, psi_e
    return saturated


@njit(cache=True, nogil=True)
def integrate_block(state, k0, n_steps, normals, dt, scheme, mp, surf, coef,
                    controlled, px, py, pz, gains, record_every, samples, log):
    """
    Advance one run through a block of pre-drawn standard normals.

    `state` is updated in place. Samples (tau followed by the 12 states) are
    written every `record_every` steps and at impact when `samples` has rows;
    one guidance row per step goes to `log` when it has rows.

    Returns:
        (status, next step index, samples written, log rows written,
         impact tau, impact x, impact y, saturated steps)
    """  # fmt: skip
    nxt = np.empty(12)
    work = np.empty((6, 12))
    lam = np.zeros(4)
    err = np.zeros(5)
    sqrt_dt = math.sqrt(dt)
    n_samples = 0
    n_log = 0
    saturated = 0
    it = ix = iy = np.nan
    k = k0
    for j in range(normals.shape[0]):
        k = k0 + j
        if k >= n_steps:
            return FLYING, k, n_samples, n_log, it, ix, iy, saturated
        if not is_regular(state):
            return DIVERGED, k, n_samples, n_log, it, ix, iy, saturated
        if controlled:
            if not flow_regular(state, surf, coef):
                return DIVERGED, k, n_samples, n_log, it, ix, iy, saturated
            hit_limit = command(state, px, py, pz, gains, lam, err)
            if hit_limit:
                saturated += 1
            if log.shape[0] > 0:
                log[n_log, 0] = k * dt
                log[n_log, 1:6] = err
                log[n_log, 6:10] = lam
                log[n_log, 10] = 1.0 if hit_limit else 0.0
                n_log += 1

        status = step(state, lam, controlled, dt, scheme, mp, surf, coef, nxt, work)
        if status != STEP_OK:
            return DIVERGED, k, n_samples, n_log, it, ix, iy, saturated
        nxt[0] += mp[_A1] * sqrt_dt * normals[j, 0]
        nxt[1] += mp[_A2] * sqrt_dt * normals[j, 1]
        nxt[2] += mp[_A3] * sqrt_dt * normals[j, 2]
        for i in range(12):
            if not math.isfinite(nxt[i]):
                return DIVERGED, k, n_samples, n_log, it, ix, iy, saturated

        hit = descent_rate(state, mp) >= 0.0 and state[2] < 0.0 and nxt[2] >= 0.0
        if hit:
            frac = -state[2] / (nxt[2] - state[2])
            it = (k + frac) * dt
            ix = state[0] + frac * (nxt[0] - state[0])
            iy = state[1] + frac * (nxt[1] - state[1])
        state[:] = nxt
        if samples.shape[0] > 0 and (hit or (k + 1) % record_every == 0):
            samples[n_samples, 0] = (k + 1) * dt
            samples[n_samples, 1:] = state
            n_samples += 1
        if hit:
            return IMPACTED, k + 1, n_samples, n_log, it, ix, iy, saturated
    return FLYING, k + 1, n_samples, n_log, it, ix, iy, saturated


@njit(cache=True)
def moment_rate(values, target, coef, inv_speed, sec, slots, dp_slot, dm_slot,
                v_ref, out):
    """Moment derivatives into `out`; 0, or MARCH_SEC / MARCH_SPEED."""  # fmt: skip
    cos_sum = values[dp_slot] + values[dm_slot]
    if abs(cos_sum) < SEC_EPS:
        return MARCH_SEC
    if not v_ref > SPEED_EPS:
        return MARCH_SPEED
    sec_mean = 2.0 / cos_sum
    out[:] = 0.0
    for i in range(target.shape[0]):
        c = coef[i]
        if inv_speed[i]:
            c = c / v_ref
        if sec[i]:
            c = c * sec_mean
        out[target[i]] += c * values[slots[i, 0]] * values[slots[i, 1]] * values[
            slots[i, 2]
        ]
    out[0] = 0.0
    return 0


@njit(cache=True)
def _moment_stage(y, target, coef, inv_speed, sec, slots, dp_slot, dm_slot, v_slot,
                  mean_closure, v0, out):  # fmt: skip
    v_ref = y[v_slot].real if mean_closure else v0
    return moment_rate(y, target, coef, inv_speed, sec, slots, dp_slot, dm_slot,
                       v_ref, out)  # fmt: skip


@njit(cache=True, nogil=True)
def march_moments(y, prev, target, coef, inv_speed, sec, slots, dp_slot, dm_slot,
                  v_slot, z_slot, mean_closure, v0, h, n_steps, every, history,
                  history_tau):  # fmt: skip
    """
    RK4 march of the moment vector `y` (in place) until <z> crosses zero.

    `prev` receives the moments before the last step. Rows are appended to
    `history` every `every` steps and at the crossing.

    Returns:
        (MARCH_* status, step index reached, history rows written)
    """
    size = y.shape[0]
    k1 = np.empty(size, dtype=np.complex128)
    k2 = np.empty(size, dtype=np.complex128)
    k3 = np.empty(size, dtype=np.complex128)
    k4 = np.empty(size, dtype=np.complex128)
    tmp = np.empty(size, dtype=np.complex128)
    n_rows = 0
    for k in range(n_steps):
        prev[:] = y
        status = _moment_stage(y, target, coef, inv_speed, sec, slots, dp_slot,
                               dm_slot, v_slot, mean_closure, v0, k1)  # fmt: skip
        if status:
            return status, k, n_rows
        for i in range(size):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        status = _moment_stage(tmp, target, coef, inv_speed, sec, slots, dp_slot,
                               dm_slot, v_slot, mean_closure, v0, k2)  # fmt: skip
        if status:
            return status, k, n_rows
        for i in range(size):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        status = _moment_stage(tmp, target, coef, inv_speed, sec, slots, dp_slot,
                               dm_slot, v_slot, mean_closure, v0, k3)  # fmt: skip
        if status:
            return status, k, n_rows
        for i in range(size):
            tmp[i] = y[i] + h * k3[i]
        status = _moment_stage(tmp, target, coef, inv_speed, sec, slots, dp_slot,
                               dm_slot, v_slot, mean_closure, v0, k4)  # fmt: skip
        if status:
            return status, k, n_rows
        for i in range(size):
            y[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not (math.isfinite(y[i].real) and math.isfinite(y[i].imag)):
                return MARCH_NONFINITE, k, n_rows

        crossed = prev[z_slot].real < 0.0 <= y[z_slot].real
        if crossed or (k + 1) % every == 0:
            history[n_rows] = y
            history_tau[n_rows] = (k + 1) * h
            n_rows += 1
        if crossed:
            return MARCH_CROSSED, k + 1, n_rows
    return MARCH_HORIZON, n_steps, n_rows
