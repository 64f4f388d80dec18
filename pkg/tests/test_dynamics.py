"""Tests for kinematics, the modified linear model and canard aerodynamics."""

import math

import numpy as np
import pytest

from projectile_ipp.dynamics import (
    CanardForces,
    FullKinematicState,
    MlmState,
    aero_constants,
    apply_canards,
    body_rate_matrix,
    canard_forces,
    canard_local_flow,
    descent_rate,
    euler_rate_matrix,
    euler_rates,
    gyro_rotate,
    inertial_velocity,
    is_regular,
    mlm_drift,
    rotation_matrix,
    skew,
)
from projectile_ipp import kernels
from projectile_ipp.errors import DegenerateFlowError, SingularityError
from projectile_ipp.scenario import WindModel


def level_state(**changes) -> MlmState:
    base = MlmState(
        x=0.0, y=0.0, z=-100.0, phi=0.0, theta=0.0, psi=0.0,
        V=400.0, v_t=0.0, w_t=0.0, p_t=0.0, q_t=0.0, r_t=0.0,
    )  # fmt: skip
    return base._replace(**changes)


class TestKinematics:
    """Tests for frame transforms."""

    def test_rotation_matrix_is_orthonormal(self):
        """Test R^T R = I and det R = 1 over random angles."""
        rng = np.random.default_rng(0)
        for phi, theta, psi in rng.uniform(-math.pi, math.pi, size=(10_000, 3)):
            R = rotation_matrix(phi, theta, psi)
            assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)

    def test_euler_rate_inverts_body_rate(self):
        """Test the two rate transforms are inverses away from the pole."""
        rng = np.random.default_rng(1)
        for phi, theta in rng.uniform(-1.4, 1.4, size=(10_000, 2)):
            product = euler_rate_matrix(phi, theta) @ body_rate_matrix(phi, theta)
            assert np.allclose(product, np.eye(3), atol=1e-10)

    def test_euler_rate_singular_at_vertical(self):
        """Test the Euler rate transform refuses cos(theta) = 0."""
        with pytest.raises(SingularityError, match="cos"):
            euler_rate_matrix(0.3, math.pi / 2)

    def test_identity_attitude(self):
        """Test zero angles leave body velocity unchanged."""
        k = FullKinematicState(0.0, 0.0, 0.0, 400.0, 2.0, -1.0, 1.0, 0.5, 0.2)
        assert np.allclose(inertial_velocity(k), [400.0, 2.0, -1.0])
        assert np.allclose(euler_rates(k), [1.0, 0.5, 0.2])

    def test_pitch_up_climbs(self):
        """Test positive pitch gives a negative (upward) z velocity."""
        k = FullKinematicState(0.0, 0.3, 0.0, 100.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        velocity = inertial_velocity(k)
        assert velocity[2] == pytest.approx(-100.0 * math.sin(0.3))

    def test_skew_matches_cross_product(self):
        """Test skew(r) @ f equals r x f."""
        r, f = np.array([0.474, 0.102, -0.05]), np.array([3.0, -1.0, 2.5])
        assert np.allclose(skew(r) @ f, np.cross(r, f), atol=1e-12)


class TestMlmDrift:
    """Tests for the deterministic right-hand side."""

    def test_level_flight_downrange_rate(self, nominal):
        """Test x' = D at zero pitch."""
        drift = mlm_drift(level_state(), nominal.projectile, nominal.wind)
        assert drift.x == pytest.approx(nominal.projectile.D)
        assert drift.y == 0.0

    def test_drift_speed_decay(self, nominal):
        """Test V' = -c_x V at zero pitch."""
        k = aero_constants(nominal.projectile)
        drift = mlm_drift(level_state(), nominal.projectile, nominal.wind)
        assert drift.V == pytest.approx(-k.c_x * 400.0)

    def test_pitch_projection(self, nominal):
        """Test x' = D cos(theta) and z' = -D sin(theta) without cross flow."""
        s = level_state(theta=0.267)
        drift = mlm_drift(s, nominal.projectile, nominal.wind)
        D = nominal.projectile.D
        assert drift.x == pytest.approx(D * math.cos(0.267))
        assert drift.z == pytest.approx(-D * math.sin(0.267))
        assert descent_rate(s, nominal.projectile) == pytest.approx(drift.z)

    def test_gyroscopic_coupling(self, nominal):
        """Test the spin couples q_t and r_t with Ixx D / Iyy."""
        params = nominal.projectile
        s = level_state(p_t=0.1, q_t=0.01)
        k = aero_constants(params)
        with_gyro = mlm_drift(s, params, nominal.wind)
        without = mlm_drift(s, params, nominal.wind, gyroscopic=False)
        assert k.c_gyro == pytest.approx(params.Ixx * params.D / params.Iyy)
        assert with_gyro.r_t - without.r_t == pytest.approx(k.c_gyro / 400 * 0.1 * 0.01)

    def test_v_ref_replaces_reciprocal_speed(self, nominal):
        """Test v_ref equal to V reproduces the free-speed drift."""
        s = level_state(theta=0.2, v_t=1.0, w_t=-2.0, p_t=0.1, q_t=0.01, r_t=0.02)
        free = mlm_drift(s, nominal.projectile, nominal.wind)
        frozen = mlm_drift(s, nominal.projectile, nominal.wind, v_ref=400.0)
        assert np.allclose(free.as_array(), frozen.as_array())

    def test_batched_matches_scalar(self, nominal):
        """Test a batch of states gives the per-state drifts."""
        states = [level_state(theta=t, q_t=0.01 * t) for t in (0.1, 0.2, 0.3)]
        batch = MlmState.from_array(np.array([s.as_array() for s in states]))
        drift = mlm_drift(batch, nominal.projectile, nominal.wind).as_array()
        for row, s in zip(drift, states):
            single = mlm_drift(s, nominal.projectile, nominal.wind).as_array()
            assert np.allclose(row, single)

    def test_vertical_pitch_is_singular(self, nominal):
        """Test cos(theta) = 0 raises."""
        with pytest.raises(SingularityError):
            mlm_drift(level_state(theta=math.pi / 2), nominal.projectile, nominal.wind)

    def test_zero_speed_is_singular(self, nominal):
        """Test V = 0 raises."""
        with pytest.raises(SingularityError):
            mlm_drift(level_state(V=0.0), nominal.projectile, nominal.wind)
        assert not is_regular(level_state(V=0.0))

    def test_gyro_rotation_preserves_magnitude(self, nominal):
        """Test the exact rotation keeps q_t^2 + r_t^2."""
        s = level_state(p_t=0.1, q_t=0.003, r_t=-0.004)
        rotated = gyro_rotate(s, s, nominal.projectile, 5.0)
        assert rotated.q_t**2 + rotated.r_t**2 == pytest.approx(0.005**2)
        assert rotated.q_t != s.q_t


class TestCanards:
    """Tests for canard flow, forces and moments."""

    def test_no_rotation_flow(self, nominal):
        """Test zero rates give the body-axis flow at every canard."""
        s = level_state(v_t=1.5, w_t=-2.0)
        for index in range(4):
            u, v, w = canard_local_flow(s, index, nominal.canards, nominal.projectile)
            assert (u, v, w) == (400.0, 1.5, -2.0)

    def test_pure_spin_flow_is_antisymmetric(self, nominal):
        """Test canards 1 and 3 see opposite w perturbations under body spin."""
        canards = nominal.canards.model_copy(update={"carrier": "body"})
        s = level_state(p_t=50.0)
        _, _, w1 = canard_local_flow(s, 0, canards, nominal.projectile)
        _, _, w3 = canard_local_flow(s, 2, canards, nominal.projectile)
        assert w1 == pytest.approx(-w3)
        assert w1 != 0.0

    def test_zero_incidence_is_pure_drag(self, nominal):
        """Test zero deflection and cross flow gives axial drag only."""
        canards, params = nominal.canards, nominal.projectile
        forces = canard_forces(level_state(), np.zeros(4), canards, params)
        drag = 0.5 * params.rho * 400.0**2 * canards.surfaces[0].area * canards.c_d0
        assert np.allclose(forces.alpha, 0.0)
        assert np.allclose(forces.lift, 0.0)
        assert np.allclose(forces.X, -drag)
        assert np.allclose(forces.Y, 0.0)
        assert np.allclose(forces.Z, 0.0)
        assert np.allclose(forces.mach, 400.0 / canards.speed_of_sound)

    def test_forces_scale_with_dynamic_pressure(self, nominal):
        """Test doubling the flow speed quadruples lift and drag."""
        canards, params = nominal.canards, nominal.projectile
        lam = np.array([0.02, -0.01, 0.03, 0.0])
        slow = canard_forces(level_state(V=200.0, w_t=1.0), lam, canards, params)
        fast = canard_forces(level_state(V=400.0, w_t=2.0), lam, canards, params)
        assert np.allclose(fast.lift, 4.0 * slow.lift)
        assert np.allclose(fast.drag, 4.0 * slow.drag)

    def test_moment_is_lever_arm_cross_force(self, nominal):
        """Test each canard moment equals r x F."""
        canards, params = nominal.canards, nominal.projectile
        s = level_state(v_t=3.0, w_t=-4.0, p_t=0.02, q_t=0.001)
        forces = canard_forces(s, [0.05, -0.02, 0.01, 0.04], canards, params)
        for i, surface in enumerate(canards.surfaces):
            r = np.array([surface.rx, surface.ry, surface.rz])
            f = np.array([forces.X[i], forces.Y[i], forces.Z[i]])
            moment = np.array([forces.L[i], forces.M[i], forces.N[i]])
            assert np.allclose(moment, np.cross(r, f), atol=1e-12)

    def test_positive_incidence_gives_positive_lift(self, nominal):
        """Test L >= 0 when alpha >= 0."""
        forces = canard_forces(
            level_state(), np.full(4, 0.1), nominal.canards, nominal.projectile
        )
        assert np.all(forces.alpha >= 0)
        assert np.all(forces.lift >= 0)

    def test_reversed_flow_raises(self, nominal):
        """Test u_c <= 0 at a canard raises DegenerateFlowError."""
        s = level_state(q_t=-5000.0)
        packed = kernels.pack_model(nominal)
        assert not kernels.flow_regular(
            s.as_array(), packed.surfaces, packed.coefficients
        )
        with pytest.raises(DegenerateFlowError, match="canard 2"):
            canard_forces(s, np.zeros(4), nominal.canards, nominal.projectile)

    def test_deflection_limit(self, nominal):
        """Test deflections beyond the limit are rejected."""
        with pytest.raises(ValueError, match="limit"):
            canard_forces(
                level_state(), [0.5, 0.0, 0.0, 0.0], nominal.canards,
                nominal.projectile, deflection_limit=0.35,
            )  # fmt: skip

    def test_pure_z_force_changes_only_w(self, nominal):
        """Test a pure Z force only feeds the w_t channel."""
        params = nominal.projectile
        zeros = np.zeros(4)
        forces = CanardForces(
            X=zeros, Y=zeros, Z=np.array([1.0, 0.0, 0.0, 0.0]), L=zeros, M=zeros,
            N=zeros, lift=zeros, drag=zeros, alpha=zeros, mach=zeros,
        )  # fmt: skip
        s = level_state()
        drift = mlm_drift(s, params, nominal.wind)
        changed = apply_canards(drift, forces, s, params)
        delta = changed.as_array() - drift.as_array()
        assert delta[8] == pytest.approx(params.D / 400.0 / params.m)
        assert np.count_nonzero(delta) == 1

    def test_fixed_plane_ignores_spin(self, nominal):
        """Test the fixed-plane carrier rolls at -r_t tan(theta), not p_t."""
        assert nominal.canards.carrier == "fixed-plane"
        spinning = level_state(theta=0.3, p_t=400.0, r_t=-1.5)
        still = spinning._replace(p_t=0.0)
        for index in range(4):
            assert canard_local_flow(
                spinning, index, nominal.canards, nominal.projectile
            ) == canard_local_flow(still, index, nominal.canards, nominal.projectile)
        _, _, w1 = canard_local_flow(spinning, 0, nominal.canards, nominal.projectile)
        roll = 1.5 * math.tan(0.3)
        assert w1 == pytest.approx(roll * nominal.canards.surfaces[0].ry)

    def test_symmetric_canards_give_zero_net_roll(self, nominal):
        """Test opposing canards with equal deflections cancel in roll."""
        params = nominal.projectile
        s = level_state(theta=0.2, v_t=3.0, w_t=-4.0)
        forces = canard_forces(s, [0.05, -0.03, 0.05, -0.03], nominal.canards, params)
        assert np.any(forces.L != 0.0)
        assert forces.L.sum() == pytest.approx(0.0, abs=1e-12)
        drift = mlm_drift(s, params, nominal.wind)
        changed = apply_canards(drift, forces, s, params)
        assert changed.p_t == pytest.approx(drift.p_t, abs=1e-9)
        assert changed.q_t != drift.q_t

    def test_compiled_rate_matches_reference(self, nominal):
        """Test the compiled controlled rate equals drift plus canard terms."""
        params = nominal.projectile
        s = level_state(theta=0.2, v_t=3.0, w_t=-4.0, p_t=50.0, q_t=0.5, r_t=-1.5)
        lam = np.array([0.05, -0.02, 0.01, 0.04])
        expected = apply_canards(
            mlm_drift(s, params, nominal.wind),
            canard_forces(s, lam, nominal.canards, params),
            s,
            params,
        )
        packed = kernels.pack_model(nominal)
        out = np.zeros(12)
        status = kernels.rate(
            s.as_array(), lam, True, True, packed.model, packed.surfaces,
            packed.coefficients, out,
        )  # fmt: skip
        assert status == kernels.STEP_OK
        assert np.allclose(out, expected.as_array(), rtol=1e-10, atol=1e-12)


class TestWindShift:
    """Tests for invariance of the rotational dynamics under a wind shift."""

    def test_shifting_wind_and_velocity_keeps_rates(self, nominal):
        """Test shifting (vw, ww) and (v_t, w_t) together leaves the
        attitude, speed and angular-rate drifts unchanged."""
        params = nominal.projectile
        s = level_state(theta=0.2, v_t=1.0, w_t=-2.0, p_t=50.0, q_t=0.5, r_t=-1.5)
        calm = mlm_drift(s, params, WindModel(vw=0.0, ww=0.0))
        shifted = mlm_drift(
            s._replace(v_t=16.0, w_t=13.0), params, WindModel(vw=15.0, ww=15.0)
        )
        for field in ("x", "phi", "theta", "psi", "V", "v_t", "w_t",
                      "p_t", "q_t", "r_t"):  # fmt: skip
            assert getattr(shifted, field) == pytest.approx(getattr(calm, field))
        assert shifted.y - calm.y == pytest.approx(params.D / 400.0 * 15.0)
