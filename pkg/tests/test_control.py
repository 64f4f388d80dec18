"""Tests for canard guidance."""

import json
import math

import numpy as np
import pytest

from projectile_ipp.control import (
    DesiredTrajectory,
    GuidanceController,
    allocate_deflections,
    closed_loop_simulate,
    compute_errors,
    desired_trajectory,
    feedback_law,
    load_desired_trajectory,
)
from projectile_ipp import kernels
from projectile_ipp.dynamics import MlmState
from projectile_ipp.errors import GuidanceRangeError, ScenarioError, TrajectoryFileError
from projectile_ipp.export import write_desired_trajectory
from projectile_ipp.scenario import ControlGains, load_scenario
from projectile_ipp.sde import RandomStream, em_step, simulate_trajectory

GAINS = ControlGains(Kp=-2.0, Kphi=-1.5, Ktheta=0.01, Kpsi=0.015, lookahead=17.0)
ZERO_GAINS = ControlGains(Kp=0.0, Kphi=0.0, Ktheta=0.0, Kpsi=0.0)


def flat_path(y: float = 0.0, z: float = -100.0, length: float = 1000.0):
    return DesiredTrajectory(
        x=np.array([0.0, length]), y=np.array([y, y]), z=np.array([z, z])
    )


def state(**changes) -> MlmState:
    base = MlmState(
        x=0.0, y=0.0, z=-100.0, phi=0.0, theta=0.0, psi=0.0,
        V=400.0, v_t=0.0, w_t=0.0, p_t=0.0, q_t=0.0, r_t=0.0,
    )  # fmt: skip
    return base._replace(**changes)


def quiet_rates(payload: dict) -> dict:
    for name in ("phi", "p", "q", "r"):
        payload["initial"][name] = {"mean": 0.0}
    return payload


class TestGuidanceErrors:
    """Tests for compute_errors."""

    def test_on_path(self):
        """Test a state on the path sees only the lookahead."""
        err = compute_errors(state(), flat_path(), GAINS)
        assert err.e1 == pytest.approx(17.0)
        assert (err.e2, err.e3) == (0.0, 0.0)
        assert err.theta_E == 0.0
        assert err.psi_E == 0.0

    def test_cross_range_offset(self):
        """Test a lateral offset gives psi_E = atan(e2 / e1)."""
        err = compute_errors(state(), flat_path(y=10.0), GAINS)
        assert err.psi_E == pytest.approx(math.atan(10.0 / 17.0))

    def test_angle_of_attack_enters_pitch_error(self):
        """Test theta_E carries the angle of attack."""
        err = compute_errors(state(w_t=4.0), flat_path(), GAINS)
        assert err.alpha == pytest.approx(math.atan(4.0 / math.sqrt(400.0**2 - 16.0)))
        assert err.theta_E == pytest.approx(err.alpha)

    def test_translation_invariance(self):
        """Test shifting the state and the path leaves the errors unchanged."""
        path = DesiredTrajectory(
            x=np.array([0.0, 500.0, 1000.0]),
            y=np.array([0.0, 4.0, 2.0]),
            z=np.array([-100.0, -130.0, -90.0]),
        )
        shifted = DesiredTrajectory(x=path.x + 50.0, y=path.y - 3.0, z=path.z + 7.0)
        here = compute_errors(state(x=200.0, y=1.0, z=-110.0), path, GAINS)
        there = compute_errors(state(x=250.0, y=-2.0, z=-103.0), shifted, GAINS)
        for a, b in zip(here, there):
            assert a == pytest.approx(b)

    def test_out_of_range(self):
        """Test strict lookups beyond the path raise."""
        with pytest.raises(GuidanceRangeError):
            compute_errors(state(x=995.0), flat_path(), GAINS)
        err = compute_errors(state(x=995.0), flat_path(), GAINS, strict=False)
        assert err.e3 == 0.0


class TestFeedbackLaw:
    """Tests for the guidance law and deflection allocation."""

    def test_allocation_identities(self):
        """Test the four deflections recover the three channel commands."""
        lam = allocate_deflections(0.01, 0.03, -0.02)
        assert lam[0] + lam[2] == pytest.approx(2 * 0.03)
        assert lam[1] + lam[3] == pytest.approx(2 * -0.02)
        assert lam[2] - lam[0] == pytest.approx(2 * 0.01)
        assert lam[1] - lam[3] == pytest.approx(2 * 0.01)

    def test_channel_commands(self, nominal):
        """Test e_phi takes the roll rate p_t in rad/s as it stands."""
        s = state(phi=0.2, p_t=0.001)
        err = compute_errors(s, flat_path(y=5.0, z=-90.0), GAINS)
        command = feedback_law(s, err, GAINS, nominal.projectile)
        assert command.e_phi == pytest.approx(-2.0 * 0.001 - 1.5 * 0.2)
        assert command.e_theta == pytest.approx(0.01 * err.theta_E)
        assert command.e_psi == pytest.approx(0.015 * err.psi_E)

    def test_zero_gains_zero_deflection(self, nominal):
        """Test zero gains command no deflection."""
        s = state(phi=0.3, p_t=0.01)
        err = compute_errors(s, flat_path(y=20.0), ZERO_GAINS)
        command = feedback_law(s, err, ZERO_GAINS, nominal.projectile)
        assert np.all(command.lambdas == 0.0)
        assert not command.saturated

    def test_clamping(self, nominal):
        """Test large commands clamp to the deflection limit."""
        s = state(phi=1.0, p_t=0.01)
        err = compute_errors(s, flat_path(), GAINS)
        command = feedback_law(s, err, GAINS, nominal.projectile)
        assert command.saturated
        assert np.all(np.abs(command.lambdas) <= GAINS.deflection_limit)
        assert np.isclose(np.max(np.abs(command.lambdas)), GAINS.deflection_limit)

    def test_batched_saturation_flags(self, nominal):
        """Test saturation is reported per run."""
        s = MlmState.from_array(
            np.stack([state().as_array(), state(phi=1.0, p_t=0.01).as_array()])
        )
        err = compute_errors(s, flat_path(), GAINS)
        command = feedback_law(s, err, GAINS, nominal.projectile)
        assert command.lambdas.shape == (2, 4)
        assert command.saturated.tolist() == [False, True]

    def test_roll_yields_to_steering(self, nominal):
        """Test roll priority keeps the pitch command and clips roll to the rest."""
        steer = GAINS.model_copy(update={"Ktheta": 0.5})
        s = state(phi=1.0)
        err = compute_errors(s, flat_path(z=-90.0), steer)
        e_theta = 0.5 * err.theta_E
        command = feedback_law(s, err, steer, nominal.projectile)
        lam = command.lambdas
        assert command.saturated
        assert abs(command.e_phi) == pytest.approx(0.35 - abs(e_theta))
        assert lam[0] + lam[2] == pytest.approx(2 * e_theta)

        greedy = steer.model_copy(update={"roll_priority": False})
        lam = feedback_law(s, err, greedy, nominal.projectile).lambdas
        assert lam[0] + lam[2] == pytest.approx(0.0)

    @pytest.mark.parametrize("roll_priority", [True, False])
    def test_compiled_command_matches_reference(self, nominal, roll_priority):
        """Test the compiled guidance step reproduces errors and deflections."""
        gains = GAINS.model_copy(
            update={"Ktheta": 0.3, "roll_priority": roll_priority}
        )
        path = DesiredTrajectory(
            x=np.array([0.0, 500.0, 1000.0]),
            y=np.array([0.0, 4.0, 2.0]),
            z=np.array([-100.0, -130.0, -90.0]),
        )
        s = state(x=200.0, y=1.0, z=-110.0, phi=0.4, v_t=2.0, w_t=-3.0, p_t=0.2)
        err = compute_errors(s, path, gains)
        expected = feedback_law(s, err, gains, nominal.projectile)
        lam, out = np.zeros(4), np.zeros(5)
        saturated = kernels.command(
            s.as_array(), path.x, path.y, path.z, kernels.pack_gains(gains), lam, out
        )
        assert saturated == bool(expected.saturated)
        assert np.allclose(lam, expected.lambdas, rtol=1e-12, atol=1e-12)
        assert np.allclose(out, [err.e1, err.e2, err.e3, err.theta_E, err.psi_E])


class TestDesiredTrajectory:
    """Tests for desired-trajectory files and generation."""

    def test_file_round_trip(self, tmp_path):
        """Test a written path loads back."""
        path = DesiredTrajectory(
            x=np.array([0.0, 10.0, 25.5]),
            y=np.array([0.0, 0.25, -1.0]),
            z=np.array([0.0, -3.0, -4.125]),
        )
        target = tmp_path / "desired.csv"
        write_desired_trajectory(target, path)
        loaded = load_desired_trajectory(target)
        assert np.allclose(loaded.x, path.x)
        assert np.allclose(loaded.z, path.z)
        assert target.read_text().splitlines()[0] == "x,y,z"

    def test_non_monotone_x(self, tmp_path):
        """Test x must strictly increase."""
        target = tmp_path / "bad.csv"
        target.write_text("x,y,z\n0,0,0\n5,0,0\n5,1,1\n")
        with pytest.raises(TrajectoryFileError, match="strictly increase"):
            load_desired_trajectory(target)

    def test_bad_header(self, tmp_path):
        """Test the header must be x,y,z."""
        target = tmp_path / "bad.csv"
        target.write_text("a,b,c\n0,0,0\n1,0,0\n")
        with pytest.raises(TrajectoryFileError, match="header"):
            load_desired_trajectory(target)

    def test_bad_number_and_missing_file(self, tmp_path):
        """Test unreadable values and paths raise TrajectoryFileError."""
        target = tmp_path / "bad.csv"
        target.write_text("x,y,z\n0,0,zero\n")
        with pytest.raises(TrajectoryFileError):
            load_desired_trajectory(target)
        with pytest.raises(TrajectoryFileError, match="cannot read"):
            load_desired_trajectory(tmp_path / "absent.csv")

    def test_extension(self):
        """Test the straight continuation keeps the last slope."""
        path = DesiredTrajectory(
            x=np.array([0.0, 10.0]), y=np.array([0.0, 1.0]), z=np.array([0.0, 2.0])
        )
        longer = path.extended(30.0)
        assert longer.x[-1] == 30.0
        assert longer.y[-1] == pytest.approx(3.0)
        assert longer.z[-1] == pytest.approx(6.0)
        assert path.extended(5.0) is path

    def test_generated_from_reference_arc(self, ballistic):
        """Test the generated path starts at launch and ends past impact."""
        desired = desired_trajectory(ballistic, n_points=101)
        reach = ballistic.projectile.D * ballistic.integration.max_span
        assert desired.x[0] == 0.0
        assert desired.x[-1] == pytest.approx(reach)
        assert np.all(np.diff(desired.x) > 0)
        assert desired.z[100] == pytest.approx(0.0, abs=1e-9)


class TestClosedLoop:
    """Tests for the guidance controller in simulation."""

    def test_zero_gains_match_canard_free_step(self, nominal_payload):
        """Test zero gains and drag-free canards leave the step unchanged."""
        nominal_payload["gains"] = ZERO_GAINS.model_dump()
        nominal_payload["canards"]["c_d0"] = 0.0
        scenario = load_scenario(json.dumps(nominal_payload))
        controller = GuidanceController.for_scenario(scenario, flat_path())
        s = state()
        command = controller(0.0, s)
        dw = np.zeros(3)
        guided = em_step(s, 0.01, None, scenario, command, dw=dw)
        free = em_step(s, 0.01, None, scenario, dw=dw)
        assert np.allclose(guided.as_array(), free.as_array(), rtol=0, atol=1e-12)

    def test_controller_log(self, nominal_payload):
        """Test a recorded run logs one row per step."""
        nominal_payload["integration"].update(max_span=2.0, record_every=10)
        scenario = load_scenario(json.dumps(quiet_rates(nominal_payload)))
        scenario = scenario.for_control()
        controller = GuidanceController.for_scenario(scenario, record=True)
        run = simulate_trajectory(scenario, RandomStream(4), controller)
        assert run.status == "horizon"
        assert len(controller.log) == 200
        assert len(controller.log[0]) == 11
        assert controller.log[1][0] == pytest.approx(0.01)

    def test_requires_canards(self, ballistic):
        """Test closed-loop simulation refuses scenarios without canards."""
        with pytest.raises(ScenarioError, match="canards and gains"):
            closed_loop_simulate(ballistic, 1, 4)

    @pytest.mark.slow
    def test_paired_ensembles(self, nominal_payload):
        """Test both ensembles share substreams and report a trace ratio."""
        nominal_payload["integration"].update(max_span=200.0)
        nominal_payload["initial"]["z"] = {"mean": -10.0}
        nominal_payload["initial"]["theta"] = {"mean": -0.3, "sd": 0.017}
        scenario = load_scenario(json.dumps(quiet_rates(nominal_payload)))
        result = closed_loop_simulate(scenario, RandomStream(8), 6, threads=2)
        assert result.controlled.n_runs == result.uncontrolled.n_runs == 6
        assert result.controlled.base_seed == 8
        assert math.isfinite(result.trace_ratio) and result.trace_ratio > 0

    @pytest.mark.slow
    def test_nominal_guidance_shrinks_dispersion(self, nominal):
        """Test guidance cuts the nominal impact covariance trace below 0.7x."""
        result = closed_loop_simulate(nominal, 7, 300)
        assert result.controlled.stats.n >= 285
        assert result.trace_ratio < 0.7
        assert result.controlled.stats.sd_x < result.uncontrolled.stats.sd_x
