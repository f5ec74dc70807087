import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepdvl.ins import GRAVITY, ImuSample, NavState, attitude_update, propagate, velocity_update
from deepdvl.rotation import (
    dcm_from_quat,
    euler_from_quat,
    left_jacobian,
    quat_from_euler,
    quat_from_rotvec,
    quat_multiply,
    rotvec_from_quat,
    skew,
)
from deepdvl.sim import TrajectoryProfile, generate

rotvecs = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=3, max_size=3).map(np.array)


class TestRotation:
    @given(rotvecs)
    def test_exp_log_round_trip(self, phi):
        if np.linalg.norm(phi) >= np.pi:
            phi = phi / np.linalg.norm(phi) * 3.0
        np.testing.assert_allclose(rotvec_from_quat(quat_from_rotvec(phi)), phi, atol=1e-10)

    @given(rotvecs)
    def test_dcm_is_rotation(self, phi):
        C = dcm_from_quat(quat_from_rotvec(phi))
        np.testing.assert_allclose(C @ C.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(C) == pytest.approx(1.0, abs=1e-12)

    def test_skew_is_cross_product(self, rng):
        a, b = rng.normal(size=(2, 3))
        np.testing.assert_allclose(skew(a) @ b, np.cross(a, b))

    def test_euler_round_trip(self):
        angles = np.array([0.1, -0.2, 2.5])
        np.testing.assert_allclose(euler_from_quat(quat_from_euler(*angles)), angles, atol=1e-12)

    def test_left_jacobian_finite_difference(self, rng):
        # exp(phi + d) ~= exp(J_l(phi) d) exp(phi)
        phi = rng.normal(size=3) * 0.7
        d = 1e-6 * rng.normal(size=3)
        lhs = dcm_from_quat(quat_from_rotvec(phi + d))
        rhs = dcm_from_quat(quat_from_rotvec(left_jacobian(phi) @ d)) @ dcm_from_quat(quat_from_rotvec(phi))
        np.testing.assert_allclose(lhs, rhs, atol=1e-11)


class TestAttitudeUpdate:
    def test_zero_rate_keeps_attitude(self):
        q = quat_from_euler(0.1, 0.2, 0.3)
        np.testing.assert_allclose(attitude_update(q, np.zeros(3), 0.01), q, atol=1e-15)

    def test_quarter_turn_yaw(self):
        q = attitude_update(np.array([1.0, 0, 0, 0]), [0, 0, np.pi / 2], 1.0)
        assert euler_from_quat(q)[2] == pytest.approx(np.pi / 2, abs=1e-9)

    def test_forward_backward_round_trip(self, rng):
        q0 = quat_from_euler(0.05, -0.1, 1.0)
        rates = rng.normal(scale=0.3, size=(1000, 3))
        q = q0
        for w in rates:
            q = attitude_update(q, w, 0.01)
        # undo: q_k = q_{k+1} exp(-w dt)
        for w in rates[::-1]:
            q = attitude_update(q, -w, 0.01)
        assert min(np.linalg.norm(q - q0), np.linalg.norm(q + q0)) < 1e-7

    def test_norm_preserved_over_long_run(self, rng):
        q = np.array([1.0, 0, 0, 0])
        for w in rng.normal(scale=1.0, size=(20_000, 3)):
            q = attitude_update(q, w, 0.01)
        assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("dt", [0.0, -0.01])
    def test_bad_dt(self, dt):
        with pytest.raises(ValueError):
            attitude_update(np.array([1.0, 0, 0, 0]), np.zeros(3), dt)
        with pytest.raises(ValueError):
            velocity_update(np.zeros(3), np.array([1.0, 0, 0, 0]), np.zeros(3), dt)


class TestVelocityUpdate:
    level = np.array([1.0, 0.0, 0.0, 0.0])

    def test_hover(self):
        dv = velocity_update(np.zeros(3), self.level, [0, 0, -9.81], 0.01, gravity=9.81)
        np.testing.assert_array_equal(dv, 0.0)

    def test_forward_push(self):
        dv = velocity_update(np.zeros(3), self.level, [1, 0, -9.81], 0.01, gravity=9.81)
        np.testing.assert_allclose(dv, [0.01, 0, 0], atol=1e-15)

    def test_yawed_push_goes_east(self):
        q = quat_from_euler(0, 0, np.pi / 2)
        dv = velocity_update(np.zeros(3), q, [1, 0, -9.81], 0.01, gravity=9.81)
        np.testing.assert_allclose(dv, [0, 0.01, 0], atol=1e-15)


def _run(state, samples, dt):
    for s in samples:
        state = propagate(state, s, dt)
    return state


class TestPropagate:
    def test_stationary_with_compensated_bias(self):
        ba, bg = np.array([0.01, -0.02, 0.005]), np.array([1e-3, 2e-3, -1e-3])
        s = NavState(accel_bias=ba, gyro_bias=bg)
        sample = ImuSample(0.0, np.array([0, 0, -GRAVITY]) + ba, bg.copy())
        out = _run(s, [sample] * 10_000, 0.01)
        assert np.linalg.norm(out.position) < 1e-6
        assert np.linalg.norm(out.velocity) < 1e-6

    def test_constant_velocity(self):
        s = NavState(velocity=np.array([1.0, 0, 0]))
        out = _run(s, [ImuSample(0.0, np.array([0, 0, -GRAVITY]), np.zeros(3))] * 40_000, 0.01)
        assert out.position[0] == pytest.approx(400.0, abs=1e-6)
        assert out.time == pytest.approx(400.0, abs=1e-9)

    def test_uncompensated_accel_bias_double_integration(self):
        b = 0.001
        out = _run(NavState(), [ImuSample(0.0, np.array([b, 0, -GRAVITY]), np.zeros(3))] * 10_000, 0.01)
        t = 100.0
        assert out.velocity[0] == pytest.approx(b * t, rel=1e-9)
        assert out.position[0] == pytest.approx(0.5 * b * t * t, rel=1e-9)

    def test_tracks_analytic_trajectory(self):
        tr = generate(TrajectoryProfile(kind="lawnmower", duration=400.0))
        s = NavState(position=tr.position[0], velocity=tr.velocity[0], attitude=tr.attitude[0])
        for k in range(len(tr.specific_force)):
            s = propagate(s, ImuSample(tr.time[k], tr.specific_force[k], tr.angular_rate[k]), tr.dt)
        assert np.max(np.abs(s.velocity - tr.velocity[-1])) < 1e-4

    def test_deterministic(self, rng):
        samples = [ImuSample(0.0, rng.normal(size=3), rng.normal(scale=0.1, size=3)) for _ in range(200)]
        a = _run(NavState(), samples, 0.01)
        b = _run(NavState(), samples, 0.01)
        np.testing.assert_array_equal(a.position, b.position)
        np.testing.assert_array_equal(a.attitude, b.attitude)

    def test_rejects_non_finite_state(self):
        with pytest.raises(ValueError):
            NavState(velocity=np.array([np.nan, 0, 0]))
