"""Strapdown mechanization in a flat-Earth local-level N/E/D frame."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from deepdvl.rotation import dcm_from_quat, quat_from_rotvec, quat_multiply

GRAVITY = 9.80665


@dataclass(frozen=True)
class ImuSample:
    time: float
    specific_force: np.ndarray
    angular_rate: np.ndarray


@dataclass(frozen=True)
class NavState:
    """Full navigation state. ``attitude`` is the body-to-N/E/D quaternion."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0

    def __post_init__(self):
        for name in ("position", "velocity", "attitude", "accel_bias", "gyro_bias"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"NavState.{name} is not finite")
            object.__setattr__(self, name, arr)

    @property
    def dcm(self):
        return dcm_from_quat(self.attitude)


def _check_dt(dt):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")


def attitude_update(attitude, angular_rate, dt):
    """Right-multiply by the exact exponential of ``angular_rate * dt``."""
    _check_dt(dt)
    dq = quat_from_rotvec(np.asarray(angular_rate, dtype=float) * dt)
    q = quat_multiply(attitude, dq)
    return q / np.linalg.norm(q)


def velocity_update(velocity, attitude, specific_force, dt, gravity=GRAVITY):
    _check_dt(dt)
    g_n = np.array([0.0, 0.0, gravity])
    return velocity + (dcm_from_quat(attitude) @ specific_force + g_n) * dt


def propagate(state, sample, dt, gravity=GRAVITY):
    """Advance ``state`` by one IMU sample.

    The bias-compensated specific force is rotated with the attitude at the
    start of the step, then the attitude is advanced, and position integrates
    the mean of the old and new velocity.
    """
    f = np.asarray(sample.specific_force, dtype=float) - state.accel_bias
    w = np.asarray(sample.angular_rate, dtype=float) - state.gyro_bias
    v_new = velocity_update(state.velocity, state.attitude, f, dt, gravity)
    q_new = attitude_update(state.attitude, w, dt)
    p_new = state.position + 0.5 * (state.velocity + v_new) * dt
    return replace(state, position=p_new, velocity=v_new, attitude=q_new, time=state.time + dt)
