"""Quaternion and SO(3) helpers.

Quaternions are scalar-first ``[w, x, y, z]`` and represent the body-to-navigation
rotation, so ``v_nav = dcm_from_quat(q) @ v_body``.
"""

from __future__ import annotations

import numpy as np


def skew(v):
    """Cross-product matrix, ``skew(a) @ b == np.cross(a, b)``."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def quat_multiply(p, q):
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ]
    )


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_from_rotvec(phi):
    """Exact exponential map of a rotation vector."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-8:
        # second-order series keeps the result accurate near zero
        half = 0.5 * phi
        q = np.array([1.0 - 0.125 * angle**2, *half * (1.0 - angle**2 / 24.0)])
        return q / np.linalg.norm(q)
    axis = phi / angle
    return np.array([np.cos(0.5 * angle), *(np.sin(0.5 * angle) * axis)])


def rotvec_from_quat(q):
    q = quat_normalize(q)
    if q[0] < 0.0:
        q = -q
    s = np.linalg.norm(q[1:])
    if s < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(s, q[0])
    return angle * q[1:] / s


def dcm_from_quat(q):
    w, x, y, z = q
    return np.array(
        [
            [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ]
    )


def quat_from_euler(roll, pitch, yaw):
    """ZYX (yaw, pitch, roll) Euler angles to quaternion."""
    cr, sr = np.cos(0.5 * roll), np.sin(0.5 * roll)
    cp, sp = np.cos(0.5 * pitch), np.sin(0.5 * pitch)
    cy, sy = np.cos(0.5 * yaw), np.sin(0.5 * yaw)
    return np.array(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
    )


def euler_from_quat(q):
    """Quaternion to ZYX Euler angles ``(roll, pitch, yaw)``."""
    w, x, y, z = q
    roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = np.arcsin(np.clip(2 * (w * y - z * x), -1.0, 1.0))
    yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return np.array([roll, pitch, yaw])


def left_jacobian(phi):
    """Left Jacobian of SO(3) at rotation vector ``phi``."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < 1e-6:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    a2 = angle * angle
    return (
        np.eye(3)
        + (1.0 - np.cos(angle)) / a2 * K
        + (angle - np.sin(angle)) / (a2 * angle) * K @ K
    )
