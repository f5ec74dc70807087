"""DVL beam geometry, forward beam model and least-squares velocity extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_PITCH = np.deg2rad(20.0)
DEFAULT_YAWS = np.deg2rad([45.0, 135.0, 225.0, 315.0])


class UnobservableVelocityError(ValueError):
    """Fewer than three valid beams were available."""


class DegenerateGeometryError(ValueError):
    """The valid-beam direction matrix is too ill-conditioned to invert."""


@dataclass(frozen=True)
class BeamGeometry:
    pitch_angle: float
    yaw_angles: np.ndarray
    direction_matrix: np.ndarray = field(repr=False)


@dataclass
class DvlBeams:
    """One DVL ping: along-beam velocities and per-beam validity flags."""

    time: float
    beams: np.ndarray
    validity: np.ndarray = field(default_factory=lambda: np.ones(4, dtype=bool))

    def __post_init__(self):
        self.beams = np.asarray(self.beams, dtype=float)
        self.validity = np.asarray(self.validity, dtype=bool)
        if self.beams.shape != (4,) or self.validity.shape != (4,):
            raise ValueError("DvlBeams expects 4 beams and 4 validity flags")
        if not np.all(np.isfinite(self.beams)):
            raise ValueError("beam velocities must be finite")


def make_geometry(pitch_angle=DEFAULT_PITCH, yaw_angles=DEFAULT_YAWS):
    """Build a four-beam geometry.

    Parameters
    ----------
    pitch_angle : float
        Beam tilt from the vehicle vertical axis, radians. Must lie strictly
        inside ``(0, pi/2)``.
    yaw_angles : array-like, shape (4,)
        Beam azimuths in the body x-y plane, radians.

    Returns
    -------
    BeamGeometry
        Row ``i`` of ``direction_matrix`` is
        ``[cos(yaw_i) sin(pitch), sin(yaw_i) sin(pitch), cos(pitch)]``.
    """
    pitch_angle = float(pitch_angle)
    if not 0.0 < pitch_angle < 0.5 * np.pi:
        raise ValueError(
            f"pitch_angle must be in (0, pi/2), got {pitch_angle!r}; "
            "horizontal velocity is unobservable at the limits"
        )
    yaws = np.asarray(yaw_angles, dtype=float)
    if yaws.shape != (4,):
        raise ValueError("yaw_angles must have exactly 4 entries")
    s, c = np.sin(pitch_angle), np.cos(pitch_angle)
    H = np.column_stack([np.cos(yaws) * s, np.sin(yaws) * s, np.full(4, c)])
    H.setflags(write=False)
    yaws.setflags(write=False)
    return BeamGeometry(pitch_angle, yaws, H)


def beams_from_velocity(v_body, geom):
    """Project a body-frame velocity onto the four beam axes."""
    return geom.direction_matrix @ np.asarray(v_body, dtype=float)


def ls_velocity(beams, geom, max_condition=1e8):
    """Least-squares body velocity from the valid beams.

    Invalid beams are dropped row-wise. The system is solved through a QR
    factorisation of the remaining direction rows.
    """
    if isinstance(beams, DvlBeams):
        y, valid = beams.beams, beams.validity
    else:
        y, valid = np.asarray(beams, dtype=float), np.ones(4, dtype=bool)
    if valid.sum() < 3:
        raise UnobservableVelocityError(
            f"need at least 3 valid beams, got {int(valid.sum())}"
        )
    H = geom.direction_matrix[valid]
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > max_condition:
        raise DegenerateGeometryError(f"beam matrix condition number {cond:.3g}")
    Q, R = np.linalg.qr(H)
    return np.linalg.solve(R, Q.T @ y[valid])


def ls_covariance(geom, sigma):
    """Velocity error covariance of the 4-beam LS solution for i.i.d. beam noise."""
    H = geom.direction_matrix
    return sigma**2 * np.linalg.inv(H.T @ H)


def corrupt_beams(true_beams, bias=None, scale=None, sigma=0.0, rng_seed=None):
    """Apply per-beam scale, bias and white noise: ``scale*y + bias + eta``.

    ``rng_seed`` may be an integer seed or a ``numpy.random.Generator``;
    passing a generator lets a caller draw a long sequence from one stream.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    y = np.asarray(true_beams, dtype=float)
    bias = np.zeros(4) if bias is None else np.asarray(bias, dtype=float)
    scale = np.ones(4) if scale is None else np.asarray(scale, dtype=float)
    rng = np.random.default_rng(rng_seed)
    noise = sigma * rng.standard_normal(y.shape) if sigma > 0 else np.zeros_like(y)
    return scale * y + bias + noise
