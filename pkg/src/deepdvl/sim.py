"""Trajectory, IMU and DVL simulation plus noise-correlation diagnostics.

Truth is generated on a uniform IMU grid. The IMU increments are built so
that one call of :func:`deepdvl.ins.propagate` per sample carries the true
state from epoch ``k`` to ``k + 1``:

* ``omega_k = log(q_k^-1 q_{k+1}) / dt``
* ``f_k = C_k' ((v_{k+1} - v_k) / dt - g)``

so noiseless mechanization reproduces truth to rounding error, and the
finite-difference identity ``dv/dt = C f + g`` holds to O(dt).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from deepdvl.dvl import DvlBeams, beams_from_velocity, corrupt_beams
from deepdvl.ekf import N_STATES, NoiseModel
from deepdvl.ins import GRAVITY, ImuSample
from deepdvl.rotation import dcm_from_quat, quat_conjugate, quat_from_euler, quat_multiply, rotvec_from_quat

PROFILE_KINDS = ("straight", "lawnmower", "sinusoid-heading", "racetrack")
MAX_LATERAL_ACCEL = 0.5 * GRAVITY


@dataclass(frozen=True)
class TrajectoryProfile:
    """Kinematic description of a level-flight AUV track.

    Speed is ``speed * (1 + speed_amplitude * sin(2 pi t / speed_period))``.
    Turning profiles alternate straight legs of ``leg_length`` metres with
    turns at ``turn_rate`` rad/s; ``racetrack`` with ``leg_length = 0`` is a
    constant-rate circle. ``crab_amplitude`` adds a slow heading offset
    between hull and course so the body frame sees lateral velocity.
    """

    kind: str = "lawnmower"
    speed: float = 1.5
    duration: float = 400.0
    leg_length: float = 100.0
    turn_rate: float = 0.05
    heading_amplitude: float = np.deg2rad(30.0)
    heading_period: float = 80.0
    initial_heading: float = 0.0
    speed_amplitude: float = 0.3
    speed_period: float = 60.0
    crab_amplitude: float = np.deg2rad(2.0)
    crab_period: float = 37.0
    depth_amplitude: float = 1.0
    depth_period: float = 120.0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if not 0 <= self.speed_amplitude < 1:
            raise ValueError("speed_amplitude must lie in [0, 1)")
        if self.kind in ("lawnmower", "racetrack"):
            if not self.turn_rate > 0:
                raise ValueError("turning profiles need a positive turn_rate")
            if self.leg_length < 0:
                raise ValueError("leg_length must be non-negative")
            vmax = self.speed * (1 + self.speed_amplitude)
            if vmax * self.turn_rate > MAX_LATERAL_ACCEL:
                raise ValueError("turn rate not achievable: centripetal acceleration too large")
        for name in ("heading_period", "speed_period", "crab_period", "depth_period"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SensorTruth:
    """True kinematics on the IMU grid.

    ``time``, ``position``, ``velocity``, ``attitude`` have ``n + 1`` rows;
    ``specific_force`` and ``angular_rate`` have ``n`` rows, sample ``k``
    acting over ``[time[k], time[k+1])``.
    """

    time: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray
    specific_force: np.ndarray
    angular_rate: np.ndarray
    dt: float
    gravity: float = GRAVITY

    def body_velocity(self):
        C = dcm_stack(self.attitude)
        return np.einsum("kji,kj->ki", C, self.velocity)


@dataclass
class ImuLog:
    time: np.ndarray
    specific_force: np.ndarray
    angular_rate: np.ndarray

    def __len__(self):
        return len(self.time)

    def sample(self, k):
        return ImuSample(self.time[k], self.specific_force[k], self.angular_rate[k])


@dataclass
class ImuNoise:
    """Realised IMU errors, one row per sample."""

    accel_white: np.ndarray
    gyro_white: np.ndarray
    accel_bias: np.ndarray
    gyro_bias: np.ndarray


@dataclass
class DvlLog:
    time: np.ndarray
    beams: np.ndarray
    validity: np.ndarray
    imu_index: np.ndarray = None
    true_beams: np.ndarray = None
    noise: np.ndarray = None

    def __len__(self):
        return len(self.time)

    def ping(self, i):
        return DvlBeams(self.time[i], self.beams[i], self.validity[i])


def dcm_stack(quats):
    w, x, y, z = np.asarray(quats).T
    C = np.empty((len(w), 3, 3))
    C[:, 0, 0] = w * w + x * x - y * y - z * z
    C[:, 0, 1] = 2 * (x * y - w * z)
    C[:, 0, 2] = 2 * (x * z + w * y)
    C[:, 1, 0] = 2 * (x * y + w * z)
    C[:, 1, 1] = w * w - x * x + y * y - z * z
    C[:, 1, 2] = 2 * (y * z - w * x)
    C[:, 2, 0] = 2 * (x * z - w * y)
    C[:, 2, 1] = 2 * (y * z + w * x)
    C[:, 2, 2] = w * w - x * x - y * y + z * z
    return C


def _turn_schedule(profile):
    """Breakpoints ``(times, course)`` of a piecewise-linear course."""
    leg_t = profile.leg_length / profile.speed if profile.speed > 0 else 0.0
    turn_t = np.pi / profile.turn_rate
    times, course = [0.0], [profile.initial_heading]
    sign = 1.0
    while times[-1] < profile.duration:
        if leg_t > 0:
            times.append(times[-1] + leg_t)
            course.append(course[-1])
        times.append(times[-1] + turn_t)
        course.append(course[-1] + sign * np.pi)
        if profile.kind == "lawnmower":
            sign = -sign
    return np.array(times), np.array(course)


def _course(profile, t):
    if profile.kind == "straight":
        return np.full_like(t, profile.initial_heading)
    if profile.kind == "sinusoid-heading":
        return profile.initial_heading + profile.heading_amplitude * np.sin(
            2 * np.pi * t / profile.heading_period
        )
    bt, bc = _turn_schedule(profile)
    return np.interp(t, bt, bc)


def generate(profile, dt=0.01, gravity=GRAVITY):
    """Generate truth for ``profile`` sampled every ``dt`` seconds."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(round(profile.duration / dt))
    if n < 1 or abs(n * dt - profile.duration) > 1e-9 * profile.duration:
        raise ValueError("duration must be a whole number of IMU steps")
    t = np.arange(n + 1) * dt
    speed = profile.speed * (1 + profile.speed_amplitude * np.sin(2 * np.pi * t / profile.speed_period))
    course = _course(profile, t)
    w_depth = 2 * np.pi / profile.depth_period
    climb = profile.depth_amplitude * w_depth * np.cos(w_depth * t)
    vel = np.column_stack([speed * np.cos(course), speed * np.sin(course), climb])
    heading = course + profile.crab_amplitude * np.sin(2 * np.pi * t / profile.crab_period)
    quats = np.array([quat_from_euler(0.0, 0.0, h) for h in heading])

    pos = np.zeros((n + 1, 3))
    pos[1:] = np.cumsum(0.5 * (vel[1:] + vel[:-1]) * dt, axis=0)

    g_n = np.array([0.0, 0.0, gravity])
    C = dcm_stack(quats[:-1])
    accel = (vel[1:] - vel[:-1]) / dt
    f = np.einsum("kji,kj->ki", C, accel - g_n)
    omega = np.array(
        [rotvec_from_quat(quat_multiply(quat_conjugate(quats[k]), quats[k + 1])) / dt for k in range(n)]
    )
    return SensorTruth(t, pos, vel, quats, f, omega, dt, gravity)


def corrupt_imu(truth, noise, rng_seed):
    """Add white noise and random-walk biases to the true IMU increments.

    Returns ``(ImuLog, ImuNoise)``. The bias walk starts from a draw with
    standard deviation ``*_bias_init`` and takes one step per sample.
    """
    rng = np.random.default_rng(rng_seed)
    n = len(truth.specific_force)
    wa = noise.accel_noise * rng.standard_normal((n, 3))
    wg = noise.gyro_noise * rng.standard_normal((n, 3))
    ba0 = noise.accel_bias_init * rng.standard_normal(3)
    bg0 = noise.gyro_bias_init * rng.standard_normal(3)
    ba = ba0 + np.cumsum(noise.accel_bias_rw * rng.standard_normal((n, 3)), axis=0)
    bg = bg0 + np.cumsum(noise.gyro_bias_rw * rng.standard_normal((n, 3)), axis=0)
    log = ImuLog(
        truth.time[:-1].copy(),
        truth.specific_force + ba + wa,
        truth.angular_rate + bg + wg,
    )
    return log, ImuNoise(wa, wg, ba, bg)


def dvl_epochs(truth, dvl_rate):
    imu_rate = 1.0 / truth.dt
    ratio = imu_rate / dvl_rate
    step = int(round(ratio))
    if step < 1 or abs(ratio - step) > 1e-9 * ratio:
        raise ValueError("dvl_rate must divide the IMU rate")
    return np.arange(step, len(truth.time), step)


def emit_dvl(truth, geom, dvl_rate, noise, rng_seed):
    """Beam measurements at ``dvl_rate``.

    Each ping reports the body velocity averaged over the preceding
    ``noise.dvl_average_s`` seconds (instantaneous when zero), projected on
    the beams and corrupted by :func:`deepdvl.dvl.corrupt_beams`.
    """
    idx = dvl_epochs(truth, dvl_rate)
    v_body = truth.body_velocity()
    navg = int(round(noise.dvl_average_s / truth.dt))
    if navg > 0:
        csum = np.vstack([np.zeros(3), np.cumsum(v_body, axis=0)])
        lo = np.maximum(idx - navg + 1, 0)
        v_rep = (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)[:, None]
    else:
        v_rep = v_body[idx]
    true_beams = np.array([beams_from_velocity(v, geom) for v in v_body[idx]])
    reported = np.array([beams_from_velocity(v, geom) for v in v_rep])
    rng = np.random.default_rng(rng_seed)
    beams = np.array(
        [
            corrupt_beams(y, noise.dvl_beam_bias, noise.dvl_beam_scale, noise.dvl_beam_sigma, rng)
            for y in reported
        ]
    )
    return DvlLog(
        time=truth.time[idx],
        beams=beams,
        validity=np.ones((len(idx), 4), dtype=bool),
        imu_index=idx,
        true_beams=true_beams,
        noise=beams - true_beams,
    )


def interval_process_noise(imu_noise, epoch_index):
    """Process-noise summary per DVL interval, indexed by interval start.

    Row ``i`` covers IMU samples ``[epoch_index[i], epoch_index[i+1])``: the
    mean accelerometer and gyro white noise and the accelerometer and gyro
    bias increments. The last row is NaN (no following epoch). With this
    indexing, ``lag = 1`` in :func:`empirical_cross_corr` pairs the noise
    driving the state into epoch ``k`` with measurement ``k``.
    """
    e = np.asarray(epoch_index)
    out = np.full((len(e), N_STATES), np.nan)
    ba = np.vstack([imu_noise.accel_bias, imu_noise.accel_bias[-1:]])
    bg = np.vstack([imu_noise.gyro_bias, imu_noise.gyro_bias[-1:]])
    for i in range(len(e) - 1):
        a, b = e[i], e[i + 1]
        out[i, 0:3] = imu_noise.accel_white[a:b].mean(axis=0)
        out[i, 3:6] = imu_noise.gyro_white[a:b].mean(axis=0)
        out[i, 6:9] = ba[b] - ba[a]
        out[i, 9:12] = bg[b] - bg[a]
    return out


@dataclass
class CrossCorrelation:
    cov: np.ndarray
    corr: np.ndarray
    significant: np.ndarray
    band: float
    n: int


def empirical_cross_corr(noise_w, meas_err, lag=1, min_length=100):
    """Sample cross-covariance ``cov(w[i], e[i + lag])`` with a 3/sqrt(N) band.

    Pairs containing NaN are dropped before estimation.
    """
    w = np.asarray(noise_w, dtype=float)
    e = np.asarray(meas_err, dtype=float)
    if len(w) != len(e):
        raise ValueError(f"length mismatch: {len(w)} process vs {len(e)} measurement rows")
    if lag >= 0:
        w, e = w[: len(w) - lag], e[lag:]
    else:
        w, e = w[-lag:], e[: len(e) + lag]
    keep = np.all(np.isfinite(w), axis=1) & np.all(np.isfinite(e), axis=1)
    w, e = w[keep], e[keep]
    n = len(w)
    if n < min_length:
        raise ValueError(f"need at least {min_length} aligned pairs, got {n}")
    wc = w - w.mean(axis=0)
    ec = e - e.mean(axis=0)
    cov = wc.T @ ec / (n - 1)
    sw = wc.std(axis=0, ddof=1)
    se = ec.std(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(sw, se)
    corr = np.nan_to_num(corr)
    band = 3.0 / np.sqrt(n)
    return CrossCorrelation(cov, corr, np.abs(corr) > band, band, n)


def profile_dict(profile):
    return asdict(profile)


def noise_dict(noise):
    d = asdict(noise)
    d["dvl_beam_bias"] = list(d["dvl_beam_bias"])
    d["dvl_beam_scale"] = list(d["dvl_beam_scale"])
    return d


def matched_error_model_mc(Phi, Qd, H, R, M, n_updates, x0_cov, rng_seed):
    """Sample a linear error-state trajectory whose noises have cross-covariance ``M``.

    The process noise over each update interval is ``w ~ N(0, Qd)`` and the
    measurement noise is ``v = M' Qd^+ w + e`` with
    ``e ~ N(0, R - M' Qd^+ M)``, so ``cov(w, v) = M`` exactly. Returns
    ``(x_true, y)`` with ``x_true[k]`` the state at measurement ``k``.
    """
    rng = np.random.default_rng(rng_seed)
    dim = Phi.shape[0]
    Qp = np.linalg.pinv(Qd)
    B = M.T @ Qp
    Re = R - B @ M
    Re = 0.5 * (Re + Re.T)
    if np.linalg.eigvalsh(Re)[0] < -1e-12 * np.trace(R):
        raise ValueError("cross-covariance is not realisable with these Q and R")
    Lq = _psd_sqrt(Qd)
    Le = _psd_sqrt(Re)
    x = _psd_sqrt(x0_cov) @ rng.standard_normal(dim)
    xs = np.zeros((n_updates, dim))
    ys = np.zeros((n_updates, H.shape[0]))
    for k in range(n_updates):
        w = Lq @ rng.standard_normal(dim)
        x = Phi @ x + w
        v = B @ w + Le @ rng.standard_normal(H.shape[0])
        xs[k] = x
        ys[k] = H @ x + v
    return xs, ys


def _psd_sqrt(A):
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))
