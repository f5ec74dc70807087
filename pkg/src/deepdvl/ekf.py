"""Closed-loop error-state EKF with process/measurement noise cross-covariance.

Error state (12): velocity error (N/E/D), misalignment angles, accelerometer
bias error, gyroscope bias error. Errors are defined as ``true - estimate`` and
the attitude error as ``C_true = exp([psi]x) C_est``.

When the measurement noise ``v_k`` is correlated with the process noise that
drove the state into epoch ``k``, with cross-covariance ``M``, the gain and
posterior covariance become::

    S = H P H' + H M + M' H' + R
    K = (P H' + M) S^-1
    P+ = P - K (H P + M')
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from deepdvl.ins import GRAVITY, NavState, propagate
from deepdvl.rotation import left_jacobian, quat_from_rotvec, quat_multiply, skew

logger = logging.getLogger(__name__)

N_STATES = 12
VEL, ATT, BA, BG = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)
STATE_GROUPS = {
    "velocity": VEL,
    "misalignment": ATT,
    "accel_bias": BA,
    "gyro_bias": BG,
}
H_VELOCITY = np.hstack([np.eye(3), np.zeros((3, 9))])


class FilterDivergenceError(RuntimeError):
    """Innovation covariance is not positive definite."""

    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class CovarianceInconsistencyError(RuntimeError):
    """Posterior covariance left the positive semi-definite cone."""


class SmallAngleError(ValueError):
    """Misalignment too large for the small-angle correction."""


@dataclass(frozen=True)
class NoiseModel:
    """Sensor error parameters and the filter's noise tuning.

    White-noise and random-walk sigmas are per IMU sample. The DVL fields
    after ``rho`` only affect simulation.
    """

    accel_noise: float = 0.03
    gyro_noise: float = 0.005
    accel_bias_rw: float = 3e-6
    gyro_bias_rw: float = 5e-7
    dvl_meas_sigma: float = 0.01
    rho: float = 0.42
    accel_bias_init: float = 0.005
    gyro_bias_init: float = 2e-4
    dvl_beam_sigma: float = 0.0015
    dvl_beam_bias: tuple = (0.003, -0.002, 0.002, -0.003)
    dvl_beam_scale: tuple = (1.004, 0.997, 1.003, 0.996)
    dvl_average_s: float = 1.0

    def __post_init__(self):
        sigmas = (
            "accel_noise", "gyro_noise", "accel_bias_rw", "gyro_bias_rw",
            "dvl_meas_sigma", "accel_bias_init", "gyro_bias_init",
            "dvl_beam_sigma", "dvl_average_s",
        )
        for name in sigmas:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        object.__setattr__(self, "dvl_beam_bias", tuple(float(b) for b in self.dvl_beam_bias))
        object.__setattr__(self, "dvl_beam_scale", tuple(float(s) for s in self.dvl_beam_scale))
        if len(self.dvl_beam_bias) != 4 or len(self.dvl_beam_scale) != 4:
            raise ValueError("per-beam bias and scale need 4 entries")


@dataclass
class ErrorState:
    x: np.ndarray = field(default_factory=lambda: np.zeros(N_STATES))
    P: np.ndarray = field(default_factory=lambda: np.eye(N_STATES))
    clamp_events: int = 0


@dataclass
class ErrorStateModel:
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    M: np.ndarray


def process_noise_cov(noise):
    """Per-step covariance of ``[w_accel, w_gyro, w_accel_bias, w_gyro_bias]``."""
    return np.diag(
        np.repeat(
            [noise.accel_noise, noise.gyro_noise, noise.accel_bias_rw, noise.gyro_bias_rw],
            3,
        )
        ** 2
    )


def initial_covariance(noise, velocity_sigma=0.05, attitude_sigma=(2e-3, 2e-3, 1e-2)):
    sig = np.concatenate(
        [
            np.full(3, velocity_sigma),
            np.asarray(attitude_sigma, dtype=float) * np.ones(3),
            np.full(3, max(noise.accel_bias_init, 1e-9)),
            np.full(3, max(noise.gyro_bias_init, 1e-12)),
        ]
    )
    return np.diag(sig**2)


def build_error_dynamics(state, specific_force_body, dt, angular_rate=None):
    """Discrete error transition ``F`` and noise input ``G`` for one IMU step.

    ``specific_force_body`` and ``angular_rate`` must already be bias
    compensated. ``F`` is the Jacobian of :func:`deepdvl.ins.propagate` with
    respect to the error state, evaluated at zero error; when
    ``angular_rate`` is omitted the SO(3) Jacobian in the gyro-bias block is
    taken as identity (the plain ``I + A dt`` form).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    C = state.dcm
    f_nav = C @ np.asarray(specific_force_body, dtype=float)
    J = np.eye(3) if angular_rate is None else left_jacobian(np.asarray(angular_rate) * dt)
    F = np.eye(N_STATES)
    F[VEL, ATT] = -skew(f_nav) * dt
    F[VEL, BA] = -C * dt
    F[ATT, BG] = -C @ J * dt
    G = np.zeros((N_STATES, N_STATES))
    G[VEL, 0:3] = -C * dt
    G[ATT, 3:6] = -C @ J * dt
    G[BA, 6:9] = np.eye(3)
    G[BG, 9:12] = np.eye(3)
    return F, G


def cross_cov_rows(mode):
    """Boolean row mask of the 12-state cross-covariance.

    ``"inertial"`` keeps the velocity and misalignment rows, the states driven
    by accelerometer and gyroscope white noise; ``"velocity"`` keeps only the
    velocity rows; ``"dense"`` keeps all twelve.
    """
    if not isinstance(mode, str):
        mask = np.asarray(mode, dtype=bool)
        if mask.shape != (N_STATES,):
            raise ValueError("row mask must have 12 entries")
        return mask
    mask = np.zeros(N_STATES, dtype=bool)
    if mode == "inertial":
        mask[0:6] = True
    elif mode == "velocity":
        mask[0:3] = True
    elif mode == "dense":
        mask[:] = True
    else:
        raise ValueError(f"unknown cross-covariance row mode {mode!r}")
    return mask


def build_cross_cov(Q, R, rho, rows=None):
    """``M_ij = rho * sqrt(Q_ii) * sqrt(R_jj)``, zeroed outside ``rows``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    q = np.diag(np.asarray(Q, dtype=float))
    r = np.diag(np.asarray(R, dtype=float))
    if np.any(q < 0) or np.any(r < 0):
        raise ValueError("Q and R need non-negative diagonals")
    M = rho * np.outer(np.sqrt(q), np.sqrt(r))
    if rows is not None:
        if isinstance(rows, str):
            rows = cross_cov_rows(rows)
        M[~np.asarray(rows, dtype=bool)] = 0.0
    return M


# Slack kept by the realisability guard. At zero slack the joint covariance
# sits on the PSD boundary and the posterior loses rank.
GUARD_MARGIN = 0.1


def realisable_scale(P, R, M, margin=0.0):
    """Largest ``s <= 1`` such that ``[[P, sM], [sM', R]]`` stays PSD with slack.

    The joint covariance is realisable iff ``R - M' P^-1 M >= 0``. The
    returned factor keeps ``R - s^2 M' P^-1 M >= margin * R``.
    """
    if not np.any(M):
        return 1.0
    L = np.linalg.cholesky(R)
    A = np.linalg.solve(L, M.T)
    lam = np.linalg.eigvalsh(A @ np.linalg.solve(P, A.T))[-1]
    limit = 1.0 - margin
    if lam <= limit:
        return 1.0
    return float(np.sqrt(limit / lam))


def innovation_cov(P, H, R, M):
    HM = H @ M
    S = H @ P @ H.T + HM + HM.T + R
    return 0.5 * (S + S.T)


def gain_correlated(P, H, R, M):
    """Kalman gain ``(P H' + M)(H P H' + H M + M' H' + R)^-1``."""
    S = innovation_cov(P, H, R, M)
    eig = np.linalg.eigvalsh(S)
    n = S.shape[0]
    if eig[0] <= 1e-12 * np.trace(S) / n:
        raise FilterDivergenceError(
            f"innovation covariance not positive definite (min eigenvalue {eig[0]:.3e})",
            eigenvalues=eig,
        )
    # K S = PH' + M  ->  S K' = (PH' + M)' with S symmetric
    return cho_solve(cho_factor(S), (P @ H.T + M).T).T


def update_correlated(err, model, innovation, psd_tol=1e-9):
    """Measurement update with cross-covariance ``model.M``.

    Small negative diagonal entries (above ``-1e-12``) are clamped to zero and
    counted in ``clamp_events``. Larger violations of positive
    semi-definiteness raise :class:`CovarianceInconsistencyError`.
    """
    return _update(err, model, innovation, psd_tol)[0]


def _update(err, model, innovation, psd_tol=1e-9):
    P, H, M = err.P, model.H, model.M
    K = gain_correlated(P, H, model.R, M)
    x = err.x + K @ np.asarray(innovation, dtype=float)
    P_new = P - K @ (H @ P + M.T)
    P_new = 0.5 * (P_new + P_new.T)
    clamps = err.clamp_events
    d = np.diag(P_new)
    if np.any(d < -1e-12):
        raise CovarianceInconsistencyError(
            f"posterior variance {d.min():.3e} below tolerance"
        )
    neg = d < 0
    if np.any(neg):
        clamps += int(neg.sum())
        idx = np.flatnonzero(neg)
        P_new[idx, idx] = 0.0
    min_eig = np.linalg.eigvalsh(P_new)[0]
    if min_eig < -psd_tol * max(np.trace(P_new), 1e-300):
        raise CovarianceInconsistencyError(
            f"posterior covariance lost positive semi-definiteness (min eigenvalue {min_eig:.3e})"
        )
    return ErrorState(x, P_new, clamps), K


def predict(err, F, G, Q):
    n = err.P.shape[0]
    if F.shape != (n, n) or G.shape[0] != n or Q.shape != (G.shape[1], G.shape[1]):
        raise ValueError("inconsistent F, G, Q shapes")
    P = F @ err.P @ F.T + G @ Q @ G.T
    return ErrorState(F @ err.x, 0.5 * (P + P.T), err.clamp_events)


def inject_and_reset(state, err, max_angle=0.5):
    """Fold the error estimate into the navigation state and zero the mean."""
    x = err.x
    psi = x[ATT]
    if np.linalg.norm(psi) >= max_angle:
        raise SmallAngleError(f"misalignment {np.linalg.norm(psi):.3f} rad too large")
    q = quat_multiply(quat_from_rotvec(psi), state.attitude)
    corrected = replace(
        state,
        velocity=state.velocity + x[VEL],
        attitude=q / np.linalg.norm(q),
        accel_bias=state.accel_bias + x[BA],
        gyro_bias=state.gyro_bias + x[BG],
    )
    return corrected, ErrorState(np.zeros_like(x), err.P.copy(), err.clamp_events)


@dataclass
class VelocityUpdates:
    """Body-frame velocity measurements fed to the filter.

    ``R`` is either one 3x3 covariance shared by every update or an
    ``(n, 3, 3)`` stack. ``fallback`` marks epochs that used the LS solution
    in place of the network.
    """

    times: np.ndarray
    velocity: np.ndarray
    R: np.ndarray
    fallback: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(-1, 3)
        self.R = np.asarray(self.R, dtype=float)
        if self.fallback is None:
            self.fallback = np.zeros(len(self.times), dtype=bool)
        self.fallback = np.asarray(self.fallback, dtype=bool)

    def cov(self, i):
        return self.R if self.R.ndim == 2 else self.R[i]


@dataclass
class FilterRun:
    """Time series produced by :func:`fuse_run`.

    State-indexed arrays have one row per IMU epoch (``len(times)``).
    ``x`` holds the posterior error correction at update epochs and zeros
    elsewhere (closed loop). Update-indexed arrays have one row per
    measurement update.
    """

    times: np.ndarray
    x: np.ndarray
    pdiag: np.ndarray
    innovations: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray
    accel_bias: np.ndarray
    gyro_bias: np.ndarray
    update_index: np.ndarray
    update_times: np.ndarray
    update_innovations: np.ndarray
    gain_norms: np.ndarray
    fallback: np.ndarray
    tag: dict = field(default_factory=dict)
    clamp_events: int = 0
    capped_updates: int = 0
    covariances: np.ndarray = None

    @property
    def std(self):
        return np.sqrt(np.maximum(self.pdiag, 0.0))


def fuse_run(
    imu_log,
    dvl_velocity_updates,
    initial,
    noise,
    use_cross_correlation,
    P0=None,
    rows="inertial",
    gravity=GRAVITY,
    keep_covariance=False,
    cross_cov_start=None,
    guard_margin=None,
):
    """Run the INS/DVL error-state EKF over a full log.

    Prediction runs at the IMU rate. At each velocity update the body-frame
    measurement is rotated into N/E/D and differenced against the INS
    velocity (``z = C v_meas - v_ins``, ``H = [I 0 0 0]``). With
    ``use_cross_correlation`` the cross-covariance is built from the process
    noise accumulated since the previous update and the current ``R``.
    """
    t_imu = np.asarray(imu_log.time, dtype=float)
    if len(t_imu) < 2 or np.any(np.diff(t_imu) <= 0):
        raise ValueError("IMU timestamps must be strictly increasing")
    upd = dvl_velocity_updates
    if np.any(np.diff(upd.times) <= 0):
        raise ValueError("velocity update timestamps must be strictly increasing")
    # sample k acts over [t_k, t_k+1); the final epoch closes the last interval
    dts = np.diff(t_imu)
    dts = np.append(dts, dts[-1])
    t = np.append(t_imu, t_imu[-1] + dts[-1])
    n = len(t)
    Q = process_noise_cov(noise)
    P = initial_covariance(noise) if P0 is None else np.asarray(P0, dtype=float)
    err = ErrorState(np.zeros(N_STATES), P.copy())
    state = replace(initial, time=t[0])
    row_mask = cross_cov_rows(rows)

    # updates are applied at the first epoch at or after their timestamp
    tol = 1e-9
    upd_idx = np.searchsorted(t, upd.times - tol)
    if np.any(upd_idx >= n):
        raise ValueError("velocity updates extend past the IMU log")

    xs = np.zeros((n, N_STATES))
    pdiag = np.zeros((n, N_STATES))
    innov_steps = np.full((n, 3), np.nan)
    pos = np.zeros((n, 3))
    vel = np.zeros((n, 3))
    att = np.zeros((n, 4))
    ba = np.zeros((n, 3))
    bg = np.zeros((n, 3))
    covs = np.zeros((n, N_STATES, N_STATES)) if keep_covariance else None
    innovations = np.zeros((len(upd.times), 3))
    gains = np.zeros(len(upd.times))
    q_acc = np.zeros((N_STATES, N_STATES))
    capped = 0

    j = 0
    for k in range(n):
        while j < len(upd_idx) and upd_idx[j] == k:
            R_body = upd.cov(j)
            C = state.dcm
            R_nav = C @ R_body @ C.T
            z = C @ upd.velocity[j] - state.velocity
            if use_cross_correlation and not upd.fallback[j] and (
                cross_cov_start is None or t[k] >= cross_cov_start
            ):
                M = build_cross_cov(q_acc, R_nav, noise.rho, row_mask)
                if guard_margin is not None:
                    scale = realisable_scale(err.P, R_nav, M, guard_margin)
                    if scale < 1.0:
                        M = scale * M
                        capped += 1
            else:
                M = np.zeros((N_STATES, 3))
            model = ErrorStateModel(None, None, H_VELOCITY, Q, R_nav, M)
            err, K = _update(err, model, z)
            xs[k] = err.x
            innovations[j] = z
            innov_steps[k] = z
            gains[j] = np.linalg.norm(K)
            state, err = inject_and_reset(state, err)
            q_acc = np.zeros((N_STATES, N_STATES))
            j += 1
        pos[k], vel[k], att[k] = state.position, state.velocity, state.attitude
        ba[k], bg[k] = state.accel_bias, state.gyro_bias
        pdiag[k] = np.diag(err.P)
        if covs is not None:
            covs[k] = err.P
        if k == n - 1:
            break
        dt = dts[k]
        sample = imu_log.sample(k)
        f_b = sample.specific_force - state.accel_bias
        w_b = sample.angular_rate - state.gyro_bias
        F, G = build_error_dynamics(state, f_b, dt, w_b)
        GQG = G @ Q @ G.T
        P = F @ err.P @ F.T + GQG
        err = ErrorState(err.x, 0.5 * (P + P.T), err.clamp_events)
        q_acc = F @ q_acc @ F.T + GQG
        state = propagate(state, sample, dt, gravity)

    return FilterRun(
        times=t,
        x=xs,
        pdiag=pdiag,
        innovations=innov_steps,
        position=pos,
        velocity=vel,
        attitude=att,
        accel_bias=ba,
        gyro_bias=bg,
        update_index=upd_idx,
        update_times=t[upd_idx],
        update_innovations=innovations,
        gain_norms=gains,
        fallback=upd.fallback.copy(),
        tag={
            "mode": "aware" if use_cross_correlation else "neglect",
            "rho": float(noise.rho) if use_cross_correlation else 0.0,
            "rows": rows if isinstance(rows, str) else [int(i) for i in np.flatnonzero(row_mask)],
        },
        clamp_events=err.clamp_events,
        capped_updates=capped,
        covariances=covs,
    )


def run_linear_filter(Phi, Qd, H, R, M, y, x0, P0):
    """Discrete linear KF with cross-covariance ``M`` over measurements ``y``.

    The state is propagated with ``Phi`` and process covariance ``Qd`` before
    every measurement. Returns posterior means and covariances.
    """
    n = len(y)
    dim = len(x0)
    xs = np.zeros((n, dim))
    Ps = np.zeros((n, dim, dim))
    err = ErrorState(np.asarray(x0, dtype=float), np.asarray(P0, dtype=float))
    I = np.eye(dim)
    model = ErrorStateModel(Phi, I, H, Qd, R, M)
    for k in range(n):
        err = predict(err, Phi, I, Qd)
        innov = y[k] - H @ err.x
        err = update_correlated(err, model, innov)
        xs[k], Ps[k] = err.x, err.P
    return xs, Ps
