"""End-to-end glue: simulate a dive, build measurements, fuse, compare.

Everything here is a thin composition of the sensor, network and filter
modules, shared by the command-line tool, the demos and the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from deepdvl import beamsnet as bn
from deepdvl import sim
from deepdvl.dvl import ls_velocity, make_geometry
from deepdvl.ekf import GUARD_MARGIN, N_STATES, NoiseModel, VelocityUpdates, fuse_run
from deepdvl.ins import GRAVITY, NavState
from deepdvl.metrics import uncertainty_summary
from deepdvl.rotation import quat_conjugate, quat_multiply, rotvec_from_quat

TRAIN_KINDS = ("lawnmower", "racetrack", "sinusoid-heading", "straight")


@dataclass
class Dive:
    """One simulated dive: truth, sensor logs and the realised noise."""

    profile: sim.TrajectoryProfile
    noise: NoiseModel
    seed: int
    geom: object
    truth: sim.SensorTruth
    imu: sim.ImuLog
    imu_noise: sim.ImuNoise
    dvl: sim.DvlLog
    dvl_rate: float


def child_seeds(seed, n):
    """Independent integer seeds derived from one master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def simulate(profile=None, noise=None, seed=0, dvl_rate=1.0, dt=0.01, geom=None, gravity=GRAVITY):
    profile = sim.TrajectoryProfile() if profile is None else profile
    noise = NoiseModel() if noise is None else noise
    geom = make_geometry() if geom is None else geom
    imu_seed, dvl_seed = child_seeds(seed, 2)
    truth = sim.generate(profile, dt, gravity)
    imu, imu_noise = sim.corrupt_imu(truth, noise, imu_seed)
    dvl_log = sim.emit_dvl(truth, geom, dvl_rate, noise, dvl_seed)
    return Dive(profile, noise, seed, geom, truth, imu, imu_noise, dvl_log, dvl_rate)


def initial_state(dive):
    tr = dive.truth
    return NavState(position=tr.position[0], velocity=tr.velocity[0], attitude=tr.attitude[0], time=tr.time[0])


def ls_velocities(dvl_log, geom):
    return np.array([ls_velocity(dvl_log.ping(i), geom) for i in range(len(dvl_log))])


def ls_updates(dvl_log, geom, sigma):
    return VelocityUpdates(dvl_log.time, ls_velocities(dvl_log, geom), sigma**2 * np.eye(3))


def network_velocities(params, imu, dvl_log, geom):
    """Network output at every ping, LS where the IMU window is not yet full.

    Returns ``(velocity, fallback)``. Equivalent to calling
    :func:`deepdvl.beamsnet.infer_measurement` ping by ping, but batched.
    """
    v = ls_velocities(dvl_log, geom)
    acc, gyr, head, rows = bn.windows_from_logs(imu, dvl_log, geom, params.T, params.head_input, params.history)
    fallback = np.ones(len(v), dtype=bool)
    if len(rows):
        v[rows] = bn.forward_batch(params, (acc, gyr, head))
        fallback[rows] = False
    return v, fallback


def network_updates(params, imu, dvl_log, geom, fallback_sigma):
    v, fallback = network_velocities(params, imu, dvl_log, geom)
    R = np.empty((len(v), 3, 3))
    R[:] = np.diag(params.residual_sigma**2)
    R[fallback] = fallback_sigma**2 * np.eye(3)
    return VelocityUpdates(dvl_log.time, v, R, fallback)


def dive_updates(dive, params=None):
    """LS updates when ``params`` is None, network updates otherwise."""
    sigma = dive.noise.dvl_meas_sigma
    if params is None:
        return ls_updates(dive.dvl, dive.geom, sigma)
    return network_updates(params, dive.imu, dive.dvl, dive.geom, sigma)


def training_corpus(noise=None, seeds=range(8), duration=1200.0, T=100, dvl_rate=1.0, kinds=TRAIN_KINDS):
    """Dataset pooled over dives of rotating trajectory kinds."""
    parts = []
    for s in seeds:
        prof = sim.TrajectoryProfile(kind=kinds[s % len(kinds)], duration=duration, initial_heading=0.7 * s)
        dive = simulate(prof, noise, seed=s, dvl_rate=dvl_rate)
        parts.append(bn.build_dataset(dive.truth, dive.imu, dive.dvl, dive.geom, T)[0])
    return bn.Dataset.concat(parts)


def true_errors(dive, run):
    """Truth-minus-estimate 12-state error at every state epoch of ``run``."""
    tr = dive.truth
    n = len(run.times)
    if len(tr.time) != n:
        raise ValueError("run and truth are on different grids")
    e = np.zeros((n, N_STATES))
    e[:, 0:3] = tr.velocity - run.velocity
    dq = np.array([quat_multiply(qt, quat_conjugate(qe)) for qt, qe in zip(tr.attitude, run.attitude)])
    e[:, 3:6] = np.array([rotvec_from_quat(q) for q in dq])
    ba = np.vstack([dive.imu_noise.accel_bias, dive.imu_noise.accel_bias[-1:]])
    bg = np.vstack([dive.imu_noise.gyro_bias, dive.imu_noise.gyro_bias[-1:]])
    e[:, 6:9] = ba - run.accel_bias
    e[:, 9:12] = bg - run.gyro_bias
    return e


def paired_runs(imu, updates, initial, noise, rows="inertial", guard_margin=GUARD_MARGIN, gravity=GRAVITY,
                keep_covariance=False):
    """Aware and neglect filters over the same measurements, plus their comparison."""
    kw = dict(rows=rows, gravity=gravity, keep_covariance=keep_covariance)
    neglect = fuse_run(imu, updates, initial, noise, False, **kw)
    aware = fuse_run(imu, updates, initial, noise, True, guard_margin=guard_margin, **kw)
    return aware, neglect, uncertainty_summary(aware, neglect)


def paired_dive(dive, params=None, rows="inertial", guard_margin=GUARD_MARGIN, keep_covariance=False):
    return paired_runs(dive.imu, dive_updates(dive, params), initial_state(dive), dive.noise, rows,
                       guard_margin, dive.truth.gravity, keep_covariance)
