"""Experiment configuration: a flat JSON object with units in the key names.

Unknown keys and wrongly typed values are rejected. A manifest written by a
previous command is also accepted wherever a config is, which is how a run
is reproduced.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from deepdvl.dvl import make_geometry
from deepdvl.ekf import NoiseModel
from deepdvl.sim import PROFILE_KINDS, TrajectoryProfile

MANIFEST_FORMAT = "deepdvl-manifest-v1"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # trajectory
    profile_kind: str = "lawnmower"
    duration_s: float = 400.0
    speed_mps: float = 1.5
    speed_amplitude_frac: float = 0.3
    speed_period_s: float = 60.0
    leg_length_m: float = 100.0
    turn_rate_radps: float = 0.05
    heading_amplitude_rad: float = float(np.deg2rad(30.0))
    heading_period_s: float = 80.0
    initial_heading_rad: float = 0.0
    crab_amplitude_rad: float = float(np.deg2rad(2.0))
    crab_period_s: float = 37.0
    depth_amplitude_m: float = 1.0
    depth_period_s: float = 120.0
    # sensors
    imu_rate_hz: float = 100.0
    dvl_rate_hz: float = 1.0
    beam_pitch_deg: float = 20.0
    beam_yaws_deg: list = field(default_factory=lambda: [45.0, 135.0, 225.0, 315.0])
    accel_noise_mps2: float = 0.03
    gyro_noise_radps: float = 0.005
    accel_bias_rw_mps2: float = 3e-6
    gyro_bias_rw_radps: float = 5e-7
    accel_bias_init_mps2: float = 0.005
    gyro_bias_init_radps: float = 2e-4
    dvl_beam_sigma_mps: float = 0.0015
    dvl_beam_bias_mps: list = field(default_factory=lambda: [0.003, -0.002, 0.002, -0.003])
    dvl_beam_scale: list = field(default_factory=lambda: [1.004, 0.997, 1.003, 0.996])
    dvl_average_s: float = 1.0
    # filter
    dvl_sigma_mps: float = 0.01
    rho: float = 0.42
    use_cross_correlation: bool = True
    cross_cov_rows: str = "inertial"
    guard_margin: float = 0.1
    lag: int = 1
    measurement: str = "beamsnet"
    params_path: str = "train"
    # network
    window_T: int = 100
    hidden_units: list = field(default_factory=lambda: [512, 64])
    dropout: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    patience: int = 10
    validation_fraction: float = 0.15
    train_seeds: list = field(default_factory=lambda: list(range(8)))
    train_duration_s: float = 1200.0
    # runs
    seeds: list = field(default_factory=lambda: [0])

    def __post_init__(self):
        problems = []
        if self.profile_kind not in PROFILE_KINDS:
            problems.append(f"profile_kind must be one of {PROFILE_KINDS}")
        if not 0.0 <= self.rho <= 1.0:
            problems.append(f"rho must lie in [0, 1], got {self.rho}")
        if not self.seeds:
            problems.append("seeds must be a non-empty list")
        if self.cross_cov_rows not in ("inertial", "velocity", "dense"):
            problems.append("cross_cov_rows must be 'inertial', 'velocity' or 'dense'")
        if self.lag != 1:
            problems.append("lag must be 1: the filter pairs each update with the process noise of the interval before it")
        if self.measurement not in ("ls", "beamsnet"):
            problems.append("measurement must be 'ls' or 'beamsnet'")
        if self.params_path != "train" and self.measurement == "beamsnet" and not Path(self.params_path).exists():
            problems.append(f"params_path {self.params_path!r} does not exist")
        if self.guard_margin is not None and not 0.0 <= self.guard_margin < 1.0:
            problems.append("guard_margin must be null or lie in [0, 1)")
        for name in ("imu_rate_hz", "dvl_rate_hz", "duration_s", "train_duration_s"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def dt(self):
        return 1.0 / self.imu_rate_hz

    def profile(self, kind=None, duration=None, initial_heading=None):
        try:
            return TrajectoryProfile(
                kind=kind or self.profile_kind,
                speed=self.speed_mps,
                duration=self.duration_s if duration is None else duration,
                leg_length=self.leg_length_m,
                turn_rate=self.turn_rate_radps,
                heading_amplitude=self.heading_amplitude_rad,
                heading_period=self.heading_period_s,
                initial_heading=self.initial_heading_rad if initial_heading is None else initial_heading,
                speed_amplitude=self.speed_amplitude_frac,
                speed_period=self.speed_period_s,
                crab_amplitude=self.crab_amplitude_rad,
                crab_period=self.crab_period_s,
                depth_amplitude=self.depth_amplitude_m,
                depth_period=self.depth_period_s,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def noise(self, rho=None):
        try:
            return NoiseModel(
                accel_noise=self.accel_noise_mps2,
                gyro_noise=self.gyro_noise_radps,
                accel_bias_rw=self.accel_bias_rw_mps2,
                gyro_bias_rw=self.gyro_bias_rw_radps,
                dvl_meas_sigma=self.dvl_sigma_mps,
                rho=self.rho if rho is None else rho,
                accel_bias_init=self.accel_bias_init_mps2,
                gyro_bias_init=self.gyro_bias_init_radps,
                dvl_beam_sigma=self.dvl_beam_sigma_mps,
                dvl_beam_bias=tuple(self.dvl_beam_bias_mps),
                dvl_beam_scale=tuple(self.dvl_beam_scale),
                dvl_average_s=self.dvl_average_s,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def geometry(self):
        try:
            return make_geometry(np.deg2rad(self.beam_pitch_deg), np.deg2rad(self.beam_yaws_deg))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return asdict(self)


_TYPES = {f.name: f for f in fields(ExperimentConfig)}


def _check_type(name, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    else:
        ok = True
    if name == "guard_margin" and value is None:
        return None
    if not ok:
        raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")
    return value


def config_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    defaults = ExperimentConfig()
    values = {k: _check_type(k, v, getattr(defaults, k)) for k, v in raw.items()}
    return ExperimentConfig(**values)


def load_config(path):
    """Config from a JSON file, or the embedded config of a manifest.

    Returns ``(config, manifest_or_None)``.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if isinstance(raw, dict) and raw.get("format") == MANIFEST_FORMAT:
        return config_from_dict(raw["config"]), raw
    return config_from_dict(raw), None
