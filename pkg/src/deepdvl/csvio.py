"""CSV log formats and ingestion of externally recorded logs.

Every numeric field is written with 17 significant digits so a write/read
round trip is lossless.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from deepdvl.sim import DvlLog, ImuLog

logger = logging.getLogger(__name__)

IMU_COLUMNS = ("t", "fx", "fy", "fz", "wx", "wy", "wz")
DVL_COLUMNS = ("t", "b1", "b2", "b3", "b4", "v1_valid", "v2_valid", "v3_valid", "v4_valid")
TRUTH_COLUMNS = ("t", "pn", "pe", "pd", "vn", "ve", "vd", "qw", "qx", "qy", "qz")
RUN_COLUMNS = ("t", *(f"x{i}" for i in range(12)), *(f"pdiag{i}" for i in range(12)), *(f"innov{i}" for i in range(3)))

EXPECTED_UNITS = {
    "imu": {"t": "s", "fx": "m/s^2", "fy": "m/s^2", "fz": "m/s^2", "wx": "rad/s", "wy": "rad/s", "wz": "rad/s"},
    "dvl": {"t": "s", "b1": "m/s", "b2": "m/s", "b3": "m/s", "b4": "m/s"},
    "truth": {"t": "s", "pn": "m", "pe": "m", "pd": "m", "vn": "m/s", "ve": "m/s", "vd": "m/s"},
}


class DataError(ValueError):
    pass


@dataclass
class TruthLog:
    time: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray


def _fmt(x):
    return format(float(x), ".17g")


def write_table(path, columns, data):
    data = np.asarray(data, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in data:
            w.writerow([_fmt(v) for v in row])


def read_table(path, columns, rename=None):
    """Parse a headed CSV into an ``(n, len(columns))`` float array.

    ``rename`` maps internal column names to the names used in the file.
    Errors name the offending file and line.
    """
    rename = rename or {}
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        wanted = [rename.get(c, c) for c in columns]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"{path}:1: missing columns {missing}")
        pos = [header.index(c) for c in wanted]
        rows = []
        for line in reader:
            if not line or all(not c.strip() for c in line):
                continue
            if len(line) != len(header):
                raise DataError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(line)}")
            try:
                rows.append([float(line[p]) for p in pos])
            except ValueError:
                raise DataError(f"{path}:{reader.line_num}: non-numeric value") from None
    return np.array(rows, dtype=float).reshape(-1, len(columns))


def write_imu(path, imu):
    write_table(path, IMU_COLUMNS, np.column_stack([imu.time, imu.specific_force, imu.angular_rate]))


def write_dvl(path, dvl_log):
    write_table(path, DVL_COLUMNS, np.column_stack([dvl_log.time, dvl_log.beams, dvl_log.validity.astype(float)]))


def write_truth(path, time, position, velocity, attitude):
    write_table(path, TRUTH_COLUMNS, np.column_stack([time, position, velocity, attitude]))


def write_run(path, run):
    write_table(path, RUN_COLUMNS, np.column_stack([run.times, run.x, run.pdiag, run.innovations]))


def read_run(path):
    d = read_table(path, RUN_COLUMNS)
    return {"times": d[:, 0], "x": d[:, 1:13], "pdiag": d[:, 13:25], "innovations": d[:, 25:28]}


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _check_time(path, t, nominal=None):
    """Reject non-increasing time; warn about gaps over twice the nominal period."""
    dt = np.diff(t)
    bad = np.flatnonzero(dt <= 0)
    if len(bad):
        # +2: header line and 1-based numbering
        raise DataError(f"{path}:{bad[0] + 3}: timestamps not strictly increasing")
    if len(dt) == 0:
        return []
    period = np.median(dt) if nominal is None else nominal
    warnings = []
    for i in np.flatnonzero(dt > 2.0 * period):
        msg = f"{path}: gap of {dt[i]:.6g} s before epoch t={t[i + 1]:.6g} (nominal {period:.6g} s)"
        logger.warning(msg)
        warnings.append(msg)
    return warnings


def _check_units(kind, metadata):
    declared = (metadata or {}).get("units", {}).get(kind, {})
    bad = {c: u for c, u in declared.items() if c in EXPECTED_UNITS[kind] and u != EXPECTED_UNITS[kind][c]}
    if bad:
        expect = {c: EXPECTED_UNITS[kind][c] for c in bad}
        raise DataError(f"{kind}: unit mismatch {bad}, expected {expect}")


def ingest_external(dvl_csv, imu_csv, truth_csv=None, metadata=None):
    """Load external logs into the internal IMU/DVL/truth containers.

    ``metadata`` may carry ``columns`` (per-log maps from internal to file
    column names), ``units`` (per-log declared units, checked against the
    internal ones) and ``imu_period_s`` / ``dvl_period_s`` nominal periods
    for the gap check. Returns ``(imu, dvl, truth_or_None, warnings)``.
    """
    metadata = metadata or {}
    cols = metadata.get("columns", {})
    for kind in ("imu", "dvl", "truth"):
        _check_units(kind, metadata)

    d = read_table(imu_csv, IMU_COLUMNS, cols.get("imu"))
    if len(d) < 2:
        raise DataError(f"{imu_csv}: need at least two IMU samples")
    warnings = _check_time(imu_csv, d[:, 0], metadata.get("imu_period_s"))
    imu = ImuLog(d[:, 0].copy(), d[:, 1:4].copy(), d[:, 4:7].copy())

    b = read_table(dvl_csv, DVL_COLUMNS, cols.get("dvl"))
    warnings += _check_time(dvl_csv, b[:, 0], metadata.get("dvl_period_s"))
    valid = b[:, 5:9]
    if not np.all(np.isin(valid, (0.0, 1.0))):
        raise DataError(f"{dvl_csv}: validity flags must be 0 or 1")
    dt_imu = imu.time[-1] - imu.time[-2]
    if len(b) and (b[0, 0] < imu.time[0] - 1e-9 or b[-1, 0] > imu.time[-1] + dt_imu + 1e-9):
        raise DataError(f"{dvl_csv}: DVL epochs fall outside the IMU time span")
    grid = np.append(imu.time, imu.time[-1] + dt_imu)
    idx = np.searchsorted(grid, b[:, 0] - 1e-9)
    dvl_log = DvlLog(b[:, 0].copy(), b[:, 1:5].copy(), valid.astype(bool), imu_index=idx)

    truth = None
    if truth_csv is not None:
        tr = read_table(truth_csv, TRUTH_COLUMNS, cols.get("truth"))
        warnings += _check_time(truth_csv, tr[:, 0], metadata.get("imu_period_s"))
        truth = TruthLog(tr[:, 0].copy(), tr[:, 1:4].copy(), tr[:, 4:7].copy(), tr[:, 7:11].copy())
    return imu, dvl_log, truth, warnings
