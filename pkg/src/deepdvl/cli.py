"""Command-line harness: simulate, train, fuse and compare.

Every command takes ``--config``, ``--seed`` and ``--out`` and writes a
``manifest.json`` into its output directory. Passing that manifest back as
``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from deepdvl import __version__
from deepdvl import beamsnet as bn
from deepdvl import csvio, pipeline
from deepdvl.config import MANIFEST_FORMAT, ConfigError, ExperimentConfig, load_config
from deepdvl.csvio import DataError
from deepdvl.ekf import CovarianceInconsistencyError, FilterDivergenceError, fuse_run
from deepdvl.ins import GRAVITY, NavState

logger = logging.getLogger("deepdvl")

OUTPUT_ROOT_ENV = "DEEPDVL_OUTPUT_ROOT"
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4


def _out_dir(args):
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "deepdvl-output")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args):
    if args.config:
        cfg, manifest = load_config(args.config)
    else:
        cfg, manifest = ExperimentConfig(), None
    if args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg, manifest


def _write_manifest(out, command, cfg, extra=None):
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "format": MANIFEST_FORMAT,
        "command": command,
        "config": cfg.to_dict(),
        "versions": {"deepdvl": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "files": {str(p.relative_to(out)): csvio.file_digest(p) for p in files},
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _dive(cfg, seed, noise=None):
    return pipeline.simulate(cfg.profile(), noise or cfg.noise(), seed, cfg.dvl_rate_hz, cfg.dt, cfg.geometry())


def cmd_simulate(cfg, out, args):
    for seed in cfg.seeds:
        dive = _dive(cfg, seed)
        d = out / f"seed_{seed}"
        d.mkdir(exist_ok=True)
        tr = dive.truth
        csvio.write_imu(d / "imu.csv", dive.imu)
        csvio.write_dvl(d / "dvl.csv", dive.dvl)
        csvio.write_truth(d / "truth.csv", tr.time, tr.position, tr.velocity, tr.attitude)
        logger.info("seed %d: %d IMU rows, %d DVL pings", seed, len(dive.imu), len(dive.dvl))
    return {}


def _train(cfg, seed, resume=None):
    noise = cfg.noise()
    corpus = pipeline.training_corpus(noise, cfg.train_seeds, cfg.train_duration_s, cfg.window_T, cfg.dvl_rate_hz)
    tc = bn.TrainConfig(cfg.learning_rate, cfg.batch_size, cfg.epochs, seed,
                        validation_fraction=cfg.validation_fraction, patience=cfg.patience)
    params = adam = None
    if resume is not None:
        params, adam, _ = bn.load_params(resume)
    return bn.train(corpus, tc, params, tuple(cfg.hidden_units), cfg.dropout, adam)


def cmd_train(cfg, out, args):
    params, history, adam = _train(cfg, cfg.seeds[0], args.resume)
    bn.save_params(out / "params.npz", params, adam)
    n = len(history.val_loss)
    csvio.write_table(
        out / "history.csv",
        ("epoch", "train_loss", "val_loss", "best_val_loss"),
        np.column_stack([np.arange(n), history.train_loss, history.val_loss, history.best_val]).reshape(n, 4),
    )
    return {"resume": str(args.resume) if args.resume else None, "best_epoch": history.best_epoch}


def _params_for(cfg, out):
    if cfg.measurement == "ls":
        return None
    if cfg.params_path == "train":
        params, _, _ = _train(cfg, cfg.seeds[0])
        bn.save_params(out / "params.npz", params)
        return params
    return bn.load_params(cfg.params_path)[0]


def _inputs(cfg, seed, data_dir):
    """IMU log, DVL log and initial state, simulated or read from disk."""
    if data_dir is None:
        dive = _dive(cfg, seed)
        return dive.imu, dive.dvl, pipeline.initial_state(dive)
    d = Path(data_dir)
    if (d / f"seed_{seed}").is_dir():
        d = d / f"seed_{seed}"
    meta_path = d / "metadata.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else None
    imu, dvl_log, truth, _ = csvio.ingest_external(d / "dvl.csv", d / "imu.csv", d / "truth.csv", meta)
    s0 = NavState(position=truth.position[0], velocity=truth.velocity[0], attitude=truth.attitude[0], time=imu.time[0])
    return imu, dvl_log, s0


def _updates(cfg, params, imu, dvl_log):
    geom = cfg.geometry()
    if params is None:
        return pipeline.ls_updates(dvl_log, geom, cfg.dvl_sigma_mps)
    return pipeline.network_updates(params, imu, dvl_log, geom, cfg.dvl_sigma_mps)


def cmd_fuse(cfg, out, args):
    params = _params_for(cfg, out)
    noise = cfg.noise()
    for seed in cfg.seeds:
        imu, dvl_log, s0 = _inputs(cfg, seed, args.data)
        run = fuse_run(imu, _updates(cfg, params, imu, dvl_log), s0, noise, cfg.use_cross_correlation,
                       rows=cfg.cross_cov_rows, gravity=GRAVITY,
                       guard_margin=cfg.guard_margin if cfg.use_cross_correlation else None)
        d = out / f"seed_{seed}"
        d.mkdir(exist_ok=True)
        csvio.write_run(d / f"run_{run.tag['mode']}.csv", run)
        _warn_clamps(run)
    return {"data": str(args.data) if args.data else None}


def _warn_clamps(run):
    if run.clamp_events:
        logger.warning("%d negative covariance diagonals were clamped", run.clamp_events)


def _std_table(path, run):
    csvio.write_table(path, ("t", *(f"std{i}" for i in range(12))), np.column_stack([run.times, run.std]))


def _parse_sweep(text):
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"--rho-sweep expects lo:hi:step, got {text!r}") from None
    if step <= 0 or hi < lo or lo < 0 or hi > 1:
        raise ConfigError("--rho-sweep needs 0 <= lo <= hi <= 1 and a positive step")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(n)]


def _compare_one(cfg, params, rho, out, data):
    noise = cfg.noise(rho)
    reports = {}
    for seed in cfg.seeds:
        imu, dvl_log, s0 = _inputs(cfg, seed, data)
        upd = _updates(cfg, params, imu, dvl_log)
        aware, neglect, report = pipeline.paired_runs(imu, upd, s0, noise, cfg.cross_cov_rows, cfg.guard_margin, GRAVITY)
        d = out / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        _std_table(d / "std_aware.csv", aware)
        _std_table(d / "std_neglect.csv", neglect)
        report["capped_updates"] = aware.capped_updates
        reports[str(seed)] = report
    groups = [g for g in next(iter(reports.values())) if g != "capped_updates"]
    mean = {
        g: {k: float(np.mean([r[g][k] for r in reports.values()])) for k in reports[str(cfg.seeds[0])][g]}
        for g in groups
    }
    return {"rho": rho, "per_seed": reports, "mean": mean}


def cmd_compare(cfg, out, args):
    params = _params_for(cfg, out)
    rhos = _parse_sweep(args.rho_sweep) if args.rho_sweep else [cfg.rho]
    results = []
    for rho in rhos:
        target = out / f"rho_{rho:g}" if args.rho_sweep else out
        results.append(_compare_one(cfg, params, rho, target, args.data))
    report = results if args.rho_sweep else results[0]
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report if args.rho_sweep else report["mean"], indent=2, sort_keys=True))
    return {"data": str(args.data) if args.data else None, "rho_sweep": args.rho_sweep}


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "fuse": cmd_fuse, "compare": cmd_compare}


def build_parser():
    parser = argparse.ArgumentParser(prog="deepdvl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config or a manifest from an earlier run")
        p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        p.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")
        if name in ("fuse", "compare"):
            p.add_argument("--data", type=Path, help="directory of CSV logs to use instead of simulating")
        if name == "train":
            p.add_argument("--resume", type=Path, help="parameter archive to continue training from")
        if name == "compare":
            p.add_argument("--rho-sweep", metavar="LO:HI:STEP", help="repeat the comparison over a grid of rho")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg, manifest = _resolve(args)
        if manifest is not None:
            for key in ("data", "resume"):
                if getattr(args, key, None) is None and manifest.get(key):
                    setattr(args, key, Path(manifest[key]))
        out = _out_dir(args)
        extra = COMMANDS[args.command](cfg, out, args)
        _write_manifest(out, args.command, cfg, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FilterDivergenceError, CovarianceInconsistencyError, bn.TrainingDivergedError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
