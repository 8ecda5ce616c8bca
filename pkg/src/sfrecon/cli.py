"""``sfrecon`` command-line interface.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .analysis import NoiseModel, mnsm, predict_mmse, write_metrics_csv, write_profile_csv
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import run_fig1, run_table1, write_fig1_csv, write_table1_csv
from .geometry import load_trajectory, nyquist_spacing, save_trajectory
from .room import load_sfr, save_sfr, simulate_grid_rirs
from .solve import SolverMethod, solve_decoupled, solve_full, static_deconvolve
from .system import (
    ImperfectSequenceWarning,
    assemble_decoupled,
    assemble_full,
    load_measurement,
    save_measurement,
    simulate_measurement,
)

log = logging.getLogger("sfrecon")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.validate()


def _out(args, default):
    return Path(args.out or default)


def _seed(args, cfg):
    return cfg.measurement_seeds[0] if args.seed is None else args.seed


def _trajectory(args, cfg):
    if getattr(args, "trajectory", None):
        return load_trajectory(args.trajectory)
    return cfg.trajectory()


def cmd_simulate(args) -> int:
    cfg = _config(args)
    room, grid = cfg.room(), cfg.grid()
    L = cfg.measurement_rir_length
    ny = nyquist_spacing(room.cutoff, room.speed_of_sound)
    print(f"N = {grid.size}, L = {L}, spacing = {grid.spacing:g} m")
    print(f"Nyquist spacing {ny:.5f} m (cutoff {room.cutoff:g} Hz), margin {ny - grid.spacing:+.5f} m")
    if grid.spacing >= ny:
        print(f"warning: spacing {grid.spacing:g} m is not below the Nyquist spacing {ny:.5f} m")
    rirs = simulate_grid_rirs(room, grid, L)
    out = _out(args, "truth.sfr")
    save_sfr(rirs, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_trajectory(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.replace(trajectory_seed=args.seed)
    traj = cfg.trajectory()
    out = _out(args, "trajectory.csv")
    save_trajectory(traj, out)
    print(f"wrote {out}: {traj.sample_count} samples x {traj.mic_count} microphones")
    return EXIT_OK


def cmd_measure(args) -> int:
    cfg = _config(args)
    traj = _trajectory(args, cfg)
    exc = cfg.excitation()
    snr = args.snr if args.snr is not None else cfg.measurement_snr_db[0]
    seed = _seed(args, cfg)
    rec = simulate_measurement(
        cfg.room(), traj, exc, cfg.measurement_periods, snr, seed, cfg.measurement_rir_length
    )
    out = _out(args, "measurement.csv")
    save_measurement(rec, out)
    print(f"wrote {out} (SNR {snr:g} dB, seed {seed})")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _config(args)
    traj = _trajectory(args, cfg)
    exc = cfg.excitation()
    grid = cfg.grid()
    rec = load_measurement(args.measurement, traj, exc)
    L, R = cfg.measurement_rir_length, cfg.measurement_periods
    solver = cfg.solver()
    if args.static:
        result = static_deconvolve(rec, grid, L)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ImperfectSequenceWarning)
            if solver.method is SolverMethod.FULL:
                system = assemble_full(traj, exc, R, cfg.kernel(), grid, L, rec.samples)
                result = solve_full(system, solver)
            else:
                system = assemble_decoupled(traj, exc, R, cfg.kernel(), grid, rec.samples, L)
                result = solve_decoupled(system, exc, solver)
    out = _out(args, "estimate.sfr")
    save_sfr(result.rirs, out)
    rows = result.diagnostics_rows()
    if args.truth:
        value = mnsm(load_sfr(args.truth), result.rirs)
        rows.append(("mnsm", value, "dB"))
        print(f"MNSM {value:.2f} dB")
    diag = Path(args.diagnostics) if args.diagnostics else out.with_suffix(".diagnostics.csv")
    write_metrics_csv(rows, diag)
    print(f"wrote {out} and {diag}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    truth, est = load_sfr(args.truth), load_sfr(args.estimate)
    value = mnsm(truth, est)
    print(f"MNSM {value:.4f} dB")
    if args.out:
        write_metrics_csv([("mnsm", value, "dB")], args.out)
    return EXIT_OK


def cmd_predict_mmse(args) -> int:
    cfg = _config(args)
    traj = _trajectory(args, cfg)
    exc = cfg.excitation()
    snr = args.snr if args.snr is not None else cfg.measurement_snr_db[0]
    sigma_h2 = args.sigma_h2
    if sigma_h2 is None:
        truth = simulate_grid_rirs(cfg.room(), cfg.grid(), cfg.measurement_rir_length)
        sigma_h2 = float(np.mean(truth.data**2))
    noise = NoiseModel(exc.power, exc.power / 10 ** (snr / 10), sigma_h2)
    pred = predict_mmse(traj, cfg.kernel(), cfg.grid(), noise, exc.period_length)
    print(f"predicted MMSE {pred.total:.6g} (sigma_h2 {sigma_h2:.4g}, SNR {snr:g} dB)")
    out = _out(args, "mmse.csv")
    write_metrics_csv(
        [("mmse", pred.total, "total"), ("sigma_h2", sigma_h2, ""), ("snr_db", float(snr), "dB")], out
    )
    if args.profile:
        write_profile_csv(pred, args.profile, traj.mic_count)
    return EXIT_OK


def cmd_table1(args) -> int:
    seeds = tuple(range(args.seed or 0, (args.seed or 0) + (5 if args.scale == "paper" else 2)))
    if args.seeds:
        seeds = tuple(range(args.seed or 0, (args.seed or 0) + args.seeds))
    rows = run_table1(seeds=seeds)
    out = _out(args, "table1.csv")
    write_table1_csv(rows, out)
    by = {(r["setup"], r["snr_db"]): r["mnsm_db"] for r in rows}
    snrs = sorted({r["snr_db"] for r in rows})
    print("setup    " + "".join(f"{s:>8g}" for s in snrs))
    for setup in dict.fromkeys(r["setup"] for r in rows):
        print(f"{setup:<9}" + "".join(f"{by[(setup, s)]:8.2f}" for s in snrs))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_fig1(args) -> int:
    rows = run_fig1(scale=args.scale, snr_db=args.snr, seed=args.seed or 0)
    out = _out(args, "fig1.csv")
    write_fig1_csv(rows, out)
    for r in rows:
        print(f"{r['spacing']:.4f} m ({r['oversampling']:g}x)  {r['kernel']:<8} {r['mnsm_db']:8.2f} dB")
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (INI)")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int, help="noise or trajectory seed")
    common.add_argument("--threads", type=int, help="cap BLAS threads")
    common.add_argument("--scale", choices=("paper", "desk"), default="desk")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sfrecon", description="Dynamic sound-field RIR reconstruction")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate ground-truth grid RIRs")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("trajectory", parents=[common], help="generate a microphone trajectory")
    s.set_defaults(func=cmd_trajectory)

    s = sub.add_parser("measure", parents=[common], help="simulate a noisy recording")
    s.add_argument("--trajectory", help="trajectory CSV (default: generate from config)")
    s.add_argument("--snr", type=float)
    s.set_defaults(func=cmd_measure)

    s = sub.add_parser("reconstruct", parents=[common], help="recover grid RIRs from a recording")
    s.add_argument("--measurement", required=True)
    s.add_argument("--trajectory")
    s.add_argument("--truth", help="ground-truth .sfr; adds an MNSM row")
    s.add_argument("--diagnostics", help="diagnostics CSV path")
    s.add_argument("--static", action="store_true", help="fixed-microphone deconvolution")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("evaluate", parents=[common], help="MNSM between two .sfr files")
    s.add_argument("--truth", required=True)
    s.add_argument("--estimate", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict-mmse", parents=[common], help="closed-form MMSE of a trajectory")
    s.add_argument("--trajectory")
    s.add_argument("--snr", type=float)
    s.add_argument("--sigma-h2", type=float, dest="sigma_h2")
    s.add_argument("--profile", help="per-sample profile CSV")
    s.set_defaults(func=cmd_predict_mmse)

    s = sub.add_parser("experiment", help="reproduction experiments")
    exp = s.add_subparsers(dest="experiment", required=True)
    e = exp.add_parser("table1", parents=[common], help="static vs dynamic noise sweep")
    e.add_argument("--seeds", type=int, help="number of noise seeds")
    e.set_defaults(func=cmd_table1)
    e = exp.add_parser("fig1", parents=[common], help="Lissajous spacing and kernel sweep")
    e.add_argument("--snr", type=float, default=40.0)
    e.set_defaults(func=cmd_fig1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    limit = contextlib.nullcontext()
    if args.threads:
        from threadpoolctl import threadpool_limits

        limit = threadpool_limits(args.threads)
    try:
        with limit:
            return args.func(args)
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, FileNotFoundError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
