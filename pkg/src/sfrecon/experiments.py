"""Reproduction drivers: static vs dynamic noise sweep, and spacing sweep.

Both drivers simulate each noise-free recording once and add noise per
(SNR, seed), which gives the same draws as simulating each case directly.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import mnsm
from .geometry import GridSpec, gen_grid_snapped, gen_lissajous, gen_static, nyquist_spacing
from .interp import InterpolationKernel
from .room import RoomSpec, simulate_grid_rirs
from .signals import generate_mls
from .solve import SolverConfig, solve_decoupled, static_deconvolve
from .system import (
    ImperfectSequenceWarning,
    RirCache,
    add_noise,
    assemble_decoupled,
    simulate_measurement,
)

__all__ = [
    "TABLE1_SETUPS",
    "TABLE1_SNRS",
    "Fig1Preset",
    "FIG1_PRESETS",
    "plane_room",
    "run_table1",
    "run_fig1",
    "write_table1_csv",
    "write_fig1_csv",
]

log = logging.getLogger(__name__)

TABLE1_SETUPS = ("Static", "Dyn-25", "Dyn-20", "Dyn-15", "Dyn-10", "Dyn-5")
TABLE1_SNRS = (10, 20, 30, 40, 50, 60, 70)
PLANE_ORIGIN = (2.75, 1.4, 0.8)


def plane_room(**overrides) -> RoomSpec:
    """The 5.8 x 4.15 x 2.55 m room with RT60 0.3 s used by both experiments."""
    kw = dict(dimensions=(5.8, 4.15, 2.55), rt60=0.3, source_position=(1.4, 1.6, 1.0))
    kw.update(overrides)
    return RoomSpec(**kw)


def run_table1(
    seeds=(0, 1, 2, 3, 4),
    snrs=TABLE1_SNRS,
    setups=TABLE1_SETUPS,
    room: RoomSpec | None = None,
    spacing: float = 0.02,
    shape=(5, 5),
    order: int = 9,
    L: int = 500,
    R: int = 10,
    trajectory_seed: int = 0,
) -> list[dict]:
    """MNSM (dB) for the static baseline and grid-snapped dynamic arrays.

    ``Dyn-Q`` moves a rigid ``Q``-microphone array over the grid by quarter
    turns and shifts. Rows carry the mean and standard deviation over
    ``seeds``.
    """
    room = room or plane_room()
    grid = GridSpec(PLANE_ORIGIN, spacing, (shape[0], shape[1], 1))
    exc = generate_mls(order)
    Lp = exc.period_length
    truth = simulate_grid_rirs(room, grid, L)
    cache = RirCache(room, L)
    kernel = InterpolationKernel.linear()
    rows = []
    for setup in setups:
        if setup == "Static":
            traj = gen_static(grid, R * Lp)
        else:
            Q = int(setup.split("-")[1])
            traj = gen_grid_snapped(grid, Q, R * Lp, trajectory_seed, period=Lp)
        clean = simulate_measurement(room, traj, exc, R, None, None, L, cache=cache)
        for snr in snrs:
            vals = []
            for seed in seeds:
                rec = add_noise(clean, snr, seed)
                if setup == "Static":
                    est = static_deconvolve(rec, grid, L).rirs
                else:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", ImperfectSequenceWarning)
                        sys = assemble_decoupled(traj, exc, R, kernel, grid, rec.samples, L)
                    est = solve_decoupled(sys, exc).rirs
                vals.append(mnsm(truth, est))
            rows.append(
                {
                    "setup": setup,
                    "snr_db": float(snr),
                    "mnsm_db": float(np.mean(vals)),
                    "std_db": float(np.std(vals)),
                    "seeds": len(vals),
                }
            )
            log.info("%s SNR %g: %.2f dB", setup, snr, rows[-1]["mnsm_db"])
    return rows


def write_table1_csv(rows, path) -> None:
    with Path(path).open("w") as fh:
        fh.write("setup,snr_db,mnsm_db,std_db,seeds\n")
        for r in rows:
            fh.write(f"{r['setup']},{r['snr_db']!r},{r['mnsm_db']!r},{r['std_db']!r},{r['seeds']}\n")


@dataclass(frozen=True)
class Fig1Preset:
    shape: int  # X = Y
    order: int  # MLS order, L_p = 2**order - 1
    L: int
    R: int
    oversampling: tuple  # multiples of the Nyquist spacing


FIG1_PRESETS = {
    "paper": Fig1Preset(20, 10, 1000, 1000, (1.0, 2.0, 3.0, 4.0)),
    # R = 200 makes Lissajous phase blocks singular (y repeats every 25 periods)
    "desk": Fig1Preset(10, 8, 250, 500, (1.0, 2.0, 3.0, 4.0)),
}


def run_fig1(
    scale: str = "desk",
    snr_db: float | None = 40.0,
    seed: int = 0,
    oversampling=None,
    room: RoomSpec | None = None,
    ratio=(17, 16),
    max_degree: int = 19,
) -> list[dict]:
    """MNSM (dB) of Lissajous recovery per grid spacing and kernel.

    Spacings are ``nyquist / k`` for ``k`` in ``oversampling``, with the
    Nyquist spacing taken from the simulated band edge ``room.cutoff``.
    """
    preset = FIG1_PRESETS[scale]
    room = room or plane_room()
    factors = preset.oversampling if oversampling is None else tuple(oversampling)
    exc = generate_mls(preset.order)
    Lp, R, L = exc.period_length, preset.R, preset.L
    ny = nyquist_spacing(room.cutoff, room.speed_of_sound)
    kernels = (("linear", InterpolationKernel.linear()), ("lagrange", InterpolationKernel.lagrange(max_degree)))
    cfg = SolverConfig()
    rows = []
    for k in factors:
        spacing = ny / k
        grid = GridSpec(PLANE_ORIGIN, spacing, (preset.shape, preset.shape, 1))
        truth = simulate_grid_rirs(room, grid, L)
        traj = gen_lissajous(grid, ratio[0], ratio[1], R * Lp)
        clean = simulate_measurement(room, traj, exc, R, None, None, L)
        rec = add_noise(clean, snr_db, seed)
        for name, kernel in kernels:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ImperfectSequenceWarning)
                sys = assemble_decoupled(traj, exc, R, kernel, grid, rec.samples, L)
            est = solve_decoupled(sys, exc, cfg).rirs
            rows.append(
                {
                    "spacing": float(spacing),
                    "oversampling": float(k),
                    "kernel": name,
                    "snr_db": snr_db,
                    "mnsm_db": float(mnsm(truth, est)),
                }
            )
            log.info("spacing %.4f %s: %.2f dB", spacing, name, rows[-1]["mnsm_db"])
    return rows


def write_fig1_csv(rows, path) -> None:
    with Path(path).open("w") as fh:
        fh.write("spacing,oversampling,kernel,snr_db,mnsm_db\n")
        for r in rows:
            snr = "none" if r["snr_db"] is None else repr(float(r["snr_db"]))
            fh.write(f"{r['spacing']!r},{r['oversampling']!r},{r['kernel']},{snr},{r['mnsm_db']!r}\n")
