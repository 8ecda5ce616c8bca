"""Experiment configuration as flat ``key = value`` INI sections.

Defaults reproduce the 5 x 5 plane experiment: 0.02 m grid at 0.8 m
height, MLS of period 511, 10 periods, 500-tap RIRs.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GridSpec, Trajectory, gen_grid_snapped, gen_lissajous, gen_static
from .interp import InterpolationKernel, KernelKind
from .room import RoomSpec
from .signals import ExcitationSignal, generate_flat_spectrum, generate_mls
from .solve import SolverConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


# section -> field -> parser
_SCHEMA = {
    "room": {
        "dimensions": _floats,
        "rt60": float,
        "source": _floats,
        "sample_rate": float,
        "cutoff": _opt_float,
        "speed_of_sound": float,
        "reflection": _opt_float,
    },
    "grid": {"origin": _floats, "spacing": float, "shape": _ints},
    "excitation": {"kind": str, "order": int, "period": int, "power": float, "seed": int},
    "trajectory": {"kind": str, "mics": int, "ratio": _ints, "seed": int},
    "measurement": {"periods": int, "rir_length": int, "snr_db": _floats, "seeds": _ints},
    "kernel": {"kind": str, "max_degree": int},
    "solver": {
        "method": str,
        "ridge_lambda": float,
        "rank_tolerance": float,
        "back_transform": str,
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    room_dimensions: tuple = (5.8, 4.15, 2.55)
    room_rt60: float = 0.3
    room_source: tuple = (1.4, 1.6, 1.0)
    room_sample_rate: float = 8000.0
    room_cutoff: float | None = None
    room_speed_of_sound: float = 343.0
    room_reflection: float | None = None
    grid_origin: tuple = (2.75, 1.4, 0.8)
    grid_spacing: float = 0.02
    grid_shape: tuple = (5, 5, 1)
    excitation_kind: str = "mls"
    excitation_order: int = 9
    excitation_period: int = 511
    excitation_power: float = 1.0
    excitation_seed: int = 0
    trajectory_kind: str = "static"  # static | grid_snapped | lissajous
    trajectory_mics: int = 25
    trajectory_ratio: tuple = (17, 16)
    trajectory_seed: int = 0
    measurement_periods: int = 10
    measurement_rir_length: int = 500
    measurement_snr_db: tuple = (40.0,)
    measurement_seeds: tuple = (0,)
    kernel_kind: str = "linear"
    kernel_max_degree: int = 19
    solver_method: str = "decoupled"
    solver_ridge_lambda: float = 0.0
    solver_rank_tolerance: float = 1e-10
    solver_back_transform: str = "fit"
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    # --- builders -------------------------------------------------------

    def room(self) -> RoomSpec:
        return RoomSpec(
            self.room_dimensions,
            self.room_rt60,
            self.room_source,
            self.room_sample_rate,
            self.room_cutoff,
            self.room_speed_of_sound,
            reflection=self.room_reflection,
        )

    def grid(self) -> GridSpec:
        return GridSpec(self.grid_origin, self.grid_spacing, self.grid_shape)

    def excitation(self) -> ExcitationSignal:
        if self.excitation_kind == "mls":
            return generate_mls(self.excitation_order, self.excitation_power)
        return generate_flat_spectrum(self.excitation_period, self.excitation_power, self.excitation_seed)

    @property
    def period_length(self) -> int:
        if self.excitation_kind == "mls":
            return 2**self.excitation_order - 1
        return self.excitation_period

    def trajectory(self) -> Trajectory:
        grid = self.grid()
        Lp = self.period_length
        steps = self.measurement_periods * Lp
        if self.trajectory_kind == "static":
            return gen_static(grid, steps)
        if self.trajectory_kind == "grid_snapped":
            return gen_grid_snapped(grid, self.trajectory_mics, steps, self.trajectory_seed, period=Lp)
        return gen_lissajous(grid, self.trajectory_ratio[0], self.trajectory_ratio[1], steps)

    def kernel(self) -> InterpolationKernel:
        kind = KernelKind(self.kernel_kind)
        return InterpolationKernel(kind, 1 if kind is KernelKind.LINEAR else self.kernel_max_degree)

    def solver(self) -> SolverConfig:
        return SolverConfig(
            self.solver_method,
            self.solver_ridge_lambda,
            self.solver_rank_tolerance,
            back_transform=self.solver_back_transform,
        )

    # --- validation -----------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        """Check every field and cross-field constraint; raise :class:`ConfigError`."""
        checks = [
            ("room", self.room),
            ("grid", self.grid),
            ("kernel", self.kernel),
            ("solver", self.solver),
        ]
        built = {}
        for name, make in checks:
            try:
                built[name] = make()
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[{name}] {exc}") from None
        if self.excitation_kind not in ("mls", "flat"):
            raise ConfigError(f"[excitation] kind must be 'mls' or 'flat', got {self.excitation_kind!r}")
        if self.excitation_kind == "mls" and not 2 <= self.excitation_order <= 24:
            raise ConfigError("[excitation] order must lie in [2, 24]")
        if self.excitation_kind == "flat" and self.excitation_period < 2:
            raise ConfigError("[excitation] period must be >= 2")
        if not self.excitation_power > 0:
            raise ConfigError("[excitation] power must be positive")
        if self.trajectory_kind not in ("static", "grid_snapped", "lissajous"):
            raise ConfigError(
                f"[trajectory] kind must be static, grid_snapped or lissajous, got {self.trajectory_kind!r}"
            )
        if len(self.trajectory_ratio) != 2 or min(self.trajectory_ratio) < 1:
            raise ConfigError("[trajectory] ratio must be two positive integers")
        if not 1 <= self.trajectory_mics <= built["grid"].size:
            raise ConfigError(f"[trajectory] mics must lie in [1, {built['grid'].size}]")
        if self.measurement_periods < 1:
            raise ConfigError("[measurement] periods must be >= 1")
        if not 1 <= self.measurement_rir_length <= self.period_length:
            raise ConfigError(
                f"[measurement] rir_length={self.measurement_rir_length} must lie in "
                f"[1, L_p={self.period_length}]"
            )
        if not self.measurement_seeds:
            raise ConfigError("[measurement] seeds must not be empty")
        g = built["grid"]
        room = built["room"]
        if not (np.all(room.contains(g.lower)) and np.all(room.contains(g.upper))):
            raise ConfigError("[grid] grid extends outside the room")
        return self

    # --- text form ------------------------------------------------------

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section, fields in _SCHEMA.items():
            cp[section] = {key: _fmt(getattr(self, f"{section}_{key}")) for key in fields}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse INI text; unknown sections or keys are errors, missing keys keep defaults."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            try:
                values[f"{section}_{key}"] = _SCHEMA[section][key](raw)
            except ValueError:
                raise ConfigError(f"{source}: [{section}] {key} = {raw!r} is not valid") from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), str(path))
