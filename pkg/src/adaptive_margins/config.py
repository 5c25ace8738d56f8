"""Key-value configuration for the vehicle, controller, library and LUT build.

The on-disk format is INI (``configparser``).  Every section maps onto one of
the dataclasses below; keys missing from the file fall back to the defaults.
List-valued keys are comma separated.  A documented example lives in
``data/default.ini``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

GRAVITY = 9.81


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration values."""


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1.0  # [kg]
    hover_thrust: float = 0.5  # normalized thrust that balances gravity
    attitude_tau: float = 0.15  # first-order roll/pitch lag [s]
    dt: float = 0.01  # integrator step [s]

    @property
    def max_thrust_force(self) -> float:
        """Force at normalized thrust 1 [N]; linear thrust map."""
        return self.mass * GRAVITY / self.hover_thrust


@dataclass(frozen=True)
class ControllerParams:
    kp_pos: float = 2.0
    kp_vel: float = 4.0
    ki: float = 0.1
    kd: float = 0.2
    kp_yaw: float = 1.0
    max_tilt: float = 0.5  # [rad]
    max_yaw_rate: float = 2.0  # [rad/s]
    integral_limit: float = 1.0  # anti-windup on the position-error integral [m s]
    period: float = 0.05  # control update period [s]


@dataclass(frozen=True)
class LibraryParams:
    speeds: tuple[float, ...] = (0.5, 1.0)
    angular_speed_max: float = math.pi / 3
    n_angular: int = 11
    t_f: float = 3.0
    sample_period: float = 0.1
    altitude: float = 1.0  # [m], planar primitives fly at constant z

    @property
    def angular_speeds(self) -> tuple[float, ...]:
        if self.n_angular == 1:
            return (0.0,)
        step = 2 * self.angular_speed_max / (self.n_angular - 1)
        vals = [-self.angular_speed_max + i * step for i in range(self.n_angular)]
        # exact zero for the straight member
        return tuple(0.0 if abs(v) < 1e-12 else v for v in vals)


@dataclass(frozen=True)
class TubeParams:
    sigma_grid: tuple[float, ...] = tuple(i * 0.625 for i in range(9))
    epsilon: float = 0.05
    n_mc: int = 1000
    n_segments: int = 10
    disturbance_period: float = 0.1  # [s] hold time of each Gaussian draw
    init_pos_std: float = 0.05  # [m] per axis
    init_vel_std: float = 0.05  # [m/s] per axis
    include_vertical: bool = True  # cross-track error spans lateral + vertical
    common_random_numbers: bool = True
    seed: int = 0


@dataclass(frozen=True)
class EstimatorParams:
    window: float = 3.0  # [s]
    hot_start: float = 3.0  # [m/s^2] reported until min_samples arrive
    min_samples: int = 1


@dataclass(frozen=True)
class PlannerParams:
    replan_rate: float = 5.0  # [Hz]
    strict_grid: bool = False  # raise on sigma above the grid instead of clamping


@dataclass(frozen=True)
class Config:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    controller: ControllerParams = field(default_factory=ControllerParams)
    library: LibraryParams = field(default_factory=LibraryParams)
    tube: TubeParams = field(default_factory=TubeParams)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    planner: PlannerParams = field(default_factory=PlannerParams)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Short digest over every field, stored in LUT metadata."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = {
    "vehicle": VehicleParams,
    "controller": ControllerParams,
    "library": LibraryParams,
    "tube": TubeParams,
    "estimator": EstimatorParams,
    "planner": PlannerParams,
}


def _parse_value(raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r}: {exc}") from None
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path: str | Path | None = None) -> Config:
    """Read an INI file; ``None`` returns the defaults."""
    if path is None:
        return Config()
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    parts = {}
    for name, cls in _SECTIONS.items():
        defaults = cls()
        kwargs = {}
        if parser.has_section(name):
            known = {f.name for f in dataclasses.fields(cls)}
            for key, raw in parser.items(name):
                if key not in known:
                    raise ConfigError(f"unknown key [{name}] {key}")
                kwargs[key] = _parse_value(raw, getattr(defaults, key))
        parts[name] = cls(**kwargs)
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    cfg = Config(**parts)
    validate(cfg)
    return cfg


def save_config(cfg: Config, path: str | Path) -> None:
    lines = []
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for key, value in dataclasses.asdict(getattr(cfg, name)).items():
            if isinstance(value, list):
                value = tuple(value)
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def validate(cfg: Config) -> None:
    v, c, lib, tube = cfg.vehicle, cfg.controller, cfg.library, cfg.tube
    if not (0 < v.hover_thrust <= 1):
        raise ConfigError("hover_thrust must lie in (0, 1]")
    if v.dt <= 0 or v.attitude_tau <= 0 or v.mass <= 0:
        raise ConfigError("dt, attitude_tau and mass must be positive")
    if c.period < v.dt:
        raise ConfigError("controller period shorter than integrator step")
    if not lib.speeds or lib.t_f <= 0:
        raise ConfigError("library needs speeds and t_f > 0")
    grid = tube.sigma_grid
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("sigma_grid must be nonempty and strictly ascending")
    if not (0 < tube.epsilon < 1):
        raise ConfigError("epsilon must lie in (0, 1)")
    if cfg.planner.replan_rate <= 0:
        raise ConfigError("replan_rate must be positive")
