"""Flat ``key = value`` run configuration.

One setting per line; ``#`` starts a comment; blank lines are ignored. Lists
are comma separated. Unknown keys and bad values are errors that cite the key
and the line. Every key has a default, so an empty file is a valid config.

    protocol = Magnet          # Magnet or Gripper
    grid = full                # full (27 cells) or single
    tau_mm = 0.4               # single-cell target
    lambda_mm = 60
    spikes = 1
    iterations = 10
    seeds = 0,1,2
    grain_count = 100
    link_d0_mm = 2.0
"""

from __future__ import annotations

import hashlib
import typing
from dataclasses import dataclass, fields, replace

from .column import ColumnConfig
from .entangle import LinkModel
from .geometry import GRID_LAMBDA, GRID_SIGMA, GRID_TAU, GrainType, build_target, parametric_grid
from .pick import GripperSpec, MagnetSpec, PickScene, Protocol
from .simulate import SimParams


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class Config:
    # picking study
    protocol: str = "Magnet"
    grid: str = "full"
    tau_mm: float = 0.4
    lambda_mm: float = 60.0
    spikes: int = 1
    taus: tuple[float, ...] = GRID_TAU
    lambdas: tuple[float, ...] = GRID_LAMBDA
    sigmas: tuple[int, ...] = GRID_SIGMA
    iterations: int = 10
    seeds: tuple[int, ...] = (0,)
    grain_count: int = 100
    grain_probes: int = 4
    cluster_grain_type: str = "V"  # gripper protocol on a grain cluster
    cluster_segments: int = 150
    # magnet, gripper, links
    face_diameter_mm: float = 80.0
    capture_gap_mm: float = 3.0
    max_pull_n: float = 2000.0
    jaw_width_mm: float = 60.0
    jaw_depth_mm: float = 20.0
    closing_stroke_mm: float = 55.0
    open_gap_mm: float = 60.0
    link_d0_mm: float = 2.0
    link_constant: float | None = None
    # cylinder runs
    grain_types: tuple[str, ...] = ("I", "V", "IV", "VII")
    segments: int = 100
    shake_duration_s: float = 0.5
    shake_amplitude_mm: float = 2.0
    shake_frequency_hz: float = 10.0
    lift_speed_mm_s: float = 50.0
    free_time_s: float = 0.0
    # dynamics
    dt_s: float = 5e-5
    contact_stiffness_n_mm: float = 0.2
    contact_damping: float = 0.4
    friction: float = 0.5
    contact_drag: float = 5.0
    settle_ke_threshold_j: float = 1e-9
    max_steps: int = 50_000

    def __post_init__(self):
        try:
            Protocol(self.protocol)
        except ValueError:
            raise ConfigError("must be Magnet or Gripper", "protocol") from None
        if self.grid not in ("full", "single"):
            raise ConfigError("must be full or single", "grid")
        if self.iterations < 1:
            raise ConfigError("must be >= 1", "iterations")
        if not self.seeds:
            raise ConfigError("needs at least one seed", "seeds")
        if self.grain_count < 0:
            raise ConfigError("must be >= 0", "grain_count")
        for g in self.grain_types + (self.cluster_grain_type,):
            try:
                GrainType.parse(g)
            except (ValueError, KeyError):
                raise ConfigError(f"unknown grain type {g!r}", "grain_types") from None

    # builders -------------------------------------------------------------

    def sim_params(self) -> SimParams:
        return SimParams(dt=self.dt_s, contact_stiffness=self.contact_stiffness_n_mm,
                         contact_damping=self.contact_damping, friction=self.friction,
                         contact_drag=self.contact_drag, settle_ke_threshold=self.settle_ke_threshold_j,
                         max_steps=self.max_steps)

    def column(self) -> ColumnConfig:
        return ColumnConfig(segments=self.segments, shake_duration=self.shake_duration_s,
                            shake_amplitude=self.shake_amplitude_mm, shake_frequency=self.shake_frequency_hz,
                            lift_speed=self.lift_speed_mm_s, free_time=self.free_time_s, params=self.sim_params())

    def magnet(self) -> MagnetSpec:
        return MagnetSpec(self.face_diameter_mm, self.capture_gap_mm, self.max_pull_n)

    def gripper(self) -> GripperSpec:
        return GripperSpec(self.jaw_width_mm, self.jaw_depth_mm, self.closing_stroke_mm, self.open_gap_mm)

    def link(self) -> LinkModel:
        return LinkModel(self.link_d0_mm, self.link_constant)

    def scene(self) -> PickScene:
        return PickScene(grain_probes=self.grain_probes)

    def targets(self):
        if self.grid == "single":
            return [build_target(self.tau_mm, self.lambda_mm, self.spikes)]
        return parametric_grid(self.taus, self.lambdas, self.sigmas)

    def with_overrides(self, **kw) -> "Config":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_HINTS = typing.get_type_hints(Config)
KEYS = tuple(f.name for f in fields(Config))


def _convert(key: str, raw: str, line: int | None):
    hint = _HINTS[key]
    try:
        if hint is str:
            return raw
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint == (float | None):
            return None if raw.lower() in ("", "none") else float(raw)
        args = typing.get_args(hint)
        if typing.get_origin(hint) is tuple:
            items = [x.strip() for x in raw.split(",") if x.strip()]
            return tuple(args[0](x) for x in items)
    except ValueError:
        raise ConfigError(f"cannot read {raw!r} as {getattr(hint, '__name__', hint)}", key, line) from None
    raise ConfigError(f"unsupported type {hint}", key, line)


def parse_config(text: str) -> Config:
    values = {}
    seen = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected key = value", None, n)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _HINTS:
            raise ConfigError("unknown key", key, n)
        if key in seen:
            raise ConfigError(f"repeated (first on line {seen[key]})", key, n)
        seen[key] = n
        values[key] = _convert(key, val, n)
    try:
        return Config(**values)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.key, seen.get(exc.key)) from None


def load_config(path) -> Config:
    with open(path) as fh:
        return parse_config(fh.read())


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: Config) -> str:
    """Every key, one per line, in declaration order; floats in shortest round-trip form."""
    return "".join(f"{k} = {_format(getattr(cfg, k))}\n" for k in KEYS)


def config_checksum(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
