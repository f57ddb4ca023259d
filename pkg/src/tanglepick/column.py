"""Cylinder experiments: fill, shake, measure height, lift the tube, measure again."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .deposit import deposit
from .geometry import ACRYLIC, SEGMENT_VOLUME, GrainType, MaterialSpec, build_grain, grains_for_segments, segment_count
from .simulate import (
    Container, SceneState, SimParams, cylinder_volume, grain_template, integrity, packing_fraction,
    remove_cylinder_and_relax, settle, shake, structure_height,
)


@dataclass(frozen=True)
class ColumnConfig:
    segments: int = 100
    shake_duration: float = 10.0  # s
    shake_amplitude: float = 2.0  # mm
    shake_frequency: float = 10.0  # Hz
    lift_speed: float = 50.0  # mm/s
    free_time: float = 0.0  # s of undragged collapse after the wall is gone
    pour_settle_steps: int = 20_000
    pour_batch: int = 0  # grains per layered-pour batch, 0 pours everything at once
    pour_batch_steps: int = 2_000
    params: SimParams = field(default_factory=SimParams)


# 0.5 s of shaking instead of 10 s keeps a 10-seed, four-type sweep to minutes on one core
DESK_COLUMN = ColumnConfig(shake_duration=0.5)


@dataclass(frozen=True)
class ColumnResult:
    grain_type: str
    seed: int
    n_grains: int
    h0: float
    h_after: float
    packing_fraction: float
    integrity: float
    converged: bool

    def as_row(self) -> dict:
        return asdict(self)


def fill_cylinder(grain_type: GrainType | str, seed: int, n_grains: int | None = None,
                  material: MaterialSpec = ACRYLIC, container: Container | None = None) -> SceneState:
    """Pour grains into the tube one at a time (quasi-static placement, no dynamics yet)."""
    shape = build_grain(grain_type)
    n = grains_for_segments(grain_type) if n_grains is None else n_grains
    state = SceneState(container or Container.cylinder(), rng_seed=seed)
    rng = np.random.default_rng(seed)
    tmpl = grain_template(shape, material)
    for _ in range(n):
        deposit(state, tmpl, rng)
    return state


def pour(grain_type, seed: int, cfg: ColumnConfig = ColumnConfig(), material: MaterialSpec = ACRYLIC) -> SceneState:
    """Fill the tube and let it come to rest.

    With ``pour_batch`` > 0 grains arrive in small batches, each placed at
    first contact on the pile and relaxed for ``pour_batch_steps`` before the
    next, which is a gentler pour than releasing the whole column at once.
    """
    n = max(1, round(cfg.segments / segment_count(grain_type)))
    p = cfg.params
    if cfg.pour_batch <= 0:
        state = fill_cylinder(grain_type, seed, n, material)
        return settle(state, replace_steps(p, cfg.pour_settle_steps), raise_on_fail=False).state
    state = SceneState(Container.cylinder(), rng_seed=seed)
    rng = np.random.default_rng(seed)
    tmpl = grain_template(build_grain(grain_type), material)
    placed = 0
    while placed < n:
        for _ in range(min(cfg.pour_batch, n - placed)):
            deposit(state, tmpl, rng)
            placed += 1
        state = settle(state, replace_steps(p, cfg.pour_batch_steps), raise_on_fail=False, copy=False).state
    return settle(state, replace_steps(p, cfg.pour_settle_steps), raise_on_fail=False, copy=False).state


def pour_and_shake(grain_type, seed: int, cfg: ColumnConfig = ColumnConfig()) -> tuple[SceneState, bool]:
    state = pour(grain_type, seed, cfg)
    p = cfg.params
    res = shake(state, p, cfg.shake_duration, cfg.shake_amplitude, cfg.shake_frequency) \
        if cfg.shake_duration > 0 else settle(state, p, raise_on_fail=False)
    return res.state, res.converged


def replace_steps(p: SimParams, max_steps: int) -> SimParams:
    from dataclasses import replace
    return replace(p, max_steps=max_steps)


def column_run(grain_type, seed: int, cfg: ColumnConfig = ColumnConfig()) -> ColumnResult:
    state, ok0 = pour_and_shake(grain_type, seed, cfg)
    h0 = structure_height(state)
    vg = float(state.volume.sum())
    pf = packing_fraction(vg, cylinder_volume(state.container.diameter, h0))
    after = remove_cylinder_and_relax(state, cfg.params, cfg.lift_speed, free_time=cfg.free_time)
    h1 = structure_height(after.state)
    dh = min(max(h0 - h1, 0.0), h0)
    return ColumnResult(GrainType.parse(grain_type).value, seed, state.n_bodies, h0, h1, pf, integrity(h0, dh),
                        ok0 and after.converged)


def grain_volume(grain_type) -> float:
    return segment_count(grain_type) * SEGMENT_VOLUME
