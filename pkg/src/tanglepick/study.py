"""Run a configured study end to end; the same entry point serves the CLI and replay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .column import ColumnResult, column_run, pour_and_shake
from .config import Config
from .geometry import GrainType
from .pick import PickDataset, Protocol, repeated_gripper_targets, run_parametric_study
from .simulate import cylinder_volume, packing_fraction, structure_height


def run_study(cfg: Config, on_error=None) -> PickDataset:
    """Picking dataset for every target in the configured grid and every seed."""
    targets = cfg.targets()
    if Protocol(cfg.protocol) is Protocol.MAGNET:
        return run_parametric_study(targets, cfg.iterations, cfg.seeds, cfg.grain_count, magnet=cfg.magnet(),
                                    link=cfg.link(), scene=cfg.scene(), on_error=on_error)
    ds = PickDataset(iterations=cfg.iterations)
    for seed in cfg.seeds:
        for t in targets:
            ds.extend(repeated_gripper_targets(t, cfg.iterations, seed, gripper=cfg.gripper(), link=cfg.link(),
                                               scene=cfg.scene()))
    return ds


@dataclass(frozen=True)
class PackResult:
    grain_type: str
    seed: int
    n_grains: int
    h0: float
    packing_fraction: float
    converged: bool


def run_pack(cfg: Config) -> list[PackResult]:
    out = []
    col = cfg.column()
    for gt in cfg.grain_types:
        for seed in cfg.seeds:
            state, ok = pour_and_shake(gt, seed, col)
            h0 = structure_height(state)
            pf = packing_fraction(float(state.volume.sum()), cylinder_volume(state.container.diameter, h0)) \
                if h0 > 0 else 0.0
            out.append(PackResult(GrainType.parse(gt).value, seed, state.n_bodies, h0, pf, ok))
    return out


def run_integrity(cfg: Config) -> list[ColumnResult]:
    col = cfg.column()
    return [column_run(gt, seed, col) for gt in cfg.grain_types for seed in cfg.seeds]


def medians_by_type(results) -> dict[str, float]:
    by: dict[str, list[float]] = {}
    for r in results:
        by.setdefault(r.grain_type, []).append(r.integrity)
    return {k: float(np.median(v)) for k, v in by.items()}
