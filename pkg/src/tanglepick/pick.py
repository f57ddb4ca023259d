"""Picking protocols: electromagnet drop-and-recall and the parallel-gripper baseline.

Scenes here are built by quasi-static deposition (see ``deposit``). A falling
body may overlap a resting target by the tip deflection the target would show
as a cantilever of half its length loaded by the faller's weight, so thin long
strips let grains sink in and thread through, stiff ones do not.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from enum import Enum

import numpy as np

from . import _kernels as K
from .deposit import deposit, redeposit
from .entangle import LinkModel, entanglement_graph, pick_closure
from .geometry import (
    ACRYLIC, STEEL, GrainType, MaterialSpec, TargetShape, build_grain, grains_for_segments, mNm2_to_Nmm2,
    parametric_grid, segment_count,
)
from .simulate import G_MM, KIND_GRAIN, KIND_TARGET, Container, SceneState, grain_template, target_template

AVAILABLE_UNITS = 100
DEFAULT_ITERATIONS = 10
DATASET_HEADER = ("protocol", "grain_count", "tau_mm", "lambda_mm", "spikes", "iteration", "seed",
                  "picked_mass_g", "unit_mass_g", "picked_units")


class NoGrainsAttached(RuntimeError):
    """The magnet came down on the pile and caught no ferromagnetic body."""


class Protocol(str, Enum):
    MAGNET = "Magnet"
    GRIPPER = "Gripper"


@dataclass(frozen=True)
class MagnetSpec:
    face_diameter: float = 80.0  # mm
    capture_gap: float = 3.0  # mm
    max_pull: float = 2000.0  # N, recorded only

    def __post_init__(self):
        if not self.face_diameter > 0 or not self.capture_gap > 0:
            raise ValueError("face diameter and capture gap must be > 0")


@dataclass(frozen=True)
class GripperSpec:
    jaw_width: float = 60.0  # mm, along the jaws
    jaw_depth: float = 20.0  # mm, how far the jaws reach down into the pile
    closing_stroke: float = 55.0  # mm, open gap minus closed gap
    open_gap: float = 60.0  # mm

    def __post_init__(self):
        for k in ("jaw_width", "jaw_depth", "closing_stroke", "open_gap"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be > 0")
        if self.closing_stroke > self.open_gap:
            raise ValueError("stroke exceeds the open gap")

    @property
    def closed_gap(self) -> float:
        return self.open_gap - self.closing_stroke


CSV_DIGITS = 9


def quantize(v: float) -> float:
    """Round to the significant digits written to CSV."""
    return float(f"{float(v):.{CSV_DIGITS}g}")


@dataclass(frozen=True)
class PickRecord:
    protocol: Protocol
    grain_count: int
    tau_mm: float
    lambda_mm: float
    spikes: int
    iteration: int
    seed: int
    picked_mass_g: float
    unit_mass_g: float
    picked_units: int

    def __post_init__(self):
        # stored at the CSV precision so a written dataset reads back identical
        for k in ("tau_mm", "lambda_mm", "picked_mass_g", "unit_mass_g"):
            object.__setattr__(self, k, quantize(getattr(self, k)))
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        for k in ("grain_count", "spikes", "iteration", "seed", "picked_units"):
            object.__setattr__(self, k, int(getattr(self, k)))

    def row(self) -> list:
        return [self.protocol.value, self.grain_count, self.tau_mm, self.lambda_mm, self.spikes, self.iteration,
                self.seed, self.picked_mass_g, self.unit_mass_g, self.picked_units]

    @property
    def config(self) -> tuple:
        return (self.protocol.value, self.grain_count, self.tau_mm, self.lambda_mm, self.spikes)


@dataclass
class PickDataset:
    records: list[PickRecord] = field(default_factory=list)
    unit_mass: float | None = None
    available_units: int = AVAILABLE_UNITS
    iterations: int = DEFAULT_ITERATIONS

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def extend(self, other: "PickDataset") -> None:
        self.records.extend(other.records)


def picked_units(picked_mass: float, unit_mass: float, available: int = AVAILABLE_UNITS) -> int:
    if not unit_mass > 0:
        raise ValueError("unit mass must be > 0")
    return int(min(max(round(picked_mass / unit_mass), 0), available))


def success_rate(records, success) -> float:
    records = list(records)
    if not records:
        raise ValueError("no records")
    return sum(1 for r in records if success(r)) / len(records)


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------

GRAIN_CLASS = 0
TARGET_CLASS = 1


def cantilever_deflection(weight_n: float, length_mm: float, ei_nmm2: float) -> float:
    """Tip deflection (mm) of a cantilever under an end load."""
    return weight_n * length_mm**3 / (3.0 * ei_nmm2)


def allowance_table(target: TargetShape, grain_mass_g: float, cap: float = 6.0) -> np.ndarray:
    """Permitted overlap [falling class, resting class] in mm.

    Anything falling on a target may push it aside by the target's deflection
    under the faller's weight over half its length, capped at ``cap``.
    Grains do not give way.
    """
    ei = mNm2_to_Nmm2(target.bending_stiffness)
    span = target.length / 2.0
    w_grain = grain_mass_g * G_MM * 1e-6
    w_target = target.unit_mass * G_MM * 1e-6
    t = np.zeros((2, 2))
    t[GRAIN_CLASS, TARGET_CLASS] = min(cantilever_deflection(w_grain, span, ei), cap)
    t[TARGET_CLASS, TARGET_CLASS] = min(cantilever_deflection(w_target, span, ei), cap)
    t[TARGET_CLASS, GRAIN_CLASS] = t[TARGET_CLASS, TARGET_CLASS]
    return t


@dataclass(frozen=True)
class PickScene:
    """Settings for building bowl scenes."""

    units: int = AVAILABLE_UNITS
    container: Container = field(default_factory=Container.bowl)
    target_tilt: float = math.pi / 6  # max tilt of dropped targets, rad
    grain_tilt: float = math.pi / 2
    grain_type: str = "V"
    grain_material: MaterialSpec = STEEL
    grain_probes: int = 4  # drop poses tried per grain, lowest kept
    grain_spread: float | None = None  # mm, radius of the grain release disc; None = magnet face radius

    def release_radius(self, magnet: "MagnetSpec") -> float:
        return magnet.face_diameter / 2 if self.grain_spread is None else self.grain_spread


def steel_grain(scene: PickScene = PickScene()):
    return _grain_template(scene.grain_type, scene.grain_material)


@lru_cache(maxsize=32)
def _grain_template(kind: str, material: MaterialSpec):
    return grain_template(build_grain(kind), material, ferromagnetic=True)


def target_scene(target: TargetShape, rng: np.random.Generator, scene: PickScene = PickScene(),
                 allow: np.ndarray | None = None) -> SceneState:
    """A bowl holding ``scene.units`` copies of the target, dropped one by one."""
    state = SceneState(scene.container)
    allow = allowance_table(target, steel_grain(scene).mass) if allow is None else allow
    tmpl = target_template(target, TARGET_CLASS)
    spread = scene.container.radius_at(0.0)
    for _ in range(scene.units):
        deposit(state, tmpl, rng, spread=spread, max_tilt=scene.target_tilt, allow=allow)
    return state


def grain_scene(grain_type, n: int, rng: np.random.Generator, scene: PickScene = PickScene(),
                material: MaterialSpec = ACRYLIC) -> SceneState:
    """A bowl holding n grains of one type (gripper baseline on grain clusters)."""
    state = SceneState(scene.container)
    tmpl = grain_template(build_grain(grain_type), material)
    for _ in range(n):
        deposit(state, tmpl, rng, spread=scene.container.radius_at(0.0) / 2, max_tilt=scene.grain_tilt)
    return state


def drop_grains(state: SceneState, n: int, rng: np.random.Generator, magnet: MagnetSpec, scene: PickScene,
                allow: np.ndarray) -> list[int]:
    """Release n ferromagnetic grains from under the magnet face onto the pile."""
    tmpl = steel_grain(scene)
    return [deposit(state, tmpl, rng, spread=scene.release_radius(magnet), max_tilt=scene.grain_tilt, allow=allow,
                    probes=scene.grain_probes) for _ in range(n)]


def attract(state: SceneState, magnet: MagnetSpec, centre=(0.0, 0.0)) -> set[int]:
    """Units caught by the magnet lowered onto the pile.

    The face comes down to the highest grain under it, pushing any
    non-magnetic target that sticks up higher out of the way. Ferromagnetic
    units whose top is within the capture gap of the face attach, then any
    ferromagnetic unit within the gap of an attached one joins, repeatedly.
    """
    if state.n_bodies == 0:
        return set()
    ferro_units = sorted({int(state.unit[b]) for b in range(state.n_bodies) if state.ferro[b]})
    if not ferro_units:
        return set()
    wa, wb = state.world_capsules()
    shifted_a = wa.copy()
    shifted_b = wb.copy()
    shifted_a[:, :2] -= centre
    shifted_b[:, :2] -= centre
    cu = state.unit[state.cap_body]
    top = np.maximum(wa[:, 2], wb[:, 2]) + state.cap_r
    rho = np.sqrt(np.minimum(shifted_a[:, 0] ** 2 + shifted_a[:, 1] ** 2, shifted_b[:, 0] ** 2 + shifted_b[:, 1] ** 2))
    ferro_cap = np.isin(cu, ferro_units)
    under = (rho <= magnet.face_diameter / 2) & ferro_cap
    if not under.any():
        return set()
    face = float(top[under].max())
    caught = {int(u) for u in np.unique(cu[under & (top >= face - magnet.capture_gap)])}
    geo = {u: (wa[cu == u], wb[cu == u], state.cap_r[cu == u]) for u in ferro_units}
    frontier = list(caught)
    while frontier:
        u = frontier.pop()
        for v in ferro_units:
            if v in caught:
                continue
            d = K.min_capsule_distance(*geo[u], *geo[v])
            if d <= magnet.capture_gap:
                caught.add(v)
                frontier.append(v)
    return caught


def _capsule_in_box(a, b, r, half, lo_z, hi_z, samples: int = 9) -> bool:
    t = np.linspace(0.0, 1.0, samples)[:, None]
    p = a + t * (b - a)
    inside = (np.abs(p[:, 0]) <= half[0] + r) & (np.abs(p[:, 1]) <= half[1] + r) \
        & (p[:, 2] >= lo_z - r) & (p[:, 2] <= hi_z + r)
    return bool(inside.any())


def grasp_units(state: SceneState, gripper: GripperSpec, centre=(0.0, 0.0), yaw: float = 0.0) -> set[int]:
    """Units whose capsules reach into the box between the closed jaws.

    The jaws come down to the top of the pile under the gripper and reach
    ``jaw_depth`` into it. Capsule axes are sampled at nine points.
    """
    if state.n_bodies == 0:
        return set()
    wa, wb = state.world_capsules()
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    off = np.array([centre[0], centre[1], 0.0])
    la = (wa - off) @ rot.T
    lb = (wb - off) @ rot.T
    half_xy = np.array([gripper.closed_gap / 2, gripper.jaw_width / 2])
    foot = (np.minimum(np.abs(la[:, 0]), np.abs(lb[:, 0])) <= gripper.open_gap / 2) \
        & (np.minimum(np.abs(la[:, 1]), np.abs(lb[:, 1])) <= gripper.jaw_width / 2)
    if not foot.any():
        return set()
    top = float((np.maximum(wa[:, 2], wb[:, 2]) + state.cap_r)[foot].max())
    out = set()
    for k in range(len(state.cap_r)):
        if _capsule_in_box(la[k], lb[k], state.cap_r[k], half_xy, top - gripper.jaw_depth, top):
            out.add(int(state.unit[state.cap_body[k]]))
    return out


def unit_masses(state: SceneState) -> np.ndarray:
    m = np.zeros(state.n_units)
    np.add.at(m, state.unit, state.mass)
    return m


def _unit_kinds(state: SceneState) -> np.ndarray:
    k = np.zeros(state.n_units, dtype=int)
    k[state.unit] = state.kind
    return k


def _bodies_of(state: SceneState, units) -> list[int]:
    units = set(units)
    return [b for b in range(state.n_bodies) if int(state.unit[b]) in units]


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------


@dataclass
class PickOutcome:
    picked: set[int]
    seeds: set[int]
    picked_mass: float  # g, target units only
    remaining_mass: float  # g, target units left in the bowl


def magnet_pick(state: SceneState, grains: list[int], magnet: MagnetSpec, link: LinkModel,
                rng: np.random.Generator, allow: np.ndarray, scene: PickScene) -> PickOutcome:
    """One drop-and-recall cycle on a scene in place.

    ``grains`` are bodies hanging on the magnet; they are dropped over the
    bowl centre, the magnet comes back down, and everything reachable from the
    caught grains through holding links comes up.
    """
    if grains:
        redeposit(state, grains, rng, spread=scene.release_radius(magnet), max_tilt=scene.grain_tilt, allow=allow,
                  probes=scene.grain_probes)
    kinds = _unit_kinds(state)
    masses = unit_masses(state)
    total_target = float(masses[kinds == KIND_TARGET].sum())
    seeds = attract(state, magnet)
    if not seeds:
        raise NoGrainsAttached("magnet caught no grains")
    graph = entanglement_graph(state)
    picked = pick_closure(graph, seeds, link, rng)
    pm = float(sum(masses[u] for u in picked if kinds[u] == KIND_TARGET))
    return PickOutcome(picked, seeds, pm, total_target - pm)


def magnet_pick_protocol(target: TargetShape, grain_count: int, rng: np.random.Generator, *,
                         magnet: MagnetSpec = MagnetSpec(), link: LinkModel = LinkModel(),
                         scene: PickScene = PickScene(), iteration: int = 0, seed: int = 0,
                         state: SceneState | None = None) -> PickRecord:
    """Fresh bowl of targets, drop grains, recall, and record the picked targets."""
    allow = allowance_table(target, steel_grain(scene).mass)
    state = target_scene(target, rng, scene, allow) if state is None else state
    if grain_count == 0:
        return PickRecord(Protocol.MAGNET, 0, target.thickness, target.length, target.spikes, iteration, seed, 0.0,
                          target.unit_mass, 0)
    drop_grains(state, grain_count, rng, magnet, scene, allow)
    out = magnet_pick(state, [], magnet, link, rng, allow, scene)
    return PickRecord(Protocol.MAGNET, grain_count, target.thickness, target.length, target.spikes, iteration, seed,
                      out.picked_mass, target.unit_mass, picked_units(out.picked_mass, target.unit_mass))


def gripper_pick(state: SceneState, gripper: GripperSpec, link: LinkModel, rng: np.random.Generator,
                 jitter: float = 5.0) -> PickOutcome:
    """Close the jaws over the pile centre (random yaw, small offset) and lift."""
    yaw = rng.uniform(0.0, math.pi)
    r = jitter * math.sqrt(rng.uniform())
    th = rng.uniform(0.0, 2 * math.pi)
    seeds = grasp_units(state, gripper, (r * math.cos(th), r * math.sin(th)), yaw)
    kinds = _unit_kinds(state)
    masses = unit_masses(state)
    if seeds:
        graph = entanglement_graph(state)
        picked = pick_closure(graph, seeds, link, rng)
    else:
        picked = set()
    # a grain cluster counts its grains, a target bowl its targets
    counted = KIND_TARGET if (kinds == KIND_TARGET).any() else KIND_GRAIN
    total = float(masses[kinds == counted].sum())
    pm = float(sum(masses[u] for u in picked if kinds[u] == counted))
    return PickOutcome(picked, seeds, pm, total - pm)


def gripper_pick_protocol(state: SceneState, rng: np.random.Generator, *, gripper: GripperSpec = GripperSpec(),
                          link: LinkModel = LinkModel(), descriptor: tuple[float, float, int] = (0.0, 0.0, 0),
                          unit_mass: float | None = None, iteration: int = 0, seed: int = 0) -> PickRecord:
    """Gripper pick on a settled scene; ``descriptor`` is (tau, lambda, spikes) for the record."""
    return _gripper_record(state, rng, gripper, link, descriptor, unit_mass, iteration, seed)[0]


def _gripper_record(state, rng, gripper, link, descriptor, unit_mass, iteration, seed):
    out = gripper_pick(state, gripper, link, rng)
    if unit_mass is None:
        kinds = _unit_kinds(state)
        masses = unit_masses(state)
        counted = KIND_TARGET if (kinds == KIND_TARGET).any() else KIND_GRAIN
        unit_mass = float(masses[kinds == counted][0]) if (kinds == counted).any() else 1.0
    rec = PickRecord(Protocol.GRIPPER, 0, *descriptor, iteration, seed, out.picked_mass, unit_mass,
                     picked_units(out.picked_mass, unit_mass))
    return rec, out


def grain_descriptor(grain_type) -> tuple[float, float, int]:
    g = build_grain(GrainType.parse(grain_type))
    return (g.section, 12.0 * g.segment_count, len(g.spikes))


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def _cell_rng(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(round(k * 1000)) for k in key]])


def repeated_magnet(target: TargetShape, grain_count: int, iterations: int, seed: int, *,
                    magnet: MagnetSpec = MagnetSpec(), link: LinkModel = LinkModel(),
                    scene: PickScene = PickScene()) -> PickDataset:
    """``iterations`` picks from one bowl; picked targets and the grains go back in between."""
    rng = _cell_rng(seed, target.thickness, target.length, target.spikes, grain_count)
    allow = allowance_table(target, steel_grain(scene).mass)
    state = target_scene(target, rng, scene, allow)
    ds = PickDataset(unit_mass=target.unit_mass, available_units=scene.units, iterations=iterations)
    grains: list[int] = []
    for it in range(iterations):
        if grain_count == 0:
            ds.records.append(PickRecord(Protocol.MAGNET, 0, target.thickness, target.length, target.spikes, it, seed,
                                         0.0, target.unit_mass, 0))
            continue
        if not grains:
            grains = drop_grains(state, grain_count, rng, magnet, scene, allow)
            held = []
        else:
            held = grains
        try:
            out = magnet_pick(state, held, magnet, link, rng, allow, scene)
        except NoGrainsAttached:
            # the face found nothing to catch: an empty pick, grains stay where they fell
            out = PickOutcome(set(), set(), 0.0, float(unit_masses(state)[_unit_kinds(state) == KIND_TARGET].sum()))
        ds.records.append(PickRecord(Protocol.MAGNET, grain_count, target.thickness, target.length, target.spikes, it,
                                     seed, out.picked_mass, target.unit_mass,
                                     picked_units(out.picked_mass, target.unit_mass, scene.units)))
        kinds = _unit_kinds(state)
        back = [b for b in _bodies_of(state, out.picked) if kinds[state.unit[b]] == KIND_TARGET]
        redeposit(state, back, rng, spread=scene.container.radius_at(0.0), max_tilt=scene.target_tilt, allow=allow)
    return ds


def repeated_gripper(state_factory, iterations: int, seed: int, *, gripper: GripperSpec = GripperSpec(),
                     link: LinkModel = LinkModel(), descriptor=(0.0, 0.0, 0), key=(0,),
                     scene: PickScene = PickScene(), allow=None, unit_mass: float | None = None) -> PickDataset:
    """Gripper picks from one scene built by ``state_factory(rng)``; picked units go back in between.

    ``unit_mass`` sets what one counted unit weighs (default: one body of the counted kind).
    """
    rng = _cell_rng(seed, 7, *key)
    state = state_factory(rng)
    ds = PickDataset(iterations=iterations)
    for it in range(iterations):
        rec, out = _gripper_record(state, rng, gripper, link, descriptor, unit_mass, it, seed)
        ds.records.append(rec)
        ds.unit_mass = rec.unit_mass_g
        if out.picked:
            redeposit(state, _bodies_of(state, out.picked), rng, spread=scene.container.radius_at(0.0),
                      max_tilt=scene.target_tilt, allow=allow)
    return ds


def gripper_cluster(grain_type, iterations: int, seed: int, *, segments: int = 150,
                    gripper: GripperSpec = GripperSpec(), link: LinkModel = LinkModel(),
                    scene: PickScene = PickScene()) -> PickDataset:
    """Gripper on a bowl of acrylic grains of one type; picks are counted in segments."""
    gt = GrainType.parse(grain_type)
    n = grains_for_segments(gt, segments)
    tmpl = grain_template(build_grain(gt), ACRYLIC)
    seg_mass = tmpl.mass / segment_count(gt)
    return repeated_gripper(lambda rng: grain_scene(gt, n, rng, scene), iterations, seed, gripper=gripper, link=link,
                            descriptor=grain_descriptor(gt), key=(segment_count(gt), len(build_grain(gt).spikes)),
                            scene=scene, unit_mass=seg_mass)


def repeated_gripper_targets(target: TargetShape, iterations: int, seed: int, *, gripper: GripperSpec = GripperSpec(),
                             link: LinkModel = LinkModel(), scene: PickScene = PickScene()) -> PickDataset:
    """Gripper on the same bowl of targets the magnet protocol uses."""
    allow = allowance_table(target, steel_grain(scene).mass)
    return repeated_gripper(lambda rng: target_scene(target, rng, scene, allow), iterations, seed, gripper=gripper,
                            link=link, descriptor=(target.thickness, target.length, target.spikes),
                            key=(target.thickness, target.length, target.spikes), scene=scene, allow=allow,
                            unit_mass=target.unit_mass)


def _study_cell(args):
    target, grain_count, iterations, seed, magnet, link, scene = args
    try:
        return repeated_magnet(target, grain_count, iterations, seed, magnet=magnet, link=link, scene=scene), None
    except NoGrainsAttached as exc:
        return None, exc


def run_parametric_study(grid=None, iterations: int = DEFAULT_ITERATIONS, seeds=0, grain_count: int = 100, *,
                         magnet: MagnetSpec = MagnetSpec(), link: LinkModel = LinkModel(),
                         scene: PickScene = PickScene(), workers: int = 1, on_error=None) -> PickDataset:
    """Magnet protocol over every target in ``grid`` (default: the 27-cell grid) and every seed.

    Each (target, seed) cell owns its bowl, so cells may run in ``workers``
    processes; records come back sorted by (seed, target, iteration) whatever
    the completion order.
    """
    grid = list(parametric_grid() if grid is None else grid)
    if not grid:
        raise ValueError("empty grid")
    seeds = [int(seeds)] if np.isscalar(seeds) else [int(x) for x in seeds]
    cells = [(t, grain_count, iterations, sd, magnet, link, scene) for sd in seeds for t in grid]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_study_cell, cells))
    else:
        results = [_study_cell(c) for c in cells]
    ds = PickDataset(iterations=iterations, available_units=scene.units)
    for cell, (part, exc) in zip(cells, results):
        if part is not None:
            ds.extend(part)
        elif on_error is not None:
            on_error(cell[0], exc)
    return ds


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.{CSV_DIGITS}g}"
    return str(v)


def write_dataset(ds: PickDataset, path_or_fh) -> None:
    own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for r in ds.records:
            w.writerow([_fmt(v) for v in r.row()])
    finally:
        if own:
            fh.close()
