"""Penalty-contact rigid-body dynamics for grains and target cells in containers.

Internal units are mm, g and s, so forces are in g*mm/s^2 (1 N = 1e6) and
energies in g*mm^2/s^2 (1 J = 1e9). Public parameters keep the SI-ish units
they are documented with and are converted where they enter the kernels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import _kernels as K
from .geometry import (
    ACRYLIC, CaptureRegion, GrainShape, MaterialSpec, TargetShape, discretize, mass_properties,
)

G_MM = 9810.0
N_TO_INTERNAL = 1e6
J_TO_INTERNAL = 1e9
MNM2_TO_INTERNAL = 1e9  # mN*m^2 -> g*mm^3/s^2

SNAPSHOT_VERSION = 1


class SimulationUnstable(RuntimeError):
    """A body exceeded the blow-up speed sentinel."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class NotConverged(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class ContainerKind(str, Enum):
    CYLINDER = "Cylinder"
    BOWL = "Bowl"
    PLANE = "Plane"


@dataclass(frozen=True)
class Container:
    kind: ContainerKind = ContainerKind.CYLINDER
    diameter: float = 30.0
    height: float = 100.0
    bottom_diameter: float = 80.0
    top_diameter: float = 200.0
    depth: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ContainerKind(self.kind))
        if min(self.diameter, self.height, self.bottom_diameter, self.top_diameter, self.depth) <= 0:
            raise ValueError("container dimensions must be > 0")
        if self.bottom_diameter >= self.top_diameter:
            raise ValueError("bowl bottom diameter must be below top diameter")

    @classmethod
    def cylinder(cls, diameter=30.0, height=100.0):
        return cls(ContainerKind.CYLINDER, diameter=diameter, height=height)

    @classmethod
    def bowl(cls, bottom_diameter=80.0, top_diameter=200.0, depth=60.0):
        return cls(ContainerKind.BOWL, bottom_diameter=bottom_diameter, top_diameter=top_diameter, depth=depth)

    @classmethod
    def plane(cls):
        return cls(ContainerKind.PLANE)

    def radius_at(self, z: float) -> float:
        if self.kind is ContainerKind.CYLINDER:
            return self.diameter / 2.0
        if self.kind is ContainerKind.BOWL:
            r0, r1 = self.bottom_diameter / 2.0, self.top_diameter / 2.0
            return r0 + (r1 - r0) * max(z, 0.0) / self.depth
        return math.inf

    def wall_arrays(self, wall_bottom: float = 0.0):
        kinds = [K.WALL_FLOOR]
        params = [[0.0, 0.0, 0.0]]
        if self.kind is ContainerKind.CYLINDER:
            kinds.append(K.WALL_CYL)
            params.append([self.diameter / 2.0, 0.0, 0.0])
        elif self.kind is ContainerKind.BOWL:
            kinds.append(K.WALL_BOWL)
            params.append([self.bottom_diameter / 2.0, self.top_diameter / 2.0, self.depth])
        bottoms = np.zeros(len(kinds))
        bottoms[1:] = wall_bottom
        return np.array(kinds, dtype=np.int64), np.array(params, dtype=float), bottoms

    def to_dict(self):
        return {"kind": self.kind.value, "diameter": self.diameter, "height": self.height,
                "bottom_diameter": self.bottom_diameter, "top_diameter": self.top_diameter, "depth": self.depth}


@dataclass(frozen=True)
class SimParams:
    dt: float = 5e-5  # s
    contact_stiffness: float = 0.2  # N/mm
    contact_damping: float = 0.4  # damping ratio of the normal spring
    friction: float = 0.5
    tangential_ratio: float = 2.0 / 7.0
    settle_ke_threshold: float = 1e-9  # J
    max_steps: int = 50_000
    penetration_tol: float = 0.5  # mm
    joint_stiffness: float = 5.0  # N/mm, point spring holding articulated links together
    max_speed: float = 1e4  # mm/s, 10 m/s
    check_every: int = 200
    contact_drag: float = 5.0  # 1/s, applied only to bodies in contact
    verlet_margin: float = 0.5  # mm, pair-list skin

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        for k in ("contact_stiffness", "settle_ke_threshold", "penetration_tol", "max_speed"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be > 0")
        if self.contact_damping < 0 or self.friction < 0:
            raise ValueError("damping and friction must be >= 0")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")

    @property
    def kn(self) -> float:
        return self.contact_stiffness * N_TO_INTERNAL

    @property
    def ke_threshold(self) -> float:
        return self.settle_ke_threshold * J_TO_INTERNAL


# ---------------------------------------------------------------------------
# body templates
# ---------------------------------------------------------------------------

KIND_GRAIN = 0
KIND_TARGET = 1


@dataclass(frozen=True)
class BodyTemplate:
    """A rigid body in its centre-of-mass frame."""

    name: str
    a: np.ndarray
    b: np.ndarray
    r: np.ndarray
    mass: float
    inertia: np.ndarray
    regions: tuple[CaptureRegion, ...] = ()
    kind: int = KIND_GRAIN
    ferromagnetic: bool = False
    section: float = 1.0
    volume: float = 0.0
    compliance_class: int = 0

    @property
    def extent(self) -> float:
        return float(max(np.linalg.norm(self.a, axis=1).max(), np.linalg.norm(self.b, axis=1).max()) + self.r.max())


def _recentre_regions(regions, com, link=None):
    out = []
    for reg in regions:
        if link is not None and reg.link != link:
            continue
        out.append(CaptureRegion(reg.vertices - com, reg.open_edges, 0))
    return tuple(out)


def grain_template(shape: GrainShape, material: MaterialSpec = ACRYLIC, ferromagnetic: bool | None = None,
                   arc_subdivisions: int = 6) -> BodyTemplate:
    cs = discretize(shape, arc_subdivisions=arc_subdivisions)
    mass, com, inertia = mass_properties(cs.a, cs.b, cs.section, material.density)
    ferro = material.name == "steel" if ferromagnetic is None else ferromagnetic
    return BodyTemplate(f"grain-{shape.type.value}", cs.a - com, cs.b - com, cs.radius.copy(), mass, inertia,
                        _recentre_regions(cs.regions, com), KIND_GRAIN, ferro, cs.section,
                        cs.total_length * cs.section**2, 0)


def target_template(shape: TargetShape, compliance_class: int = 1) -> BodyTemplate:
    """The whole target cell as one rigid body (used by quasi-static scenes)."""
    cs = discretize(shape, target_subdivisions=1)
    mass, com, inertia = mass_properties(cs.a, cs.b, cs.section, shape.density)
    return BodyTemplate(f"target-{shape.thickness:g}-{shape.length:g}-{shape.spikes}", cs.a - com, cs.b - com,
                        cs.radius.copy(), mass, inertia, _recentre_regions(cs.regions, com), KIND_TARGET, False,
                        cs.section, shape.volume, compliance_class)


def articulated_target(shape: TargetShape, target_subdivisions: int | None = None):
    """Per-link templates plus joints (link_i, link_j, anchor_i, anchor_j, k_bend).

    Each link is a straight piece of the strip with any spikes rooted on it.
    """
    cs = discretize(shape, target_subdivisions=target_subdivisions)
    templates = []
    coms = []
    for link in range(cs.n_links):
        sel = cs.link == link
        mass, com, inertia = mass_properties(cs.a[sel], cs.b[sel], cs.section, shape.density)
        templates.append(BodyTemplate(f"link-{link}", cs.a[sel] - com, cs.b[sel] - com, cs.radius[sel].copy(),
                                      mass, inertia, _recentre_regions(cs.regions, com, link), KIND_TARGET, False,
                                      cs.section, float(np.linalg.norm(cs.b[sel] - cs.a[sel], axis=1).sum())
                                      * cs.section**2, 1))
        coms.append(com)
    joints = []
    for j in cs.joints:
        link_len = shape.length / cs.n_links
        kb = j.bending_stiffness * MNM2_TO_INTERNAL / link_len
        joints.append((j.link_a, j.link_b, j.anchor - coms[j.link_a], j.anchor - coms[j.link_b], kb))
    return templates, joints, coms


# ---------------------------------------------------------------------------
# scene
# ---------------------------------------------------------------------------


def _empty(shape, dtype=float):
    return np.zeros(shape, dtype=dtype)


@dataclass
class SceneState:
    container: Container
    rng_seed: int = 0
    time: float = 0.0
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -G_MM]))
    pos: np.ndarray = field(default_factory=lambda: _empty((0, 3)))
    quat: np.ndarray = field(default_factory=lambda: _empty((0, 4)))
    vel: np.ndarray = field(default_factory=lambda: _empty((0, 3)))
    omg: np.ndarray = field(default_factory=lambda: _empty((0, 3)))
    mass: np.ndarray = field(default_factory=lambda: _empty(0))
    inertia: np.ndarray = field(default_factory=lambda: _empty((0, 3, 3)))
    ferro: np.ndarray = field(default_factory=lambda: _empty(0, bool))
    active: np.ndarray = field(default_factory=lambda: _empty(0, np.int64))
    kind: np.ndarray = field(default_factory=lambda: _empty(0, np.int64))
    unit: np.ndarray = field(default_factory=lambda: _empty(0, np.int64))
    volume: np.ndarray = field(default_factory=lambda: _empty(0))
    cap_body: np.ndarray = field(default_factory=lambda: _empty(0, np.int64))
    cap_a: np.ndarray = field(default_factory=lambda: _empty((0, 3)))
    cap_b: np.ndarray = field(default_factory=lambda: _empty((0, 3)))
    cap_r: np.ndarray = field(default_factory=lambda: _empty(0))
    cap_class: np.ndarray = field(default_factory=lambda: _empty(0, np.int64))
    joints_i: np.ndarray = field(default_factory=lambda: _empty(0, np.int64))
    joints_j: np.ndarray = field(default_factory=lambda: _empty(0, np.int64))
    joint_ai: np.ndarray = field(default_factory=lambda: _empty((0, 3)))
    joint_aj: np.ndarray = field(default_factory=lambda: _empty((0, 3)))
    joint_kb: np.ndarray = field(default_factory=lambda: _empty(0))
    regions: list = field(default_factory=list)  # (body index, CaptureRegion in body frame)
    names: list = field(default_factory=list)
    wall_bottom: float = 0.0
    wall_speed: float = 0.0
    wall_enabled: bool = True
    container_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    container_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    hist_keys: np.ndarray = field(default_factory=lambda: _empty(0, np.int64))
    hist_spring: np.ndarray = field(default_factory=lambda: _empty((0, 3)))
    steps: int = 0

    # -- construction -----------------------------------------------------
    @property
    def n_bodies(self) -> int:
        return self.pos.shape[0]

    @property
    def n_units(self) -> int:
        return int(self.unit.max()) + 1 if len(self.unit) else 0

    def copy(self) -> "SceneState":
        out = replace(self)
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                setattr(out, k, v.copy())
        out.regions = list(self.regions)
        out.names = list(self.names)
        return out

    def add_body(self, template: BodyTemplate, position, quaternion=(1.0, 0.0, 0.0, 0.0), velocity=(0, 0, 0),
                 omega=(0, 0, 0), unit: int | None = None) -> int:
        idx = self.n_bodies
        unit = self.n_units if unit is None else unit
        q = np.asarray(quaternion, float)
        q = q / np.linalg.norm(q)
        self.pos = np.vstack([self.pos, np.asarray(position, float)[None]])
        self.quat = np.vstack([self.quat, q[None]])
        self.vel = np.vstack([self.vel, np.asarray(velocity, float)[None]])
        self.omg = np.vstack([self.omg, np.asarray(omega, float)[None]])
        self.mass = np.append(self.mass, template.mass)
        self.inertia = np.concatenate([self.inertia, template.inertia[None]])
        self.ferro = np.append(self.ferro, bool(template.ferromagnetic))
        self.active = np.append(self.active, 1).astype(np.int64)
        self.kind = np.append(self.kind, template.kind).astype(np.int64)
        self.unit = np.append(self.unit, unit).astype(np.int64)
        self.volume = np.append(self.volume, template.volume)
        n = len(template.r)
        self.cap_body = np.append(self.cap_body, np.full(n, idx)).astype(np.int64)
        self.cap_a = np.vstack([self.cap_a, template.a])
        self.cap_b = np.vstack([self.cap_b, template.b])
        self.cap_r = np.append(self.cap_r, template.r)
        self.cap_class = np.append(self.cap_class, np.full(n, template.compliance_class)).astype(np.int64)
        self.regions.extend((idx, reg) for reg in template.regions)
        self.names.append(template.name)
        return idx

    def add_joint(self, i: int, j: int, anchor_i, anchor_j, k_bend: float) -> None:
        self.joints_i = np.append(self.joints_i, i).astype(np.int64)
        self.joints_j = np.append(self.joints_j, j).astype(np.int64)
        self.joint_ai = np.vstack([self.joint_ai, np.asarray(anchor_i, float)[None]])
        self.joint_aj = np.vstack([self.joint_aj, np.asarray(anchor_j, float)[None]])
        self.joint_kb = np.append(self.joint_kb, float(k_bend))

    def add_articulated_target(self, shape: TargetShape, position, quaternion=(1, 0, 0, 0),
                               target_subdivisions: int | None = None) -> list[int]:
        templates, joints, coms = articulated_target(shape, target_subdivisions)
        unit = self.n_units
        R = K.quat_to_mat(np.asarray(quaternion, float) / np.linalg.norm(quaternion))
        ids = [self.add_body(t, np.asarray(position, float) + R @ c, quaternion, unit=unit)
               for t, c in zip(templates, coms)]
        for (li, lj, ai, aj, kb) in joints:
            self.add_joint(ids[li], ids[lj], ai, aj, kb)
        return ids

    # -- queries ----------------------------------------------------------
    def world_capsules(self):
        nc = len(self.cap_r)
        wa = np.empty((nc, 3))
        wb = np.empty((nc, 3))
        if nc:
            K.world_capsules(self.pos, self.quat, self.cap_body, self.cap_a, self.cap_b, wa, wb)
        return wa, wb

    def rotation(self, body: int) -> np.ndarray:
        return K.quat_to_mat(self.quat[body])

    def world_regions(self):
        """Capture regions in world coordinates as (unit id, vertices, open edges)."""
        out = []
        for body, reg in self.regions:
            R = self.rotation(body)
            out.append((int(self.unit[body]), reg.vertices @ R.T + self.pos[body], reg.open_edges))
        return out

    def total_mass(self) -> float:
        return float(self.mass.sum())

    def kinetic_energy(self) -> float:
        """Total kinetic energy in J."""
        if self.n_bodies == 0:
            return 0.0
        return K.kinetic_energy(self.vel, self.omg, self.quat, self.mass, self.inertia, self.active) / J_TO_INTERNAL

    def max_wall_penetration(self) -> float:
        """Deepest end-sphere penetration into any enabled wall, in mm."""
        if not len(self.cap_r):
            return 0.0
        kinds, params, bottoms = self._walls()
        wa, wb = self.world_capsules()
        worst = 0.0
        for w in range(len(kinds)):
            for pts in (wa, wb):
                for c in range(len(self.cap_r)):
                    p = pts[c] - self.container_offset
                    # penetration of the capsule axis end beyond the surface it must stay inside
                    ov = K._wall_point(p, 0.0, kinds[w], params[w], bottoms[w])[0]
                    worst = max(worst, ov)
        return worst

    def _walls(self):
        kinds, params, bottoms = self.container.wall_arrays(self.wall_bottom)
        if not self.wall_enabled:
            kinds, params, bottoms = kinds[:1], params[:1], bottoms[:1]
        return kinds, params, bottoms


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShakeMotion:
    """Container displacement amplitude*sin(omega*(t - t0))*direction."""
    direction: tuple = (0.0, 0.0, 1.0)
    amplitude: float = 0.0  # mm
    omega: float = 0.0  # rad/s
    t0: float = 0.0

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        d = np.asarray(self.direction, float)
        ph = self.omega * (t - self.t0)
        return self.amplitude * math.sin(ph) * d, self.amplitude * self.omega * math.cos(ph) * d


def _advance(state: SceneState, params: SimParams, n_steps: int, shake: ShakeMotion | None = None,
             record=None, record_every: int = 1) -> float:
    """Advance ``state`` in place by n_steps; returns the final max speed.

    ``record(state)`` is called every ``record_every`` steps.
    """
    if state.n_bodies == 0:
        state.time += n_steps * params.dt
        state.steps += n_steps
        return 0.0
    motion = shake or ShakeMotion()
    kinds, wparams, bottoms = state._walls()
    lift = np.zeros(len(kinds), dtype=np.bool_)
    if state.wall_speed and len(kinds) > 1:
        lift[1:] = True
        bottoms = bottoms.copy()
        bottoms[1:] = state.wall_bottom
    kt = params.kn * params.tangential_ratio
    chunk = max(1, record_every) if record is not None else n_steps
    max_speed = 0.0
    done = 0
    while done < n_steps:
        n = min(chunk, n_steps - done)
        keys, springs, max_speed, taken, bottoms = K.advance_kernel(
            n, state.pos, state.quat, state.vel, state.omg, state.mass, state.inertia, state.cap_body,
            state.cap_a, state.cap_b, state.cap_r, kinds, wparams, bottoms, lift, float(state.wall_speed),
            state.joints_i, state.joints_j, state.joint_ai, state.joint_aj, state.joint_kb,
            state.gravity, params.kn, kt, params.contact_damping, params.friction, params.dt,
            params.joint_stiffness * N_TO_INTERNAL, state.hist_keys, state.hist_spring, state.active,
            params.contact_drag, np.asarray(motion.direction, float), float(motion.amplitude),
            float(motion.omega), float(motion.t0), state.time, params.verlet_margin, params.max_speed)
        state.hist_keys, state.hist_spring = keys, springs
        state.time += taken * params.dt
        state.steps += taken
        done += taken
        if lift.any():
            state.wall_bottom = float(bottoms[1])
        state.container_offset, state.container_vel = motion.at(state.time)
        if record is not None:
            record(state)
        if not math.isfinite(max_speed) or max_speed > params.max_speed:
            raise SimulationUnstable(f"speed {max_speed:.3g} mm/s exceeds sentinel at t={state.time:.4g}s", state)
    return max_speed


def step(state: SceneState, params: SimParams) -> SceneState:
    """One dt advance; the input state is left untouched."""
    out = state.copy()
    _advance(out, params, 1)
    return out


@dataclass
class SettleResult:
    state: SceneState
    converged: bool
    steps: int


def settle(state: SceneState, params: SimParams, raise_on_fail: bool = True, copy: bool = True) -> SettleResult:
    """Step until kinetic energy drops below the threshold or max_steps is reached."""
    s = state.copy() if copy else state
    taken = 0
    if s.n_bodies == 0:
        return SettleResult(s, True, 0)
    while taken < params.max_steps:
        n = min(params.check_every, params.max_steps - taken)
        _advance(s, params, n)
        taken += n
        if s.kinetic_energy() < params.settle_ke_threshold:
            return SettleResult(s, True, taken)
    if raise_on_fail:
        raise NotConverged(f"kinetic energy {s.kinetic_energy():.3g} J after {taken} steps", s)
    return SettleResult(s, False, taken)


def shake(state: SceneState, params: SimParams, duration: float = 10.0, amplitude: float = 2.0,
          frequency: float = 10.0, lateral_ratio: float = 0.5, raise_on_fail: bool = False) -> SettleResult:
    """Oscillate the container vertically and laterally, then settle.

    The lateral direction is drawn from the scene seed so repeated calls are deterministic.
    """
    if not duration > 0:
        raise ValueError("duration must be > 0")
    s = state.copy()
    if amplitude > 0 and s.n_bodies:
        rng = np.random.default_rng([s.rng_seed, 0x5AE])
        ang = rng.uniform(0, 2 * math.pi)
        direction = np.array([lateral_ratio * math.cos(ang), lateral_ratio * math.sin(ang), 1.0])
        motion = ShakeMotion(tuple(direction), amplitude, 2 * math.pi * frequency, s.time)
        n = int(round(duration / params.dt))
        _advance(s, params, n, shake=motion)
        s.container_offset = np.zeros(3)
        s.container_vel = np.zeros(3)
    return settle(s, params, raise_on_fail=raise_on_fail, copy=False)


def remove_cylinder_and_relax(state: SceneState, params: SimParams, lift_speed: float = 50.0,
                              raise_on_fail: bool = False, free_time: float = 0.0) -> SettleResult:
    """Slide the cylinder wall upwards at a fixed speed until clear, delete it, and settle.

    The contact drag is switched off while the wall moves and for
    ``free_time`` seconds after it is gone, so the collapse itself is not
    slowed by the settling aid.
    """
    s = state.copy()
    if s.container.kind is not ContainerKind.CYLINDER or s.n_bodies == 0:
        s.wall_enabled = False
        return settle(s, params, raise_on_fail=raise_on_fail, copy=False)
    free = replace(params, contact_drag=0.0) if free_time > 0 else params
    top = structure_height(s)
    s.wall_speed = lift_speed
    n = int(math.ceil(max(top - s.wall_bottom, 0.0) / lift_speed / params.dt)) + 1
    _advance(s, free, n)
    s.wall_speed = 0.0
    s.wall_enabled = False
    if free_time > 0:
        _advance(s, free, int(round(free_time / params.dt)))
    return settle(s, params, raise_on_fail=raise_on_fail, copy=False)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def structure_height(state: SceneState) -> float:
    """Highest capsule surface point above the floor (z = 0)."""
    if state.n_bodies == 0:
        return 0.0
    wa, wb = state.world_capsules()
    return float(max(0.0, np.max(np.maximum(wa[:, 2], wb[:, 2]) + state.cap_r)))


def packing_fraction(v_grains: float, v_container: float) -> float:
    if not v_container > 0:
        raise ValueError("container volume must be > 0")
    if v_grains < 0:
        raise ValueError("grain volume must be >= 0")
    return v_grains / v_container


def cylinder_volume(diameter: float, height: float) -> float:
    return math.pi * (diameter / 2.0) ** 2 * height


def integrity(h0: float, dh: float) -> float:
    if not h0 > 0:
        raise ValueError("h0 must be > 0")
    if dh > h0:
        raise ValueError("height loss exceeds the initial height")
    if dh < 0:
        raise ValueError("height loss must be >= 0")
    return (h0 - dh) / h0


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def snapshot(state: SceneState) -> dict:
    return {
        "version": SNAPSHOT_VERSION,
        "seed": int(state.rng_seed),
        "time": state.time,
        "container": state.container.to_dict(),
        "wall": {"bottom": state.wall_bottom, "enabled": state.wall_enabled},
        "bodies": [
            {"id": b, "name": state.names[b], "unit": int(state.unit[b]), "kind": int(state.kind[b]),
             "ferromagnetic": bool(state.ferro[b]), "mass_g": float(state.mass[b]),
             "volume_mm3": float(state.volume[b]), "inertia": state.inertia[b].tolist(),
             "position_mm": state.pos[b].tolist(), "quaternion": state.quat[b].tolist(),
             "velocity": state.vel[b].tolist(), "omega": state.omg[b].tolist(),
             "active": int(state.active[b])}
            for b in range(state.n_bodies)
        ],
        "capsules": {"body": state.cap_body.tolist(), "a": state.cap_a.tolist(), "b": state.cap_b.tolist(),
                     "radius": state.cap_r.tolist(), "class": state.cap_class.tolist()},
        "joints": {"i": state.joints_i.tolist(), "j": state.joints_j.tolist(), "ai": state.joint_ai.tolist(),
                   "aj": state.joint_aj.tolist(), "kb": state.joint_kb.tolist()},
        "regions": [{"body": b, "vertices": r.vertices.tolist(), "open": list(r.open_edges)}
                    for b, r in state.regions],
    }


def write_snapshot(state: SceneState, path) -> None:
    with open(path, "w") as fh:
        json.dump(snapshot(state), fh, indent=1)


def load_snapshot(data: dict | str) -> SceneState:
    if isinstance(data, str):
        with open(data) as fh:
            data = json.load(fh)
    if data.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {data.get('version')}")
    c = dict(data["container"])
    s = SceneState(Container(**c), rng_seed=data["seed"], time=data["time"])
    s.wall_bottom = data["wall"]["bottom"]
    s.wall_enabled = data["wall"]["enabled"]
    bodies = data["bodies"]
    f = lambda key, shape: np.array([b[key] for b in bodies], dtype=float).reshape(shape)  # noqa: E731
    n = len(bodies)
    s.pos, s.quat, s.vel, s.omg = f("position_mm", (n, 3)), f("quaternion", (n, 4)), f("velocity", (n, 3)), \
        f("omega", (n, 3))
    s.mass, s.volume = f("mass_g", (n,)), f("volume_mm3", (n,))
    s.inertia = f("inertia", (n, 3, 3))
    s.ferro = np.array([b["ferromagnetic"] for b in bodies], dtype=bool)
    s.active = np.array([b["active"] for b in bodies], dtype=np.int64)
    s.kind = np.array([b["kind"] for b in bodies], dtype=np.int64)
    s.unit = np.array([b["unit"] for b in bodies], dtype=np.int64)
    s.names = [b["name"] for b in bodies]
    cap = data["capsules"]
    s.cap_body = np.array(cap["body"], dtype=np.int64)
    s.cap_a = np.array(cap["a"], dtype=float).reshape(-1, 3)
    s.cap_b = np.array(cap["b"], dtype=float).reshape(-1, 3)
    s.cap_r = np.array(cap["radius"], dtype=float)
    s.cap_class = np.array(cap["class"], dtype=np.int64)
    j = data["joints"]
    s.joints_i = np.array(j["i"], dtype=np.int64)
    s.joints_j = np.array(j["j"], dtype=np.int64)
    s.joint_ai = np.array(j["ai"], dtype=float).reshape(-1, 3)
    s.joint_aj = np.array(j["aj"], dtype=float).reshape(-1, 3)
    s.joint_kb = np.array(j["kb"], dtype=float)
    s.regions = [(r["body"], CaptureRegion(np.array(r["vertices"]), tuple(r["open"]))) for r in data["regions"]]
    return s


TRAJECTORY_HEADER = ("step", "body_id", "x", "y", "z", "qw", "qx", "qy", "qz")


class TrajectoryWriter:
    """Callback for :func:`_advance` that appends poses every ``every`` steps."""

    def __init__(self, fh, every: int = 1):
        self.w = csv.writer(fh)
        self.w.writerow(TRAJECTORY_HEADER)
        self.every = every

    def __call__(self, state: SceneState):
        for b in range(state.n_bodies):
            self.w.writerow([state.steps, b, *(f"{v:.9g}" for v in state.pos[b]),
                             *(f"{v:.9g}" for v in state.quat[b])])


def run_with_trajectory(state: SceneState, params: SimParams, n_steps: int, path, every: int = 1) -> SceneState:
    s = state.copy()
    with open(path, "w", newline="") as fh:
        writer = TrajectoryWriter(fh, every)
        writer(s)
        _advance(s, params, n_steps, record=writer, record_every=every)
    return s
