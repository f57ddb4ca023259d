"""Hand-built two-body poses for checking the interlock heuristic against the escape oracle.

Every pose is laid out in the frame of a type-V grain lying in z = 0 (base
from x = -6 to 6 on y = 0, spikes up to y = 12, pocket open at the top) and
then turned by one fixed, generic rotation so that no feature lines up with
the oracle's sampled directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import ACRYLIC, CaptureRegion, build_grain, build_target, discretize, mass_properties
from .simulate import KIND_GRAIN, BodyTemplate, Container, SceneState, grain_template, target_template

GENERIC_ROTATION = Rotation.from_rotvec([0.31, -0.52, 0.87])


def custom_template(name: str, a, b, radius: float, regions=(), density: float = ACRYLIC.density,
                    kind: int = KIND_GRAIN) -> tuple[BodyTemplate, np.ndarray]:
    """Rigid body from capsule endpoints given in its own frame; returns (template, com)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    section = 2.0 * radius
    mass, com, inertia = mass_properties(a, b, section, density)
    regs = tuple(CaptureRegion(np.asarray(v, float) - com, tuple(o)) for v, o in regions)
    length = float(np.linalg.norm(b - a, axis=1).sum())
    t = BodyTemplate(name, a - com, b - com, np.full(len(a), radius), mass, inertia, regs, kind, False, section,
                     length * section**2, 0)
    return t, com


def ring(radius: float, sides: int = 12, thickness: float = 1.0):
    """Closed polygonal loop in the local xy plane whose inside is one closed capture region."""
    th = 2 * math.pi * np.arange(sides) / sides
    v = np.column_stack([radius * np.cos(th), radius * np.sin(th), np.zeros(sides)])
    return custom_template(f"ring-{radius:g}", v, np.roll(v, -1, axis=0), thickness / 2.0,
                           [(v, (False,) * sides)])


def rod(length: float, thickness: float = 1.0):
    return custom_template(f"rod-{length:g}", [[-length / 2, 0, 0]], [[length / 2, 0, 0]], thickness / 2.0)


def grain(kind: str):
    shape = build_grain(kind)
    cs = discretize(shape)
    _, com, _ = mass_properties(cs.a, cs.b, cs.section, ACRYLIC.density)
    return grain_template(shape), com


def strip(length: float = 60.0, tau: float = 0.4):
    shape = build_target(tau, length, 0)
    cs = discretize(shape, target_subdivisions=1)
    _, com, _ = mass_properties(cs.a, cs.b, cs.section, shape.density)
    return target_template(shape), com


@dataclass
class Fixture:
    name: str
    category: str  # "apart", "locked" or "hooked"
    state: SceneState
    a: int = 0
    b: int = 1


class _Builder:
    def __init__(self, rotation: Rotation = GENERIC_ROTATION):
        self.state = SceneState(Container.plane())
        self.rot = rotation

    def add(self, body, rotvec=(0.0, 0.0, 0.0), shift=(0.0, 0.0, 0.0)) -> int:
        """Place a (template, com) pair: rotate its own frame by ``rotvec`` then move by ``shift``."""
        tmpl, com = body
        rl = Rotation.from_rotvec(rotvec)
        r = self.rot * rl
        pos = self.rot.apply(rl.apply(com) + np.asarray(shift, float))
        x, y, z, w = r.as_quat()
        return self.state.add_body(tmpl, pos, (w, x, y, z))


def _pose(name, category, *bodies) -> Fixture:
    bld = _Builder()
    for body in bodies:
        bld.add(*body)
    return Fixture(name, category, bld.state)


def interlock_corpus() -> list[Fixture]:
    """Twenty poses: ten apart or merely touching, eight locked, two open hooks."""
    half = math.pi / 2
    V = grain("V")
    out = [
        # apart or touching without passing through anything
        _pose("rods-parallel", "apart", (rod(12),), (rod(12), (0, 0, 0), (0, 2, 0))),
        _pose("rods-crossed-resting", "apart", (rod(12),), (rod(12), (0, 0, half), (0, 0, 1.0))),
        _pose("V-rod-far", "apart", (V,), (rod(12), (0, 0, 0), (0, 30, 0))),
        _pose("V-V-side-by-side", "apart", (V,), (V, (0, 0, 0), (14, 0, 0))),
        _pose("rod-over-spike-tips", "apart", (V,), (rod(18), (0, 0, 0), (0, 13.2, 0))),
        _pose("rod-lying-in-pocket", "apart", (V,), (rod(6), (0, 0, 0), (0, 6, 0))),
        _pose("ring-beside-rod", "apart", (ring(4),), (rod(60), (0, half, 0), (10, 0, 0))),
        _pose("rings-stacked", "apart", (ring(4),), (ring(4), (0, 0, 0), (0, 0, 1.5))),
        _pose("strip-across-V", "apart", (V,), (strip(), (0, 0, half), (0, 0, 1.0))),
        _pose("rod-through-plane-outside-ring", "apart", (ring(4),), (rod(60), (0, half, 0), (8, 0, 0))),
        # topologically or geometrically locked
        _pose("rings-linked", "locked", (ring(4),), (ring(4), (half, 0, 0), (4, 0, 0))),
        _pose("rings-linked-skew", "locked", (ring(4),), (ring(4), (1.0, 0.0, 0.0), (4, 0, 0))),
        _pose("square-loop-linked-ring", "locked", (ring(5, sides=4),), (ring(4), (half, 0, 0), (3.5, 0, 0))),
        _pose("ring-on-long-rod", "locked", (ring(3),), (rod(60), (0, half, 0))),
        _pose("ring-on-long-rod-offcentre", "locked", (ring(5),), (rod(60), (0, half, 0), (1.5, -1.0, 0))),
        _pose("ring-around-V-base", "locked", (V,), (ring(3), (0, half, 0), (0, 0, 0))),
        _pose("ring-around-IV-arc", "locked", (grain("IV"),), (ring(2.5), (0, half, 0), (0, -3.82, 0))),
        _pose("ring-around-VII-arc", "locked", (grain("VII"),), (ring(2.5), (0, half, 0), (0, -3.82, 0))),
        # open hooks: caught in a pocket but free to slide out of its mouth
        _pose("strip-threaded-through-V", "hooked", (V,), (strip(), (0, half, 0), (0, 6, 0))),
        _pose("V-V-hooked", "hooked", (V,), (V, (0, 0, 0), (0, 0, 0))),
    ]
    # the second V of the hook: base along z through the first pocket, spikes reaching back past its base
    bld = _Builder()
    bld.add(V)
    tm, com = V
    # rotate so the base runs along z and the spikes point to -y, then drop the base into the pocket
    bld.add((tm, com), Rotation.from_euler("yx", [half, math.pi]).as_rotvec(), (0, 6, 0))
    out[-1] = Fixture("V-V-hooked", "hooked", bld.state)
    return out
