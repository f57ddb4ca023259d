"""Quasi-static sequential deposition.

Bodies are released one at a time above the pile and translated straight down
until first contact with the pile, the floor or the container wall. No
toppling or bouncing is modelled. Contacts against compliant capsule classes
may overlap by a per-class allowance, standing in for a flexible strip
bending out of the way of a falling body.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from .simulate import BodyTemplate, ContainerKind, SceneState


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def tilted_quaternion(rng: np.random.Generator, max_tilt: float) -> np.ndarray:
    """Random yaw, then a tilt of at most ``max_tilt`` radians about a random horizontal axis."""
    yaw = rng.uniform(0, 2 * math.pi)
    tilt = rng.uniform(0, max_tilt)
    phi = rng.uniform(0, 2 * math.pi)
    qy = np.array([math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)])
    qt = np.array([math.cos(tilt / 2), math.cos(phi) * math.sin(tilt / 2), math.sin(phi) * math.sin(tilt / 2), 0.0])
    return quat_mul(qt, qy)


def quat_mul(p, q):
    w1, x1, y1, z1 = p
    w2, x2, y2, z2 = q
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def no_allowance(n_classes: int = 2) -> np.ndarray:
    return np.zeros((n_classes, n_classes))


def drop_offset(state: SceneState, a: np.ndarray, b: np.ndarray, r: np.ndarray, cls: np.ndarray,
                allow: np.ndarray, exclude_body: int | None = None) -> float:
    """Vertical offset that brings world capsules (a, b) into first contact."""
    wa, wb = state.world_capsules()
    keep = np.ones(len(state.cap_r), dtype=bool)
    if exclude_body is not None:
        keep &= state.cap_body != exclude_body
    kinds, params, bottoms = state._walls()
    return K.drop_height(a, b, r, wa[keep], wb[keep], state.cap_r[keep], allow, cls, state.cap_class[keep],
                         kinds, params, bottoms)


def _fits_cylinder(a, b, r, radius):
    rho = np.sqrt(np.concatenate([a[:, 0] ** 2 + a[:, 1] ** 2, b[:, 0] ** 2 + b[:, 1] ** 2]))
    return bool(np.all(rho + np.concatenate([r, r]) <= radius))


def deposit(state: SceneState, template: BodyTemplate, rng: np.random.Generator, *,
            centre=(0.0, 0.0), spread: float | None = None, max_tilt: float | None = None,
            allow: np.ndarray | None = None, unit: int | None = None, quaternion=None, max_tries: int = 200,
            probes: int = 1) -> int:
    """Drop one body into the scene in place; returns its body index.

    The centre of mass is sampled uniformly in a disc of radius ``spread``
    around ``centre`` (default: the container footprint). In a cylinder the
    whole body must fit inside the wall, so orientation and position are
    redrawn until it does. With ``probes`` > 1 that many poses are dropped and
    the one whose centre ends lowest is kept, a stand-in for a body rolling
    off its first contact into a nearby gap.
    """
    allow = no_allowance(int(max(state.cap_class.max(initial=0), template.compliance_class)) + 1) \
        if allow is None else allow
    cyl = state.container.kind is ContainerKind.CYLINDER and state.wall_enabled
    R_wall = state.container.diameter / 2.0
    if spread is None:
        spread = R_wall if cyl else state.container.radius_at(0.0)
    best = None
    found = 0
    for _ in range(max_tries):
        if quaternion is not None:
            q = np.asarray(quaternion, float)
        elif max_tilt is None:
            q = random_quaternion(rng)
        else:
            q = tilted_quaternion(rng, max_tilt)
        R = K.quat_to_mat(q)
        la = template.a @ R.T
        lb = template.b @ R.T
        rr = spread * math.sqrt(rng.uniform())
        th = rng.uniform(0, 2 * math.pi)
        xy = np.array([centre[0] + rr * math.cos(th), centre[1] + rr * math.sin(th)])
        a = la.copy()
        b = lb.copy()
        a[:, :2] += xy
        b[:, :2] += xy
        if cyl and not _fits_cylinder(a, b, template.r, R_wall):
            continue
        z_ref = _top(state) + template.extent + 1.0
        a[:, 2] += z_ref
        b[:, 2] += z_ref
        cls = np.full(len(template.r), template.compliance_class, dtype=np.int64)
        h = drop_offset(state, a, b, template.r, cls, allow)
        if not math.isfinite(h):
            h = -z_ref
        pos = np.array([xy[0], xy[1], z_ref + h])
        if best is None or pos[2] < best[0][2]:
            best = (pos, q)
        found += 1
        if found >= probes:
            break
    if best is None:
        raise RuntimeError(f"could not place {template.name} after {max_tries} tries")
    return state.add_body(template, best[0], best[1], unit=unit)


def _top(state: SceneState) -> float:
    if state.n_bodies == 0:
        return 0.0
    wa, wb = state.world_capsules()
    return float(np.max(np.maximum(wa[:, 2], wb[:, 2]) + state.cap_r))


def redeposit(state: SceneState, bodies, rng: np.random.Generator, *, centre=(0.0, 0.0), spread=None,
              max_tilt=None, allow=None, compact: bool = True, probes: int = 1) -> None:
    """Lift the given bodies out of the pile and drop them again, one by one, in place.

    With ``compact`` the rest of the pile first settles into the holes they
    leave (see ``resettle``).
    """
    bodies = list(bodies)
    if not bodies:
        return
    far = 1e6
    for b in bodies:
        state.pos[b, 2] += far
    if compact:
        resettle(state, allow, exclude=bodies)
    for k, b in enumerate(bodies):
        mask = state.cap_body == b
        tmpl = BodyTemplate(state.names[b], state.cap_a[mask], state.cap_b[mask], state.cap_r[mask], state.mass[b],
                            state.inertia[b], compliance_class=int(state.cap_class[mask][0]))
        waiting = set(bodies[k + 1:])
        best = None
        # bodies still waiting are parked far above and excluded by the AABB test
        for _ in range(probes):
            q = random_quaternion(rng) if max_tilt is None else tilted_quaternion(rng, max_tilt)
            R = K.quat_to_mat(q)
            sp = spread if spread is not None else state.container.radius_at(0.0)
            rr = sp * math.sqrt(rng.uniform())
            th = rng.uniform(0, 2 * math.pi)
            xy = np.array([centre[0] + rr * math.cos(th), centre[1] + rr * math.sin(th)])
            a = tmpl.a @ R.T
            bb = tmpl.b @ R.T
            a[:, :2] += xy
            bb[:, :2] += xy
            state.pos[b, 2] = far  # keep it out of its own way
            top = _top_excluding(state, set(waiting) | {b})
            z_ref = top + tmpl.extent + 1.0
            a[:, 2] += z_ref
            bb[:, 2] += z_ref
            cls = np.full(len(tmpl.r), tmpl.compliance_class, dtype=np.int64)
            if allow is None:
                al = no_allowance(int(state.cap_class.max()) + 1)
            else:
                al = allow
            h = _drop_excluding(state, a, bb, tmpl.r, cls, al, waiting | {b})
            if best is None or z_ref + h < best[2]:
                best = (xy[0], xy[1], z_ref + h, q)
        state.pos[b] = best[:3]
        state.quat[b] = best[3]
        state.vel[b] = 0.0
        state.omg[b] = 0.0


def resettle(state: SceneState, allow=None, exclude=()) -> None:
    """Let the pile fall into its own gaps, in place.

    Units are taken lowest first and each one is translated straight down
    onto the floor, the wall or the units already handled. Orientation and
    horizontal position are kept, so this only closes vertical gaps.
    """
    if state.n_bodies == 0:
        return
    allow = no_allowance(int(state.cap_class.max()) + 1) if allow is None else allow
    skip = set(int(b) for b in exclude)
    wa, wb = state.world_capsules()
    low = np.minimum(wa[:, 2], wb[:, 2]) - state.cap_r
    order = {}
    for c, b in enumerate(state.cap_body):
        b = int(b)
        if b in skip:
            continue
        u = int(state.unit[b])
        order[u] = min(order.get(u, np.inf), low[c])
    pending = set(b for b in range(state.n_bodies) if b not in skip)
    for u in sorted(order, key=lambda k: (order[k], k)):
        mine = [b for b in np.flatnonzero(state.unit == u) if int(b) not in skip]
        pending -= set(int(b) for b in mine)
        mask = np.isin(state.cap_body, mine)
        wa, wb = state.world_capsules()
        h = _drop_excluding(state, wa[mask], wb[mask], state.cap_r[mask], state.cap_class[mask], allow,
                            pending | skip | set(int(b) for b in mine))
        if math.isfinite(h) and h < 0.0:
            state.pos[mine, 2] += h


def _top_excluding(state, excluded):
    keep = ~np.isin(state.cap_body, list(excluded))
    if not keep.any():
        return 0.0
    wa, wb = state.world_capsules()
    return float(np.max(np.maximum(wa[keep, 2], wb[keep, 2]) + state.cap_r[keep]))


def _drop_excluding(state, a, b, r, cls, allow, excluded):
    wa, wb = state.world_capsules()
    keep = ~np.isin(state.cap_body, list(excluded))
    kinds, params, bottoms = state._walls()
    h = K.drop_height(a, b, r, wa[keep], wb[keep], state.cap_r[keep], allow, cls, state.cap_class[keep],
                      kinds, params, bottoms)
    return h if math.isfinite(h) else -float(np.min(np.minimum(a[:, 2], b[:, 2]) - r))
