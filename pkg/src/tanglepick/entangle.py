"""Interlocking between bodies, the entanglement graph and pick closures.

Nodes are units: a grain is one unit, an articulated target is one unit
spread over several rigid links. Two notions of entanglement live here:

* ``interlock_test``: a capsule axis of b passes through a capture region of
  a (the planar pocket between a base piece and a spike), deep enough that the
  capsule sits inside the pocket. Cheap, directional.
* ``escape_oracle``: b cannot be translated away from a along any sampled
  direction without hitting it. Expensive, used as ground truth on fixtures.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels as K
from .simulate import KIND_TARGET, SceneState


class EdgeKind(str, Enum):
    GRAIN_GRAIN = "grain-grain"
    GRAIN_TARGET = "grain-target"
    TARGET_TARGET = "target-target"


@dataclass(frozen=True)
class InterlockResult:
    entangled: bool
    depth: float  # mm


@dataclass(frozen=True)
class UnitGeometry:
    a: np.ndarray
    b: np.ndarray
    r: np.ndarray
    regions: list  # (vertices, open_edges) in world coordinates
    kind: int

    @property
    def centre(self) -> np.ndarray:
        return 0.5 * (self.a.mean(axis=0) + self.b.mean(axis=0))

    @property
    def radius(self) -> float:
        c = self.centre
        return float(max(np.linalg.norm(self.a - c, axis=1).max(), np.linalg.norm(self.b - c, axis=1).max())
                     + self.r.max())


def unit_geometry(state: SceneState, unit: int) -> UnitGeometry:
    bodies = np.flatnonzero(state.unit == unit)
    if not len(bodies):
        raise KeyError(f"no unit {unit} in scene")
    wa, wb = state.world_capsules()
    sel = np.isin(state.cap_body, bodies)
    regions = [(v, o) for u, v, o in state.world_regions() if u == unit]
    kind = int(state.kind[bodies[0]])
    return UnitGeometry(wa[sel], wb[sel], state.cap_r[sel], regions, kind)


# ---------------------------------------------------------------------------
# capture-region heuristic
# ---------------------------------------------------------------------------


def _plane_frame(verts: np.ndarray):
    # Newell normal, robust for slightly non-planar polygons
    n = np.zeros(3)
    m = len(verts)
    for k in range(m):
        p, q = verts[k], verts[(k + 1) % m]
        n += np.array([(p[1] - q[1]) * (p[2] + q[2]), (p[2] - q[2]) * (p[0] + q[0]), (p[0] - q[0]) * (p[1] + q[1])])
    n /= np.linalg.norm(n)
    origin = verts.mean(axis=0)
    e1 = verts[1] - verts[0]
    e1 -= e1.dot(n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return origin, n, e1, e2


def _inside(poly2: np.ndarray, x: np.ndarray) -> bool:
    inside = False
    m = len(poly2)
    for k in range(m):
        (x0, y0), (x1, y1) = poly2[k], poly2[(k + 1) % m]
        if (y0 > x[1]) != (y1 > x[1]):
            xc = x0 + (x[1] - y0) * (x1 - x0) / (y1 - y0)
            if xc > x[0]:
                inside = not inside
    return inside


def _edge_distance(poly2: np.ndarray, x: np.ndarray, edges) -> float:
    best = math.inf
    m = len(poly2)
    for k in edges:
        p, q = poly2[k], poly2[(k + 1) % m]
        d = q - p
        t = min(max(np.dot(x - p, d) / max(np.dot(d, d), 1e-300), 0.0), 1.0)
        best = min(best, float(np.linalg.norm(p + t * d - x)))
    return best


PLANE_EPS = 1e-9  # mm


def region_crossing(verts: np.ndarray, open_edges, p0: np.ndarray, p1: np.ndarray) -> float | None:
    """Depth of the crossing of segment p0-p1 through a region, or None if it misses.

    Depth is the in-plane distance from the crossing point to the nearest open
    edge, or to the nearest edge at all for a closed region.
    """
    origin, n, e1, e2 = _plane_frame(verts)
    s0 = float(np.dot(p0 - origin, n))
    s1 = float(np.dot(p1 - origin, n))
    # ends within rounding of the plane sit on it and count as the non-negative side:
    # coplanar pieces never cross, a chain through a vertex on the plane crosses once
    s0 = 0.0 if abs(s0) < PLANE_EPS else s0
    s1 = 0.0 if abs(s1) < PLANE_EPS else s1
    if (s0 < 0.0) == (s1 < 0.0):
        return None
    x = p0 + (s0 / (s0 - s1)) * (p1 - p0)
    rel = verts - origin
    poly2 = np.column_stack([rel @ e1, rel @ e2])
    x2 = np.array([np.dot(x - origin, e1), np.dot(x - origin, e2)])
    if not _inside(poly2, x2):
        return None
    opened = [k for k, o in enumerate(open_edges) if o]
    return _edge_distance(poly2, x2, opened or range(len(poly2)))


def _pack_regions(regions):
    m = max(len(v) for v, _ in regions)
    verts = np.zeros((len(regions), m, 3))
    nv = np.zeros(len(regions), dtype=np.int64)
    opened = np.zeros((len(regions), m), dtype=np.bool_)
    for k, (v, o) in enumerate(regions):
        verts[k, :len(v)] = v
        nv[k] = len(v)
        opened[k, :len(o)] = o
    return verts, nv, opened


def crossings(regions, region_unit, a, b, r, cap_unit):
    """(region index, capsule index, depth) for every capsule piercing a region of another unit."""
    if not len(regions) or not len(r):
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    verts, nv, opened = _pack_regions(regions)
    return K.region_crossings(verts, nv, opened, np.asarray(region_unit, dtype=np.int64), a, b, r,
                              np.asarray(cap_unit, dtype=np.int64), PLANE_EPS)


def _directional(ga: UnitGeometry, gb: UnitGeometry) -> InterlockResult:
    ri, ci, depth = crossings(ga.regions, np.zeros(len(ga.regions)), gb.a, gb.b, gb.r, np.ones(len(gb.r)))
    # the crossing capsule must clear the pocket edge by its own radius
    ok = depth > gb.r[ci]
    if not ok.any():
        return InterlockResult(False, 0.0)
    return InterlockResult(True, float(depth[ok].max()))


def interlock_test(unit_a: int, unit_b: int, state: SceneState) -> InterlockResult:
    """Does some capsule of b pass through a capture region of a?

    Directional: only a's regions are consulted.
    """
    if unit_a == unit_b:
        return InterlockResult(False, 0.0)
    return _directional(unit_geometry(state, unit_a), unit_geometry(state, unit_b))


# ---------------------------------------------------------------------------
# translation-escape oracle
# ---------------------------------------------------------------------------


def _fibonacci(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    rho = np.sqrt(1.0 - z * z)
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def escape_directions(count: int) -> np.ndarray:
    """First ``count`` directions of a fixed nested sequence.

    Faces of the cube first (6), then its edges (12) and corners (8); past 26
    a Fibonacci sphere fills in. Any prefix is a subset of any longer one.
    """
    if count < 1:
        raise ValueError("need at least one direction")
    dirs = []
    for k in range(3):
        for s in (1.0, -1.0):
            v = np.zeros(3)
            v[k] = s
            dirs.append(v)
    for i in range(3):
        for j in range(i + 1, 3):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    v = np.zeros(3)
                    v[i], v[j] = si, sj
                    dirs.append(v / math.sqrt(2.0))
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            for sz in (1.0, -1.0):
                dirs.append(np.array([sx, sy, sz]) / math.sqrt(3.0))
    out = np.array(dirs)
    if count > len(out):
        out = np.vstack([out, _fibonacci(count - len(out))])
    return out[:count]


def escape_oracle(unit_a: int, unit_b: int, state: SceneState, directions: int = 26,
                  escape_distance: float = 30.0, step: float = 0.5) -> bool:
    """True iff every sampled straight-line translation of b runs into a.

    Contact already present is not a collision; only deeper overlap than at
    the start counts. The sweep step is capped at half the thinner radius
    sum so thin capsules cannot tunnel through each other.
    """
    ga = unit_geometry(state, unit_a)
    gb = unit_geometry(state, unit_b)
    d0 = K.min_capsule_distance(ga.a, ga.b, ga.r, gb.a, gb.b, gb.r)
    level = min(d0, 0.0) - 1e-6
    h = min(step, 0.5 * (ga.r.min() + gb.r.min()))
    gap = gb.centre - ga.centre
    reach = ga.radius + gb.radius
    for d in escape_directions(directions):
        if not K.sweep_collides(ga.a, ga.b, ga.r, gb.a, gb.b, gb.r, d, escape_distance, h, level, gap, reach):
            return False
    return True


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    body_a: int
    body_b: int
    depth: float
    kind: EdgeKind


@dataclass(frozen=True)
class EntanglementGraph:
    nodes: tuple[int, ...]
    edges: tuple[Edge, ...]

    def neighbours(self) -> dict[int, list[tuple[int, int]]]:
        """node -> [(other node, edge index)]"""
        adj = {n: [] for n in self.nodes}
        for k, e in enumerate(self.edges):
            adj[e.body_a].append((e.body_b, k))
            adj[e.body_b].append((e.body_a, k))
        return adj

    def degree(self, node: int) -> int:
        return sum(1 for e in self.edges if node in (e.body_a, e.body_b))

    def components(self) -> list[set[int]]:
        adj = self.neighbours()
        seen: set[int] = set()
        out = []
        for n in self.nodes:
            if n in seen:
                continue
            comp = {n}
            todo = [n]
            while todo:
                u = todo.pop()
                for v, _ in adj[u]:
                    if v not in comp:
                        comp.add(v)
                        todo.append(v)
            seen |= comp
            out.append(comp)
        return out


EDGE_CSV_HEADER = ("body_a", "body_b", "depth_mm", "kind")


def write_edges_csv(graph: EntanglementGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EDGE_CSV_HEADER)
        for e in graph.edges:
            w.writerow([e.body_a, e.body_b, f"{e.depth:.9g}", e.kind.value])


def read_edges_csv(path, nodes=None) -> EntanglementGraph:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    edges = tuple(Edge(int(r["body_a"]), int(r["body_b"]), float(r["depth_mm"]), EdgeKind(r["kind"])) for r in rows)
    if nodes is None:
        nodes = sorted({e.body_a for e in edges} | {e.body_b for e in edges})
    return EntanglementGraph(tuple(nodes), edges)


def _edge_kind(ka: int, kb: int) -> EdgeKind:
    n_target = int(ka == KIND_TARGET) + int(kb == KIND_TARGET)
    return (EdgeKind.GRAIN_GRAIN, EdgeKind.GRAIN_TARGET, EdgeKind.TARGET_TARGET)[n_target]


def entanglement_graph(state: SceneState, units=None) -> EntanglementGraph:
    """Edges between every pair of units that interlock in either direction.

    The crossing kernel skips region/capsule pairs whose bounding boxes are
    disjoint, so far-apart units cost one box test. Edge depth is the largest
    crossing depth found in either direction; edges are listed in (a, b)
    order with a < b.
    """
    all_units = sorted(set(int(u) for u in state.unit))
    nodes = all_units if units is None else sorted(set(int(u) for u in units))
    if not nodes:
        return EntanglementGraph((), ())
    keep = set(nodes)
    wa, wb = state.world_capsules()
    cap_unit = state.unit[state.cap_body]
    sel = np.isin(cap_unit, nodes)
    ca, cb, cr, cu = wa[sel], wb[sel], state.cap_r[sel], cap_unit[sel]
    regs = [(u, v, o) for u, v, o in state.world_regions() if u in keep]
    ri, ci, depth = crossings([(v, o) for _, v, o in regs], [u for u, _, _ in regs], ca, cb, cr, cu)
    kind = {int(state.unit[b]): int(state.kind[b]) for b in range(state.n_bodies)}
    best: dict[tuple[int, int], float] = {}
    for r_, c_, d in zip(ri, ci, depth):
        if not d > cr[c_]:
            continue
        u, v = regs[r_][0], int(cu[c_])
        key = (min(u, v), max(u, v))
        best[key] = max(best.get(key, 0.0), float(d))
    edges = tuple(Edge(a, b, best[(a, b)], _edge_kind(kind[a], kind[b])) for a, b in sorted(best))
    return EntanglementGraph(tuple(nodes), edges)


# ---------------------------------------------------------------------------
# pick closure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkModel:
    """Probability that an edge holds under load, as a function of interlock depth."""

    d0: float = 2.0  # mm
    constant: float | None = None  # fixed p_hold overriding the depth law

    def __post_init__(self):
        if not self.d0 > 0:
            raise ValueError("d0 must be > 0")
        if self.constant is not None and not 0.0 <= self.constant <= 1.0:
            raise ValueError("constant p_hold must lie in [0, 1]")

    def p_hold(self, depth: float) -> float:
        if self.constant is not None:
            return self.constant
        return 1.0 - math.exp(-max(depth, 0.0) / self.d0)


def pick_closure(graph: EntanglementGraph, seeds, link_model: LinkModel, rng: np.random.Generator) -> set[int]:
    """Seeds plus every node reachable from them through edges that hold.

    One uniform draw per edge, in edge order, decides whether it holds, so two
    link models sharing an RNG stream see the same draws; a pointwise larger
    p_hold can then only grow the picked set.
    """
    seeds = set(int(s) for s in seeds)
    missing = seeds - set(graph.nodes)
    if missing:
        raise ValueError(f"seeds not in graph: {sorted(missing)}")
    u = rng.uniform(size=len(graph.edges))
    holds = [u[k] < link_model.p_hold(e.depth) for k, e in enumerate(graph.edges)]
    adj = graph.neighbours()
    picked = set(seeds)
    todo = deque(sorted(seeds))
    while todo:
        n = todo.popleft()
        for m, k in adj[n]:
            if holds[k] and m not in picked:
                picked.add(m)
                todo.append(m)
    return picked
