"""Grain and target-cell geometry.

Grains and targets are built from a base (straight, or a circular arc) plus
perpendicular spikes, then discretised into capsules. Everything here is a pure
function of its inputs; returned objects are frozen dataclasses.

Local frame convention: the base lies along +x centred on the origin, spikes
point along +y (side +1) or -y (side -1), and the body is planar in z = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

SEGMENT_LENGTH = 12.0  # mm
SEGMENT_SECTION = 1.0  # mm, square cross-section of grain segments
SEGMENT_VOLUME = SEGMENT_LENGTH * SEGMENT_SECTION**2  # mm^3
SPIKE_LENGTH = 12.0  # mm, targets and grains alike
PER_SEGMENT_MASS = 0.04  # g, 4 g of grains = 100 segments


class GrainType(str, Enum):
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"
    V = "V"
    VI = "VI"
    VII = "VII"
    VIII = "VIII"
    IX = "IX"

    @classmethod
    def parse(cls, value: "str | GrainType") -> "GrainType":
        if isinstance(value, GrainType):
            return value
        return cls(str(value).strip().upper())


@dataclass(frozen=True)
class Spike:
    attach_fraction: float
    side: int  # +1 or -1
    length: float = SPIKE_LENGTH


@dataclass(frozen=True)
class BaseCurve:
    """Straight segment, or circular arc with the given arc length.

    For arcs, ``sweep`` is the subtended angle; the arc bulges towards -y so
    that +y spikes form a hook (J) or a rounded U.
    """

    length: float = SEGMENT_LENGTH
    curved: bool = False
    sweep: float = math.pi

    @property
    def arc_radius(self) -> float:
        return self.length / self.sweep

    @property
    def chord(self) -> float:
        if not self.curved:
            return self.length
        return 2.0 * self.arc_radius * math.sin(self.sweep / 2.0)

    def point(self, f: float) -> np.ndarray:
        """Point on the base at arc-length fraction f in [0, 1]."""
        if not self.curved:
            return np.array([(f - 0.5) * self.length, 0.0, 0.0])
        R = self.arc_radius
        ang = math.pi + (math.pi - self.sweep) / 2.0 + f * self.sweep
        # centre placed so that the chord lies on y = 0
        cy = R * math.cos(self.sweep / 2.0)
        return np.array([R * math.cos(ang), cy + R * math.sin(ang), 0.0])


@dataclass(frozen=True)
class GrainShape:
    type: GrainType
    base: BaseCurve
    spikes: tuple[Spike, ...]
    section: float = SEGMENT_SECTION

    @property
    def segment_count(self) -> int:
        return 1 + len(self.spikes)


@dataclass(frozen=True)
class MaterialSpec:
    name: str
    youngs_modulus: float  # GPa
    density: float  # g/cc
    friction: float  # dimensionless
    area_moment: float  # mm^4

    def __post_init__(self):
        for k in ("youngs_modulus", "density", "friction", "area_moment"):
            if not getattr(self, k) > 0:
                raise ValueError(f"MaterialSpec.{k} must be > 0")


@dataclass(frozen=True)
class TargetShape:
    thickness: float  # tau, mm
    length: float  # lambda, mm
    spikes: int  # sigma
    bending_stiffness: float  # mN*m^2
    density: float  # g/cc
    spike_length: float = SPIKE_LENGTH
    material: str = ""

    def spike_list(self) -> tuple[Spike, ...]:
        # evenly spaced, alternating sides starting with +1
        n = self.spikes
        return tuple(Spike((k + 1) / (n + 1), 1 if k % 2 == 0 else -1, self.spike_length) for k in range(n))

    @property
    def volume(self) -> float:
        return self.thickness**2 * (self.length + self.spikes * self.spike_length)

    @property
    def unit_mass(self) -> float:
        """Mass of one target cell in g."""
        return self.volume * self.density * 1e-3


@dataclass(frozen=True)
class Capsule:
    endpoint_a: np.ndarray
    endpoint_b: np.ndarray
    radius: float
    body_id: int = 0
    ferromagnetic: bool = False

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("capsule radius must be > 0")


@dataclass(frozen=True)
class CaptureRegion:
    """Planar convex polygon bounded partly by material edges.

    ``open_edges[k]`` marks edge vertices[k] -> vertices[k+1] as open (no
    material). ``link`` is the index of the link that carries the region.
    """

    vertices: np.ndarray
    open_edges: tuple[bool, ...]
    link: int = 0


@dataclass(frozen=True)
class Joint:
    link_a: int
    link_b: int
    anchor: np.ndarray  # shared point, shape-local frame
    bending_stiffness: float  # mN*m^2


@dataclass(frozen=True)
class CapsuleSet:
    a: np.ndarray
    b: np.ndarray
    radius: np.ndarray
    link: np.ndarray
    regions: tuple[CaptureRegion, ...] = ()
    joints: tuple[Joint, ...] = ()
    section: float = SEGMENT_SECTION

    def __len__(self) -> int:
        return self.a.shape[0]

    @property
    def n_links(self) -> int:
        return int(self.link.max()) + 1 if len(self) else 0

    @property
    def total_length(self) -> float:
        return float(np.linalg.norm(self.b - self.a, axis=1).sum())

    def capsules(self, body_id: int = 0, ferromagnetic: bool = False) -> list[Capsule]:
        return [Capsule(self.a[i].copy(), self.b[i].copy(), float(self.radius[i]), body_id, ferromagnetic)
                for i in range(len(self))]


# ---------------------------------------------------------------------------
# grain grammar
# ---------------------------------------------------------------------------

_SEGMENTS = {
    GrainType.I: 1,
    GrainType.II: 2, GrainType.III: 2, GrainType.IV: 2,
    GrainType.V: 3, GrainType.VI: 3, GrainType.VII: 3,
    GrainType.VIII: 5, GrainType.IX: 5,
}

_THIRDS = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)

_CANONICAL: dict[GrainType, tuple[bool, tuple[tuple[float, int], ...]]] = {
    GrainType.I: (False, ()),
    GrainType.II: (False, ((1.0, 1),)),  # L
    GrainType.III: (False, ((0.5, 1),)),  # T
    GrainType.IV: (True, ((1.0, 1),)),  # J
    GrainType.V: (False, ((0.0, 1), (1.0, 1))),  # U
    GrainType.VI: (False, ((0.0, 1), (1.0, -1))),  # Z
    GrainType.VII: (True, ((0.0, 1), (1.0, 1))),  # rounded U
    GrainType.VIII: (False, tuple((f, 1 if k % 2 == 0 else -1) for k, f in enumerate(_THIRDS))),
    GrainType.IX: (False, tuple((f, 1) for f in _THIRDS)),
}


def segment_count(grain_type: GrainType | str) -> int:
    return _SEGMENTS[GrainType.parse(grain_type)]


def build_grain(grain_type: GrainType | str) -> GrainShape:
    """Canonical shape of one of the nine grain types."""
    gt = GrainType.parse(grain_type)
    curved, spikes = _CANONICAL[gt]
    return GrainShape(gt, BaseCurve(curved=curved), tuple(Spike(f, s) for f, s in spikes))


def grain_mass(shape_or_segments: GrainShape | int, per_segment_mass: float = PER_SEGMENT_MASS) -> float:
    if not per_segment_mass > 0:
        raise ValueError("per_segment_mass must be > 0")
    n = shape_or_segments.segment_count if isinstance(shape_or_segments, GrainShape) else int(shape_or_segments)
    return n * per_segment_mass


def grains_for_segments(grain_type: GrainType | str, n_segments: int = 100) -> int:
    """Number of whole grains closest to ``n_segments`` segments of material."""
    return max(1, round(n_segments / segment_count(grain_type)))


# ---------------------------------------------------------------------------
# targets and materials
# ---------------------------------------------------------------------------

ACRYLIC = MaterialSpec("acrylic", 3.0, 1.2, 0.5, 0.1220)
MYLAR_010 = MaterialSpec("mylar", 3.15, 1.4, 0.5, 0.0008)
MYLAR_025 = MaterialSpec("mylar", 3.15, 1.4, 0.5, 0.0012)
STEEL = MaterialSpec("steel", 200.0, 7.9, 0.5, SEGMENT_SECTION**4 / 12.0)

# Reported stiffness of the three grid thicknesses, read as N*mm^2 and stored in mN*m^2.
REPORTED_STIFFNESS = {
    0.2: (MYLAR_010, 0.3e-3),
    0.4: (MYLAR_025, 4.1e-3),
    1.0: (ACRYLIC, 366e-3),
}

GRID_TAU = (0.2, 0.4, 1.0)
GRID_LAMBDA = (12.0, 60.0, 120.0)
GRID_SIGMA = (0, 1, 2)


def bending_stiffness(youngs_modulus_gpa: float, area_moment_mm4: float) -> float:
    """EI in mN*m^2 from E in GPa and I in mm^4.

    1 GPa * 1 mm^4 = 1e9 N/m^2 * 1e-12 m^4 = 1e-3 N*m^2, so the conversion factor is exactly 1.
    """
    if not youngs_modulus_gpa > 0 or not area_moment_mm4 > 0:
        raise ValueError("E and I must be > 0")
    return youngs_modulus_gpa * area_moment_mm4


def mNm2_to_Nmm2(ei: float) -> float:
    return ei * 1e3


def build_target(tau: float, lam: float, sigma: int, material: MaterialSpec | None = None,
                 ei: float | None = None) -> TargetShape:
    """Target cell with ``sigma`` evenly spaced spikes.

    Without an explicit material, grid thicknesses take their reported material
    and reported stiffness; other thicknesses need a material.
    """
    if not tau > 0:
        raise ValueError("tau must be > 0")
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if lam < tau:
        raise ValueError(f"degenerate strip: lambda={lam} < tau={tau}")
    if material is None:
        key = min(REPORTED_STIFFNESS, key=lambda t: abs(t - tau))
        if abs(key - tau) > 1e-9:
            raise ValueError(f"no default material for tau={tau}; pass one")
        material, reported = REPORTED_STIFFNESS[key]
        if ei is None:
            ei = reported
    if ei is None:
        ei = bending_stiffness(material.youngs_modulus, material.area_moment)
    return TargetShape(float(tau), float(lam), int(sigma), float(ei), material.density, material=material.name)


def parametric_grid(taus: Sequence[float] = GRID_TAU, lams: Sequence[float] = GRID_LAMBDA,
                    sigmas: Sequence[int] = GRID_SIGMA) -> list[TargetShape]:
    return [build_target(t, l, s) for t in taus for l in lams for s in sigmas]


# ---------------------------------------------------------------------------
# discretisation
# ---------------------------------------------------------------------------


def _arc_points(base: BaseCurve, f0: float, f1: float, n: int) -> np.ndarray:
    """Polyline with n chords whose total length equals the arc length between f0 and f1."""
    fs = np.linspace(f0, f1, n + 1)
    pts = np.array([base.point(f) for f in fs])
    dtheta = (f1 - f0) * base.sweep / n
    if dtheta > 0:
        # inflate about the arc centre so chord lengths sum to the arc length
        scale = (dtheta / 2.0) / math.sin(dtheta / 2.0)
        centre = np.array([0.0, base.arc_radius * math.cos(base.sweep / 2.0), 0.0])
        pts = centre + (pts - centre) * scale
    return pts


def _regions_for(base_pt, spikes: Sequence[Spike], arc_pts=None, link_of=None) -> tuple[CaptureRegion, ...]:
    """Regions between consecutive breakpoints bounded by at least one spike on that side."""
    breaks = sorted({0.0, 1.0, *[s.attach_fraction for s in spikes]})
    regions = []
    for i in range(len(breaks) - 1):
        f0, f1 = breaks[i], breaks[i + 1]
        for side in (1, -1):
            left = [s for s in spikes if abs(s.attach_fraction - f0) < 1e-12 and s.side == side]
            right = [s for s in spikes if abs(s.attach_fraction - f1) < 1e-12 and s.side == side]
            if not left and not right:
                continue
            h = (left or right)[0].length
            p0 = base_pt(f0)
            p1 = base_pt(f1)
            up = np.array([0.0, side * h, 0.0])
            lower = [p0]
            if arc_pts is not None and side == 1:
                # pocket under the chord is closed by the arc
                lower = list(arc_pts(f0, f1))[:-1]
            verts = lower + [p1, p1 + up, p0 + up]
            n_lower = len(lower)
            # edges: lower chain (material), right side, tip (open), left side
            open_edges = [False] * n_lower + [not right, True, not left]
            if side == -1:
                verts = verts[::-1]
                # reversing a polygon maps edge k to edge m-2-k (mod m)
                m = len(open_edges)
                open_edges = [open_edges[(m - 2 - k) % m] for k in range(m)]
            link = 0 if link_of is None else link_of((left or right)[0].attach_fraction)
            regions.append(CaptureRegion(np.array(verts), tuple(open_edges), link))
    return tuple(regions)


def discretize(shape: GrainShape | TargetShape, arc_subdivisions: int = 6,
               target_subdivisions: int | None = None) -> CapsuleSet:
    """Capsule discretisation in the shape-local frame."""
    if arc_subdivisions < 1 or (target_subdivisions is not None and target_subdivisions < 1):
        raise ValueError("subdivisions must be >= 1")
    if isinstance(shape, GrainShape):
        return _discretize_grain(shape, arc_subdivisions)
    return _discretize_target(shape, target_subdivisions)


def _discretize_grain(shape: GrainShape, arc_subdivisions: int) -> CapsuleSet:
    base = shape.base
    r = shape.section / 2.0
    a, b = [], []
    if base.curved:
        pts = _arc_points(base, 0.0, 1.0, arc_subdivisions)
        a.extend(pts[:-1])
        b.extend(pts[1:])

        def base_pt(f):
            return pts[int(round(f * arc_subdivisions))] if abs(f * arc_subdivisions - round(f * arc_subdivisions)) < 1e-9 \
                else base.point(f)

        def arc_pts(f0, f1):
            i0 = int(round(f0 * arc_subdivisions))
            i1 = int(round(f1 * arc_subdivisions))
            return pts[i0:i1 + 1]
    else:
        a.append(base.point(0.0))
        b.append(base.point(1.0))
        base_pt = base.point
        arc_pts = None
    for s in shape.spikes:
        p = base_pt(s.attach_fraction)
        a.append(p)
        b.append(p + np.array([0.0, s.side * s.length, 0.0]))
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    regions = _regions_for(base_pt, shape.spikes, arc_pts)
    return CapsuleSet(a, b, np.full(len(a), r), np.zeros(len(a), dtype=np.int64), regions, (), shape.section)


def default_target_subdivisions(length: float) -> int:
    return max(1, int(round(length / SEGMENT_LENGTH)))


def _discretize_target(shape: TargetShape, target_subdivisions: int | None) -> CapsuleSet:
    n = target_subdivisions or default_target_subdivisions(shape.length)
    L = shape.length
    r = shape.thickness / 2.0
    xs = np.linspace(-L / 2.0, L / 2.0, n + 1)
    a = [np.array([xs[i], 0.0, 0.0]) for i in range(n)]
    b = [np.array([xs[i + 1], 0.0, 0.0]) for i in range(n)]
    link = list(range(n))

    def link_of(f):
        return min(int(f * n), n - 1) if f < 1.0 else n - 1

    def base_pt(f):
        return np.array([(f - 0.5) * L, 0.0, 0.0])

    spikes = shape.spike_list()
    for s in spikes:
        p = base_pt(s.attach_fraction)
        a.append(p)
        b.append(p + np.array([0.0, s.side * s.length, 0.0]))
        link.append(link_of(s.attach_fraction))
    joints = tuple(Joint(i, i + 1, np.array([xs[i + 1], 0.0, 0.0]), shape.bending_stiffness) for i in range(n - 1))
    regions = _regions_for(base_pt, spikes, None, link_of)
    return CapsuleSet(np.array(a), np.array(b), np.full(len(a), r), np.array(link, dtype=np.int64), regions,
                      joints, shape.thickness)


# ---------------------------------------------------------------------------
# mass properties
# ---------------------------------------------------------------------------


def mass_properties(a: np.ndarray, b: np.ndarray, section: np.ndarray | float, density_gcc: float):
    """Mass (g), centre of mass (mm) and inertia tensor about the COM (g*mm^2).

    Each capsule is treated as a square-section rod of side ``section``.
    """
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    sec = np.broadcast_to(np.asarray(section, dtype=float), (a.shape[0],))
    rho = density_gcc * 1e-3  # g/mm^3
    lengths = np.linalg.norm(b - a, axis=1)
    m = rho * sec**2 * np.maximum(lengths, sec)
    mass = float(m.sum())
    centres = 0.5 * (a + b)
    com = (m[:, None] * centres).sum(axis=0) / mass
    inertia = np.zeros((3, 3))
    for k in range(a.shape[0]):
        L = max(lengths[k], 1e-12)
        u = (b[k] - a[k]) / L
        i_par = m[k] * sec[k] ** 2 / 6.0
        i_perp = m[k] * (sec[k] ** 2 / 12.0 + lengths[k] ** 2 / 12.0)
        ik = i_perp * np.eye(3) + (i_par - i_perp) * np.outer(u, u)
        d = centres[k] - com
        inertia += ik + m[k] * (d @ d * np.eye(3) - np.outer(d, d))
    return mass, com, inertia


# ---------------------------------------------------------------------------
# capsule distance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosestResult:
    distance: float
    witness_a: np.ndarray
    witness_b: np.ndarray


def capsule_closest_distance(a: Capsule, b: Capsule) -> ClosestResult:
    """Surface distance between two capsules and the surface points realising it.

    Negative distance means overlap. The computation is ordered so that
    swapping the arguments gives exactly the same distance.
    """
    swap = _order_key(b) < _order_key(a)
    first, second = (b, a) if swap else (a, b)
    p0 = np.asarray(first.endpoint_a, float)
    p1 = np.asarray(first.endpoint_b, float)
    q0 = np.asarray(second.endpoint_a, float)
    q1 = np.asarray(second.endpoint_b, float)
    s, t, d2 = _kernels.seg_seg_closest(p0, p1, q0, q1)
    cp = p0 + s * (p1 - p0)
    cq = q0 + t * (q1 - q0)
    d = math.sqrt(d2)
    if d > 1e-12:
        n = (cq - cp) / d
    else:
        n = np.array([0.0, 0.0, 1.0])
    wa = cp + first.radius * n
    wb = cq - second.radius * n
    dist = d - first.radius - second.radius
    if swap:
        wa, wb = wb, wa
    return ClosestResult(dist, wa, wb)


def _order_key(c: Capsule):
    return (tuple(np.asarray(c.endpoint_a, float)), tuple(np.asarray(c.endpoint_b, float)), c.radius)


# ---------------------------------------------------------------------------
# catalogue serialisation
# ---------------------------------------------------------------------------

CATALOG_KEYS = ("type", "tau_mm", "lambda_mm", "spikes", "E_GPa", "I_mm4", "density_gcc", "mu")


def grain_catalog(material: MaterialSpec = ACRYLIC, types: Iterable[GrainType | str] = tuple(GrainType)) -> list[dict]:
    out = []
    for t in types:
        g = build_grain(t)
        out.append({
            "type": g.type.value, "tau_mm": g.section, "lambda_mm": g.base.length,
            "spikes": len(g.spikes), "E_GPa": material.youngs_modulus, "I_mm4": material.area_moment,
            "density_gcc": material.density, "mu": material.friction,
        })
    return out


def target_catalog(targets: Iterable[TargetShape] | None = None) -> list[dict]:
    targets = parametric_grid() if targets is None else targets
    out = []
    for t in targets:
        mat = REPORTED_STIFFNESS.get(t.thickness, (None,))[0]
        out.append({
            "type": "target", "tau_mm": t.thickness, "lambda_mm": t.length, "spikes": t.spikes,
            "E_GPa": mat.youngs_modulus if mat else None, "I_mm4": mat.area_moment if mat else None,
            "density_gcc": t.density, "mu": mat.friction if mat else 0.5,
            "EI_mNm2": t.bending_stiffness,
        })
    return out


def write_catalog(path, entries: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")


def read_catalog(path) -> list[dict]:
    with open(path) as fh:
        entries = [json.loads(line) for line in fh if line.strip()]
    for e in entries:
        missing = [k for k in CATALOG_KEYS if k not in e]
        if missing:
            raise ValueError(f"catalog entry missing keys {missing}")
    return entries
