import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tanglepick.geometry import (
    ACRYLIC, GRID_LAMBDA, GRID_SIGMA, GRID_TAU, REPORTED_STIFFNESS, Capsule, GrainType, bending_stiffness, build_grain,
    build_target, capsule_closest_distance, discretize, grain_catalog, grain_mass, grains_for_segments,
    parametric_grid, read_catalog, segment_count, target_catalog, write_catalog,
)


# ---------------------------------------------------------------------------
# sampling oracle for capsule distance
# ---------------------------------------------------------------------------


def sampled_distance(a: Capsule, b: Capsule, n: int = 41, levels: int = 12) -> float:
    """Closest surface distance by zooming a dense (s, t) sample grid onto its minimum.

    Segment-segment distance is convex in (s, t), so shrinking the window
    around the best sample never loses the minimum.
    """
    p0, p1 = np.asarray(a.endpoint_a, float), np.asarray(a.endpoint_b, float)
    q0, q1 = np.asarray(b.endpoint_a, float), np.asarray(b.endpoint_b, float)
    s_lo, s_hi, t_lo, t_hi = 0.0, 1.0, 0.0, 1.0
    best = math.inf
    for _ in range(levels):
        s = np.linspace(s_lo, s_hi, n)
        t = np.linspace(t_lo, t_hi, n)
        P = p0 + s[:, None] * (p1 - p0)
        Q = q0 + t[:, None] * (q1 - q0)
        d = np.linalg.norm(P[:, None, :] - Q[None, :, :], axis=2)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        best = min(best, float(d[i, j]))
        ds, dt = (s_hi - s_lo) / (n - 1), (t_hi - t_lo) / (n - 1)
        s_lo, s_hi = max(0.0, s[i] - 2 * ds), min(1.0, s[i] + 2 * ds)
        t_lo, t_hi = max(0.0, t[j] - 2 * dt), min(1.0, t[j] + 2 * dt)
    return best - a.radius - b.radius


def random_capsule(rng, scale=10.0):
    a = rng.uniform(-scale, scale, 3)
    b = a + rng.uniform(-scale, scale, 3)
    return Capsule(a, b, float(rng.uniform(0.05, 1.0)))


def test_capsule_distance_matches_sampling_oracle_on_random_pairs():
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for _ in range(1000):
        a, b = random_capsule(rng), random_capsule(rng)
        worst = max(worst, abs(capsule_closest_distance(a, b).distance - sampled_distance(a, b)))
    assert worst < 1e-3


def test_capsule_distance_parallel_and_crossing_cases():
    a = Capsule(np.array([0.0, 0, 0]), np.array([10.0, 0, 0]), 0.5)
    b = Capsule(np.array([2.0, 3, 0]), np.array([8.0, 3, 0]), 0.5)
    assert capsule_closest_distance(a, b).distance == pytest.approx(2.0)
    c = Capsule(np.array([5.0, -5, 1]), np.array([5.0, 5, 1]), 0.25)
    assert capsule_closest_distance(a, c).distance == pytest.approx(0.25)
    # overlap is negative
    d = Capsule(np.array([5.0, -5, 0]), np.array([5.0, 5, 0]), 0.5)
    assert capsule_closest_distance(a, d).distance == pytest.approx(-1.0)


def test_capsule_distance_witness_points_lie_on_surfaces():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = random_capsule(rng), random_capsule(rng)
        r = capsule_closest_distance(a, b)
        if r.distance > 0:
            assert np.linalg.norm(r.witness_b - r.witness_a) == pytest.approx(r.distance, abs=1e-9)


coord = st.floats(-20, 20, allow_nan=False)
point = st.tuples(coord, coord, coord).map(np.array)
capsule = st.builds(Capsule, point, point, st.floats(0.01, 2.0))


@given(capsule, capsule)
def test_capsule_distance_is_exactly_symmetric(a, b):
    assert capsule_closest_distance(a, b).distance == capsule_closest_distance(b, a).distance


@given(capsule, capsule)
def test_capsule_distance_never_below_oracle(a, b):
    assert capsule_closest_distance(a, b).distance >= sampled_distance(a, b, n=21, levels=10) - 1e-3


def test_capsule_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        Capsule(np.zeros(3), np.ones(3), 0.0)


# ---------------------------------------------------------------------------
# grains and targets
# ---------------------------------------------------------------------------

SEGMENTS = {"I": 1, "II": 2, "III": 2, "IV": 2, "V": 3, "VI": 3, "VII": 3, "VIII": 5, "IX": 5}


@pytest.mark.parametrize("gt", list(GrainType))
def test_discretize_preserves_arc_length_and_segment_count(gt):
    shape = build_grain(gt)
    assert segment_count(gt) == shape.segment_count == SEGMENTS[gt.value]
    cs = discretize(shape)
    assert cs.total_length == pytest.approx(12.0 * shape.segment_count, rel=0.01)


def test_grain_type_parse_accepts_lowercase_roman_numerals():
    assert GrainType.parse(" v ") is GrainType.V
    with pytest.raises(ValueError):
        GrainType.parse("X")


@pytest.mark.parametrize("gt", list(GrainType))
def test_hundred_segments_weigh_four_grams(gt):
    assert grain_mass(100) == pytest.approx(4.0, rel=1e-12)
    assert grain_mass(build_grain(gt)) == pytest.approx(0.04 * SEGMENTS[gt.value])


@given(st.integers(0, 500), st.floats(1e-4, 10.0), st.floats(1e-4, 10.0))
def test_grain_mass_is_linear_in_segment_mass(n, m1, m2):
    assert grain_mass(n, m1 + m2) == pytest.approx(grain_mass(n, m1) + grain_mass(n, m2), rel=1e-12)


def test_grain_mass_rejects_nonpositive_segment_mass():
    with pytest.raises(ValueError):
        grain_mass(3, 0.0)


def test_grains_for_segments_rounds_to_whole_grains():
    assert grains_for_segments("I", 100) == 100
    assert grains_for_segments("V", 100) == 33
    assert grains_for_segments("VIII", 100) == 20
    assert grains_for_segments("V", 1) == 1


@pytest.mark.parametrize("E,I,expected", [(3.0, 0.122, 0.366), (3.15, 0.0008, 0.00252), (200.0, 1 / 12, 16.666666666666668),
                                          (1.0, 1.0, 1.0), (2.5, 4.0, 10.0)])
def test_bending_stiffness_hand_values(E, I, expected):
    assert bending_stiffness(E, I) == pytest.approx(expected, rel=1e-9)


@given(st.floats(0.01, 300), st.floats(0.01, 300), st.floats(1e-5, 10), st.floats(1e-5, 10))
def test_bending_stiffness_is_bilinear(e1, e2, i1, i2):
    assert bending_stiffness(e1 + e2, i1) == pytest.approx(bending_stiffness(e1, i1) + bending_stiffness(e2, i1))
    assert bending_stiffness(e1, i1 + i2) == pytest.approx(bending_stiffness(e1, i1) + bending_stiffness(e1, i2))


def test_bending_stiffness_rejects_nonpositive():
    with pytest.raises(ValueError):
        bending_stiffness(0.0, 1.0)


def test_parametric_grid_has_27_cells_with_reported_stiffness():
    grid = parametric_grid()
    assert len(grid) == 27
    assert {(t.thickness, t.length, t.spikes) for t in grid} == {
        (t, l, s) for t in GRID_TAU for l in GRID_LAMBDA for s in GRID_SIGMA}
    for t in grid:
        assert t.bending_stiffness == REPORTED_STIFFNESS[t.thickness][1]


@pytest.mark.parametrize("args", [(0.0, 60, 1), (0.4, 0, 1), (0.4, 60, -1), (2.0, 1.0, 0), (0.3, 60, 1)])
def test_build_target_rejects_bad_input(args):
    with pytest.raises(ValueError):
        build_target(*args)


def test_build_target_off_grid_with_material_uses_e_times_i():
    t = build_target(0.3, 50, 2, material=ACRYLIC)
    assert t.bending_stiffness == pytest.approx(ACRYLIC.youngs_modulus * ACRYLIC.area_moment)


def test_target_discretization_covers_length():
    for t in parametric_grid(sigmas=(0,)):
        assert discretize(t).total_length == pytest.approx(t.length, rel=0.01)


def test_catalog_round_trip(tmp_path):
    entries = grain_catalog() + target_catalog()
    p = tmp_path / "cat.jsonl"
    write_catalog(p, entries)
    assert read_catalog(p) == entries
    assert len(entries) == 9 + 27
