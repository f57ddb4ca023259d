import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tanglepick.entangle import LinkModel, entanglement_graph
from tanglepick.geometry import build_target, mNm2_to_Nmm2
from tanglepick.pick import (
    DATASET_HEADER, GRAIN_CLASS, KIND_TARGET, TARGET_CLASS, GripperSpec, MagnetSpec, PickDataset, PickRecord,
    PickScene, Protocol, allowance_table, attract, cantilever_deflection, drop_grains, gripper_cluster,
    magnet_pick, picked_units, quantize, repeated_gripper_targets, repeated_magnet, run_parametric_study,
    steel_grain, success_rate, target_scene, unit_masses, write_dataset,
)
from tanglepick.pick import _unit_kinds

SMALL = PickScene(units=20)


@pytest.mark.parametrize("m,u,expected", [(0.0, 0.04, 0), (0.4, 0.04, 10), (0.42, 0.04, 10), (0.44, 0.04, 11),
                                          (9.0, 0.04, 100), (1.0, 0.3, 3)])
def test_picked_units_hand_values(m, u, expected):
    assert picked_units(m, u) == expected


@given(st.floats(0, 50), st.floats(0, 50), st.floats(1e-3, 5))
def test_picked_units_monotone_in_mass(m1, m2, u):
    lo, hi = sorted((m1, m2))
    assert picked_units(lo, u) <= picked_units(hi, u)


def test_picked_units_rejects_nonpositive_unit():
    with pytest.raises(ValueError):
        picked_units(1.0, 0.0)


def test_success_rate():
    recs = [PickRecord("Magnet", 10, 0.4, 60, 1, i, 0, 0.1, 0.01, i) for i in range(4)]
    assert success_rate(recs, lambda r: r.picked_units > 1) == 0.5
    with pytest.raises(ValueError):
        success_rate([], bool)


def test_cantilever_and_allowance_table():
    assert cantilever_deflection(2.0, 10.0, 1000.0) == pytest.approx(2.0 * 1000 / 3000)
    t = build_target(0.2, 120, 1)
    allow = allowance_table(t, 1.0)
    assert allow[GRAIN_CLASS, GRAIN_CLASS] == 0.0
    assert 0.0 < allow[GRAIN_CLASS, TARGET_CLASS] <= 6.0
    stiff = allowance_table(build_target(1.0, 12, 0), 1.0)
    assert stiff[GRAIN_CLASS, TARGET_CLASS] < 0.01
    w = 1.0 * 9810.0 * 1e-6
    expect = min(w * 60.0**3 / (3 * mNm2_to_Nmm2(t.bending_stiffness)), 6.0)
    assert allow[GRAIN_CLASS, TARGET_CLASS] == pytest.approx(expect)


def test_spec_validation():
    with pytest.raises(ValueError):
        GripperSpec(closing_stroke=70, open_gap=60)
    with pytest.raises(ValueError):
        GripperSpec(jaw_width=0)
    assert GripperSpec().closed_gap == pytest.approx(5.0)
    with pytest.raises(ValueError):
        MagnetSpec(face_diameter=0)


@given(st.floats(1e-6, 1e4, allow_nan=False))
def test_quantize_is_idempotent_and_csv_exact(v):
    q = quantize(v)
    assert quantize(q) == q
    assert float(f"{q:.9g}") == q


def bowl(seed=0, target=build_target(0.4, 60, 1)):
    rng = np.random.default_rng(seed)
    allow = allowance_table(target, steel_grain(SMALL).mass)
    return target_scene(target, rng, SMALL, allow), rng, allow


def test_mass_is_conserved_in_a_pick():
    state, rng, allow = bowl()
    drop_grains(state, 30, rng, MagnetSpec(), SMALL, allow)
    masses = unit_masses(state)
    total = float(masses[_unit_kinds(state) == KIND_TARGET].sum())
    out = magnet_pick(state, [], MagnetSpec(), LinkModel(), rng, allow, SMALL)
    assert out.picked_mass + out.remaining_mass == pytest.approx(total, abs=1e-9)
    assert out.seeds <= out.picked


def test_p_hold_one_picks_the_connected_components_of_caught_grains():
    state, rng, allow = bowl(1)
    drop_grains(state, 30, rng, MagnetSpec(), SMALL, allow)
    seeds = attract(state, MagnetSpec())
    graph = entanglement_graph(state)
    want = set().union(*(c for c in graph.components() if c & seeds))
    out = magnet_pick(state.copy(), [], MagnetSpec(), LinkModel(constant=1.0), np.random.default_rng(2), allow, SMALL)
    assert out.picked == want


def test_repeated_magnet_is_deterministic_and_bounded():
    t = build_target(0.4, 60, 1)
    a = repeated_magnet(t, 20, 3, 5, scene=SMALL)
    b = repeated_magnet(t, 20, 3, 5, scene=SMALL)
    assert a.records == b.records
    assert [r.iteration for r in a] == [0, 1, 2]
    assert all(0 <= r.picked_units <= SMALL.units for r in a)
    assert all(r.protocol is Protocol.MAGNET and r.grain_count == 20 for r in a)


def test_zero_grains_pick_nothing():
    ds = repeated_magnet(build_target(0.2, 12, 0), 0, 2, 0, scene=SMALL)
    assert [r.picked_units for r in ds] == [0, 0]


def test_gripper_protocols_produce_records():
    t = build_target(0.4, 60, 1)
    ds = repeated_gripper_targets(t, 3, 0, scene=SMALL)
    assert len(ds) == 3 and all(r.protocol is Protocol.GRIPPER for r in ds)
    cl = gripper_cluster("V", 2, 0, segments=30)
    assert len(cl) == 2 and all(r.picked_units >= 0 for r in cl)
    # one counted unit is one acrylic segment: 12 mm^3 at 1.2 g/cm^3
    assert cl.records[0].unit_mass_g == pytest.approx(12 * 1.2e-3, rel=1e-9)


def test_parametric_study_order_and_cell_count():
    grid = [build_target(0.4, 60, s) for s in (0, 1)]
    ds = run_parametric_study(grid, iterations=2, seeds=[1, 0], grain_count=10, scene=SMALL)
    assert len(ds) == 2 * 2 * 2
    assert [(r.seed, r.spikes, r.iteration) for r in ds] == [
        (1, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 1), (0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1)]
    with pytest.raises(ValueError):
        run_parametric_study([], iterations=1)


def test_write_dataset_header_and_rows():
    ds = PickDataset([PickRecord("Gripper", 0, 0.2, 12, 0, 0, 3, 0.0123456789012, 0.01, 1)])
    buf = io.StringIO()
    write_dataset(ds, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(DATASET_HEADER)
    assert lines[1] == "Gripper,0,0.2,12,0,0,3,0.0123456789,0.01,1"
