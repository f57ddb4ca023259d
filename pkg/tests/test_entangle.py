import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tanglepick.entangle import (
    Edge, EdgeKind, EntanglementGraph, LinkModel, entanglement_graph, escape_directions, escape_oracle,
    interlock_test, pick_closure, read_edges_csv, write_edges_csv,
)
from tanglepick.fixtures import interlock_corpus

CORPUS = interlock_corpus()


def test_corpus_has_twenty_poses():
    assert len(CORPUS) == 20
    assert {f.category for f in CORPUS} == {"apart", "locked", "hooked"}


def test_oracle_flags_locked_poses_and_releases_apart_ones():
    for f in CORPUS:
        if f.category == "locked":
            assert escape_oracle(f.a, f.b, f.state), f.name
        else:
            # apart poses separate; open hooks slide out of the pocket mouth
            assert not escape_oracle(f.a, f.b, f.state), f.name


def test_heuristic_tracks_oracle_on_at_least_ninety_percent():
    agree = sum(interlock_test(f.a, f.b, f.state).entangled == escape_oracle(f.a, f.b, f.state) for f in CORPUS)
    assert agree >= 18


def test_oracle_never_more_permissive_with_more_directions():
    for f in CORPUS:
        flags = [escape_oracle(f.a, f.b, f.state, directions=n) for n in (6, 18, 26, 64)]
        # a longer direction list only adds chances to escape, so "entangled" can only switch off
        assert all(earlier >= later for earlier, later in zip(flags, flags[1:])), f.name


def test_escape_directions_are_unit_and_nested():
    d = escape_directions(80)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
    assert np.array_equal(escape_directions(26), d[:26])
    with pytest.raises(ValueError):
        escape_directions(0)


def test_interlock_test_self_pair_is_not_entangled():
    f = CORPUS[10]
    assert not interlock_test(0, 0, f.state).entangled


def test_graph_edges_are_symmetric_or_of_both_directions():
    for f in CORPUS:
        g = entanglement_graph(f.state)
        either = interlock_test(0, 1, f.state).entangled or interlock_test(1, 0, f.state).entangled
        assert (len(g.edges) == 1) == either, f.name
        for e in g.edges:
            assert e.body_a < e.body_b and e.depth > 0


def random_graph(draw_edges, n):
    return EntanglementGraph(tuple(range(n)), tuple(Edge(a, b, d, EdgeKind.GRAIN_TARGET) for a, b, d in draw_edges))


@st.composite
def graphs(draw):
    n = draw(st.integers(1, 25))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1), st.floats(0.0, 10.0)),
                          max_size=60))
    edges = sorted({(min(a, b), max(a, b)): d for a, b, d in pairs if a != b}.items())
    g = random_graph([(a, b, d) for (a, b), d in edges], n)
    seeds = draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n))
    return g, seeds


@given(graphs(), st.integers(0, 2**32 - 1), st.floats(0.1, 20), st.floats(0.1, 20))
def test_pick_closure_contains_seeds_and_is_monotone_in_p_hold(gs, seed, d_a, d_b):
    g, seeds = gs
    weak, strong = LinkModel(max(d_a, d_b)), LinkModel(min(d_a, d_b))  # smaller d0 holds more often
    a = pick_closure(g, seeds, weak, np.random.default_rng(seed))
    b = pick_closure(g, seeds, strong, np.random.default_rng(seed))
    assert seeds <= a <= b


@given(graphs())
def test_p_hold_one_picks_whole_components(gs):
    g, seeds = gs
    got = pick_closure(g, seeds, LinkModel(constant=1.0), np.random.default_rng(0))
    want = set().union(*(c for c in g.components() if c & seeds))
    assert got == want


def test_pick_closure_rejects_unknown_seeds():
    g = random_graph([(0, 1, 1.0)], 2)
    with pytest.raises(ValueError):
        pick_closure(g, {5}, LinkModel(), np.random.default_rng(0))


@given(st.floats(0.0, 100.0), st.floats(0.0, 100.0), st.floats(0.1, 10.0))
def test_p_hold_law(d1, d2, d0):
    m = LinkModel(d0)
    assert m.p_hold(d1) == pytest.approx(1 - math.exp(-d1 / d0))
    if d1 <= d2:
        assert m.p_hold(d1) <= m.p_hold(d2)
    assert 0.0 <= m.p_hold(d1) <= 1.0


def test_link_model_validation():
    assert LinkModel().p_hold(0.0) == 0.0
    assert LinkModel(constant=0.3).p_hold(50.0) == 0.3
    with pytest.raises(ValueError):
        LinkModel(d0=0.0)
    with pytest.raises(ValueError):
        LinkModel(constant=1.5)


def test_edges_csv_round_trip(tmp_path):
    g = random_graph([(0, 1, 0.123456789), (1, 4, 3.5), (2, 3, 1e-3)], 5)
    p = tmp_path / "edges.csv"
    write_edges_csv(g, p)
    back = read_edges_csv(p, nodes=g.nodes)
    assert back.nodes == g.nodes
    assert [(e.body_a, e.body_b, e.kind) for e in back.edges] == [(e.body_a, e.body_b, e.kind) for e in g.edges]
    assert [e.depth for e in back.edges] == pytest.approx([e.depth for e in g.edges], rel=1e-8)
