import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_graph

from poolbias.errors import InvalidArgument, ParseError
from poolbias.graph import (
    Graph,
    Partition,
    Pattern,
    classify_partition,
    connected_embedding,
    dump_jsonl,
    grid_adjacency,
    grid_graph,
    load_jsonl,
    occurs,
)


def test_grid_edge_count():
    g = grid_graph(12, 12, [0, 1, 2, 3], seed=0)
    assert g.num_nodes == 144
    assert g.num_edges == 2 * 12 * 11
    assert set(g.colors.tolist()) <= {0, 1, 2, 3}


def test_grid_degrees():
    deg = grid_adjacency(3, 4).sum(axis=1)
    assert sorted(deg.tolist()) == [2] * 4 + [3] * 6 + [4] * 2


def test_grid_is_seeded():
    a = grid_graph(5, 5, [0, 1, 2], seed=42)
    b = grid_graph(5, 5, [0, 1, 2], seed=42)
    c = grid_graph(5, 5, [0, 1, 2], seed=43)
    assert a.same_as(b)
    assert not a.same_as(c)


@pytest.mark.parametrize("bad", [
    dict(colors=[0, 1], adjacency=[[0, 1], [0, 0]]),        # asymmetric
    dict(colors=[0, 1], adjacency=[[1, 0], [0, 0]]),        # self-loop
    dict(colors=[0, 1], adjacency=[[0, 2], [2, 0]]),        # not binary
    dict(colors=[0, 1], adjacency=[[0, 1], [1, 0]], label=2),
    dict(colors=[0, 1], adjacency=[[0, 1], [1, 0]], anchor=(5,)),
])
def test_graph_validation(bad):
    with pytest.raises(InvalidArgument):
        Graph(**bad)


def test_graph_arrays_are_read_only(path4):
    with pytest.raises(ValueError):
        path4.colors[0] = 3


def test_relabel_maps_anchor(path4):
    h = path4.relabel([3, 2, 1, 0])
    assert h.colors.tolist() == [1, 2, 1, 0]
    assert h.anchor == (2,)
    assert h.edges() == [(0, 1), (1, 2), (2, 3)]


def test_pattern_validation():
    with pytest.raises(InvalidArgument):
        Pattern.chain((4, 4, 5))
    with pytest.raises(InvalidArgument):
        Pattern((1, 2), np.zeros((2, 2)), "chain")
    star = Pattern.star(5, (4, 6, 7))
    assert star.center == 0 and star.is_star and star.size == 4
    assert Pattern.chain((4, 5, 6)).center == 1


def test_pattern_json_roundtrip():
    p = Pattern.star(2, (0, 1))
    q = Pattern.from_json(json.loads(json.dumps(p.to_json())))
    assert q.colors == p.colors and np.array_equal(q.adjacency, p.adjacency) and q.kind == p.kind


def test_jsonl_roundtrip(tmp_path, path4):
    f = tmp_path / "g.jsonl"
    dump_jsonl([path4, path4.replace(label=None, anchor=None)], f)
    back = load_jsonl(f)
    assert back[0].same_as(path4)
    assert back[1].label is None and back[1].anchor is None


def test_jsonl_error_has_location(tmp_path):
    f = tmp_path / "bad.jsonl"
    f.write_text('{"n": 1, "colors": [0], "edges": []}\n{"n": 2, "colors": [0]}\n')
    with pytest.raises(ParseError, match=r"bad\.jsonl:2"):
        load_jsonl(f)


# -- predicates -------------------------------------------------------------


def test_partition_examples(chain3):
    # O-B-G as a path: connected
    g = Graph.from_edges(4, [4, 5, 6, 0], [(0, 1), (1, 2), (2, 3)])
    assert classify_partition(g, chain3) is Partition.D1
    # all colors, B not adjacent to G
    g = Graph.from_edges(4, [4, 5, 0, 6], [(0, 1), (1, 2), (2, 3)])
    assert classify_partition(g, chain3) is Partition.DPERP
    # G missing
    g = Graph.from_edges(3, [4, 5, 0], [(0, 1), (1, 2)])
    assert classify_partition(g, chain3) is Partition.D0


def test_occurs_witnesses_are_cartesian(chain3):
    g = Graph.from_edges(5, [4, 4, 5, 6, 6], [])
    ok, wit = occurs(g, chain3)
    assert ok and len(wit) == 4
    assert set(wit) == {(0, 2, 3), (0, 2, 4), (1, 2, 3), (1, 2, 4)}


def test_connected_embedding_returns_witness(chain3):
    g = Graph.from_edges(5, [0, 6, 5, 4, 0], [(0, 1), (1, 2), (2, 3), (3, 4)])
    ok, s = connected_embedding(g, chain3)
    assert ok and s == (3, 2, 1)


def _brute(g, p):
    """Independent oracle: scan every ordered tuple of distinct nodes."""
    m = p.size
    occ = conn = False
    for s in itertools.permutations(range(g.num_nodes), m):
        if any(g.colors[s[k]] != p.colors[k] for k in range(m)):
            continue
        occ = True
        sub = g.adjacency[np.ix_(s, s)]
        if np.all(sub >= p.adjacency):
            conn = True
    return occ, conn


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_predicates_match_brute_force(data):
    n = data.draw(st.integers(3, 9))
    colors = data.draw(st.lists(st.integers(0, 4), min_size=n, max_size=n))
    bits = data.draw(st.lists(st.booleans(), min_size=n * (n - 1) // 2, max_size=n * (n - 1) // 2))
    edges = [e for e, b in zip(itertools.combinations(range(n), 2), bits) if b]
    g = Graph.from_edges(n, colors, edges)
    kind = data.draw(st.sampled_from(["chain", "pair"]))
    p = Pattern.chain((2, 3, 4)) if kind == "chain" else Pattern.chain((1, 3))
    occ, conn = _brute(g, p)
    assert occurs(g, p)[0] == occ
    assert connected_embedding(g, p)[0] == conn
    expected = Partition.D1 if conn else (Partition.DPERP if occ else Partition.D0)
    assert classify_partition(g, p) is expected


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(range(6)))
def test_partition_is_relabel_invariant(seed, perm):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 6, 5, p=0.4)
    p = Pattern.chain((2, 3, 4))
    assert classify_partition(g, p) is classify_partition(g.relabel(perm), p)
