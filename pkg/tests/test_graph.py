import json
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from campusepi.graph import (
    MapError,
    build_path_tree,
    load_map,
    node_weight_fraction,
    passage_window,
    path_length,
    shortest_path,
)

from conftest import line_map, toy_three_origin_map


def random_map(seed, n=12, extra=10):
    """Random connected planar-ish graph as a map dict."""
    r = np.random.default_rng(seed)
    pts = r.uniform(0, 100, (n, 2))
    nodes = [{"id": f"n{k}", "x": float(x), "y": float(y)} for k, (x, y) in enumerate(pts)]
    pairs = {(k, int(r.integers(0, k))) for k in range(1, n)}
    while len(pairs) < n - 1 + extra:
        a, b = sorted(r.choice(n, 2, replace=False).tolist())
        pairs.add((b, a))
    edges = [{"a": f"n{a}", "b": f"n{b}", "width_m": 3.0} for a, b in pairs]
    return {"nodes": nodes, "edges": edges, "locations": {f"loc{k}": {"node": f"n{k}", "capacity": 1} for k in range(n)}}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_shortest_paths_match_networkx(seed):
    data = random_map(seed)
    net = load_map(data)
    g = nx.Graph()
    for e in net.edges:
        g.add_edge(e.a, e.b, weight=e.length)
    for target in ("n3", "n7", "n11"):
        ours = shortest_path(net, "n0", target)
        assert path_length(net, ours) == pytest.approx(nx.dijkstra_path_length(g, "n0", target), abs=1e-9)
        assert ours[0] == "n0" and ours[-1] == target


def test_path_tree_lengths_accumulate():
    net = load_map(random_map(3))
    tree = build_path_tree(net, "n0", ["n4", "n8", "n9"])
    assert tree.nodes["n0"].cumulative_length == 0.0
    for nid, rn in tree.nodes.items():
        if rn.parent is not None:
            parent = tree.nodes[rn.parent]
            assert rn.cumulative_length == pytest.approx(parent.cumulative_length + rn.length_to_parent)
            assert nid in parent.children
    # acyclic: every node walks back to the root
    for nid in tree.nodes:
        assert tree.path_to(nid)[0] == "n0"
    assert tree.leaves == frozenset({"n4", "n8", "n9"})


def test_passage_window_for_100m():
    tree = build_path_tree(line_map(100.0), "a", ["b"])
    w = passage_window(tree, "b", 0.926, 1.586)
    assert w.t_start == pytest.approx(100 / 1.586)
    assert w.t_end == pytest.approx(100 / 0.926)
    assert round(w.t_start, 2) == 63.05 and round(w.t_end, 2) == 107.99
    shifted = passage_window(tree, "b", 0.926, 1.586, departure_offset=60)
    assert shifted.t_start == pytest.approx(w.t_start + 60) and shifted.delta == pytest.approx(w.delta)
    with pytest.raises(ValueError):
        passage_window(tree, "b", 2.0, 1.0)


def test_node_weight_fraction_uniform_arrivals():
    tree = build_path_tree(line_map(100.0), "a", ["b"])
    w = passage_window(tree, "b", 0.926, 1.586)
    assert node_weight_fraction(tree, "b", (0, 1000), 0.926, 1.586) == pytest.approx(1.0)
    half = (w.t_start, w.t_start + w.delta / 2)
    assert node_weight_fraction(tree, "b", half, 0.926, 1.586) == pytest.approx(0.5)
    assert node_weight_fraction(tree, "b", (200, 300), 0.926, 1.586) == 0.0


def test_weights_example_entry():
    # a node 5 % of all students pass between 300 s and 600 s
    net = toy_three_origin_map()
    tree = build_path_tree(net, "h1", {"c": 1.0}, origin_fraction=0.05)
    tree.refresh_weights(0.926, 1.586, offset=0.0)
    t0, t1, frac = tree.nodes["c"].weight[0]
    assert frac == pytest.approx(0.05)
    assert t0 < t1


def test_demand_shares_split_over_branches():
    net = toy_three_origin_map()
    tree = build_path_tree(net, "j", {"h1": 0.25, "c": 0.75})
    assert tree.nodes["j"].share == pytest.approx(1.0)
    assert tree.nodes["k"].share == pytest.approx(0.75)
    assert tree.nodes["h1"].share == pytest.approx(0.25)


def _write(tmp_path, data):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(data, indent=1))
    return p


@pytest.mark.parametrize("mutate, fragment", [
    (lambda d: d["edges"].append({"a": "a", "b": "zz", "width_m": 1}), "unknown node 'zz'"),
    (lambda d: d["edges"][0].update(width_m=0), "width must be positive"),
    (lambda d: d["edges"][0].update(length_m=-3), "length must be positive"),
    (lambda d: d["nodes"].append({"id": "a", "x": 1, "y": 1}), "duplicate node id"),
    (lambda d: d.update(bogus=1), "unknown top-level key"),
    (lambda d: (d["nodes"].append({"id": "island", "x": 9, "y": 9}),
                d["locations"].update(far={"node": "island", "capacity": 1})), "not connected"),
])
def test_invalid_maps_rejected(tmp_path, mutate, fragment):
    data = line_map().to_dict()
    mutate(data)
    with pytest.raises(MapError, match=fragment) as exc:
        load_map(_write(tmp_path, data))
    assert exc.value.source.endswith("m.json")


def test_error_carries_line_number(tmp_path):
    data = line_map().to_dict()
    data["edges"][0]["width_m"] = -1
    path = _write(tmp_path, data)
    with pytest.raises(MapError) as exc:
        load_map(path)
    line = path.read_text().splitlines()[exc.value.line - 1]
    assert '"a"' in line or '"b"' in line


def test_lengths_default_to_euclidean():
    net = load_map({"nodes": [{"id": "p", "x": 0, "y": 0}, {"id": "q", "x": 3, "y": 4}],
                    "edges": [{"a": "p", "b": "q", "width_m": 1}]})
    assert net.edges[0].length == pytest.approx(5.0)


def test_bundled_maps_are_valid():
    from importlib.resources import files
    for name in ("campus_map.json", "cruise_map.json"):
        net = load_map(files("campusepi") / "data" / name)
        assert all(e.length > 0 and e.width > 0 for e in net.edges)
        assert math.isfinite(sum(e.length for e in net.edges))
