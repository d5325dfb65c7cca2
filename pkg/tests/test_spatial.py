import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from campusepi.spatial import SpatialGrid, neighbor_pairs, occupancy_snapshot


def brute_pairs(xy, r):
    out = []
    for i in range(len(xy)):
        for j in range(i + 1, len(xy)):
            d = float(np.hypot(*(xy[i] - xy[j])))
            if d <= r:
                out.append((i, j, d))
    return out


coords = arrays(np.float64, st.tuples(st.integers(0, 60), st.just(2)),
                elements=st.floats(-20, 20, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(coords, st.floats(0.3, 5.0))
def test_pairs_match_brute_force(xy, r):
    i, j, d = neighbor_pairs(xy, r)
    got = list(zip(i.tolist(), j.tolist()))
    want = brute_pairs(xy, r)
    assert got == [(a, b) for a, b, _ in want]
    assert np.allclose(d, [x for _, _, x in want])


@settings(max_examples=30, deadline=None)
@given(coords, st.floats(0.5, 3.0), st.floats(0.25, 4.0))
def test_cell_size_does_not_change_result(xy, r, cell):
    a = neighbor_pairs(xy, r)
    b = neighbor_pairs(xy, r, cell)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_grid_query_and_pairs(rng):
    xy = rng.uniform(0, 10, (80, 2))
    ids = list(range(100, 180))
    grid = SpatialGrid.from_positions(ids, xy, cell_size=1.0)
    q = grid.query(5.0, 5.0, 2.0)
    want = sorted(ids[k] for k in range(80) if np.hypot(*(xy[k] - (5, 5))) <= 2.0)
    assert q == want
    assert grid.neighbors_of(100, 2.0) == [a for a in grid.query(*xy[0], 2.0) if a != 100]
    assert [(a, b) for a, b, _ in grid.pairs(2.0)] == [
        (ids[i], ids[j]) for i, j, _ in brute_pairs(xy, 2.0)
    ]


def test_empty_and_single_inputs():
    i, j, d = neighbor_pairs(np.empty((0, 2)), 2.0)
    assert len(i) == len(j) == len(d) == 0
    assert len(neighbor_pairs(np.zeros((1, 2)), 2.0)[0]) == 0
    snap = occupancy_snapshot([], np.empty((0, 2)))
    assert snap.is_empty()


def test_snapshot_groups_by_location():
    snap = occupancy_snapshot([1, 2, 3], np.zeros((3, 2)), {1: "library", 2: None, 3: "library"})
    assert snap.by_location == {"library": [1, 3]}
    assert len(snap.grid) == 3
