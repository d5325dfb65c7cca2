"""Uniform-grid spatial index for radius queries between agents."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from numba import njit

__all__ = ["OccupancySnapshot", "SpatialGrid", "neighbor_pairs", "occupancy_snapshot"]


@njit(cache=True)
def _cell_keys(xy, cell):
    n = xy.shape[0]
    cx = np.empty(n, np.int64)
    cy = np.empty(n, np.int64)
    for k in range(n):
        cx[k] = np.int64(math.floor(xy[k, 0] / cell))
        cy[k] = np.int64(math.floor(xy[k, 1] / cell))
    return cx, cy


@njit(cache=True)
def _pairs_kernel(xy, radius, cell):
    n = xy.shape[0]
    empty_i = np.empty(0, np.int64)
    if n < 2:
        return empty_i, empty_i.copy(), np.empty(0, np.float64)
    # a pair exactly ``radius`` apart can straddle one extra cell boundary
    reach = np.int64(math.floor(radius / cell)) + 1
    cx, cy = _cell_keys(xy, cell)
    ymin = cy.min() - reach
    width = cy.max() - ymin + reach + 1
    keys = (cx - cx.min() + reach) * width + (cy - ymin)
    order = np.argsort(keys, kind="mergesort")
    skeys = keys[order]
    r2 = radius * radius

    # two passes: count, then fill
    out_i = empty_i
    out_j = empty_i
    out_d = np.empty(0, np.float64)
    for fill in range(2):
        count = 0
        for a in range(n):
            i = order[a]
            xi = xy[i, 0]
            yi = xy[i, 1]
            base = keys[i]
            for dx in range(-reach, reach + 1):
                for dy in range(-reach, reach + 1):
                    key = base + dx * width + dy
                    lo = np.searchsorted(skeys, key)
                    b = lo
                    while b < n and skeys[b] == key:
                        j = order[b]
                        if j > i:
                            ddx = xy[j, 0] - xi
                            ddy = xy[j, 1] - yi
                            dd = ddx * ddx + ddy * ddy
                            if dd <= r2:
                                if fill == 1:
                                    out_i[count] = i
                                    out_j[count] = j
                                    out_d[count] = math.sqrt(dd)
                                count += 1
                        b += 1
        if fill == 0:
            out_i = np.empty(count, np.int64)
            out_j = np.empty(count, np.int64)
            out_d = np.empty(count, np.float64)
    return out_i, out_j, out_d


def neighbor_pairs(xy: np.ndarray, radius: float, cell: float | None = None):
    """All index pairs ``i < j`` whose distance is at most ``radius``.

    Returns ``(i, j, d)`` arrays sorted by ``(i, j)``.
    """
    xy = np.ascontiguousarray(xy, dtype=np.float64).reshape(-1, 2)
    if cell is None:
        # just over half the radius keeps the search at 5 x 5 cells
        cell = radius / 2.0 * (1.0 + 1e-9)
    i, j, d = _pairs_kernel(xy, float(radius), float(cell))
    order = np.lexsort((j, i))
    return i[order], j[order], d[order]


@dataclass
class SpatialGrid:
    """Hash grid mapping integer cells to the ids of agents inside them."""

    cell_size: float
    positions: dict[int, tuple[float, float]] = field(default_factory=dict)
    cells: dict[tuple[int, int], list[int]] = field(default_factory=lambda: defaultdict(list))

    @classmethod
    def from_positions(cls, ids: Iterable[int], xy: np.ndarray, cell_size: float = 1.0) -> "SpatialGrid":
        grid = cls(cell_size)
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        ids = list(ids)
        cells = np.floor(xy / cell_size).astype(np.int64)
        for aid, (x, y), (cx, cy) in zip(ids, xy, cells):
            grid.positions[aid] = (float(x), float(y))
            grid.cells[(int(cx), int(cy))].append(aid)
        return grid

    def __len__(self) -> int:
        return len(self.positions)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (math.floor(x / self.cell_size), math.floor(y / self.cell_size))

    def query(self, x: float, y: float, radius: float) -> list[int]:
        """Ids of agents within ``radius`` of ``(x, y)``, sorted."""
        cx, cy = self.cell_of(x, y)
        reach = math.floor(radius / self.cell_size) + 1
        found = []
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                for aid in self.cells.get((cx + dx, cy + dy), ()):
                    px, py = self.positions[aid]
                    if (px - x) ** 2 + (py - y) ** 2 <= radius * radius:
                        found.append(aid)
        return sorted(found)

    def neighbors_of(self, aid: int, radius: float) -> list[int]:
        x, y = self.positions[aid]
        return [k for k in self.query(x, y, radius) if k != aid]

    def pairs(self, radius: float) -> list[tuple[int, int, float]]:
        ids = np.fromiter(self.positions, dtype=np.int64, count=len(self.positions))
        if len(ids) < 2:
            return []
        xy = np.array([self.positions[k] for k in ids])
        i, j, d = neighbor_pairs(xy, radius, self.cell_size)
        a, b = ids[i], ids[j]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        return sorted(zip(lo.tolist(), hi.tolist(), d.tolist()))


@dataclass
class OccupancySnapshot:
    grid: SpatialGrid
    by_location: dict[str, list[int]]

    def is_empty(self) -> bool:
        return len(self.grid) == 0 and not any(self.by_location.values())


def occupancy_snapshot(
    ids: Iterable[int],
    xy: np.ndarray,
    locations: Mapping[int, str | None] | None = None,
    cell_size: float = 1.0,
) -> OccupancySnapshot:
    """Index agent positions by grid cell and by the named location they occupy.

    ``locations`` maps agent id to its current location name, or None while
    the agent is on the road.
    """
    ids = list(ids)
    grid = SpatialGrid.from_positions(ids, xy, cell_size)
    by_location: dict[str, list[int]] = defaultdict(list)
    for aid in ids:
        loc = (locations or {}).get(aid)
        if loc is not None:
            by_location[loc].append(aid)
    return OccupancySnapshot(grid, dict(by_location))
