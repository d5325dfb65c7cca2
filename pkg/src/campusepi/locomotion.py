"""Path-following locomotion with a follow-the-leader spacing governor.

Agents walk along precomputed shortest routes between named locations.
Each road carries ``lanes`` lanes per direction; inside one lane an agent
slows down linearly once the gap to its leader drops below the preferred
spacing and stops at the hard radius. Agents leave a building only when
there is room on the first road segment, which throttles large crowds at
the door.

All state lives in flat numpy arrays so one compiled kernel can advance
the whole population by many one-second steps at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .graph import RoadNetwork, _shortest_tree
from .population import DayPlan, SpeedModel

__all__ = ["HeatGrid", "RouteTable", "Walkers", "step_locomotion"]

MOVE, STILL = 1, 0
_INF = np.inf


@dataclass
class RouteTable:
    """Polyline geometry of the shortest route between every pair of locations."""

    route_of: np.ndarray  # (n_loc, n_loc) route id, -1 for zero-length
    start: np.ndarray
    n_nodes: np.ndarray
    xy: np.ndarray
    cum: np.ndarray
    group: np.ndarray  # directed edge id of the segment leaving each node
    lanes: np.ndarray
    unit: np.ndarray
    max_lanes: int
    n_groups: int
    paths: list  # node-id lists, by route id
    lane_pitch: float

    @classmethod
    def build(cls, net: RoadNetwork, loc_names: list[str], lane_pitch: float = 1.0) -> "RouteTable":
        nodes = [net.location_node(n) for n in loc_names]
        m = len(nodes)
        route_of = np.full((m, m), -1, dtype=np.int64)
        start, n_nodes, xy, cum, group, lanes, unit, paths = [], [], [], [], [], [], [], []
        lane_count = [max(1, int((e.width / 2.0) // lane_pitch)) for e in net.edges]
        max_lanes = max(lane_count) if lane_count else 1
        trees = {}
        for a in range(m):
            if nodes[a] not in trees:
                trees[nodes[a]] = _shortest_tree(net, nodes[a])[1]
            best = trees[nodes[a]]
            for b in range(m):
                if a == b or nodes[a] == nodes[b]:
                    continue
                if nodes[b] not in best:
                    raise ValueError(f"{loc_names[b]!r} is unreachable from {loc_names[a]!r}")
                path = list(best[nodes[b]])
                route_of[a, b] = len(paths)
                start.append(len(xy))
                n_nodes.append(len(path))
                paths.append(path)
                c = 0.0
                for k, node in enumerate(path):
                    xy.append(net.nodes[node])
                    cum.append(c)
                    if k + 1 < len(path):
                        nxt = path[k + 1]
                        eid = net.edge_id(node, nxt)
                        e = net.edges[eid]
                        forward = e.a == node
                        group.append(2 * eid + (0 if forward else 1))
                        lanes.append(lane_count[eid])
                        (x0, y0), (x1, y1) = net.nodes[node], net.nodes[nxt]
                        dx, dy = x1 - x0, y1 - y0
                        norm = math.hypot(dx, dy) or 1.0
                        unit.append((dx / norm, dy / norm))
                        c += e.length
                    else:
                        group.append(-1)
                        lanes.append(1)
                        unit.append(unit[-1] if unit else (1.0, 0.0))
        return cls(
            route_of=route_of,
            start=np.array(start, dtype=np.int64),
            n_nodes=np.array(n_nodes, dtype=np.int64),
            xy=np.array(xy, dtype=float).reshape(-1, 2),
            cum=np.array(cum, dtype=float),
            group=np.array(group, dtype=np.int64),
            lanes=np.array(lanes, dtype=np.int64),
            unit=np.array(unit, dtype=float).reshape(-1, 2),
            max_lanes=int(max_lanes),
            n_groups=int(2 * len(net.edges) * max_lanes),
            paths=paths,
            lane_pitch=float(lane_pitch),
        )

    def length(self, route: int) -> float:
        return float(self.cum[self.start[route] + self.n_nodes[route] - 1])


@dataclass
class HeatGrid:
    """Road occupancy accumulated on a square grid.

    ``visits`` holds agent-seconds per cell. ``peak`` holds, per cell, the
    largest mean occupancy over any ``bin_seconds`` window.
    """

    x0: float
    y0: float
    cell: float
    visits: np.ndarray
    peak: np.ndarray
    bin_seconds: int = 60

    @classmethod
    def covering(cls, net: RoadNetwork, cell: float = 2.0, margin: float = 10.0, bin_seconds: int = 60):
        xs = [p[0] for p in net.nodes.values()]
        ys = [p[1] for p in net.nodes.values()]
        x0, y0 = min(xs) - margin, min(ys) - margin
        w = int(math.ceil((max(xs) + margin - x0) / cell)) + 1
        h = int(math.ceil((max(ys) + margin - y0) / cell)) + 1
        return cls(x0, y0, cell, np.zeros((h, w)), np.zeros((h, w)), bin_seconds)

    def cell_centers(self):
        h, w = self.visits.shape
        ys, xs = np.mgrid[0:h, 0:w]
        return self.x0 + (xs + 0.5) * self.cell, self.y0 + (ys + 0.5) * self.cell


@njit(cache=True)
def _position(r, s, k, lane_seed, r_start, r_cum, r_xy, r_unit, r_lanes, lane_pitch):
    st = r_start[r]
    i = st + k
    along = s - r_cum[i]
    lane = lane_seed % r_lanes[i]
    lat = (lane + 0.5) * lane_pitch
    ux = r_unit[i, 0]
    uy = r_unit[i, 1]
    return r_xy[i, 0] + along * ux + lat * uy, r_xy[i, 1] + along * uy - lat * ux


@njit(cache=True)
def _walk(
    t, t_end, dt,
    phase, leg, next_dep, route, s, seg, lane, loc, xy, speed, blocked,
    dest, depart, dwell, seat, n_legs,
    r_of, r_start, r_nn, r_xy, r_cum, r_group, r_lanes, r_unit, max_lanes, lane_pitch,
    tail, spacing, hard,
    heat_on, hx0, hy0, hcell, hbin, hvisit, hpeak, bin_seconds, day_t0,
):
    """Advance all agents from ``t`` to ``t_end``; return (t, changed)."""
    n = phase.shape[0]
    changed = False
    H = hbin.shape[0]
    W = hbin.shape[1]
    grp = np.empty(n, np.int64)
    alg = np.empty(n, np.float64)
    mv = np.empty(n, np.int64)
    newly = np.zeros(n, np.bool_)
    touched = np.empty(n, np.int64)
    G = tail.shape[0]
    gfirst = np.full(G, -1, np.int64)
    gcount = np.zeros(G, np.int64)
    claimed = np.full(G, -1, np.int64)
    step_id = 0
    while t < t_end - 1e-9:
        # gather moving agents
        m = 0
        earliest = _INF
        for a in range(n):
            if phase[a] == MOVE:
                mv[m] = a
                m += 1
            elif next_dep[a] < earliest:
                earliest = next_dep[a]
        if m == 0:
            if earliest > t:
                # nothing to do before the next departure
                if earliest >= t_end:
                    t = t_end
                    break
                steps = math.ceil((earliest - t) / dt - 1e-9)
                t = t + steps * dt
                if heat_on:
                    _flush_heat(hbin, hpeak, bin_seconds)
                continue

        # snapshot: lane group and position along the current segment
        for q in range(m):
            a = mv[q]
            r = route[a]
            st = r_start[r]
            k = seg[a]
            while k < r_nn[r] - 2 and s[a] >= r_cum[st + k + 1]:
                k += 1
            seg[a] = k
            i = st + k
            grp[q] = r_group[i] * max_lanes + lane[a] % r_lanes[i]
            alg[q] = s[a] - r_cum[i]
        order = np.argsort(alg[:m], kind="mergesort")
        order = order[np.argsort(grp[:m][order], kind="mergesort")]
        for q in range(m):
            g = grp[q]
            if alg[q] < tail[g]:
                tail[g] = alg[q]
        for qq in range(m):
            g = grp[order[qq]]
            if gfirst[g] < 0:
                gfirst[g] = qq
            gcount[g] += 1
        step_id += 1

        # departures, earliest first
        due_n = 0
        for a in range(n):
            if phase[a] == STILL and next_dep[a] <= t:
                due_n += 1
        if due_n:
            due = np.empty(due_n, np.int64)
            key = np.empty(due_n, np.float64)
            c = 0
            for a in range(n):
                if phase[a] == STILL and next_dep[a] <= t:
                    due[c] = a
                    key[c] = next_dep[a]
                    c += 1
            due = due[np.argsort(key, kind="mergesort")]
            for a in due:
                l = leg[a]
                r = r_of[loc[a], dest[a, l]]
                if r < 0:
                    # destination shares the node: arrive at once
                    _arrive(a, t, phase, leg, next_dep, loc, xy, dest, depart, dwell, seat, n_legs)
                    changed = True
                    continue
                st = r_start[r]
                nl = r_lanes[st]
                best_lane = -1
                best_gap = -1.0
                for ln in range(nl):
                    g = r_group[st] * max_lanes + ln
                    if tail[g] > best_gap:
                        best_gap = tail[g]
                        best_lane = ln
                if best_gap >= spacing:
                    g = r_group[st] * max_lanes + best_lane
                    tail[g] = 0.0
                    # the first step is walked at once, short of the lane tail
                    s0 = speed[a] * dt
                    if best_gap < _INF:
                        s0 = min(s0, best_gap - spacing)
                    s0 = max(0.0, min(s0, r_cum[st + 1] - r_cum[st] - 1e-6))
                    phase[a] = MOVE
                    route[a] = r
                    s[a] = s0
                    seg[a] = 0
                    lane[a] = best_lane
                    loc[a] = -1
                    blocked[a] = 0
                    newly[a] = True
                    px, py = _position(r, s0, 0, best_lane, r_start, r_cum, r_xy, r_unit, r_lanes, lane_pitch)
                    xy[a, 0] = px
                    xy[a, 1] = py
                    changed = True

        # advance agents that were already walking
        n_touched = 0
        for qq in range(m):
            q = order[qq]
            a = mv[q]
            r = route[a]
            st = r_start[r]
            k = seg[a]
            i = st + k
            end = r_cum[i + 1]
            gap = _INF
            if qq + 1 < m and grp[order[qq + 1]] == grp[q]:
                gap = alg[order[qq + 1]] - alg[q]
            if gap < spacing and r_lanes[i] > 1:
                # held up: pass on an adjacent lane with room ahead and behind
                base = r_group[i] * max_lanes
                cur = lane[a] % r_lanes[i]
                best_ln = -1
                for ln in (cur - 1, cur + 1):
                    if ln < 0 or ln >= r_lanes[i] or claimed[base + ln] == step_id:
                        continue
                    ahead, behind = _lane_gaps(base + ln, alg[q], order, alg, gfirst, gcount)
                    if behind >= spacing and ahead > gap and ahead >= spacing:
                        gap = ahead
                        best_ln = ln
                if best_ln >= 0:
                    lane[a] = best_ln
                    claimed[base + best_ln] = step_id
            nxt_room = _INF
            nxt_lane = 0
            if k + 2 < r_nn[r]:
                # the agent will take the emptiest lane of the next segment
                base2 = r_group[i + 1] * max_lanes
                nxt_room = -1.0
                for ln in range(r_lanes[i + 1]):
                    if tail[base2 + ln] > nxt_room:
                        nxt_room = tail[base2 + ln]
                        nxt_lane = ln
                if gap == _INF and nxt_room < _INF:
                    gap = (end - s[a]) + nxt_room
            v = speed[a]
            if gap < spacing:
                v = v * max(gap - hard, 0.0) / (spacing - hard)
            step = v * dt
            if gap < _INF:
                step = min(step, max(gap - hard, 0.0))
            if step <= 0.0:
                blocked[a] += 1
                if blocked[a] * dt > 30.0:
                    # release a jam: creep forward regardless of the leader
                    step = 0.25 * speed[a] * dt
            else:
                blocked[a] = 0
            new_s = s[a] + step
            if new_s > end and k + 2 < r_nn[r] and nxt_room < _INF and blocked[a] * dt <= 30.0:
                limit = end + nxt_room - hard
                if limit < end:
                    limit = end - 1e-6
                if new_s > limit:
                    new_s = max(limit, s[a])
            if new_s != s[a]:
                changed = True
            s[a] = new_s
            total = r_cum[st + r_nn[r] - 1]
            if new_s >= total:
                _arrive(a, t + dt, phase, leg, next_dep, loc, xy, dest, depart, dwell, seat, n_legs)
                continue
            if k < r_nn[r] - 2 and new_s >= r_cum[st + k + 1]:
                while k < r_nn[r] - 2 and new_s >= r_cum[st + k + 1]:
                    k += 1
                lane[a] = nxt_lane % r_lanes[st + k]
                g2 = r_group[st + k] * max_lanes + lane[a]
                along = new_s - r_cum[st + k]
                if along < tail[g2]:
                    tail[g2] = along
                touched[n_touched] = g2
                n_touched += 1
            seg[a] = k
            px, py = _position(r, new_s, k, lane[a], r_start, r_cum, r_xy, r_unit, r_lanes, lane_pitch)
            xy[a, 0] = px
            xy[a, 1] = py

        # reset tails touched this step
        for q in range(m):
            tail[grp[q]] = _INF
            gfirst[grp[q]] = -1
            gcount[grp[q]] = 0
        for q in range(n_touched):
            tail[touched[q]] = _INF
        for a in range(n):
            if newly[a]:
                st = r_start[route[a]]
                tail[r_group[st] * max_lanes + lane[a]] = _INF
                newly[a] = False

        t = t + dt
        if heat_on:
            for a in range(n):
                if phase[a] == MOVE:
                    cx = int(math.floor((xy[a, 0] - hx0) / hcell))
                    cy = int(math.floor((xy[a, 1] - hy0) / hcell))
                    if 0 <= cx < W and 0 <= cy < H:
                        hbin[cy, cx] += dt
                        hvisit[cy, cx] += dt
            if int(round(t - day_t0)) % bin_seconds == 0:
                _flush_heat(hbin, hpeak, bin_seconds)
    return t, changed


@njit(cache=True)
def _lane_gaps(g, x, order, alg, gfirst, gcount):
    """Free distance ahead of and behind position ``x`` in lane group ``g``."""
    if gfirst[g] < 0:
        return _INF, _INF
    lo = gfirst[g]
    hi = lo + gcount[g]
    # first agent strictly ahead of x
    a, b = lo, hi
    while a < b:
        mid = (a + b) // 2
        if alg[order[mid]] <= x:
            a = mid + 1
        else:
            b = mid
    ahead = alg[order[a]] - x if a < hi else _INF
    behind = x - alg[order[a - 1]] if a - 1 >= lo else _INF
    return ahead, behind


@njit(cache=True)
def _flush_heat(hbin, hpeak, bin_seconds):
    H, W = hbin.shape
    for y in range(H):
        for x in range(W):
            v = hbin[y, x]
            if v > 0.0:
                v = v / bin_seconds
                if v > hpeak[y, x]:
                    hpeak[y, x] = v
                hbin[y, x] = 0.0


@njit(cache=True)
def _arrive(a, t, phase, leg, next_dep, loc, xy, dest, depart, dwell, seat, n_legs):
    l = leg[a]
    phase[a] = STILL
    loc[a] = dest[a, l]
    xy[a, 0] = seat[a, l, 0]
    xy[a, 1] = seat[a, l, 1]
    leg[a] = l + 1
    if l + 1 < n_legs[a]:
        next_dep[a] = max(depart[a, l + 1], t + dwell[a, l])
    else:
        next_dep[a] = _INF


class Walkers:
    """Mobility state of every agent for the current day."""

    def __init__(self, routes: RouteTable, speed: np.ndarray, speed_model: SpeedModel = SpeedModel(),
                 heat: HeatGrid | None = None):
        n = len(speed)
        self.routes = routes
        self.model = speed_model
        self.speed = np.ascontiguousarray(speed, dtype=float)
        self.phase = np.zeros(n, dtype=np.int64)
        self.leg = np.zeros(n, dtype=np.int64)
        self.next_dep = np.full(n, np.inf)
        self.route = np.zeros(n, dtype=np.int64)
        self.s = np.zeros(n)
        self.seg = np.zeros(n, dtype=np.int64)
        self.lane = np.zeros(n, dtype=np.int64)
        self.loc = np.zeros(n, dtype=np.int64)
        self.xy = np.zeros((n, 2))
        self.blocked = np.zeros(n, dtype=np.int64)
        self.tail = np.full(max(routes.n_groups, 1), np.inf)
        self.heat = heat
        self._hbin = np.zeros_like(heat.visits) if heat is not None else np.zeros((1, 1))
        self.t = 0.0
        self.day_t0 = 0.0
        self.plan: DayPlan | None = None

    @property
    def size(self) -> int:
        return len(self.speed)

    def begin_day(self, plan: DayPlan, start_loc: np.ndarray, start_xy: np.ndarray, t0: float = 0.0) -> None:
        self.plan = plan
        self.phase[:] = STILL
        self.leg[:] = 0
        self.loc[:] = start_loc
        self.xy[:] = start_xy
        self.blocked[:] = 0
        self.next_dep[:] = np.where(plan.n_legs > 0, plan.depart[:, 0], np.inf)
        self.t = float(t0)
        self.day_t0 = float(t0)
        self._hbin[:] = 0.0

    def moving(self) -> np.ndarray:
        return self.phase == MOVE

    def advance(self, t_end: float, dt: float = 1.0) -> bool:
        """Step until ``t_end``; True if any agent moved, departed or arrived."""
        p = self.plan
        r = self.routes
        h = self.heat
        heat_on = h is not None
        self.t, changed = _walk(
            self.t, float(t_end), float(dt),
            self.phase, self.leg, self.next_dep, self.route, self.s, self.seg, self.lane,
            self.loc, self.xy, self.speed, self.blocked,
            p.dest, p.depart, p.dwell, np.ascontiguousarray(p.seat), p.n_legs,
            r.route_of, r.start, r.n_nodes, r.xy, r.cum, r.group, r.lanes, r.unit,
            r.max_lanes, r.lane_pitch,
            self.tail, self.model.preferred_spacing, self.model.hard_radius,
            heat_on,
            h.x0 if heat_on else 0.0, h.y0 if heat_on else 0.0, h.cell if heat_on else 1.0,
            self._hbin, h.visits if heat_on else self._hbin, h.peak if heat_on else self._hbin,
            h.bin_seconds if heat_on else 60, self.day_t0,
        )
        return bool(changed)


def step_locomotion(walkers: Walkers, dt: float = 1.0) -> np.ndarray:
    """Advance every agent by one step of ``dt`` seconds and return positions."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if walkers.plan is None:
        raise RuntimeError("begin_day() must be called before stepping")
    bad = (walkers.phase == MOVE) & (walkers.route < 0)
    if bad.any():
        raise RuntimeError(f"agents {np.flatnonzero(bad)[:5].tolist()} are moving without a path")
    walkers.advance(walkers.t + dt, dt)
    return walkers.xy
