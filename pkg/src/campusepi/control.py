"""Control measures: batch travel, staggered travel, isolation, self-protection.

Staggered travel shifts the departure time of every origin so that crowds
from different origins do not reach a shared road node at the same time.
The congestion score of a schedule sums, over every shared node and every
origin whose passage window there overlaps another origin's window, the
crowd weight divided by the window length. The optimizer minimises that
score on an offset grid and breaks ties by the smallest total offset.
"""

from __future__ import annotations

import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .graph import PathTree, RoadNetwork, build_path_tree, passage_window
from .population import DayPlan, Population

__all__ = [
    "AFTER_CLASS_GROUPS",
    "REFERENCE_AFTER_CLASS_OFFSETS",
    "REFERENCE_DEPARTURE_OFFSETS",
    "BatchPolicy",
    "CongestionModel",
    "ContactLog",
    "ControlPolicy",
    "Flow",
    "IsolationAction",
    "IsolationPolicy",
    "StaggerResult",
    "StaggerSchedule",
    "apply_batch",
    "congestion",
    "congestion_models_from_plan",
    "optimize_stagger",
    "trace_and_isolate",
]

log = logging.getLogger(__name__)

# published class-time schedule, used as a reference point for the optimizer
REFERENCE_DEPARTURE_OFFSETS = {
    "dormitory_1": 0.0,
    "dormitory_2": 600.0,
    "dormitory_3": 1080.0,
    "dormitory_4": 360.0,
    "dormitory_5": 120.0,
}
REFERENCE_AFTER_CLASS_OFFSETS = {"library": 0.0, "teaching_building": 900.0, "others": 360.0}
AFTER_CLASS_GROUPS = {
    "library": ("library",),
    "teaching_building": ("teaching_building",),
    "others": ("laboratory", "administration_building"),
}


@dataclass(frozen=True)
class BatchPolicy:
    split: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError("batch split must lie strictly between 0 and 1")


@dataclass(frozen=True)
class IsolationPolicy:
    detection_delay_days: int = 0
    tracing_window_days: int = 2
    close_contact_seconds: float = 300.0

    def __post_init__(self):
        if self.detection_delay_days < 0:
            raise ValueError("detection_delay_days must be >= 0")
        if self.tracing_window_days < 0:
            raise ValueError("tracing_window_days must be >= 0")
        if self.close_contact_seconds < 0:
            raise ValueError("close_contact_seconds must be >= 0")


@dataclass(frozen=True)
class StaggerSchedule:
    """Departure offsets per home and per after-class group, in seconds."""

    departure: Mapping[str, float] = field(default_factory=dict)
    after_class: Mapping[str, float] = field(default_factory=dict)
    groups: Mapping[str, tuple[str, ...]] = field(default_factory=lambda: dict(AFTER_CLASS_GROUPS))
    max_offset: float = 1200.0

    def __post_init__(self):
        for name, off in itertools.chain(self.departure.items(), self.after_class.items()):
            if not 0.0 <= off <= self.max_offset:
                raise ValueError(f"offset for {name!r} must lie in [0, {self.max_offset}], got {off}")

    def home_offsets(self) -> dict[str, float]:
        return dict(self.departure)

    def class_offsets(self) -> dict[str, float]:
        out = {}
        for group, off in self.after_class.items():
            for loc in self.groups.get(group, (group,)):
                out[loc] = off
        return out

    def table(self) -> list[tuple[str, float]]:
        return [*sorted(self.departure.items()), *sorted(self.after_class.items())]

    @classmethod
    def reference(cls) -> "StaggerSchedule":
        return cls(dict(REFERENCE_DEPARTURE_OFFSETS), dict(REFERENCE_AFTER_CLASS_OFFSETS))


@dataclass(frozen=True)
class ControlPolicy:
    batch: BatchPolicy | None = None
    # a fixed schedule, or "optimize" to compute one per replication
    stagger: StaggerSchedule | str | None = None
    isolation: IsolationPolicy | None = None
    beta: float = 0.0

    def __post_init__(self):
        if isinstance(self.stagger, str) and self.stagger not in ("optimize", "reference"):
            raise ValueError("stagger must be a schedule, 'optimize' or 'reference'")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


@dataclass(frozen=True)
class Flow:
    """One crowd: everyone leaving ``tree.root`` together at ``base_time``."""

    tree: PathTree
    group: str
    base_time: float = 0.0


@dataclass
class CongestionModel:
    flows: list[Flow]
    v_min: float = 0.926
    v_max: float = 1.586
    departure_spread: float = 0.0
    # narrower roads count as more congested: term * width_ref / width
    width_ref: float | None = None

    def __post_init__(self):
        self._compile()

    @property
    def groups(self) -> list[str]:
        return sorted({f.group for f in self.flows})

    def _compile(self) -> None:
        gindex = {g: k for k, g in enumerate(self.groups)}
        by_node = defaultdict(list)
        for fi, flow in enumerate(self.flows):
            tree = flow.tree
            for nid, rn in tree.nodes.items():
                omega = rn.share * tree.origin_fraction
                if omega <= 0.0:
                    continue
                w = passage_window(tree, nid, self.v_min, self.v_max, flow.base_time)
                lo, hi = w.t_start, w.t_end + self.departure_spread
                span = hi - lo
                if span <= 0.0:
                    continue
                term = omega / span
                if self.width_ref is not None and rn.width > 0:
                    term *= self.width_ref / rn.width
                by_node[nid].append((fi, gindex[flow.group], lo, hi, term, tree.root))
        ent_g, ent_lo, ent_hi, ent_term, pairs = [], [], [], [], []
        self.entry_nodes = []
        for nid in sorted(by_node):
            items = by_node[nid]
            if len({it[5] for it in items}) < 2:
                continue
            base = len(ent_g)
            for it in items:
                ent_g.append(it[1])
                ent_lo.append(it[2])
                ent_hi.append(it[3])
                ent_term.append(it[4])
                self.entry_nodes.append(nid)
            for x, y in itertools.combinations(range(len(items)), 2):
                if items[x][5] != items[y][5]:
                    pairs.append((base + x, base + y))
        self._g = np.array(ent_g, dtype=np.int64)
        self._lo = np.array(ent_lo, dtype=float)
        self._hi = np.array(ent_hi, dtype=float)
        self._term = np.array(ent_term, dtype=float)
        self._pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    def offsets_vector(self, offsets: Mapping[str, float]) -> np.ndarray:
        return np.array([float(offsets.get(g, 0.0)) for g in self.groups])


@njit(cache=True)
def _score(off, g, lo, hi, term, pairs, hit):
    hit[:] = False
    for p in range(pairs.shape[0]):
        x = pairs[p, 0]
        y = pairs[p, 1]
        ox = off[g[x]]
        oy = off[g[y]]
        if lo[x] + ox < hi[y] + oy and lo[y] + oy < hi[x] + ox:
            hit[x] = True
            hit[y] = True
    c = 0.0
    for e in range(term.shape[0]):
        if hit[e]:
            c += term[e]
    return c


def congestion(model: CongestionModel, offsets: Mapping[str, float] | None = None, max_offset: float | None = None) -> float:
    """Congestion score of a schedule (0 when no two origins' crowds meet)."""
    offsets = offsets or {}
    off = model.offsets_vector(offsets)
    if max_offset is not None and np.any((off < 0) | (off > max_offset)):
        raise ValueError(f"offsets must lie in [0, {max_offset}]")
    hit = np.zeros(len(model._term), dtype=np.bool_)
    return float(_score(off, model._g, model._lo, model._hi, model._term, model._pairs, hit))


@njit(cache=True)
def _grid_search(values, n_groups, g, lo, hi, term, pairs, rel_tol):
    k = values.shape[0]
    idx = np.zeros(n_groups, np.int64)
    off = np.zeros(n_groups)
    best = np.zeros(n_groups, np.int64)
    best_c = np.inf
    best_sum = np.inf
    hit = np.zeros(term.shape[0], np.bool_)
    total = k ** n_groups
    for _ in range(total):
        s = 0.0
        for q in range(n_groups):
            off[q] = values[idx[q]]
            s += off[q]
        c = _score(off, g, lo, hi, term, pairs, hit)
        tol = rel_tol * max(abs(best_c), 1e-300) if best_c < np.inf else 0.0
        better = False
        if c < best_c - tol:
            better = True
        elif abs(c - best_c) <= tol and s < best_sum:
            better = True
        if better:
            best_c = c
            best_sum = s
            best[:] = idx
        # odometer increment, last group fastest; lexicographic order keeps ties stable
        q = n_groups - 1
        while q >= 0:
            idx[q] += 1
            if idx[q] < k:
                break
            idx[q] = 0
            q -= 1
    return best, best_c


@dataclass(frozen=True)
class StaggerResult:
    offsets: dict[str, float]
    congestion: float
    baseline: float
    feasible: bool
    method: str


def optimize_stagger(
    model: CongestionModel,
    step: float = 60.0,
    max_offset: float = 1200.0,
    max_grid_groups: int = 6,
) -> StaggerResult:
    """Offsets on the ``step`` grid minimising congestion, then total offset.

    Up to ``max_grid_groups`` origin groups are searched exhaustively;
    larger problems use cyclic coordinate descent from the all-zero start.
    ``feasible`` is False when no schedule removes every overlap.
    """
    if step <= 0 or max_offset < 0:
        raise ValueError("step must be positive and max_offset non-negative")
    k = max_offset / step
    if abs(k - round(k)) > 1e-9:
        raise ValueError("step must divide max_offset")
    values = np.arange(int(round(k)) + 1) * step
    groups = model.groups
    baseline = congestion(model, {})
    if not groups:
        return StaggerResult({}, 0.0, 0.0, True, "trivial")
    rel_tol = 1e-12
    if len(groups) <= max_grid_groups:
        best, c = _grid_search(values, len(groups), model._g, model._lo, model._hi, model._term,
                               model._pairs, rel_tol)
        offsets = {grp: float(values[best[q]]) for q, grp in enumerate(groups)}
        method = "grid"
    else:
        offsets = {grp: 0.0 for grp in groups}
        c = baseline
        improved = True
        while improved:
            improved = False
            for grp in groups:
                for v in values:
                    trial = dict(offsets, **{grp: float(v)})
                    tc = congestion(model, trial)
                    tol = rel_tol * max(c, 1e-300)
                    if tc < c - tol or (abs(tc - c) <= tol and sum(trial.values()) < sum(offsets.values())):
                        offsets, c = trial, tc
                        improved = True
        method = "coordinate-descent"
    c = congestion(model, offsets)
    feasible = c == 0.0
    if not feasible:
        log.info("stagger: overlaps remain after optimisation (C=%.3g)", c)
    return StaggerResult(offsets, c, baseline, feasible, method)


def congestion_models_from_plan(
    net: RoadNetwork,
    pop: Population,
    plan: DayPlan,
    groups: Mapping[str, Sequence[str]] | None = None,
    v_min: float = 0.926,
    v_max: float = 1.586,
    departure_spread: float = 0.0,
    width_ref: float | None = None,
) -> tuple[CongestionModel, CongestionModel]:
    """Congestion models for departures from homes and from visit buildings.

    ``plan`` should be built without offsets and without departure spread:
    every scheduled leg whose start time is fixed becomes part of a crowd
    identified by its origin and start time.
    """
    groups = dict(AFTER_CLASS_GROUPS if groups is None else groups)
    loc_group = {loc: g for g, locs in groups.items() for loc in locs}
    n = pop.size
    homes = set(pop.home.tolist())
    crowds: dict[tuple[int, float], dict[int, int]] = defaultdict(lambda: defaultdict(int))
    for i in range(n):
        here = int(pop.home[i])
        for l in range(int(plan.n_legs[i])):
            there = int(plan.dest[i, l])
            t = float(plan.depart[i, l])
            if t > 0 and here != there:
                crowds[(here, t)][there] += 1
            here = there
    home_flows, class_flows = [], []
    for (origin, t), dests in sorted(crowds.items()):
        name = pop.loc_names[origin]
        size = sum(dests.values())
        demand = defaultdict(float)
        for d, k in dests.items():
            demand[net.location_node(pop.loc_names[d])] += k / size
        root = net.location_node(name)
        demand.pop(root, None)
        if not demand:
            continue
        tree = build_path_tree(net, root, dict(demand), origin_fraction=size / max(n, 1))
        if origin in homes:
            home_flows.append(Flow(tree, name, t))
        else:
            class_flows.append(Flow(tree, loc_group.get(name, name), t))
    kw = dict(v_min=v_min, v_max=v_max, departure_spread=departure_spread, width_ref=width_ref)
    return CongestionModel(home_flows, **kw), CongestionModel(class_flows, **kw)


def apply_batch(
    class_task: np.ndarray,
    policy: BatchPolicy,
    rng: np.random.Generator,
    households: np.ndarray | None = None,
) -> np.ndarray:
    """Split class-task agents into a morning (0) and an afternoon (1) cohort.

    Agents without class tasks get -1. Exactly ``ceil(split * n)`` agents
    join the morning cohort. With ``households`` (one key per agent, e.g. a
    dorm room id) members are taken room by room in random room order, so
    roommates share a cohort except in at most one room.
    """
    class_task = np.asarray(class_task, dtype=bool)
    members = np.flatnonzero(class_task)
    n_morning = int(np.ceil(policy.split * len(members) - 1e-9))
    order = rng.permutation(members)
    if households is not None:
        keys = np.asarray(households)[order]
        _, inv = np.unique(keys, return_inverse=True)
        rank = rng.permutation(inv.max() + 1 if len(inv) else 0)
        order = order[np.argsort(rank[inv], kind="stable")]
    cohort = np.full(len(class_task), -1, dtype=np.int64)
    cohort[order[:n_morning]] = 0
    cohort[order[n_morning:]] = 1
    return cohort


class ContactLog:
    """Per-day cumulative co-presence seconds for every pair within the radius."""

    def __init__(self, n_agents: int, keep_days: int = 3):
        self.n = int(n_agents)
        self.keep_days = max(int(keep_days), 1)
        self._days: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._pending: dict[int, list[tuple[np.ndarray, np.ndarray]]] = defaultdict(list)

    def add(self, day: int, i: np.ndarray, j: np.ndarray, seconds) -> None:
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        if not len(i):
            return
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        sec = np.broadcast_to(np.asarray(seconds, dtype=float), lo.shape)
        self._pending[day].append((lo * self.n + hi, sec.copy()))
        if len(self._pending[day]) >= 64:
            self._merge(day)

    def _merge(self, day: int) -> None:
        chunks = self._pending.pop(day, [])
        if day in self._days:
            chunks.append(self._days[day])
        if not chunks:
            return
        keys = np.concatenate([c[0] for c in chunks])
        secs = np.concatenate([c[1] for c in chunks])
        uniq, inv = np.unique(keys, return_inverse=True)
        self._days[day] = (uniq, np.bincount(inv, weights=secs, minlength=len(uniq)))

    def close_day(self, day: int) -> None:
        self._merge(day)
        for d in [d for d in self._days if d <= day - self.keep_days]:
            del self._days[d]

    def seconds(self, day: int, a: int, b: int) -> float:
        self._merge(day)
        keys, secs = self._days.get(day, (np.empty(0, np.int64), np.empty(0)))
        k = min(a, b) * self.n + max(a, b)
        pos = np.searchsorted(keys, k)
        return float(secs[pos]) if pos < len(keys) and keys[pos] == k else 0.0

    def close_contacts(self, agents, days: Sequence[int], min_seconds: float) -> np.ndarray:
        """Agents with at least ``min_seconds`` co-presence on one of ``days``."""
        agents = np.asarray(list(agents), dtype=np.int64)
        found = []
        for day in days:
            self._merge(day)
            if day not in self._days or not len(agents):
                continue
            keys, secs = self._days[day]
            sel = secs >= min_seconds
            lo, hi = keys[sel] // self.n, keys[sel] % self.n
            found.append(hi[np.isin(lo, agents)])
            found.append(lo[np.isin(hi, agents)])
        if not found:
            return np.empty(0, dtype=np.int64)
        out = np.unique(np.concatenate(found))
        return out[~np.isin(out, agents)]


@dataclass(frozen=True)
class IsolationAction:
    agent: int
    day: int
    reason: str  # "diagnosed" or "suspected"


def trace_and_isolate(
    day: int,
    diagnosed: Sequence[int],
    contact_log: ContactLog,
    policy: IsolationPolicy,
    already_isolated: np.ndarray | None = None,
) -> list[IsolationAction]:
    """Isolate diagnosed agents and their close contacts of the last few days."""
    diagnosed = sorted(set(int(a) for a in diagnosed))
    if not diagnosed:
        return []
    skip = set() if already_isolated is None else set(np.flatnonzero(already_isolated).tolist())
    window = range(day - policy.tracing_window_days + 1, day + 1) if policy.tracing_window_days else []
    contacts = contact_log.close_contacts(diagnosed, list(window), policy.close_contact_seconds)
    actions = [IsolationAction(a, day, "diagnosed") for a in diagnosed if a not in skip]
    actions += [IsolationAction(int(c), day, "suspected") for c in contacts if int(c) not in skip]
    return actions
