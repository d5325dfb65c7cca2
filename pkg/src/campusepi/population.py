"""Agents, daily itineraries, walking speeds and indoor seating.

Agents are stored column-wise in :class:`Population` (one numpy array per
attribute) because the simulation touches every agent every step. The
:class:`Agent` dataclass is a read-only view of one row, convenient for
inspection and tests.

Walking paths follow the category table used on campus::

    1: dormitory -> teaching building / library -> restaurant -> same -> dormitory
    2: dormitory -> teaching building / laboratory -> restaurant -> same -> dormitory
    3: dormitory -> laboratory -> restaurant -> laboratory -> dormitory
    4: dormitory -> administration building / library -> restaurant -> same -> dormitory
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import truncnorm

from .graph import RoadNetwork

__all__ = [
    "Agent",
    "CATEGORY_ITINERARIES",
    "DayPlan",
    "GeneralState",
    "InteriorLayout",
    "ItinerarySpec",
    "Population",
    "PopulationSpec",
    "SpeedModel",
    "Timetable",
    "assign_itineraries",
    "assign_seats",
    "build_population",
    "default_layout",
    "interior_origin",
    "sample_speed",
    "seat_layout",
]


class GeneralState(enum.IntEnum):
    MOVE = 0
    VISIT = 1
    REST = 2


@dataclass(frozen=True)
class SpeedModel:
    v_min: float = 0.926
    v_max: float = 1.586
    mean: float = 1.256
    stddev: float = 0.11
    preferred_spacing: float = 1.55
    hard_radius: float = 0.5

    def __post_init__(self):
        if not 0 < self.v_min <= self.v_max:
            raise ValueError("need 0 < v_min <= v_max")
        if self.stddev < 0:
            raise ValueError("stddev must be non-negative")
        if self.stddev > 0 and not self.v_min < self.mean < self.v_max:
            raise ValueError("mean must lie strictly between v_min and v_max")
        if not 0 <= self.hard_radius < self.preferred_spacing:
            raise ValueError("need 0 <= hard_radius < preferred_spacing")


def sample_speed(model: SpeedModel, rng: np.random.Generator, size=None):
    """Truncated-normal walking speed(s) in m/s."""
    if model.stddev == 0:
        return model.mean if size is None else np.full(size, model.mean)
    a = (model.v_min - model.mean) / model.stddev
    b = (model.v_max - model.mean) / model.stddev
    out = truncnorm.rvs(a, b, loc=model.mean, scale=model.stddev, size=size, random_state=rng)
    # guard the closed interval against round-off at the bounds
    out = np.clip(out, model.v_min, model.v_max)
    return float(out) if size is None else out


@dataclass(frozen=True)
class ItinerarySpec:
    """Buildings a category may visit between leaving and returning home.

    With ``daily_choice`` the visited area is re-drawn for every visit,
    otherwise each agent keeps one building for the whole run.
    """

    visit: tuple[str, ...]
    meal: str = "restaurant"
    daily_choice: bool = False

    def locations(self) -> tuple[str, ...]:
        return tuple(self.visit) + (self.meal,)


CATEGORY_ITINERARIES: dict[int, ItinerarySpec] = {
    1: ItinerarySpec(("teaching_building", "library")),
    2: ItinerarySpec(("teaching_building", "laboratory")),
    3: ItinerarySpec(("laboratory",)),
    4: ItinerarySpec(("administration_building", "library")),
}


@dataclass(frozen=True)
class Timetable:
    """Fixed daily timeline in seconds after midnight."""

    am_depart: float = 8 * 3600.0
    am_end: float = 11.5 * 3600.0
    pm_end: float = 17.5 * 3600.0
    meal_dwell: float = 1800.0
    # afternoon cohort leaves home for lunch at this time under batch travel
    batch_pm_meal: float = 12.5 * 3600.0
    # individual departures are spread uniformly over this many seconds
    departure_spread: float = 60.0
    day_seconds: float = 86400.0

    def __post_init__(self):
        if not 0 <= self.am_depart < self.am_end < self.pm_end < self.day_seconds:
            raise ValueError("timetable must satisfy am_depart < am_end < pm_end < day end")
        if self.meal_dwell < 0 or self.departure_spread < 0:
            raise ValueError("durations must be non-negative")


@dataclass(frozen=True)
class InteriorLayout:
    """Seat grid inside a building: rooms of ``room_capacity`` seats in ``cols`` columns."""

    room_capacity: int
    cols: int
    pitch: float
    room_gap: float = 20.0

    def __post_init__(self):
        if self.room_capacity < 1 or self.cols < 1 or self.pitch <= 0:
            raise ValueError("invalid interior layout")


_LAYOUTS = {
    "dormitory": InteriorLayout(4, 2, 1.5),
    "cabin": InteriorLayout(2, 2, 1.5),
    "restaurant": InteriorLayout(100000, 40, 1.0),
    "school_hospital": InteriorLayout(1, 1, 1.0),
    "public": InteriorLayout(100000, 50, 2.0),
}
_CLASSROOM = InteriorLayout(60, 10, 1.0)

# interiors live far from the road map so indoor and outdoor agents never mix
_INTERIOR_X0 = 1.0e6
_INTERIOR_Y0 = 1.0e6
_INTERIOR_PITCH = 2.0e4


def default_layout(kind: str) -> InteriorLayout:
    return _LAYOUTS.get(kind, _CLASSROOM)


def interior_origin(location_index: int) -> tuple[float, float]:
    return (_INTERIOR_X0 + _INTERIOR_PITCH * location_index, _INTERIOR_Y0)


def seat_layout(capacity: int, layout: InteriorLayout, origin=(0.0, 0.0)):
    """Seat coordinates, room index and checkerboard parity for ``capacity`` seats."""
    s = np.arange(capacity)
    room = s // layout.room_capacity
    k = s % layout.room_capacity
    col, row = k % layout.cols, k // layout.cols
    room_w = layout.cols * layout.pitch + layout.room_gap
    xy = np.column_stack(
        [origin[0] + room * room_w + col * layout.pitch, origin[1] + row * layout.pitch]
    ).astype(float)
    parity = (col + row) % 2
    return xy, room, parity


@dataclass(frozen=True)
class PopulationSpec:
    """How many agents of each category live in each home location.

    ``counts[home][category]`` gives explicit numbers; otherwise ``total``
    agents are spread evenly over ``homes`` with categories drawn by
    ``category_shares``.
    """

    total: int | None = 1680
    homes: tuple[str, ...] = ("dormitory_1", "dormitory_2", "dormitory_3", "dormitory_4", "dormitory_5")
    category_shares: Mapping[int, float] = field(
        default_factory=lambda: {1: 0.4, 2: 0.25, 3: 0.15, 4: 0.2}
    )
    counts: Mapping[str, Mapping[int, int]] | None = None
    itineraries: Mapping[int, ItinerarySpec] = field(default_factory=lambda: dict(CATEGORY_ITINERARIES))
    class_task_fraction: float = 1.0
    roster: Sequence[Mapping] | None = None

    def __post_init__(self):
        if self.counts is None and self.roster is None:
            if self.total is None or self.total < 0:
                raise ValueError("population total must be a non-negative integer")
            if not self.homes:
                raise ValueError("at least one home location is required")
            shares = np.array(list(self.category_shares.values()), float)
            if np.any(shares < 0) or not np.isclose(shares.sum(), 1.0):
                raise ValueError("category_shares must be non-negative and sum to 1")
        if not 0.0 <= self.class_task_fraction <= 1.0:
            raise ValueError("class_task_fraction must lie in [0, 1]")
        missing = {c for c in self._categories() if c not in self.itineraries}
        if missing:
            raise ValueError(f"no itinerary for categories {sorted(missing)}")

    def _categories(self) -> set[int]:
        if self.roster is not None:
            return {int(r["category"]) for r in self.roster}
        if self.counts is not None:
            return {int(c) for per in self.counts.values() for c in per}
        return {int(c) for c, s in self.category_shares.items() if s > 0}

    def size(self) -> int:
        if self.roster is not None:
            return len(self.roster)
        if self.counts is not None:
            return int(sum(sum(per.values()) for per in self.counts.values()))
        return int(self.total)


@dataclass
class Agent:
    """Snapshot of one agent."""

    id: int
    gender: str
    age: float
    category: int
    general_state: GeneralState
    speed: float
    position: tuple[float, float]
    rest_assignment: tuple[str, int]
    visit_assignment: tuple[str, int, int] | None
    isolated: bool = False
    current_path: list[str] = field(default_factory=list)


@dataclass
class Population:
    """Column store of all agents plus the location index they refer to."""

    loc_names: list[str]
    loc_kind: list[str]
    category: np.ndarray
    home: np.ndarray
    room: np.ndarray
    bed_xy: np.ndarray
    visit: np.ndarray  # fixed visit location, -1 when chosen daily
    has_class: np.ndarray
    speed: np.ndarray
    gender: np.ndarray
    age: np.ndarray
    itineraries: Mapping[int, ItinerarySpec]
    layouts: dict[str, InteriorLayout]
    capacity: np.ndarray
    seat_xy: np.ndarray | None = None  # fixed seat at the visit building

    @property
    def size(self) -> int:
        return len(self.category)

    def loc_index(self, name: str) -> int:
        try:
            return self.loc_names.index(name)
        except ValueError:
            raise KeyError(f"location {name!r} is missing from the map") from None

    def seats(self, loc: int):
        layout = self.layouts.get(self.loc_kind[loc]) or default_layout(self.loc_kind[loc])
        cap = int(self.capacity[loc])
        return seat_layout(cap, layout, interior_origin(loc))

    def agent(self, i: int, isolated: bool = False) -> Agent:
        v = int(self.visit[i])
        seat = None
        if v >= 0:
            seat = (self.loc_names[v], -1, -1)
        return Agent(
            id=i,
            gender="F" if self.gender[i] else "M",
            age=float(self.age[i]),
            category=int(self.category[i]),
            general_state=GeneralState.REST,
            speed=float(self.speed[i]),
            position=tuple(self.bed_xy[i]),
            rest_assignment=(self.loc_names[self.home[i]], int(self.room[i])),
            visit_assignment=seat,
            isolated=isolated,
        )


def build_population(
    spec: PopulationSpec,
    net: RoadNetwork,
    rng: np.random.Generator,
    speed_model: SpeedModel = SpeedModel(),
    layouts: Mapping[str, InteriorLayout] | None = None,
) -> Population:
    """Create agents, home rooms, fixed visit buildings and walking speeds."""
    loc_names = sorted(net.locations)
    loc_kind = [net.locations[n].kind for n in loc_names]
    index = {n: k for k, n in enumerate(loc_names)}
    capacity = np.array([net.locations[n].capacity for n in loc_names], dtype=np.int64)
    layouts = dict(layouts or {})

    for cat in spec._categories():
        for name in spec.itineraries[cat].locations():
            if name not in index:
                raise KeyError(f"location {name!r} (category {cat}) is missing from the map")

    if spec.roster is not None:
        homes = [str(r["home"]) for r in spec.roster]
        cats = [int(r["category"]) for r in spec.roster]
    elif spec.counts is not None:
        homes, cats = [], []
        for home in sorted(spec.counts):
            for cat in sorted(spec.counts[home], key=int):
                k = int(spec.counts[home][cat])
                if k < 0:
                    raise ValueError(f"negative count for {home}/{cat}")
                homes += [home] * k
                cats += [int(cat)] * k
    else:
        n = int(spec.total)
        hs = list(spec.homes)
        homes = [hs[i % len(hs)] for i in range(n)]
        keys = sorted(int(c) for c in spec.category_shares)
        p = np.array([spec.category_shares[c] for c in keys], float)
        cats = list(rng.choice(keys, size=n, p=p / p.sum())) if n else []
    for h in set(homes):
        if h not in index:
            raise KeyError(f"home {h!r} is missing from the map")

    n = len(homes)
    home = np.array([index[h] for h in homes], dtype=np.int64)
    category = np.array(cats, dtype=np.int64)

    # spread each home's residents evenly over its rooms
    room = np.zeros(n, dtype=np.int64)
    bed_xy = np.zeros((n, 2))
    for loc in np.unique(home):
        members = np.flatnonzero(home == loc)
        kind = loc_kind[loc]
        layout = layouts.get(kind) or default_layout(kind)
        cap = int(capacity[loc])
        if len(members) > cap:
            raise ValueError(
                f"{loc_names[loc]} holds {cap} residents but {len(members)} were assigned"
            )
        n_rooms = max(1, math.ceil(cap / layout.room_capacity))
        xy, _, _ = seat_layout(cap, layout, interior_origin(int(loc)))
        order = rng.permutation(members)
        rank = np.arange(len(order))
        r = rank % n_rooms
        b = rank // n_rooms
        seat = r * layout.room_capacity + b
        room[order] = r
        bed_xy[order] = xy[seat]

    visit = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        it = spec.itineraries[int(category[i])]
        if not it.daily_choice:
            visit[i] = index[it.visit[int(rng.integers(len(it.visit)))]]

    has_class = rng.random(n) < spec.class_task_fraction if spec.class_task_fraction < 1 else np.ones(n, bool)
    speed = np.asarray(sample_speed(speed_model, rng, size=n), float).reshape(n)
    gender = rng.integers(0, 2, size=n)
    age = np.where(category == 4, rng.uniform(25, 60, n), rng.uniform(18, 26, n))
    return Population(
        loc_names=loc_names,
        loc_kind=loc_kind,
        category=category,
        home=home,
        room=room,
        bed_xy=bed_xy,
        visit=visit,
        has_class=has_class,
        speed=speed,
        gender=gender,
        age=age,
        itineraries=dict(spec.itineraries),
        layouts=layouts,
        capacity=capacity,
    )


def _pick_seats(pop: Population, loc: int, count: int, rng, sparse: bool) -> np.ndarray:
    xy, _, parity = pop.seats(loc)
    pool = np.flatnonzero(parity == 0) if sparse else np.arange(len(xy))
    if count > len(pool):
        if sparse and count <= len(xy):
            pool = np.arange(len(xy))
        else:
            raise ValueError(
                f"{pop.loc_names[loc]} has {len(pool)} usable seats for {count} occupants"
            )
    return xy[rng.choice(pool, size=count, replace=False)]


def assign_seats(pop: Population, rng: np.random.Generator, cohort: np.ndarray | None = None) -> None:
    """Give every agent a fixed seat in its visit building.

    Under batch travel each cohort sits on one colour of the seat
    checkerboard, doubling the spacing between neighbours.
    """
    seat_xy = np.full((pop.size, 2), np.nan)
    groups = [None] if cohort is None else [0, 1]
    for loc in np.unique(pop.visit[pop.visit >= 0]):
        for g in groups:
            sel = pop.visit == loc
            if g is not None:
                sel &= cohort == g
            members = np.flatnonzero(sel)
            if len(members):
                seat_xy[members] = _pick_seats(pop, int(loc), len(members), rng, g is not None)
    pop.seat_xy = seat_xy


@dataclass
class DayPlan:
    """Per-agent legs for one day.

    Leg ``l`` goes to ``dest[:, l]``; it may start no earlier than
    ``depart[:, l]`` and, for ``l > 0``, no earlier than ``dwell[:, l-1]``
    seconds after arriving from the previous leg.
    """

    dest: np.ndarray
    depart: np.ndarray
    dwell: np.ndarray
    seat: np.ndarray
    n_legs: np.ndarray

    @property
    def max_legs(self) -> int:
        return self.dest.shape[1]

    def legs_of(self, i: int, pop: Population) -> list[tuple[str, float, float]]:
        return [
            (pop.loc_names[self.dest[i, l]], float(self.depart[i, l]), float(self.dwell[i, l]))
            for l in range(self.n_legs[i])
        ]


def assign_itineraries(
    pop: Population,
    timetable: Timetable,
    rng: np.random.Generator,
    cohort: np.ndarray | None = None,
    home_offsets: Mapping[str, float] | None = None,
    after_class_offsets: Mapping[str, float] | None = None,
    confined: np.ndarray | None = None,
) -> DayPlan:
    """Build one day's legs for every agent.

    ``cohort`` (0 morning, 1 afternoon, -1 none) switches on batch travel.
    ``home_offsets`` and ``after_class_offsets`` shift departures from homes
    and from visit buildings (staggered travel). ``confined`` agents get no
    legs at all.
    """
    n = pop.size
    L = 4
    dest = np.full((n, L), -1, dtype=np.int64)
    depart = np.zeros((n, L))
    dwell = np.zeros((n, L))
    seat = np.full((n, L, 2), np.nan)
    n_legs = np.zeros(n, dtype=np.int64)
    if n == 0:
        return DayPlan(dest, depart, dwell, seat, n_legs)

    home_offsets = home_offsets or {}
    after_class_offsets = after_class_offsets or {}
    home_off = np.array([home_offsets.get(pop.loc_names[h], 0.0) for h in range(len(pop.loc_names))])
    class_off = np.array([after_class_offsets.get(pop.loc_names[h], 0.0) for h in range(len(pop.loc_names))])
    spread = timetable.departure_spread
    jitter = rng.uniform(0.0, spread, size=(n, L)) if spread > 0 else np.zeros((n, L))

    active = pop.has_class.copy()
    if confined is not None:
        active &= ~confined
    if cohort is None:
        cohort = np.full(n, -1, dtype=np.int64)

    # visit building per visit slot (0 morning, 1 afternoon)
    visit = np.stack([pop.visit, pop.visit], axis=1)
    daily = np.flatnonzero(pop.visit < 0)
    for i in daily:
        opts = pop.itineraries[int(pop.category[i])].visit
        visit[i] = [pop.loc_index(opts[k]) for k in rng.integers(len(opts), size=2)]

    meal = np.array([pop.loc_index(pop.itineraries[int(c)].meal) for c in pop.category])
    fixed_seat = pop.seat_xy if pop.seat_xy is not None else np.full((n, 2), np.nan)

    t = timetable
    full = np.flatnonzero(active & (cohort < 0))
    morning = np.flatnonzero(active & (cohort == 0))
    afternoon = np.flatnonzero(active & (cohort == 1))
    home = pop.home

    # no batching: home -> visit -> meal -> visit -> home
    i = full
    dest[i, 0], depart[i, 0] = visit[i, 0], t.am_depart + home_off[home[i]]
    dest[i, 1], depart[i, 1] = meal[i], t.am_end + class_off[visit[i, 0]]
    dwell[i, 1] = t.meal_dwell
    dest[i, 2], depart[i, 2] = visit[i, 1], 0.0
    dest[i, 3], depart[i, 3] = home[i], t.pm_end + class_off[visit[i, 1]]
    n_legs[i] = 4

    # morning cohort: home -> visit -> meal -> home
    i = morning
    dest[i, 0], depart[i, 0] = visit[i, 0], t.am_depart + home_off[home[i]]
    dest[i, 1], depart[i, 1] = meal[i], t.am_end + class_off[visit[i, 0]]
    dwell[i, 1] = t.meal_dwell
    dest[i, 2], depart[i, 2] = home[i], 0.0
    n_legs[i] = 3

    # afternoon cohort: home -> meal -> visit -> home
    i = afternoon
    dest[i, 0], depart[i, 0] = meal[i], t.batch_pm_meal + home_off[home[i]]
    dwell[i, 0] = t.meal_dwell
    dest[i, 1], depart[i, 1] = visit[i, 1], 0.0
    dest[i, 2], depart[i, 2] = home[i], t.pm_end + class_off[visit[i, 1]]
    n_legs[i] = 3

    has_leg = depart > 0
    depart = np.where(has_leg, depart + jitter, depart)

    # seats: fixed or daily-drawn in visit buildings, daily in restaurants, beds at home
    sparse = cohort >= 0
    for l in range(L):
        rows = np.flatnonzero(dest[:, l] >= 0)
        if not len(rows):
            continue
        d = dest[rows, l]
        at_home = d == home[rows]
        seat[rows[at_home], l] = pop.bed_xy[rows[at_home]]
        is_fixed = (d == pop.visit[rows]) & ~at_home
        seat[rows[is_fixed], l] = fixed_seat[rows[is_fixed]]
    for l in range(L):
        rows = np.flatnonzero((dest[:, l] >= 0) & np.isnan(seat[:, l, 0]))
        for loc in np.unique(dest[rows, l]):
            for sp in (False, True):
                r = rows[(dest[rows, l] == loc) & (sparse[rows] == sp)]
                if len(r):
                    seat[r, l] = _pick_seats(pop, int(loc), len(r), rng, sp)
    missing = (dest >= 0) & np.isnan(seat[:, :, 0])
    if missing.any():
        raise ValueError("some legs have no seat at their destination")
    return DayPlan(dest, depart, dwell, seat, n_legs)
