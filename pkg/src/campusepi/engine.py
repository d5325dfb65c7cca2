"""Simulation clock, seeded replications and result export.

A day is 86400 simulated seconds. Agents walk in one-second steps while
anyone is on the road; exposure is evaluated at the start of every time
slice (60 s by default) and skipped when nothing moved since the previous
evaluation, since the running maximum would not change. At midnight each
susceptible draws once against its highest slice probability.

Every random quantity comes from a generator keyed on ``(seed, purpose,
day)``, so a run is reproducible bit-for-bit whatever the evaluation order
or the number of worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .control import (
    ContactLog,
    ControlPolicy,
    StaggerResult,
    StaggerSchedule,
    apply_batch,
    congestion_models_from_plan,
    optimize_stagger,
    trace_and_isolate,
)
from .graph import RoadNetwork, _shortest_tree
from .infection import InfectionParams, InfectionState, distance_kernel, viral_ramp
from .locomotion import HeatGrid, RouteTable, Walkers
from .population import (
    InteriorLayout,
    Population,
    PopulationSpec,
    SpeedModel,
    Timetable,
    assign_itineraries,
    assign_seats,
    build_population,
    interior_origin,
)
from .spatial import neighbor_pairs

__all__ = [
    "shared_corridor_mask",
    "CSV_COLUMNS",
    "DailyStats",
    "ReplicatedResult",
    "RunResult",
    "ScenarioConfig",
    "export_results",
    "optimize_schedule",
    "prepare_population",
    "run_once",
    "run_replicated",
]

CSV_COLUMNS = ("day", "susceptible", "latent", "infected", "isolated", "cumulative", "rate", "rate_std")
HEAT_COLUMNS = ("x", "y", "visits", "peak_density")
OUTPUT_VERSION = 1

# stream identifiers for the per-purpose generators
_RNG_POPULATION, _RNG_BATCH, _RNG_SEATS, _RNG_SEED_CASES, _RNG_PLAN, _RNG_RESOLVE = range(1, 7)


@dataclass(frozen=True)
class ScenarioConfig:
    network: RoadNetwork
    population: PopulationSpec = field(default_factory=PopulationSpec)
    infection: InfectionParams = field(default_factory=InfectionParams)
    policy: ControlPolicy = field(default_factory=ControlPolicy)
    timetable: Timetable = field(default_factory=Timetable)
    speed: SpeedModel = field(default_factory=SpeedModel)
    layouts: Mapping[str, InteriorLayout] = field(default_factory=dict)
    horizon_days: int = 21
    initial_infected: int = 1
    initial_placement: str = "random"
    replications: int = 20
    seed: int = 0
    dt: float = 1.0
    lane_pitch: float = 1.0
    heat_cell: float = 2.0
    stagger_step: float = 60.0
    stagger_width_ref: float | None = None
    name: str = "scenario"
    # resolved scenario document, echoed into the run manifest
    document: Mapping[str, Any] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.horizon_days < 1:
            raise ValueError("horizon_days must be >= 1")
        if self.initial_infected < 0:
            raise ValueError("initial_infected must be >= 0")
        if self.initial_infected > self.population.size():
            raise ValueError("initial_infected exceeds the population")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.infection.slice_seconds % self.dt:
            raise ValueError("slice_seconds must be a multiple of dt")
        if self.policy.beta != self.infection.beta:
            object.__setattr__(self, "infection", dataclasses.replace(self.infection, beta=self.policy.beta))
        if "school_hospital" not in self.network.locations and self.policy.isolation is not None:
            raise ValueError("isolation needs a 'school_hospital' location on the map")


@dataclass
class DailyStats:
    day: int
    susceptible: int
    latent: int
    infected: int
    isolated: int
    cumulative_infected: int
    population: int

    @property
    def infection_rate(self) -> float:
        return self.cumulative_infected / self.population if self.population else 0.0


@dataclass
class RunResult:
    daily: list[DailyStats]
    heat: HeatGrid
    seed: int
    stagger: dict[str, StaggerResult] = field(default_factory=dict)
    infected_on_day: np.ndarray | None = None

    def series(self, name: str) -> np.ndarray:
        if name == "infection_rate":
            return np.array([d.infection_rate for d in self.daily])
        return np.array([getattr(d, name) for d in self.daily], dtype=float)


_FIELDS = ("susceptible", "latent", "infected", "isolated", "cumulative_infected", "infection_rate")


@dataclass
class ReplicatedResult:
    runs: list[RunResult]
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]

    @property
    def days(self) -> np.ndarray:
        return np.array([d.day for d in self.runs[0].daily]) if self.runs else np.array([], int)

    def final(self, name: str = "infection_rate") -> np.ndarray:
        """Last-day value of ``name`` for every replication."""
        return np.array([r.series(name)[-1] for r in self.runs])

    @classmethod
    def from_runs(cls, runs: Sequence[RunResult]) -> "ReplicatedResult":
        runs = list(runs)
        mean, std = {}, {}
        for name in _FIELDS:
            if runs:
                stack = np.vstack([r.series(name) for r in runs])
                mean[name] = stack.mean(axis=0)
                std[name] = stack.std(axis=0)
            else:
                mean[name] = std[name] = np.array([])
        return cls(runs, mean, std)


def _exposure(xy, active, days, susceptible, params: InfectionParams):
    """Slice probabilities for every agent and the neighbour pairs behind them."""
    idx = np.flatnonzero(active)
    n = len(xy)
    p = np.zeros(n)
    if len(idx) < 2:
        return p, (np.empty(0, np.int64), np.empty(0, np.int64))
    li, lj, d = neighbor_pairs(xy[idx], params.radius)
    gi, gj = idx[li], idx[lj]
    if not len(gi):
        return p, (gi, gj)
    k = distance_kernel(d, params.radius)
    count = np.bincount(gi, minlength=n) + np.bincount(gj, minlength=n)
    wj = viral_ramp(days[gj], params.incubation_days) * k
    wi = viral_ramp(days[gi], params.incubation_days) * k
    total = np.bincount(gi, weights=wj, minlength=n) + np.bincount(gj, weights=wi, minlength=n)
    sel = susceptible & (count > 0)
    p[sel] = np.clip((1.0 - params.beta) * total[sel] / count[sel], 0.0, 1.0)
    return p, (gi, gj)


def stagger_models(cfg: ScenarioConfig, pop: Population, cohort=None):
    """Congestion models for home departures and after-class departures."""
    tt = dataclasses.replace(cfg.timetable, departure_spread=0.0)
    plan = assign_itineraries(pop, tt, np.random.default_rng(0), cohort)
    return congestion_models_from_plan(
        cfg.network, pop, plan,
        v_min=cfg.speed.v_min, v_max=cfg.speed.v_max,
        departure_spread=cfg.timetable.departure_spread,
        width_ref=cfg.stagger_width_ref,
    )


def _stagger_schedule(cfg: ScenarioConfig, pop: Population, cohort) -> tuple[StaggerSchedule | None, dict]:
    stagger = cfg.policy.stagger
    if stagger is None:
        return None, {}
    if isinstance(stagger, StaggerSchedule):
        return stagger, {}
    if stagger == "reference":
        return StaggerSchedule.reference(), {}
    home_model, class_model = stagger_models(cfg, pop, cohort)
    max_offset = StaggerSchedule().max_offset
    home = optimize_stagger(home_model, cfg.stagger_step, max_offset)
    after = optimize_stagger(class_model, cfg.stagger_step, max_offset)
    return StaggerSchedule(home.offsets, after.offsets), {"departure": home, "after_class": after}


def prepare_population(cfg: ScenarioConfig, seed: int | None = None):
    """Population, batch cohorts and seats exactly as a run with ``seed`` sees them."""
    seed = cfg.seed if seed is None else int(seed)
    rng = lambda purpose: np.random.default_rng([seed, purpose, 0])  # noqa: E731
    pop = build_population(cfg.population, cfg.network, rng(_RNG_POPULATION), cfg.speed, cfg.layouts)
    cohort = None
    if cfg.policy.batch is not None:
        # roommates travel together
        rooms = pop.home * (int(pop.room.max()) + 1) + pop.room
        cohort = apply_batch(pop.has_class, cfg.policy.batch, rng(_RNG_BATCH), rooms)
    assign_seats(pop, rng(_RNG_SEATS), cohort)
    return pop, cohort


def optimize_schedule(cfg: ScenarioConfig, seed: int | None = None):
    """Optimised stagger schedule for ``cfg`` plus the congestion models behind it.

    Returns ``(schedule, {"departure": result, "after_class": result}, (home_model, class_model))``.
    """
    pop, cohort = prepare_population(cfg, seed)
    models = stagger_models(cfg, pop, cohort)
    max_offset = StaggerSchedule().max_offset
    res = {
        "departure": optimize_stagger(models[0], cfg.stagger_step, max_offset),
        "after_class": optimize_stagger(models[1], cfg.stagger_step, max_offset),
    }
    return StaggerSchedule(res["departure"].offsets, res["after_class"].offsets), res, models


class _Run:
    """State of one replication."""

    def __init__(self, cfg: ScenarioConfig, seed: int, routes: RouteTable | None = None):
        self.cfg = cfg
        self.seed = int(seed)
        net = cfg.network
        self.params = cfg.infection
        pop, self.cohort = prepare_population(cfg, self.seed)
        self.pop = pop
        n = pop.size
        self.schedule, self.stagger_results = _stagger_schedule(cfg, pop, self.cohort)
        self.routes = routes or RouteTable.build(net, pop.loc_names, cfg.lane_pitch)
        self.heat = HeatGrid.covering(net, cfg.heat_cell)
        self.walkers = Walkers(self.routes, pop.speed, cfg.speed, self.heat)

        self.state = np.zeros(n, dtype=np.int64)
        self.days = np.zeros(n, dtype=np.int64)
        self.asym = np.zeros(n, dtype=bool)
        self.p_today = np.zeros(n)
        self.infected_on = np.full(n, -1, dtype=np.int64)
        self.isolated = np.zeros(n, dtype=bool)
        self.iso_day = np.full(n, -1, dtype=np.int64)
        self.iso_diag = np.zeros(n, dtype=bool)
        self.pending: dict[int, list[int]] = {}
        iso = cfg.policy.isolation
        self.contacts = ContactLog(n, (iso.tracing_window_days + 1) if iso else 1) if iso else None
        self.hospital = pop.loc_names.index("school_hospital") if "school_hospital" in pop.loc_names else -1
        self._seed_cases()

    def _rng(self, purpose: int, day: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.seed, purpose, day])

    def _seed_cases(self) -> None:
        k = self.cfg.initial_infected
        if k == 0:
            return
        rng = self._rng(_RNG_SEED_CASES)
        where = self.cfg.initial_placement
        if where == "random":
            pool = np.arange(self.pop.size)
        else:
            pool = np.flatnonzero(self.pop.home == self.pop.loc_index(where))
            if len(pool) < k:
                raise ValueError(f"{where!r} has fewer than {k} residents")
        chosen = rng.choice(pool, size=k, replace=False)
        self.state[chosen] = InfectionState.LATENT
        self.days[chosen] = 1
        self.asym[chosen] = rng.random(k) < self.params.asymptomatic_prob
        self.infected_on[chosen] = 0

    # -- day structure -------------------------------------------------

    def _start_positions(self):
        loc = self.pop.home.copy()
        xy = self.pop.bed_xy.copy()
        iso = np.flatnonzero(self.isolated)
        if len(iso):
            loc[iso] = self.hospital
            ox, oy = interior_origin(self.hospital)
            # isolated agents take no part in exposure; any spot will do
            xy[iso] = np.column_stack([ox + 50.0 * iso, np.full(len(iso), oy)])
        return loc, xy

    def _apply_isolation(self, day: int) -> None:
        iso = self.cfg.policy.isolation
        if iso is None:
            return
        # release suspected non-carriers once the observation window is over
        release = (
            self.isolated & ~self.iso_diag & (self.state == InfectionState.SUSCEPTIBLE)
            & (day - self.iso_day >= max(iso.tracing_window_days, 1))
        )
        self.isolated[release] = False
        due = self.pending.pop(day, [])
        if not due:
            return
        actions = trace_and_isolate(day - 1, due, self.contacts, iso, None)
        for act in actions:
            a = act.agent
            if act.reason == "diagnosed":
                self.iso_diag[a] = True
            if not self.isolated[a]:
                self.isolated[a] = True
                self.iso_day[a] = day

    def _simulate_day(self, day: int) -> None:
        cfg = self.cfg
        sched = self.schedule
        plan = assign_itineraries(
            self.pop, cfg.timetable, self._rng(_RNG_PLAN, day), self.cohort,
            sched.home_offsets() if sched else None,
            sched.class_offsets() if sched else None,
            confined=self.isolated,
        )
        loc, xy = self._start_positions()
        w = self.walkers
        w.begin_day(plan, loc, xy, 0.0)
        active = ~self.isolated
        susceptible = active & (self.state == InfectionState.SUSCEPTIBLE)
        S = cfg.infection.slice_seconds
        end = cfg.timetable.day_seconds
        pairs = None
        last_eval = 0.0
        t = 0.0
        changed = True
        while t < end:
            if changed:
                if pairs is not None and self.contacts is not None:
                    self.contacts.add(day, pairs[0], pairs[1], t - last_eval)
                p, pairs = _exposure(w.xy, active, self.days, susceptible, self.params)
                np.maximum(self.p_today, p, out=self.p_today)
                last_eval = t
            t_next = min(t + S, end)
            changed = w.advance(t_next, cfg.dt)
            t = t_next
        if pairs is not None and self.contacts is not None:
            self.contacts.add(day, pairs[0], pairs[1], end - last_eval)
            self.contacts.close_day(day)

    def _resolve(self, day: int) -> np.ndarray:
        params = self.params
        u = self._rng(_RNG_RESOLVE, day).random((self.pop.size, 2))
        latent = self.state == InfectionState.LATENT
        diag = latent & (self.days >= params.incubation_days) & ~self.asym
        self.state[diag] = InfectionState.INFECTED
        carriers = self.state != InfectionState.SUSCEPTIBLE
        self.days[carriers] += 1
        p = self.p_today
        new = (
            (self.state == InfectionState.SUSCEPTIBLE) & ~self.isolated
            & ((p >= params.threshold) | (u[:, 0] < p))
        )
        self.state[new] = InfectionState.LATENT
        self.days[new] = 1
        self.asym[new] = u[new, 1] < params.asymptomatic_prob
        self.infected_on[new] = day
        self.p_today[:] = 0.0
        return np.flatnonzero(diag)

    def run(self) -> RunResult:
        cfg = self.cfg
        iso = cfg.policy.isolation
        daily = []
        for day in range(1, cfg.horizon_days + 1):
            self._apply_isolation(day)
            self._simulate_day(day)
            diagnosed = self._resolve(day)
            if iso is not None and len(diagnosed):
                due = day + 1 + iso.detection_delay_days
                self.pending.setdefault(due, []).extend(diagnosed.tolist())
            s = self.state
            daily.append(
                DailyStats(
                    day=day,
                    susceptible=int(np.sum(s == InfectionState.SUSCEPTIBLE)),
                    latent=int(np.sum(s == InfectionState.LATENT)),
                    infected=int(np.sum(s == InfectionState.INFECTED)),
                    isolated=int(np.sum(self.isolated)),
                    cumulative_infected=int(np.sum(s != InfectionState.SUSCEPTIBLE)),
                    population=self.pop.size,
                )
            )
        return RunResult(daily, self.heat, self.seed, self.stagger_results, self.infected_on.copy())


def run_once(cfg: ScenarioConfig, seed: int | None = None, routes: RouteTable | None = None) -> RunResult:
    """One seeded replication of ``cfg``."""
    return _Run(cfg, cfg.seed if seed is None else seed, routes).run()


def _run_indexed(args):
    cfg, seed = args
    return run_once(cfg, seed)


def run_replicated(
    cfg: ScenarioConfig,
    replications: int | None = None,
    workers: int | None = None,
    seeds: Sequence[int] | None = None,
) -> ReplicatedResult:
    """Run replications with seeds ``seed + k`` and average the daily curves.

    ``workers > 1`` runs replications in separate processes; results are
    identical to a serial run.
    """
    reps = cfg.replications if replications is None else int(replications)
    if reps < 1:
        raise ValueError("replications must be >= 1")
    seeds = list(seeds) if seeds is not None else [cfg.seed + k for k in range(reps)]
    if workers is None:
        workers = int(os.environ.get("CAMPUSEPI_WORKERS", "1"))
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_indexed, [(cfg, s) for s in seeds]))
    else:
        runs = [run_once(cfg, s) for s in seeds]
    return ReplicatedResult.from_runs(runs)



def shared_corridor_mask(cfg: ScenarioConfig, heat: HeatGrid) -> np.ndarray:
    """Heat cells lying on road segments used by routes from two or more homes.

    Routes run from each home to every non-home location except the
    hospital. A cell belongs to a segment when its centre projects inside
    the segment and sits within half the road width of its axis.
    """
    net = cfg.network
    homes = set(cfg.population.homes)
    targets = [n for n in net.locations if n not in homes and net.locations[n].kind != "school_hospital"]
    users: dict[int, set[str]] = {}
    for h in homes:
        paths = _shortest_tree(net, net.location_node(h))[1]
        for t in targets:
            path = paths[net.location_node(t)]
            for a, b in zip(path[:-1], path[1:]):
                users.setdefault(net.edge_id(a, b), set()).add(h)
    cx, cy = heat.cell_centers()
    mask = np.zeros(cx.shape, dtype=bool)
    for eid, who in users.items():
        if len(who) < 2:
            continue
        e = net.edges[eid]
        (x0, y0), (x1, y1) = net.nodes[e.a], net.nodes[e.b]
        ux, uy = (x1 - x0) / e.length, (y1 - y0) / e.length
        along = (cx - x0) * ux + (cy - y0) * uy
        lateral = np.abs(-(cx - x0) * uy + (cy - y0) * ux)
        mask |= (along >= 0) & (along <= e.length) & (lateral <= e.width / 2)
    return mask

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".10g")


def export_results(
    result: ReplicatedResult | RunResult,
    out_dir: str | os.PathLike,
    cfg: ScenarioConfig | None = None,
    extra_manifest: Mapping[str, Any] | None = None,
) -> dict[str, Path]:
    """Write daily curves, heat map and a reproducibility manifest to ``out_dir``."""
    if isinstance(result, RunResult):
        result = ReplicatedResult.from_runs([result])
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = {
        "curves": out / "daily_curves.csv",
        "heatmap": out / "heatmap.csv",
        "manifest": out / "manifest.json",
    }
    m, sd = result.mean, result.std
    try:
        with open(paths["curves"], "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(CSV_COLUMNS)
            for k, day in enumerate(result.days):
                wr.writerow([
                    _fmt(int(day)),
                    _fmt(m["susceptible"][k]),
                    _fmt(m["latent"][k]),
                    _fmt(m["infected"][k]),
                    _fmt(m["isolated"][k]),
                    _fmt(m["cumulative_infected"][k]),
                    _fmt(m["infection_rate"][k]),
                    _fmt(sd["infection_rate"][k]),
                ])
        with open(paths["heatmap"], "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(HEAT_COLUMNS)
            if result.runs:
                heat = result.runs[0].heat
                visits = np.mean([r.heat.visits for r in result.runs], axis=0)
                peak = np.mean([r.heat.peak for r in result.runs], axis=0)
                xs, ys = heat.cell_centers()
                for y, x in zip(*np.nonzero(visits)):
                    wr.writerow([_fmt(xs[y, x]), _fmt(ys[y, x]), _fmt(visits[y, x]), _fmt(peak[y, x])])
        manifest = {
            "output_version": OUTPUT_VERSION,
            "columns": {"daily_curves": list(CSV_COLUMNS), "heatmap": list(HEAT_COLUMNS)},
            "seeds": [int(r.seed) for r in result.runs],
            "replications": len(result.runs),
        }
        if cfg is not None and cfg.document is not None:
            manifest["scenario"] = cfg.document
            manifest["scenario_sha256"] = hashlib.sha256(
                json.dumps(cfg.document, sort_keys=True).encode()
            ).hexdigest()
        if extra_manifest:
            manifest.update(extra_manifest)
        stag = result.runs[0].stagger if result.runs else {}
        if stag:
            manifest["stagger"] = {
                k: {"offsets": v.offsets, "congestion": v.congestion, "baseline": v.baseline,
                    "feasible": v.feasible}
                for k, v in stag.items()
            }
        with open(paths["manifest"], "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"writing results to {out}: {exc}") from exc
    return paths
