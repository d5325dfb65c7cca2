"""Scenario files: JSON documents that fully describe a simulation run.

Every field has a default; a scenario file only lists what differs. The
loader rejects unknown keys and wrong types, naming the offending field by
its dotted path and, when the file text is available, by line number.
The resolved document (defaults filled in, map inlined) is what ends up in
the run manifest, so a manifest can be fed back in to repeat the run.
"""

from __future__ import annotations

import copy
import json
import math
import re
from pathlib import Path
from typing import Any, Iterable, Mapping

from .control import AFTER_CLASS_GROUPS, BatchPolicy, ControlPolicy, IsolationPolicy, StaggerSchedule
from .engine import ScenarioConfig
from .graph import _line_of, load_map
from .infection import InfectionParams
from .population import (
    CATEGORY_ITINERARIES,
    InteriorLayout,
    ItinerarySpec,
    PopulationSpec,
    SpeedModel,
    Timetable,
)

__all__ = ["DEFAULTS", "ScenarioError", "apply_overrides", "build_config", "load_scenario", "resolve"]

_REQUIRED = object()

DEFAULTS: dict[str, Any] = {
    "name": "scenario",
    "description": "",
    "map": _REQUIRED,
    "population": {
        "total": 1680,
        "homes": ["dormitory_1", "dormitory_2", "dormitory_3", "dormitory_4", "dormitory_5"],
        "category_shares": {"1": 0.4, "2": 0.25, "3": 0.15, "4": 0.2},
        "counts": None,
        "roster": None,
        "itineraries": None,
        "class_task_fraction": 1.0,
    },
    "infection": {
        "radius": 2.0,
        "incubation_days": 7,
        "threshold": 1.0,
        "beta": 0.0,
        "asymptomatic_prob": 0.0,
        "slice_seconds": 60,
    },
    "control": {"batch": None, "stagger": None, "isolation": None},
    "timetable": {
        "am_depart": 28800.0,
        "am_end": 41400.0,
        "pm_end": 63000.0,
        "meal_dwell": 1800.0,
        "batch_pm_meal": 45000.0,
        "departure_spread": 60.0,
    },
    "speed": {
        "v_min": 0.926,
        "v_max": 1.586,
        "mean": 1.256,
        "stddev": 0.11,
        "preferred_spacing": 1.55,
        "hard_radius": 0.5,
    },
    "interiors": {},
    "simulation": {
        "horizon_days": 21,
        "dt": 1.0,
        "initial_infected": 1,
        "initial_placement": "random",
        "replications": 20,
        "seed": 0,
        "lane_pitch": 1.0,
        "heat_cell": 2.0,
    },
    "stagger_optimizer": {"step": 60.0, "width_ref": None},
}

# dotted paths whose value is free-form and checked when objects are built
_OPEN = {
    "map", "population.homes", "population.category_shares", "population.counts",
    "population.roster", "population.itineraries", "control.batch", "control.stagger",
    "control.isolation", "interiors", "stagger_optimizer.width_ref",
}


class ScenarioError(ValueError):
    """Invalid scenario document; ``field`` is the dotted path of the culprit."""

    def __init__(self, field: str, message: str, line: int | None = None, source: str | None = None):
        self.field = field
        self.detail = message
        self.line = line
        self.source = source
        where = "".join(f"{p}:" for p in (source, line) if p is not None)
        text = f"field '{field}': {message}" if field else message
        super().__init__(f"{where} {text}" if where else text)


def _type_name(v) -> str:
    return {bool: "boolean", int: "integer", float: "number", str: "string", list: "list",
            dict: "object"}.get(type(v), type(v).__name__)


def _check_type(path: str, default, value) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ScenarioError(path, f"expected boolean, got {_type_name(value)}")
        return value
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(path, f"expected integer, got {_type_name(value)}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(path, f"expected number, got {_type_name(value)}")
        if not math.isfinite(value):
            raise ScenarioError(path, "must be finite")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ScenarioError(path, f"expected string, got {_type_name(value)}")
        return value
    return value


def _merge(defaults: Mapping, user: Mapping, prefix: str = "") -> dict:
    if not isinstance(user, Mapping):
        raise ScenarioError(prefix.rstrip("."), f"expected object, got {_type_name(user)}")
    unknown = sorted(set(user) - set(defaults))
    if unknown:
        raise ScenarioError(prefix + unknown[0], "unknown key")
    out = {}
    for key, default in defaults.items():
        path = prefix + key
        if key not in user:
            if default is _REQUIRED:
                raise ScenarioError(path, "is required")
            out[key] = copy.deepcopy(default)
            continue
        value = user[key]
        if path in _OPEN:
            out[key] = copy.deepcopy(value)
        elif isinstance(default, dict) and path not in _OPEN:
            out[key] = _merge(default, value, path + ".")
        else:
            out[key] = _check_type(path, default, value)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: Mapping, overrides: Iterable[str]) -> dict:
    """Apply ``key.path=value`` strings; values are parsed as JSON when possible."""
    doc = copy.deepcopy(dict(doc))
    for item in overrides:
        if "=" not in item:
            raise ScenarioError("", f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if not all(parts):
            raise ScenarioError(key, "empty path component in override")
        node = doc
        for k, part in enumerate(parts[:-1]):
            nxt = node.get(part)
            if nxt is None:
                nxt = node[part] = {}
            if not isinstance(nxt, dict):
                raise ScenarioError(".".join(parts[: k + 1]), "cannot set a sub-key of a non-object value")
            node = nxt
        node[parts[-1]] = _parse_value(raw)
    return doc


def resolve(doc: Mapping, base_dir: str | Path | None = None, text: str | None = None,
            source: str | None = None) -> dict:
    """Fill in defaults, inline the map and validate; returns the resolved document."""
    try:
        out = _merge(DEFAULTS, doc)
        m = out["map"]
        if isinstance(m, str):
            path = Path(m)
            if not path.is_absolute():
                path = Path(base_dir or ".") / path
            if not path.exists():
                bundled = Path(__file__).parent / "data" / m
                path = bundled if bundled.exists() else path
            try:
                net = load_map(path)
            except FileNotFoundError:
                raise ScenarioError("map", f"map file {str(path)!r} not found") from None
            out["map"] = net.to_dict()
        elif isinstance(m, Mapping):
            load_map(m)
        else:
            raise ScenarioError("map", "expected a file path or an inline map object")
        build_config(out)
    except ScenarioError as exc:
        line = exc.line
        if line is None and text is not None and exc.field:
            line = _line_of(text, f'"{exc.field.split(".")[-1]}"')
        raise ScenarioError(exc.field, exc.detail, line, exc.source or source) from None
    return out


def _wrap(path: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ScenarioError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        msg = str(exc.args[0] if exc.args else exc)
        # point at the offending key when the message starts with its name
        head = re.match(r"\w+", msg)
        if head and head.group() in kw:
            path = f"{path}.{head.group()}"
        raise ScenarioError(path, msg) from None


def _itineraries(raw) -> dict[int, ItinerarySpec]:
    if raw is None:
        return dict(CATEGORY_ITINERARIES)
    if not isinstance(raw, Mapping):
        raise ScenarioError("population.itineraries", "expected object keyed by category")
    out = {}
    for cat, spec in raw.items():
        path = f"population.itineraries.{cat}"
        if not isinstance(spec, Mapping):
            raise ScenarioError(path, "expected object")
        extra = set(spec) - {"visit", "meal", "daily_choice"}
        if extra:
            raise ScenarioError(f"{path}.{sorted(extra)[0]}", "unknown key")
        visit = spec.get("visit")
        if not isinstance(visit, list) or not visit or not all(isinstance(v, str) for v in visit):
            raise ScenarioError(f"{path}.visit", "expected a non-empty list of location names")
        out[int(cat)] = ItinerarySpec(tuple(visit), str(spec.get("meal", "restaurant")),
                                      bool(spec.get("daily_choice", False)))
    return out


def _policy(raw: Mapping, beta: float) -> ControlPolicy:
    batch = raw["batch"]
    if batch is not None:
        if batch is True:
            batch = {}
        if not isinstance(batch, Mapping) or set(batch) - {"split"}:
            raise ScenarioError("control.batch", "expected null, true or {\"split\": fraction}")
        batch = _wrap("control.batch.split", BatchPolicy, float(batch.get("split", 0.5)))
    iso = raw["isolation"]
    if iso is not None:
        if iso is True:
            iso = {}
        keys = {"detection_delay_days", "tracing_window_days", "close_contact_seconds"}
        if not isinstance(iso, Mapping):
            raise ScenarioError("control.isolation", "expected null, true or an object")
        if set(iso) - keys:
            raise ScenarioError(f"control.isolation.{sorted(set(iso) - keys)[0]}", "unknown key")
        iso = _wrap("control.isolation", IsolationPolicy, **iso)
    stagger = raw["stagger"]
    if isinstance(stagger, Mapping):
        keys = {"departure", "after_class", "groups", "max_offset"}
        if set(stagger) - keys:
            raise ScenarioError(f"control.stagger.{sorted(set(stagger) - keys)[0]}", "unknown key")
        groups = {k: tuple(v) for k, v in stagger.get("groups", AFTER_CLASS_GROUPS).items()}
        stagger = _wrap(
            "control.stagger", StaggerSchedule,
            {k: float(v) for k, v in stagger.get("departure", {}).items()},
            {k: float(v) for k, v in stagger.get("after_class", {}).items()},
            groups, float(stagger.get("max_offset", 1200.0)),
        )
    elif stagger is not None and not isinstance(stagger, str):
        raise ScenarioError("control.stagger", "expected null, \"optimize\", \"reference\" or a schedule object")
    return _wrap("control", ControlPolicy, batch, stagger, iso, beta)


def build_config(doc: Mapping) -> ScenarioConfig:
    """Turn a resolved document into a :class:`ScenarioConfig`."""
    net = load_map(doc["map"]) if not hasattr(doc["map"], "locations") else doc["map"]
    p = doc["population"]
    shares = p["category_shares"]
    if not isinstance(shares, Mapping):
        raise ScenarioError("population.category_shares", "expected object")
    if p["total"] is not None and p["total"] < 0:
        raise ScenarioError("population.total", "must be a non-negative integer")
    counts = p["counts"]
    if counts is not None:
        counts = {h: {int(c): int(k) for c, k in per.items()} for h, per in counts.items()}
    pop = _wrap(
        "population", PopulationSpec,
        total=p["total"], homes=tuple(p["homes"]),
        category_shares={int(k): float(v) for k, v in shares.items()},
        counts=counts, itineraries=_itineraries(p["itineraries"]),
        class_task_fraction=p["class_task_fraction"], roster=p["roster"],
    )
    infection = _wrap("infection", InfectionParams, **doc["infection"])
    policy = _policy(doc["control"], infection.beta)
    timetable = _wrap("timetable", Timetable, **doc["timetable"])
    speed = _wrap("speed", SpeedModel, **doc["speed"])
    layouts = {}
    if not isinstance(doc["interiors"], Mapping):
        raise ScenarioError("interiors", "expected object keyed by location kind")
    for kind, spec in doc["interiors"].items():
        keys = {"room_capacity", "cols", "pitch", "room_gap"}
        if not isinstance(spec, Mapping) or set(spec) - keys:
            raise ScenarioError(f"interiors.{kind}", f"expected an object with keys {sorted(keys)}")
        layouts[kind] = _wrap(f"interiors.{kind}", InteriorLayout, **spec)
    s = doc["simulation"]
    opt = doc["stagger_optimizer"]
    for loc in set(pop.homes if pop.counts is None and pop.roster is None else ()):
        if loc not in net.locations:
            raise ScenarioError("population.homes", f"home {loc!r} is not a location on the map")
    return _wrap(
        "simulation", ScenarioConfig,
        network=net, population=pop, infection=infection, policy=policy,
        timetable=timetable, speed=speed, layouts=layouts,
        horizon_days=s["horizon_days"], initial_infected=s["initial_infected"],
        initial_placement=s["initial_placement"], replications=s["replications"],
        seed=s["seed"], dt=s["dt"], lane_pitch=s["lane_pitch"], heat_cell=s["heat_cell"],
        stagger_step=opt["step"], stagger_width_ref=opt["width_ref"],
        name=doc["name"], document=doc,
    )


def load_scenario(path_or_doc: str | Path | Mapping, overrides: Iterable[str] = ()) -> ScenarioConfig:
    """Read, override, resolve and build a scenario.

    ``path_or_doc`` may be a scenario file, a run manifest (its embedded
    scenario is used) or an already parsed document.
    """
    text = source = None
    base = None
    if isinstance(path_or_doc, Mapping):
        doc = dict(path_or_doc)
    else:
        path = Path(path_or_doc)
        if not path.exists():
            bundled = Path(__file__).parent / "data" / path.name
            if path.parent == Path(".") and bundled.exists():
                path = bundled
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError("", f"cannot read scenario {str(path)!r}: {exc.strerror}") from None
        source, base = str(path), path.parent
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError("", f"invalid JSON: {exc.msg}", exc.lineno, source) from None
    if isinstance(doc, Mapping) and "output_version" in doc and "scenario" in doc:
        doc = doc["scenario"]
        text = None
    overrides = list(overrides)
    if overrides:
        doc = apply_overrides(doc, overrides)
    return build_config(resolve(doc, base, text, source))
