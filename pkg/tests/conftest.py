import numpy as np
import pytest

from campusepi.graph import load_map
from campusepi.scenario import load_scenario


def line_map(length=100.0, width=2.0):
    """Two locations joined by one straight road."""
    return load_map({
        "nodes": [{"id": "a", "x": 0.0, "y": 0.0}, {"id": "b", "x": length, "y": 0.0}],
        "edges": [{"a": "a", "b": "b", "width_m": width}],
        "locations": {
            "home": {"node": "a", "capacity": 1000, "kind": "dormitory"},
            "work": {"node": "b", "capacity": 1000, "kind": "classroom"},
        },
    })


def toy_three_origin_map():
    """Three homes whose routes merge on a shared trunk towards one building."""
    return load_map({
        "nodes": [
            {"id": "h1", "x": 0.0, "y": 0.0},
            {"id": "h2", "x": 40.0, "y": 0.0},
            {"id": "h3", "x": 80.0, "y": 0.0},
            {"id": "j", "x": 40.0, "y": 30.0},
            {"id": "k", "x": 40.0, "y": 90.0},
            {"id": "c", "x": 40.0, "y": 150.0},
        ],
        "edges": [
            {"a": "h1", "b": "j", "width_m": 4.0},
            {"a": "h2", "b": "j", "width_m": 4.0},
            {"a": "h3", "b": "j", "width_m": 4.0},
            {"a": "j", "b": "k", "width_m": 6.0},
            {"a": "k", "b": "c", "width_m": 6.0},
        ],
        "locations": {
            "dormitory_1": {"node": "h1", "capacity": 100},
            "dormitory_2": {"node": "h2", "capacity": 100},
            "dormitory_3": {"node": "h3", "capacity": 100},
            "teaching_building": {"node": "c", "capacity": 300},
        },
    })


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_campus():
    """Bundled campus shrunk to a few hundred agents and a short horizon."""
    return load_scenario("campus.json", [
        "population.total=200", "simulation.horizon_days=4", "simulation.replications=2",
    ])
