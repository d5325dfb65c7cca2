"""Campus road network, per-origin path trees and crowd passage windows.

The network is an undirected graph whose nodes are road ends and
intersections. Each functional area (dormitory building, teaching building,
restaurant, ...) is attached to exactly one node, its entrance.

For one origin the union of shortest routes to every destination forms a
multi-branch tree rooted at the origin. Tree nodes carry the distance from
the root, which gives the window in which a crowd departing together can
reach the node::

    t_start = offset + L / v_max
    t_end   = offset + L / v_min
"""

from __future__ import annotations

import heapq
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

__all__ = [
    "Edge",
    "Location",
    "MapError",
    "PassageWindow",
    "PathTree",
    "RoadNetwork",
    "RoadNode",
    "build_path_tree",
    "load_map",
    "node_weight_fraction",
    "passage_window",
    "path_length",
    "shortest_path",
]

# tolerance when comparing summed path lengths
_LENGTH_EPS = 1e-9


class MapError(ValueError):
    """Malformed or inconsistent map description."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.detail = message
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass(frozen=True)
class Edge:
    a: str
    b: str
    length: float
    width: float


@dataclass(frozen=True)
class Location:
    name: str
    node: str
    capacity: int
    kind: str


def _infer_kind(name: str) -> str:
    stem = re.sub(r"[_\-\s]*\d+$", "", name.lower())
    return stem or name.lower()


@dataclass(frozen=True)
class RoadNetwork:
    """Undirected road graph with named functional areas.

    ``nodes`` maps node id to ``(x, y)`` in meters. Instances are immutable
    and may be shared between replications.
    """

    nodes: Mapping[str, tuple[float, float]]
    edges: tuple[Edge, ...]
    locations: Mapping[str, Location] = field(default_factory=dict)
    _adj: dict = field(init=False, repr=False, compare=False)
    _edge_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        adj: dict[str, list[tuple[str, float]]] = {n: [] for n in self.nodes}
        index: dict[tuple[str, str], int] = {}
        for k, e in enumerate(self.edges):
            if e.a not in self.nodes or e.b not in self.nodes:
                raise MapError(f"edge {e.a}-{e.b} references an unknown node")
            if e.a == e.b:
                raise MapError(f"edge {e.a}-{e.b} is a self loop")
            if not (e.length > 0 and e.width > 0):
                raise MapError(f"edge {e.a}-{e.b} must have positive length and width")
            if (e.a, e.b) in index:
                raise MapError(f"duplicate edge {e.a}-{e.b}")
            adj[e.a].append((e.b, e.length))
            adj[e.b].append((e.a, e.length))
            index[(e.a, e.b)] = k
            index[(e.b, e.a)] = k
        for nbrs in adj.values():
            nbrs.sort()
        object.__setattr__(self, "_adj", adj)
        object.__setattr__(self, "_edge_index", index)
        for loc in self.locations.values():
            if loc.node not in self.nodes:
                raise MapError(f"location {loc.name!r} references unknown node {loc.node!r}")

    def neighbors(self, node: str) -> list[tuple[str, float]]:
        return self._adj[node]

    def edge_between(self, a: str, b: str) -> Edge:
        return self.edges[self._edge_index[(a, b)]]

    def edge_id(self, a: str, b: str) -> int:
        return self._edge_index[(a, b)]

    def location_node(self, name: str) -> str:
        try:
            return self.locations[name].node
        except KeyError:
            raise KeyError(f"location {name!r} is not on the map") from None

    def locations_of_kind(self, kind: str) -> list[str]:
        return sorted(n for n, loc in self.locations.items() if loc.kind == kind)

    def check_connected(self) -> None:
        """Raise MapError unless every named location is mutually reachable."""
        if not self.locations:
            return
        start = self.location_node(sorted(self.locations)[0])
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v, _ in self._adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        missing = sorted(n for n, loc in self.locations.items() if loc.node not in seen)
        if missing:
            raise MapError(f"locations not connected to the rest of the map: {missing}")

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n, "x": xy[0], "y": xy[1]} for n, xy in self.nodes.items()],
            "edges": [
                {"a": e.a, "b": e.b, "length_m": e.length, "width_m": e.width}
                for e in self.edges
            ],
            "locations": {
                name: {"node": loc.node, "capacity": loc.capacity, "kind": loc.kind}
                for name, loc in self.locations.items()
            },
        }


def _line_of(text: str | None, *needles: str) -> int | None:
    """Best-effort 1-based line number of the first line containing all needles."""
    if not text:
        return None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if all(n in line for n in needles):
            return lineno
    # fall back to the first needle alone
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needles and needles[0] in line:
            return lineno
    return None


def _network_from_dict(data: Mapping, text: str | None = None, source: str | None = None) -> RoadNetwork:
    def fail(msg: str, *needles: str) -> MapError:
        return MapError(msg, _line_of(text, *needles) if needles else None, source)

    if not isinstance(data, Mapping):
        raise fail("map file must contain a JSON object")
    unknown = set(data) - {"nodes", "edges", "locations", "name", "description"}
    if unknown:
        key = sorted(unknown)[0]
        raise fail(f"unknown top-level key {key!r}", f'"{key}"')
    for key in ("nodes", "edges"):
        if key not in data:
            raise fail(f"missing required key {key!r}")

    nodes: dict[str, tuple[float, float]] = {}
    for k, item in enumerate(data["nodes"]):
        try:
            nid = str(item["id"])
            x, y = float(item["x"]), float(item["y"])
        except (KeyError, TypeError, ValueError):
            raise fail(f"nodes[{k}] needs numeric 'id', 'x', 'y'", '"nodes"') from None
        if nid in nodes:
            raise fail(f"duplicate node id {nid!r}", f'"{nid}"')
        if not (math.isfinite(x) and math.isfinite(y)):
            raise fail(f"node {nid!r} has non-finite coordinates", f'"{nid}"')
        nodes[nid] = (x, y)

    edges = []
    for k, item in enumerate(data["edges"]):
        try:
            a, b = str(item["a"]), str(item["b"])
        except (KeyError, TypeError):
            raise fail(f"edges[{k}] needs 'a' and 'b'", '"edges"') from None
        anchor = (f'"{a}"', f'"{b}"')
        for end in (a, b):
            if end not in nodes:
                raise fail(f"edges[{k}] references unknown node {end!r}", *anchor)
        extra = set(item) - {"a", "b", "length_m", "width_m"}
        if extra:
            raise fail(f"edges[{k}] has unknown key {sorted(extra)[0]!r}", *anchor)
        if "width_m" not in item:
            raise fail(f"edges[{k}] ({a}-{b}) is missing 'width_m'", *anchor)
        width = float(item["width_m"])
        if "length_m" in item and item["length_m"] is not None:
            length = float(item["length_m"])
        else:
            (xa, ya), (xb, yb) = nodes[a], nodes[b]
            length = math.hypot(xb - xa, yb - ya)
        if not (length > 0 and math.isfinite(length)):
            raise fail(f"edges[{k}] ({a}-{b}) length must be positive, got {length}", *anchor)
        if not (width > 0 and math.isfinite(width)):
            raise fail(f"edges[{k}] ({a}-{b}) width must be positive, got {width}", *anchor)
        edges.append(Edge(a, b, length, width))

    locations: dict[str, Location] = {}
    for name, item in (data.get("locations") or {}).items():
        if isinstance(item, str):
            item = {"node": item, "capacity": 0}
        node = str(item.get("node"))
        if node not in nodes:
            raise fail(f"location {name!r} references unknown node {node!r}", f'"{name}"')
        capacity = int(item.get("capacity", 0))
        if capacity < 0:
            raise fail(f"location {name!r} has negative capacity", f'"{name}"')
        kind = str(item.get("kind") or _infer_kind(name))
        locations[name] = Location(name, node, capacity, kind)

    try:
        net = RoadNetwork(nodes, tuple(edges), locations)
    except MapError as exc:
        raise MapError(exc.detail, exc.line, source) from None
    try:
        net.check_connected()
    except MapError as exc:
        raise MapError(exc.detail, exc.line, source) from None
    return net


def load_map(path_or_data: str | Path | Mapping) -> RoadNetwork:
    """Load and validate a map from a JSON file path or an already parsed dict."""
    if isinstance(path_or_data, Mapping):
        return _network_from_dict(path_or_data)
    path = Path(path_or_data)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MapError(f"invalid JSON: {exc.msg}", exc.lineno, str(path)) from None
    return _network_from_dict(data, text, str(path))


def _shortest_tree(net: RoadNetwork, source: str) -> tuple[dict[str, float], dict[str, tuple[str, ...]]]:
    """Dijkstra from ``source`` keeping the lexicographically smallest of equal-length paths."""
    if source not in net.nodes:
        raise KeyError(f"unknown node {source!r}")
    dist = {source: 0.0}
    best = {source: (source,)}
    heap = [(0.0, (source,))]
    done = set()
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        for v, w in net.neighbors(u):
            if v in done:
                continue
            nd = d + w
            cand = path + (v,)
            old = dist.get(v)
            if old is None or nd < old - _LENGTH_EPS or (abs(nd - old) <= _LENGTH_EPS and cand < best[v]):
                dist[v] = nd
                best[v] = cand
                heapq.heappush(heap, (nd, cand))
    return dist, best


def shortest_path(net: RoadNetwork, source: str, target: str) -> list[str]:
    """Minimal-length route from ``source`` to ``target`` as a node list.

    Among equal-length routes the lexicographically smallest node sequence
    wins, so results are reproducible.
    """
    if target not in net.nodes:
        raise KeyError(f"unknown node {target!r}")
    _, best = _shortest_tree(net, source)
    if target not in best:
        raise ValueError(f"node {target!r} is unreachable from {source!r}")
    return list(best[target])


def path_length(net: RoadNetwork, path: Iterable[str]) -> float:
    path = list(path)
    return sum(net.edge_between(a, b).length for a, b in zip(path, path[1:]))


@dataclass(frozen=True)
class PassageWindow:
    t_start: float
    t_end: float

    @property
    def delta(self) -> float:
        return self.t_end - self.t_start


@dataclass
class RoadNode:
    """A road node seen from one path tree (Table-3 style attributes)."""

    id: str
    parent: str | None
    children: list[str]
    length_to_parent: float
    cumulative_length: float
    width: float
    # fraction of the origin's population routed through this node
    share: float = 0.0
    # (t_start, t_end, fraction of total population) entries
    weight: list[tuple[float, float, float]] = field(default_factory=list)


@dataclass
class PathTree:
    root: str
    nodes: dict[str, RoadNode]
    leaves: frozenset[str]
    # origin population as a fraction of the whole population
    origin_fraction: float = 1.0

    def path_to(self, node: str) -> list[str]:
        out = [node]
        while self.nodes[out[-1]].parent is not None:
            out.append(self.nodes[out[-1]].parent)
        return out[::-1]

    def refresh_weights(self, v_min: float, v_max: float, offset: float = 0.0) -> None:
        """Recompute the cached weight list of every node."""
        for nid, rn in self.nodes.items():
            w = passage_window(self, nid, v_min, v_max, offset)
            rn.weight = [(w.t_start, w.t_end, rn.share * self.origin_fraction)]


def build_path_tree(
    net: RoadNetwork,
    origin: str,
    destinations: Iterable[str] | Mapping[str, float],
    origin_fraction: float = 1.0,
) -> PathTree:
    """Union of the shortest routes from ``origin`` to each destination.

    ``destinations`` may map each destination node to the share of the
    origin's population heading there; a plain collection splits evenly.
    """
    if isinstance(destinations, Mapping):
        demand = {str(k): float(v) for k, v in destinations.items()}
    else:
        dests = list(dict.fromkeys(destinations))
        demand = {d: 1.0 / len(dests) for d in dests} if dests else {}
    dist, best = _shortest_tree(net, origin)
    nodes: dict[str, RoadNode] = {
        origin: RoadNode(origin, None, [], 0.0, 0.0, 0.0)
    }
    for dest in sorted(demand):
        if dest not in net.nodes:
            raise KeyError(f"unknown node {dest!r}")
        if dest not in best:
            raise ValueError(f"destination {dest!r} is unreachable from {origin!r}")
        path = best[dest]
        nodes[origin].share += demand[dest]
        for parent, child in zip(path, path[1:]):
            if child not in nodes:
                e = net.edge_between(parent, child)
                nodes[child] = RoadNode(
                    child,
                    parent,
                    [],
                    e.length,
                    nodes[parent].cumulative_length + e.length,
                    e.width,
                )
                nodes[parent].children.append(child)
            elif nodes[child].parent != parent:
                raise AssertionError("shortest routes do not form a tree")
            nodes[child].share += demand[dest]
    for rn in nodes.values():
        rn.children.sort()
    return PathTree(origin, nodes, frozenset(demand), origin_fraction)


def passage_window(
    tree: PathTree,
    node: str,
    v_min: float,
    v_max: float,
    departure_offset: float = 0.0,
) -> PassageWindow:
    """Earliest and latest arrival of a crowd at ``node`` after a common departure."""
    if not (v_min > 0 and v_max > 0):
        raise ValueError("speeds must be positive")
    if v_max < v_min:
        raise ValueError("v_max must be >= v_min")
    length = tree.nodes[node].cumulative_length
    return PassageWindow(departure_offset + length / v_max, departure_offset + length / v_min)


def node_weight_fraction(
    tree: PathTree,
    node: str,
    window: tuple[float, float],
    v_min: float,
    v_max: float,
    departure_offset: float = 0.0,
) -> float:
    """Fraction of the origin's population reaching ``node`` inside ``window``.

    Arrivals are spread uniformly over the node's passage window.
    """
    t0, t1 = window
    if not t0 < t1:
        raise ValueError("window must satisfy t0 < t1")
    rn = tree.nodes.get(node)
    if rn is None or rn.share == 0.0:
        return 0.0
    pw = passage_window(tree, node, v_min, v_max, departure_offset)
    if pw.delta == 0.0:
        return rn.share if t0 <= pw.t_start <= t1 else 0.0
    overlap = min(t1, pw.t_end) - max(t0, pw.t_start)
    if overlap <= 0.0:
        return 0.0
    return rn.share * overlap / pw.delta
