"""Directed network model with capacities and load-dependent link delay."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import networkx as nx

from .errors import ConfigError, OutOfRangeError

Node = str
LinkKey = tuple[Node, Node]
Path = tuple[Node, ...]


@dataclass(frozen=True)
class DelayCurve:
    """Piecewise-linear map from link usage (kbps) to link delay (ms)."""

    usage_points: tuple[float, ...]
    delay_points: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "usage_points", tuple(float(u) for u in self.usage_points))
        object.__setattr__(self, "delay_points", tuple(float(d) for d in self.delay_points))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Iterable[float]]) -> "DelayCurve":
        pairs = [tuple(p) for p in pairs]
        if any(len(p) != 2 for p in pairs):
            raise ConfigError("delay curve entries must be [usage_kbps, delay_ms] pairs")
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @classmethod
    def constant(cls, delay_ms: float, max_usage: float) -> "DelayCurve":
        return cls((0.0, float(max_usage)), (float(delay_ms), float(delay_ms)))

    def pairs(self) -> list[list[float]]:
        return [[u, d] for u, d in zip(self.usage_points, self.delay_points)]

    def problems(self) -> list[str]:
        out = []
        u, d = self.usage_points, self.delay_points
        if len(u) != len(d):
            out.append(f"usage/delay point counts differ ({len(u)} vs {len(d)})")
            return out
        if len(u) < 2:
            out.append("delay curve needs at least two points")
            return out
        if u[0] != 0.0:
            out.append(f"first usage point must be 0, got {u[0]}")
        if any(b <= a for a, b in zip(u, u[1:])):
            out.append("usage points are not strictly ascending")
        if any(x < 0 for x in d):
            out.append("delay points must be non-negative")
        if any(b < a for a, b in zip(d, d[1:])):
            out.append("delay points decrease with usage")
        return out


@dataclass(frozen=True)
class Link:
    capacity: float  # kbps
    delay_curve: DelayCurve


@dataclass(frozen=True)
class Topology:
    nodes: frozenset[Node]
    links: Mapping[LinkKey, Link] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, spec: Mapping[str, Any]) -> "Topology":
        """Build from the scenario-file layout.

        ``{"nodes": [...], "links": [{"from", "to", "capacity_kbps", "delay_curve"}]}``
        """
        try:
            nodes = frozenset(str(n) for n in spec["nodes"])
            raw_links = spec.get("links", [])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"topology needs a 'nodes' list: {exc}") from None
        links: dict[LinkKey, Link] = {}
        for i, rec in enumerate(raw_links):
            name = f"link #{i} ({rec.get('from')}->{rec.get('to')})"
            for key in ("from", "to", "capacity_kbps", "delay_curve"):
                if key not in rec:
                    raise ConfigError(f"{name}: missing field '{key}'")
            key = (str(rec["from"]), str(rec["to"]))
            if key in links:
                raise ConfigError(f"{name}: duplicate link")
            links[key] = Link(float(rec["capacity_kbps"]), DelayCurve.from_pairs(rec["delay_curve"]))
        return cls(nodes, dict(sorted(links.items())))

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": sorted(self.nodes),
            "links": [
                {
                    "from": u,
                    "to": v,
                    "capacity_kbps": link.capacity,
                    "delay_curve": link.delay_curve.pairs(),
                }
                for (u, v), link in sorted(self.links.items())
            ],
        }

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(sorted(self.nodes))
        g.add_edges_from(sorted(self.links))
        return g


def two_node(capacity_kbps: float, delay_ms: float, src: Node = "S", dst: Node = "C") -> Topology:
    """Single directed bottleneck with a constant delay curve."""
    link = Link(float(capacity_kbps), DelayCurve.constant(delay_ms, capacity_kbps))
    return Topology(frozenset({src, dst}), {(src, dst): link})


def validate(topology: Topology) -> list[str]:
    """Return a list of human-readable invariant violations (empty if well-formed)."""
    report = []
    for (u, v), link in sorted(topology.links.items()):
        name = f"link {u}->{v}"
        if u == v:
            report.append(f"{name}: self-loop")
        for end in (u, v):
            if end not in topology.nodes:
                report.append(f"{name}: unknown node {end!r}")
        if not link.capacity > 0:
            report.append(f"{name}: capacity must be > 0, got {link.capacity}")
        for problem in link.delay_curve.problems():
            report.append(f"{name}: {problem}")
        usage = link.delay_curve.usage_points
        if usage and link.capacity > 0 and usage[-1] < link.capacity:
            report.append(f"{name}: delay curve ends at {usage[-1]} kbps, below capacity {link.capacity}")
    return report


def link_delay(curve: DelayCurve, usage: float) -> float:
    """Interpolate the delay (ms) of a link carrying ``usage`` kbps.

    Segments are left-closed, so a usage exactly on a knot returns that
    knot's delay.
    """
    u = curve.usage_points
    if not (u[0] <= usage <= u[-1]):
        raise OutOfRangeError(f"usage {usage} outside delay curve domain [{u[0]}, {u[-1]}]")
    i = bisect.bisect_right(u, usage) - 1
    if i >= len(u) - 1:
        return curve.delay_points[-1]
    lo, hi = u[i], u[i + 1]
    d_lo, d_hi = curve.delay_points[i], curve.delay_points[i + 1]
    if usage == lo:
        return d_lo
    return d_lo + (d_hi - d_lo) * (usage - lo) / (hi - lo)


def path_links(path: Path) -> tuple[LinkKey, ...]:
    return tuple(zip(path, path[1:]))


def candidate_paths(topology: Topology, src: Node, dst: Node, k: int = 4) -> list[Path]:
    """Up to ``k`` loop-free paths ordered by hop count, then node sequence."""
    if src == dst:
        raise ConfigError("source and destination must differ")
    for node in (src, dst):
        if node not in topology.nodes:
            raise ConfigError(f"unknown node {node!r}")
    if k < 1:
        return []
    g = topology.graph()
    found: list[Path] = []
    # iterative deepening keeps enumeration bounded once k paths are collected
    for hops in range(1, len(topology.nodes)):
        layer = sorted(
            tuple(p) for p in nx.all_simple_paths(g, src, dst, cutoff=hops) if len(p) == hops + 1
        )
        found.extend(layer)
        if len(found) >= k:
            break
    return found[:k]


def all_paths(topology: Topology, src: Node, dst: Node) -> list[Path]:
    """Every simple path, in the same order ``candidate_paths`` uses."""
    g = topology.graph()
    return sorted((tuple(p) for p in nx.all_simple_paths(g, src, dst)), key=lambda p: (len(p), p))
