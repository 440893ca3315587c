"""Problem and result types, the constraint evaluator and delay-segment encoding."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from ..errors import ConfigError, OutOfRangeError
from ..topology import DelayCurve, LinkKey, Node, Path, Topology, candidate_paths, link_delay, path_links
from ..utility import UtilityGrid

D_MAX = 100000.0


@dataclass(frozen=True)
class ApplicationFlow:
    """A unidirectional application demand with its utility grid."""

    id: str
    app_type: str
    src: Node
    dst: Node
    grid: UtilityGrid

    def __post_init__(self) -> None:
        if self.src == self.dst:
            raise ConfigError(f"application {self.id}: source equals destination")


@dataclass(frozen=True)
class AllocationProblem:
    topology: Topology
    apps: tuple[ApplicationFlow, ...]
    epsilon: float = 0.3
    k_paths: int = 4
    per_type_equal: bool = False
    d_max: float = D_MAX

    def __post_init__(self) -> None:
        object.__setattr__(self, "apps", tuple(sorted(self.apps, key=lambda a: a.id)))
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.k_paths < 1:
            raise ConfigError("k_paths must be >= 1")
        ids = [a.id for a in self.apps]
        if len(set(ids)) != len(ids):
            raise ConfigError("application ids must be unique")
        if self.per_type_equal:
            shapes: dict[str, tuple] = {}
            for a in self.apps:
                key = (a.grid.tp_levels, a.grid.d_levels)
                if shapes.setdefault(a.app_type, key) != key:
                    raise ConfigError(
                        f"per-type equal allocation needs one grid layout per type; {a.app_type} differs"
                    )

    def paths(self) -> dict[str, list[Path]]:
        cache: dict[tuple[Node, Node], list[Path]] = {}
        out = {}
        for a in self.apps:
            key = (a.src, a.dst)
            if key not in cache:
                cache[key] = candidate_paths(self.topology, a.src, a.dst, self.k_paths)
            out[a.id] = cache[key]
        return out


@dataclass(frozen=True)
class Choice:
    """Selected grid point and route for one application."""

    tp_index: int
    d_index: int
    path: Path


Assignment = Mapping[str, Choice]


@dataclass
class Evaluation:
    feasible: bool
    violations: list[str]
    link_usage: dict[LinkKey, float]
    link_delay: dict[LinkKey, float]
    app_delay: dict[str, float]
    throughput: dict[str, float]
    delay_budget: dict[str, float]
    utility: dict[str, float]


def network_state(
    topology: Topology, routes: Sequence[tuple[float, Path]], d_max: float = D_MAX
) -> tuple[dict[LinkKey, float], dict[LinkKey, float], list[float]]:
    """Link usage, link delay and per-route end-to-end delay for (rate, path) pairs.

    Usage sums are exactly rounded so the result does not depend on the
    order routes were assigned in. Links loaded beyond their delay curve
    report ``d_max``.
    """
    per_link: dict[LinkKey, list[float]] = {}
    for rate, path in routes:
        for key in path_links(path):
            per_link.setdefault(key, []).append(rate)
    usage = {key: math.fsum(v) for key, v in sorted(per_link.items())}
    delay = {}
    for key, link in topology.links.items():
        lu = usage.get(key, 0.0)
        try:
            delay[key] = link_delay(link.delay_curve, lu)
        except OutOfRangeError:
            delay[key] = d_max
    route_delay = [math.fsum(delay[k] for k in path_links(path)) for _, path in routes]
    return usage, delay, route_delay


def evaluate(problem: AllocationProblem, assignment: Assignment) -> Evaluation:
    """Check every allocation constraint for a concrete assignment.

    Infeasibility is reported as data: ``violations`` lists each broken
    constraint and ``feasible`` is true only when it is empty.
    """
    violations: list[str] = []
    routes: list[tuple[float, Path]] = []
    apps = problem.apps
    tp, budget, util = {}, {}, {}
    for app in apps:
        choice = assignment.get(app.id)
        if choice is None:
            violations.append(f"app {app.id}: no assignment")
            routes.append((0.0, (app.src,)))
            continue
        n_tp, n_d = app.grid.shape
        if not (0 <= choice.tp_index < n_tp and 0 <= choice.d_index < n_d):
            violations.append(f"app {app.id}: grid index out of range")
            routes.append((0.0, (app.src,)))
            continue
        path = tuple(choice.path)
        if len(path) < 2 or path[0] != app.src or path[-1] != app.dst:
            violations.append(f"app {app.id}: path does not connect {app.src} to {app.dst}")
        elif len(set(path)) != len(path):
            violations.append(f"app {app.id}: path has a loop")
        elif any(k not in problem.topology.links for k in path_links(path)):
            violations.append(f"app {app.id}: path uses a missing link")
        tp[app.id] = app.grid.tp_levels[choice.tp_index]
        budget[app.id] = app.grid.d_levels[choice.d_index]
        util[app.id] = app.grid.values[choice.tp_index][choice.d_index]
        routes.append((tp[app.id], path))

    if violations:
        return Evaluation(False, violations, {}, {}, {}, tp, budget, util)

    if problem.per_type_equal:
        seen: dict[str, tuple[int, int, str]] = {}
        for app in apps:
            c = assignment[app.id]
            first = seen.setdefault(app.app_type, (c.tp_index, c.d_index, app.id))
            if first[:2] != (c.tp_index, c.d_index):
                violations.append(f"type {app.app_type}: {app.id} differs from {first[2]}")

    usage, delay, route_delay = network_state(problem.topology, routes, problem.d_max)
    for key, lu in usage.items():
        cap = problem.topology.links[key].capacity
        if lu > cap:
            violations.append(f"capacity: link {key[0]}->{key[1]} carries {lu} > {cap} kbps")
    app_delay = {}
    for app, ad in zip(apps, route_delay):
        app_delay[app.id] = ad
        if ad > budget[app.id]:
            violations.append(f"delay: app {app.id} sees {ad} ms > budget {budget[app.id]} ms")
    return Evaluation(not violations, violations, usage, delay, app_delay, tp, budget, util)


@dataclass(frozen=True)
class SegmentEncoding:
    """One-hot segment selector and in-segment scale for a usage on a delay curve."""

    selector: tuple[int, ...]
    scale: tuple[float, ...]
    usage: float
    delay: float


def encode_delay_segments(curve: DelayCurve, usage: float) -> SegmentEncoding:
    """Express ``usage`` as a selected segment plus a linear scale in [0, 1].

    Exactly one selector is set; usage on an interior knot starts the next
    segment with scale 0, the final knot ends the last segment with scale 1.
    """
    u, d = curve.usage_points, curve.delay_points
    if not (u[0] <= usage <= u[-1]):
        raise OutOfRangeError(f"usage {usage} outside delay curve domain [{u[0]}, {u[-1]}]")
    n_seg = len(u) - 1
    p = min(bisect.bisect_right(u, usage) - 1, n_seg - 1)
    s = (usage - u[p]) / (u[p + 1] - u[p])
    selector = tuple(1 if i == p else 0 for i in range(n_seg))
    scale = tuple(s if i == p else 0.0 for i in range(n_seg))
    rec_usage = sum(selector[i] * u[i] + (u[i + 1] - u[i]) * scale[i] for i in range(n_seg))
    rec_delay = sum(selector[i] * d[i] + (d[i + 1] - d[i]) * scale[i] for i in range(n_seg))
    return SegmentEncoding(selector, scale, rec_usage, rec_delay)


@dataclass
class SolverStats:
    mode: str
    nodes: int = 0
    wall_time: float = 0.0
    optimal: bool | None = True  # None: not proven either way


@dataclass
class AllocationResult:
    assignment: dict[str, Choice]
    uv_min1: float | None
    uv_min2: float | None
    utility_sum: float
    link_usage: dict[LinkKey, float]
    link_delay: dict[LinkKey, float]
    app_delay: dict[str, float]
    throughput: dict[str, float]
    delay_budget: dict[str, float]
    utility: dict[str, float]
    app_types: dict[str, str] = field(default_factory=dict)
    stats: SolverStats = field(default_factory=lambda: SolverStats("exact"))

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        stats: dict[str, Any] = {
            "mode": self.stats.mode,
            "nodes": self.stats.nodes,
            "optimal": "unknown" if self.stats.optimal is None else self.stats.optimal,
        }
        if include_timing:
            stats["wall_time_s"] = self.stats.wall_time
        return {
            "objectives": {
                "uv_min1": self.uv_min1,
                "uv_min2": self.uv_min2,
                "utility_sum": self.utility_sum,
            },
            "apps": [
                {
                    "id": app_id,
                    "type": self.app_types.get(app_id, ""),
                    "tp_kbps": self.throughput[app_id],
                    "d_ms": self.delay_budget[app_id],
                    "tp_index": c.tp_index,
                    "d_index": c.d_index,
                    "path": list(c.path),
                    "utility": self.utility[app_id],
                    "e2e_delay_ms": self.app_delay[app_id],
                }
                for app_id, c in sorted(self.assignment.items())
            ],
            "links": [
                {
                    "from": u,
                    "to": v,
                    "usage_kbps": self.link_usage.get((u, v), 0.0),
                    "delay_ms": self.link_delay[(u, v)],
                }
                for (u, v) in sorted(self.link_delay)
            ],
            "solver": stats,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AllocationResult":
        apps = data["apps"]
        obj = data["objectives"]
        solver = data.get("solver", {})
        optimal = solver.get("optimal", True)
        return cls(
            assignment={a["id"]: Choice(a["tp_index"], a["d_index"], tuple(a["path"])) for a in apps},
            uv_min1=obj["uv_min1"],
            uv_min2=obj["uv_min2"],
            utility_sum=obj["utility_sum"],
            link_usage={(l["from"], l["to"]): l["usage_kbps"] for l in data["links"] if l["usage_kbps"]},
            link_delay={(l["from"], l["to"]): l["delay_ms"] for l in data["links"]},
            app_delay={a["id"]: a["e2e_delay_ms"] for a in apps},
            throughput={a["id"]: a["tp_kbps"] for a in apps},
            delay_budget={a["id"]: a["d_ms"] for a in apps},
            utility={a["id"]: a["utility"] for a in apps},
            app_types={a["id"]: a["type"] for a in apps},
            stats=SolverStats(
                solver.get("mode", "exact"),
                solver.get("nodes", 0),
                solver.get("wall_time_s", 0.0),
                None if optimal == "unknown" else bool(optimal),
            ),
        )


def result_from_assignment(
    problem: AllocationProblem,
    assignment: Mapping[str, Choice],
    uv_min1: float | None,
    stats: SolverStats,
) -> AllocationResult:
    ev = evaluate(problem, assignment)
    if not ev.feasible:
        raise AssertionError(f"solver produced an infeasible assignment: {ev.violations}")
    utils = [ev.utility[a.id] for a in problem.apps]
    return AllocationResult(
        assignment=dict(sorted(assignment.items())),
        uv_min1=uv_min1,
        uv_min2=min(utils) if utils else None,
        utility_sum=math.fsum(utils),
        link_usage=ev.link_usage,
        link_delay=ev.link_delay,
        app_delay=ev.app_delay,
        throughput=ev.throughput,
        delay_budget=ev.delay_budget,
        utility=ev.utility,
        app_types={a.id: a.app_type for a in problem.apps},
        stats=stats,
    )
