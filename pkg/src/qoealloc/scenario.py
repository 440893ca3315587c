"""Scenario files, experiment orchestration and report output.

A scenario is one JSON document describing the network, the application
mix, solver settings, the packet-simulation template and an optional sweep
over the total number of applications.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .allocation import (
    AllocationProblem,
    AllocationResult,
    ApplicationFlow,
    brute_force_oracle,
    solve,
    solve_heuristic,
)
from .errors import ConfigError, DataIOError, GridLoadError, InfeasibleError, OracleBudgetError, ScenarioError
from .metrics import UtilitySample, f_index, percentile_summary
from .sim import SimConfig, SimMetrics, SourceSpec, allocation_to_sim, run
from .sim.mapping import VOIP_OFFERED_KBPS, VOIP_PKT_BYTES
from .topology import Topology, validate
from .utility import CLASSES, UtilityGrid, builtin_grid, class_model, load_grid, u_voip

MODES = ("exact", "heuristic", "oracle")
WEB_CONNECTIONS = 6
PERCENTILE = 10.0
ENV_OUT_DIR = "QOEALLOC_OUT_DIR"

SOLVER_DEFAULTS = {"epsilon": 0.3, "k_paths": 4, "per_type_equal": False, "mode": "exact"}
SIM_DEFAULTS = {
    "bottleneck": None,
    "buffer_bytes": 1_000_000,
    "base_delay_ms": None,
    "duration_s": 60.0,
    "warmup_s": 2.0,
    "window_s": 5.0,
    "best_effort": True,
}


@dataclass(frozen=True)
class AppMix:
    app_type: str
    count: int
    src: str
    dst: str
    grid_ref: str
    grid: UtilityGrid = field(compare=False, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.app_type, "count": self.count, "src": self.src, "dst": self.dst, "grid": self.grid_ref}


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    topology: Topology
    mix: tuple[AppMix, ...]
    solver: Mapping[str, Any]
    sim: Mapping[str, Any]
    sweep_totals: tuple[int, ...] = ()
    sweep_ratios: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "name": self.name,
            "seed": self.seed,
            "topology": self.topology.to_dict(),
            "applications": [m.to_dict() for m in self.mix],
            "solver": dict(self.solver),
            "sim": {**self.sim, "bottleneck": list(self.sim["bottleneck"])},
        }
        if self.sweep_totals:
            out["sweep"] = {"totals": list(self.sweep_totals), "ratios": dict(self.sweep_ratios)}
        return out

    @property
    def bottleneck(self) -> tuple[str, str]:
        return tuple(self.sim["bottleneck"])

    def with_seed(self, seed: int) -> "Scenario":
        return Scenario(self.name, seed, self.topology, self.mix, self.solver, self.sim,
                        self.sweep_totals, self.sweep_ratios)

    def base_point(self) -> "ScenarioPoint":
        return ScenarioPoint("base", sum(m.count for m in self.mix), {m.app_type: m.count for m in self.mix})

    def points(self) -> list["ScenarioPoint"]:
        """Expand the sweep; without one the scenario is a single point."""
        if not self.sweep_totals:
            return [self.base_point()]
        return [ScenarioPoint(f"A{t:03d}", t, split_total(t, self.sweep_ratios)) for t in self.sweep_totals]

    def sim_template(self) -> SimConfig:
        link = self.topology.links[self.bottleneck]
        return SimConfig(
            bottleneck_capacity=link.capacity,
            base_delay=self.sim["base_delay_ms"],
            duration=self.sim["duration_s"],
            warmup=self.sim["warmup_s"],
            buffer_size=self.sim["buffer_bytes"],
            rng_seed=self.seed,
        )

    def problem(self, point: "ScenarioPoint") -> AllocationProblem:
        apps = []
        for m in self.mix:
            for i in range(point.counts.get(m.app_type, 0)):
                apps.append(ApplicationFlow(f"{m.app_type}-{i:03d}", m.app_type, m.src, m.dst, m.grid))
        return AllocationProblem(
            self.topology,
            tuple(apps),
            epsilon=self.solver["epsilon"],
            k_paths=self.solver["k_paths"],
            per_type_equal=self.solver["per_type_equal"],
        )


@dataclass(frozen=True)
class ScenarioPoint:
    id: str
    total: int
    counts: Mapping[str, int]


def split_total(total: int, ratios: Mapping[str, float]) -> dict[str, int]:
    """Split ``total`` by ``ratios``: floor shares, leftovers to the largest remainders."""
    weight = math.fsum(ratios.values())
    exact = {t: total * r / weight for t, r in ratios.items()}
    counts = {t: math.floor(x) for t, x in exact.items()}
    left = total - sum(counts.values())
    order = sorted(ratios, key=lambda t: (-(exact[t] - counts[t]), list(ratios).index(t)))
    for t in order[:left]:
        counts[t] += 1
    return counts


# --- loading ---------------------------------------------------------------

def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataIOError(f"{path}: cannot read scenario: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data, base_dir=path.parent, source=str(path))


def scenario_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".", source: str = "scenario") -> Scenario:
    if not isinstance(data, Mapping):
        raise ScenarioError(f"{source}: top level must be an object")
    try:
        topology = Topology.from_dict(data["topology"])
    except KeyError:
        raise ScenarioError(f"{source}: missing 'topology'") from None
    except (ConfigError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{source}: topology: {exc}") from None
    problems = validate(topology)
    if problems:
        raise ScenarioError(f"{source}: topology: {problems[0]}")

    mix = []
    for i, rec in enumerate(data.get("applications", [])):
        where = f"{source}: applications[{i}]"
        for key in ("type", "src", "dst"):
            if key not in rec:
                raise ScenarioError(f"{where}: missing field '{key}'")
        app_type = str(rec["type"])
        count = rec.get("count", 1)
        if not isinstance(count, int) or count < 0:
            raise ScenarioError(f"{where}: count must be a non-negative integer")
        for end in ("src", "dst"):
            if rec[end] not in topology.nodes:
                raise ScenarioError(f"{where}: unknown node {rec[end]!r}")
        if rec["src"] == rec["dst"]:
            raise ScenarioError(f"{where}: src equals dst")
        ref = str(rec.get("grid", f"builtin:{app_type}"))
        mix.append(AppMix(app_type, count, str(rec["src"]), str(rec["dst"]), ref, _resolve_grid(ref, base_dir, where)))
    types = [m.app_type for m in mix]
    if len(set(types)) != len(types):
        raise ScenarioError(f"{source}: each application type may appear only once")

    solver = {**SOLVER_DEFAULTS, **data.get("solver", {})}
    unknown = set(solver) - set(SOLVER_DEFAULTS)
    if unknown:
        raise ScenarioError(f"{source}: unknown solver option(s) {sorted(unknown)}")
    if solver["mode"] not in MODES:
        raise ScenarioError(f"{source}: solver mode must be one of {MODES}")
    if not solver["epsilon"] >= 0 or not (isinstance(solver["k_paths"], int) and solver["k_paths"] >= 1):
        raise ScenarioError(f"{source}: need epsilon >= 0 and integer k_paths >= 1")

    sim = {**SIM_DEFAULTS, **data.get("sim", {})}
    unknown = set(sim) - set(SIM_DEFAULTS)
    if unknown:
        raise ScenarioError(f"{source}: unknown sim option(s) {sorted(unknown)}")
    if sim["bottleneck"] is None:
        if len(topology.links) != 1:
            raise ScenarioError(f"{source}: sim.bottleneck is required when the topology has several links")
        sim["bottleneck"] = list(next(iter(topology.links)))
    bottleneck = tuple(sim["bottleneck"])
    if bottleneck not in topology.links:
        raise ScenarioError(f"{source}: sim bottleneck {bottleneck} is not a topology link")
    sim["bottleneck"] = list(bottleneck)
    if sim["base_delay_ms"] is None:
        sim["base_delay_ms"] = topology.links[bottleneck].delay_curve.delay_points[0]
    if not sim["window_s"] > 0:
        raise ScenarioError(f"{source}: sim.window_s must be > 0")

    totals: tuple[int, ...] = ()
    ratios: dict[str, float] = {}
    if "sweep" in data:
        sweep = data["sweep"]
        totals = tuple(sweep.get("totals", ()))
        if any(not isinstance(t, int) or t < 0 for t in totals):
            raise ScenarioError(f"{source}: sweep totals must be non-negative integers")
        if any(b <= a for a, b in zip(totals, totals[1:])):
            raise ScenarioError(f"{source}: sweep totals must be ascending")
        ratios = {str(k): float(v) for k, v in sweep.get("ratios", {m.app_type: m.count for m in mix}).items()}
        missing = set(ratios) - set(types)
        if missing:
            raise ScenarioError(f"{source}: sweep ratio for type(s) {sorted(missing)} without an application entry")
        if any(r < 0 for r in ratios.values()) or not math.fsum(ratios.values()) > 0:
            raise ScenarioError(f"{source}: sweep ratios must be non-negative and not all zero")

    scenario = Scenario(
        name=str(data.get("name", Path(source).stem)),
        seed=int(data.get("seed", 0)),
        topology=topology,
        mix=tuple(mix),
        solver=solver,
        sim=sim,
        sweep_totals=totals,
        sweep_ratios=ratios,
    )
    try:
        scenario.sim_template().validate()
    except ConfigError as exc:
        raise ScenarioError(f"{source}: sim: {exc}") from None
    return scenario


def _resolve_grid(ref: str, base_dir: str | Path, where: str) -> UtilityGrid:
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in CLASSES:
            raise ScenarioError(f"{where}: unknown builtin grid {name!r}")
        return _builtin(name)
    path = Path(base_dir) / ref
    try:
        return load_grid(path)
    except (OSError, GridLoadError) as exc:
        raise ScenarioError(f"{where}: cannot resolve grid {ref!r}: {exc}") from None


_BUILTIN_CACHE: dict[str, UtilityGrid] = {}


def _builtin(name: str) -> UtilityGrid:
    if name not in _BUILTIN_CACHE:
        _BUILTIN_CACHE[name] = builtin_grid(name)
    return _BUILTIN_CACHE[name]


# --- running ---------------------------------------------------------------

def solve_problem(problem: AllocationProblem, mode: str) -> AllocationResult:
    if mode == "heuristic":
        return solve_heuristic(problem)
    if mode == "oracle":
        return brute_force_oracle(problem)
    return solve(problem)


def best_effort_config(problem: AllocationProblem, template: SimConfig) -> SimConfig:
    """Unmanaged baseline: window-controlled senders plus native voice streams."""
    sources = []
    for app in problem.apps:
        if app.app_type == "VoIP":
            sources.append(SourceSpec(app.id, "cbr", rate=VOIP_OFFERED_KBPS, pkt_len=VOIP_PKT_BYTES, app_id=app.id))
        elif app.app_type == "WEB":
            sources.extend(SourceSpec(f"{app.id}/{k}", "aimd", app_id=app.id) for k in range(WEB_CONNECTIONS))
        else:
            sources.append(SourceSpec(app.id, "aimd", app_id=app.id))
    return SimConfig(**{**template.__dict__, "sources": tuple(sources)})


def simulated_utilities(
    metrics: SimMetrics,
    app_types: Mapping[str, str],
    window: float,
    allocated_tp: Mapping[str, float] | None = None,
) -> list[UtilitySample]:
    """Feed per-window throughput and mean one-way delay of each app through its class model.

    Video classes use ``allocated_tp`` when given, since players are not
    simulated. Voice uses the measured loss fraction.
    """
    by_app: dict[str, list] = {}
    for f in metrics.flows.values():
        by_app.setdefault(f.app_id or f.flow_id, []).append(f)
    lo, hi = metrics.window
    n_win = int(math.floor((hi - lo) / window + 1e-9))
    samples = []
    for app_id in sorted(by_app):
        flows = by_app[app_id]
        app_type = app_types[app_id]
        model = class_model(app_type)
        sent = sum(f.sent for f in flows)
        loss = sum(f.dropped for f in flows) / sent if sent else 0.0
        bytes_in = [0] * n_win
        delay_sum = [0.0] * n_win
        count = [0] * n_win
        for f in flows:
            for t, d in zip(f.send_times, f.delays):
                k = int((t - lo) // window)
                if 0 <= k < n_win:
                    bytes_in[k] += f.pkt_bytes
                    delay_sum[k] += d
                    count[k] += 1
        for k in range(n_win):
            if count[k] == 0:
                value = 1.0
            else:
                tp = bytes_in[k] * 8 / window / 1000.0
                d = delay_sum[k] / count[k]
                if app_type == "VoIP":
                    value = u_voip(loss, d)
                elif app_type in ("VoD", "Live") and allocated_tp is not None:
                    value = model(allocated_tp[app_id], d)
                else:
                    value = model(tp, d)
            samples.append(UtilitySample(app_id, app_type, min(5.0, max(1.0, value)), "simulated"))
    return samples


@dataclass
class PointReport:
    id: str
    total: int
    counts: dict[str, int]
    status: str = "ok"  # ok | infeasible | failed
    reason: str | None = None
    allocation: AllocationResult | None = None
    managed: SimMetrics | None = None
    best_effort: SimMetrics | None = None
    per_type: list[dict[str, Any]] = field(default_factory=list)
    per_app: list[dict[str, Any]] = field(default_factory=list)
    timing: dict[str, float] = field(default_factory=dict)

    def sim_summary(self, metrics: SimMetrics | None) -> dict[str, Any] | None:
        if metrics is None:
            return None
        return {
            "loss": metrics.loss,
            "sent": metrics.total("sent"),
            "dropped": metrics.total("dropped"),
            **metrics.link.to_dict(),
            "flows": [f.to_dict() for _, f in sorted(metrics.flows.items())],
        }

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        d = {
            "id": self.id,
            "total": self.total,
            "counts": dict(self.counts),
            "status": self.status,
            "reason": self.reason,
            "allocation": self.allocation.to_dict() if self.allocation else None,
            "managed": self.sim_summary(self.managed),
            "best_effort": self.sim_summary(self.best_effort),
            "per_type": self.per_type,
            "per_app": self.per_app,
        }
        if include_timing:
            d["timing_s"] = dict(self.timing)
        return d


@dataclass
class Report:
    scenario: dict[str, Any]
    points: list[PointReport]
    include_timing: bool = False

    def to_dict(self) -> dict[str, Any]:
        sim = self.scenario["sim"]
        return {
            "scenario": self.scenario,
            "header": {
                "simulated_seconds": sim["duration_s"],
                "warmup_seconds": sim["warmup_s"],
                "utility_window_seconds": sim["window_s"],
                "percentile": PERCENTILE,
            },
            "points": [p.to_dict(self.include_timing) for p in self.points],
        }

    def point(self, point_id: str) -> PointReport:
        return next(p for p in self.points if p.id == point_id)


def run_point(scenario: Scenario, point: ScenarioPoint, *, best_effort: bool | None = None) -> PointReport:
    rep = PointReport(point.id, point.total, dict(point.counts))
    problem = scenario.problem(point)
    app_types = {a.id: a.app_type for a in problem.apps}
    template = scenario.sim_template()
    window = scenario.sim["window_s"]
    t0 = time.perf_counter()
    try:
        result = solve_problem(problem, scenario.solver["mode"])
    except (InfeasibleError, OracleBudgetError) as exc:
        rep.status = "infeasible" if isinstance(exc, InfeasibleError) else "failed"
        rep.reason = str(exc)
        return rep
    rep.allocation = result
    rep.timing["solve"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        managed_config = allocation_to_sim(result, template, scenario.bottleneck)
    except ConfigError as exc:
        rep.status, rep.reason = "failed", f"simulation: {exc}"
        return rep
    rep.managed = run(managed_config)
    rep.timing["managed_sim"] = time.perf_counter() - t0
    managed = simulated_utilities(rep.managed, app_types, window, result.throughput)

    be: list[UtilitySample] = []
    if scenario.sim["best_effort"] if best_effort is None else best_effort:
        t0 = time.perf_counter()
        rep.best_effort = run(best_effort_config(problem, template))
        rep.timing["best_effort_sim"] = time.perf_counter() - t0
        be = simulated_utilities(rep.best_effort, app_types, window)

    rep.per_type = _per_type(problem, result, managed, be)
    rep.per_app = _per_app(problem, result, rep, managed, be)
    return rep


def _mean(xs) -> float | None:
    xs = list(xs)
    return math.fsum(xs) / len(xs) if xs else None


def _per_type(problem, result, managed, be) -> list[dict[str, Any]]:
    types = sorted({a.app_type for a in problem.apps})
    m_sum = percentile_summary(managed, PERCENTILE, types) if managed else None
    b_sum = percentile_summary(be, PERCENTILE, types) if be else None
    rows = []
    for t in types:
        target = _mean(result.utility[a.id] for a in problem.apps if a.app_type == t)
        m_vals = [s.value for s in managed if s.app_type == t]
        b_vals = [s.value for s in be if s.app_type == t]
        m_mean = _mean(m_vals)
        rows.append({
            "type": t,
            "apps": sum(1 for a in problem.apps if a.app_type == t),
            "target": target,
            "managed_mean": m_mean,
            "managed_p10": m_sum.per_type.get(t) if m_sum else None,
            "deviation": m_mean - target if m_mean is not None else None,
            "f_index": f_index(m_vals) if m_vals else None,
            "best_effort_mean": _mean(b_vals),
            "best_effort_p10": b_sum.per_type.get(t) if b_sum else None,
            "best_effort_f_index": f_index(b_vals) if b_vals else None,
        })
    return rows


def _per_app(problem, result, rep: PointReport, managed, be) -> list[dict[str, Any]]:
    def stats(metrics, samples, app_id):
        if metrics is None:
            return None, None, None
        flows = [f for f in metrics.flows.values() if (f.app_id or f.flow_id) == app_id]
        sent = sum(f.sent for f in flows)
        delays = [f.mean_delay * f.delivered for f in flows]
        delivered = sum(f.delivered for f in flows)
        vals = [s.value for s in samples if s.app_id == app_id]
        return (
            _mean(vals),
            sum(f.dropped for f in flows) / sent if sent else 0.0,
            math.fsum(delays) / delivered if delivered else None,
        )

    rows = []
    for a in problem.apps:
        c = result.assignment[a.id]
        mu, ml, md = stats(rep.managed, managed, a.id)
        bu, bl, bd = stats(rep.best_effort, be, a.id)
        rows.append({
            "app_id": a.id,
            "type": a.app_type,
            "tp_kbps": result.throughput[a.id],
            "d_ms": result.delay_budget[a.id],
            "path": "-".join(c.path),
            "allocated_utility": result.utility[a.id],
            "managed_utility": mu,
            "managed_loss": ml,
            "managed_delay_ms": md,
            "best_effort_utility": bu,
            "best_effort_loss": bl,
            "best_effort_delay_ms": bd,
        })
    return rows


def run_experiment(
    scenario: Scenario, *, sweep: bool = True, best_effort: bool | None = None, include_timing: bool = False
) -> Report:
    """Solve, simulate and measure every scenario point (only the base mix if ``sweep`` is off)."""
    points = scenario.points() if sweep else [scenario.base_point()]
    reports = [run_point(scenario, p, best_effort=best_effort) for p in points]
    return Report(scenario.to_dict(), reports, include_timing)


# --- output ----------------------------------------------------------------

PER_APP_COLUMNS = (
    "point", "app_id", "type", "tp_kbps", "d_ms", "path", "allocated_utility",
    "managed_utility", "managed_loss", "managed_delay_ms",
    "best_effort_utility", "best_effort_loss", "best_effort_delay_ms",
)
PER_TYPE_COLUMNS = (
    "point", "type", "apps", "target", "managed_mean", "managed_p10", "deviation", "f_index",
    "best_effort_mean", "best_effort_p10", "best_effort_f_index",
)
PER_LINK_COLUMNS = ("point", "from", "to", "usage_kbps", "delay_ms")
SWEEP_COLUMNS = (
    "point", "total", "status", "uv_min1", "uv_min2", "utility_sum",
    "managed_loss", "managed_queue_delay_p95_ms", "managed_queue_delay_mean_ms", "managed_utilization",
    "best_effort_loss", "best_effort_queue_delay_p95_ms", "best_effort_queue_delay_mean_ms",
    "min_f_index", "max_abs_deviation",
)


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_tables(report: Report) -> dict[str, list[dict[str, Any]]]:
    per_app, per_type, per_link, sweep = [], [], [], []
    for p in report.points:
        per_app += [{"point": p.id, **r} for r in p.per_app]
        per_type += [{"point": p.id, **r} for r in p.per_type]
        if p.allocation is not None:
            alloc = p.allocation.to_dict()
            per_link += [{"point": p.id, **l} for l in alloc["links"]]
        obj = p.allocation.to_dict()["objectives"] if p.allocation else {}
        m, b = p.managed, p.best_effort
        fi = [r["f_index"] for r in p.per_type if r["f_index"] is not None]
        dev = [abs(r["deviation"]) for r in p.per_type if r["deviation"] is not None]
        sweep.append({
            "point": p.id,
            "total": p.total,
            "status": p.status,
            "uv_min1": obj.get("uv_min1"),
            "uv_min2": obj.get("uv_min2"),
            "utility_sum": obj.get("utility_sum"),
            "managed_loss": m.loss if m else None,
            "managed_queue_delay_p95_ms": m.link.queue_delay_p95 if m else None,
            "managed_queue_delay_mean_ms": m.link.queue_delay_mean if m else None,
            "managed_utilization": m.link.utilization if m else None,
            "best_effort_loss": b.loss if b else None,
            "best_effort_queue_delay_p95_ms": b.link.queue_delay_p95 if b else None,
            "best_effort_queue_delay_mean_ms": b.link.queue_delay_mean if b else None,
            "min_f_index": min(fi) if fi else None,
            "max_abs_deviation": max(dev) if dev else None,
        })
    return {"per_app": per_app, "per_type": per_type, "per_link": per_link, "sweep": sweep}


def emit_report(report: Report, fmt: str, path: str | Path) -> list[Path]:
    """Write the report; ``json`` goes to ``path/report.json``, ``csv`` to four tables."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            target = out / "report.json"
            target.write_text(dumps(report.to_dict()))
            return [target]
        if fmt != "csv":
            raise ConfigError(f"unknown report format {fmt!r}")
        tables = report_tables(report)
        columns = {"per_app": PER_APP_COLUMNS, "per_type": PER_TYPE_COLUMNS,
                   "per_link": PER_LINK_COLUMNS, "sweep": SWEEP_COLUMNS}
        written = []
        for name, cols in columns.items():
            target = out / f"{name}.csv"
            with open(target, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                for row in tables[name]:
                    w.writerow([_cell(row.get(c)) for c in cols])
            written.append(target)
        return written
    except OSError as exc:
        raise DataIOError(f"cannot write report to {out}: {exc}") from exc


def dumps(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"
