"""Exact two-stage solver: depth-first branch-and-bound over the quantized space.

The search assigns each decision group (a single application, or every
application of one type when per-type equality is on) a throughput level
and each member a candidate path. Delay budgets are not branched on: once
loads are fixed, the best delay level of a group is the tightest level that
still covers its worst end-to-end delay, because utility never increases
with the delay budget. Pruning relies on delays growing monotonically with
load, which the non-decreasing delay-curve invariant guarantees.
"""

from __future__ import annotations

import bisect
import math
import time
from dataclasses import dataclass

from ..errors import InfeasibleError
from ..topology import link_delay, path_links
from .model import (
    AllocationProblem,
    AllocationResult,
    Choice,
    SolverStats,
    network_state,
    result_from_assignment,
)

_TOL = 1e-9


@dataclass
class _Group:
    members: list[int]  # positions in problem.apps
    tp_levels: tuple[float, ...]
    d_levels: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]
    mandatory: frozenset[int]  # link indices on every candidate path of every member

    @property
    def size(self) -> int:
        return len(self.members)

    def best_d(self, tp_index: int, delay: float) -> tuple[int, float] | None:
        """Tightest-utility delay level covering ``delay``; ties go to the looser level."""
        j = bisect.bisect_left(self.d_levels, delay)
        if j >= len(self.d_levels):
            return None
        row = self.values[tp_index]
        val = row[j]
        while j + 1 < len(row) and row[j + 1] == val:
            j += 1
        return j, val

    def ub(self, tp_index: int, delay: float) -> float | None:
        j = bisect.bisect_left(self.d_levels, delay)
        if j >= len(self.d_levels):
            return None
        return self.values[tp_index][j]


class _Search:
    def __init__(self, problem: AllocationProblem):
        self.problem = problem
        apps = problem.apps
        topo = problem.topology
        self.link_keys = sorted(topo.links)
        index = {k: i for i, k in enumerate(self.link_keys)}
        self.capacity = [topo.links[k].capacity for k in self.link_keys]
        self.curves = [topo.links[k].delay_curve for k in self.link_keys]

        paths = problem.paths()
        missing = [a.id for a in apps if not paths[a.id]]
        if missing:
            raise InfeasibleError(
                f"no candidate path for {', '.join(missing)}", "path", [f"app {m}: no path" for m in missing]
            )
        self.paths = [paths[a.id] for a in apps]
        self.path_links = [[tuple(index[k] for k in path_links(p)) for p in ps] for ps in self.paths]

        buckets: dict[str, list[int]] = {}
        for pos, app in enumerate(apps):
            key = app.app_type if problem.per_type_equal else app.id
            buckets.setdefault(key, []).append(pos)
        groups = []
        for members in buckets.values():
            grid = apps[members[0]].grid
            mandatory = None
            for pos in members:
                for links in self.path_links[pos]:
                    mandatory = set(links) if mandatory is None else mandatory & set(links)
            groups.append(
                _Group(members, grid.tp_levels, grid.d_levels, grid.values, frozenset(mandatory or ()))
            )
        # largest throughput demand first; ties by first member id
        groups.sort(key=lambda g: (-g.tp_levels[-1], apps[g.members[0]].id))
        self.groups = groups
        self.order = [(gi, pos) for gi, g in enumerate(groups) for pos in g.members]
        self.group_of = {pos: gi for gi, g in enumerate(groups) for pos in g.members}
        # bounding only pays off where the previous step actually branched
        self.check = [
            step == 0 or pos == groups[gi].members[0] or len(self.paths[self.order[step - 1][1]]) > 1
            for step, (gi, pos) in enumerate(self.order)
        ] + [True]
        self.nodes = 0

    # -- network helpers ---------------------------------------------------

    def _ld(self, li: int, load: float) -> float:
        curve = self.curves[li]
        if load > curve.usage_points[-1]:
            return self.problem.d_max
        return link_delay(curve, max(load, 0.0))

    def _path_delay(self, links: tuple[int, ...], loads: list[float]) -> float:
        return math.fsum(self._ld(li, loads[li]) for li in links)

    def _fits(self, links: tuple[int, ...], loads: list[float], tp: float) -> bool:
        return all(loads[li] + tp <= self.capacity[li] * (1 + _TOL) for li in links)

    # -- bounding ----------------------------------------------------------

    def _bound(self, state: "_State", floor: float, ignore_delay: bool = False):
        """Upper bound on the utility sum and lower bound on total throughput.

        Returns ``None`` when the node provably has no completion meeting
        ``floor``.
        """
        loads = state.loads
        n_links = len(self.capacity)
        committed = [0.0] * n_links
        fixed_value = 0.0
        tp_lb = 0.0
        open_groups = []  # (group, options[(tp_index, tp, ub)])
        pd_cache: dict[tuple[int, ...], float] = {}

        def pdelay(links: tuple[int, ...]) -> float:
            if ignore_delay:
                return 0.0
            d = pd_cache.get(links)
            if d is None:
                d = pd_cache[links] = self._path_delay(links, loads)
            return d

        for gi, g in enumerate(self.groups):
            tpi = state.group_tp[gi]
            if tpi is not None:
                tp = g.tp_levels[tpi]
                worst = 0.0
                for pos in g.members:
                    pi = state.path[pos]
                    if pi is not None:
                        worst = max(worst, pdelay(self.path_links[pos][pi]))
                        continue
                    fitting = [l for l in self.path_links[pos] if self._fits(l, loads, tp)]
                    if not fitting:
                        return None
                    worst = max(worst, min(pdelay(l) for l in fitting))
                    common = set.intersection(*(set(l) for l in fitting))
                    for li in common:
                        committed[li] += tp
                val = g.ub(tpi, worst)
                if val is None or val < floor:
                    return None
                fixed_value += g.size * val
                tp_lb += g.size * tp
                continue
            options = []
            for tpi_opt, tp in enumerate(g.tp_levels):
                worst = 0.0
                ok = True
                for pos in g.members:
                    fitting = [l for l in self.path_links[pos] if self._fits(l, loads, tp)]
                    if not fitting:
                        ok = False
                        break
                    worst = max(worst, min(pdelay(l) for l in fitting))
                if not ok:
                    break  # larger throughput levels fit even less
                val = g.ub(tpi_opt, worst)
                if val is not None and val >= floor:
                    options.append((tpi_opt, tp, val))
            if not options:
                return None
            open_groups.append((g, options))
            tp_lb += g.size * min(o[1] for o in options)

        independent = fixed_value + sum(g.size * max(o[2] for o in opts) for g, opts in open_groups)
        best = independent
        links = set()
        for g, _ in open_groups:
            links |= g.mandatory
        for li in sorted(links):
            residual = self.capacity[li] * (1 + _TOL) - loads[li] - committed[li]
            on_link = [(g, opts) for g, opts in open_groups if li in g.mandatory]
            others = fixed_value + sum(
                g.size * max(o[2] for o in opts) for g, opts in open_groups if li not in g.mandatory
            )
            lp = _mckp_bound(on_link, residual)
            if lp is None:
                return None
            best = min(best, others + lp)
        return best, tp_lb


@dataclass
class _State:
    loads: list[float]
    group_tp: list[int | None]
    path: list[int | None]


def _mckp_bound(groups, residual: float) -> float | None:
    """LP relaxation of a multiple-choice knapsack, solved greedily.

    Each group picks one option (cost = size * throughput, value = size *
    utility bound). Returns ``None`` if even the cheapest options overflow.
    """
    total = 0.0
    increments = []
    for g, opts in groups:
        pts = sorted({(g.size * tp, g.size * val) for _, tp, val in opts})
        # cheapest option, best value at that cost
        base_cost = pts[0][0]
        base_val = max(v for c, v in pts if c == base_cost)
        hull = [(base_cost, base_val)]
        for c, v in pts:
            if c <= hull[-1][0] or v <= hull[-1][1]:
                continue
            while len(hull) >= 2:
                (c1, v1), (c2, v2) = hull[-2], hull[-1]
                if (v2 - v1) * (c - c1) <= (v - v1) * (c2 - c1):
                    hull.pop()
                else:
                    break
            hull.append((c, v))
        residual -= base_cost
        total += base_val
        for (c1, v1), (c2, v2) in zip(hull, hull[1:]):
            increments.append(((v2 - v1) / (c2 - c1), c2 - c1, v2 - v1))
    if residual < 0:
        return None
    increments.sort(key=lambda x: -x[0])
    for _, dc, dv in increments:
        if residual <= 0:
            break
        take = min(1.0, residual / dc)
        total += take * dv
        residual -= take * dc
    return total


def _leaf(search: _Search, state: _State, floor: float, ignore_delay: bool = False):
    """Exact evaluation of a complete (throughput, path) assignment.

    Returns (assignment, key) or ``None`` if infeasible or below ``floor``.
    """
    problem = search.problem
    apps = problem.apps
    routes = []
    for pos, app in enumerate(apps):
        g = search.groups[search.group_of[pos]]
        tp = g.tp_levels[state.group_tp[search.group_of[pos]]]
        routes.append((tp, search.paths[pos][state.path[pos]]))
    usage, _, route_delay = network_state(problem.topology, routes, problem.d_max)
    for key, lu in usage.items():
        if lu > problem.topology.links[key].capacity:
            return None
    assignment = {}
    for gi, g in enumerate(search.groups):
        tpi = state.group_tp[gi]
        worst = 0.0 if ignore_delay else max(route_delay[pos] for pos in g.members)
        picked = g.best_d(tpi, worst)
        if picked is None:
            return None
        dj, val = picked
        if val < floor:
            return None
        for pos in g.members:
            assignment[apps[pos].id] = Choice(tpi, dj, search.paths[pos][state.path[pos]])
    utils = [_value(a, assignment[a.id]) for a in apps]
    key = (
        -math.fsum(utils),
        math.fsum(r[0] for r in routes),
        tuple(
            (-assignment[a.id].tp_index, -assignment[a.id].d_index, state.path[pos])
            for pos, a in enumerate(apps)
        ),
    )
    return assignment, key


def _value(app, choice: Choice) -> float:
    return app.grid.values[choice.tp_index][choice.d_index]


def _apply(search: _Search, state: _State, pos: int, tp: float, pi: int) -> None:
    for li in search.path_links[pos][pi]:
        state.loads[li] += tp
    state.path[pos] = pi


def _undo(search: _Search, state: _State, pos: int, tp: float, pi: int) -> None:
    for li in search.path_links[pos][pi]:
        state.loads[li] -= tp
    state.path[pos] = None


def _fresh_state(search: _Search) -> _State:
    n = len(search.problem.apps)
    return _State([0.0] * len(search.capacity), [None] * len(search.groups), [None] * n)


def _feasible(search: _Search, threshold: float, ignore_delay: bool = False):
    """First assignment (in search order) giving every app utility >= threshold."""
    state = _fresh_state(search)
    order = search.order

    def dfs(step: int):
        search.nodes += 1
        if search.check[step] and search._bound(state, threshold, ignore_delay) is None:
            return None
        if step == len(order):
            hit = _leaf(search, state, threshold, ignore_delay)
            return hit[0] if hit else None
        gi, pos = order[step]
        g = search.groups[gi]
        opened = state.group_tp[gi] is None
        tp_options = range(len(g.tp_levels)) if opened else [state.group_tp[gi]]
        for tpi in tp_options:
            tp = g.tp_levels[tpi]
            state.group_tp[gi] = tpi
            for pi, links in enumerate(search.path_links[pos]):
                if not search._fits(links, state.loads, tp):
                    continue
                _apply(search, state, pos, tp, pi)
                found = dfs(step + 1)
                _undo(search, state, pos, tp, pi)
                if found is not None:
                    if opened:
                        state.group_tp[gi] = None
                    return found
            if opened:
                state.group_tp[gi] = None
        return None

    return dfs(0)


def _trivial(problem: AllocationProblem, mode: str) -> AllocationResult:
    return result_from_assignment(problem, {}, None, SolverStats(mode, 0, 0.0, True))


def solve_stage1(problem: AllocationProblem) -> tuple[float | None, dict[str, Choice]]:
    """Maximize the minimum utility. Returns (uv_min1, witness assignment)."""
    if not problem.apps:
        return None, {}
    uv, witness, _ = _stage1(_Search(problem))
    return uv, witness


def _stage1(search: _Search) -> tuple[float, dict[str, Choice], int]:
    problem = search.problem
    values = sorted({v for a in problem.apps for row in a.grid.values for v in row})
    ceiling = min(a.grid.max() for a in problem.apps)
    values = [v for v in values if v <= ceiling]
    witness = _feasible(search, values[0])
    if witness is None:
        relaxed = _feasible(search, values[0], ignore_delay=True)
        binding = "capacity" if relaxed is None else "delay"
        raise InfeasibleError(
            f"no feasible assignment even at the lowest utility levels ({binding} constraints bind)",
            binding,
            [f"{binding} constraint cannot be met with minimum grid choices"],
        )
    lo, hi = 0, len(values) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        found = _feasible(search, values[mid])
        if found is not None:
            lo, witness = mid, found
        else:
            hi = mid - 1
    return values[lo], witness, search.nodes


def _assignment_key(search: _Search, assignment: dict[str, Choice]):
    apps = search.problem.apps
    utils = [_value(a, assignment[a.id]) for a in apps]
    tps = [a.grid.tp_levels[assignment[a.id].tp_index] for a in apps]
    return (
        -math.fsum(utils),
        math.fsum(tps),
        tuple(
            (
                -assignment[a.id].tp_index,
                -assignment[a.id].d_index,
                search.paths[pos].index(tuple(assignment[a.id].path)),
            )
            for pos, a in enumerate(apps)
        ),
    )


def _stage2(search: _Search, uv_min1: float, incumbent: dict[str, Choice] | None):
    problem = search.problem
    floor = uv_min1 - problem.epsilon
    best = [incumbent, _assignment_key(search, incumbent) if incumbent else None]
    state = _fresh_state(search)
    order = search.order

    def dfs(step: int) -> None:
        search.nodes += 1
        bound = search._bound(state, floor) if search.check[step] else None
        if search.check[step] and bound is None:
            return
        if bound is not None and best[1] is not None:
            inc_sum, inc_tp = -best[1][0], best[1][1]
            slack = _TOL * max(1.0, abs(inc_sum))
            if bound[0] < inc_sum - slack:
                return
            if bound[0] <= inc_sum + slack and bound[1] > inc_tp * (1 + _TOL) + _TOL:
                return
        if step == len(order):
            hit = _leaf(search, state, floor)
            if hit is not None and (best[1] is None or hit[1] < best[1]):
                best[0], best[1] = hit
            return
        gi, pos = order[step]
        g = search.groups[gi]
        opened = state.group_tp[gi] is None
        if opened:
            # most promising utility first to tighten the incumbent early
            delay0 = min(search._path_delay(l, state.loads) for l in search.path_links[pos])
            ranked = []
            for tpi in range(len(g.tp_levels)):
                val = g.ub(tpi, delay0)
                ranked.append((-(val if val is not None else -1.0), tpi))
            tp_options = [tpi for _, tpi in sorted(ranked)]
        else:
            tp_options = [state.group_tp[gi]]
        for tpi in tp_options:
            tp = g.tp_levels[tpi]
            state.group_tp[gi] = tpi
            for pi, links in enumerate(search.path_links[pos]):
                if not search._fits(links, state.loads, tp):
                    continue
                _apply(search, state, pos, tp, pi)
                dfs(step + 1)
                _undo(search, state, pos, tp, pi)
        if opened:
            state.group_tp[gi] = None

    dfs(0)
    if best[0] is None:
        raise InfeasibleError("stage 2 found no assignment within the epsilon bound", "capacity")
    return best[0]


def solve_stage2(problem: AllocationProblem, uv_min1: float) -> AllocationResult:
    """Maximize the utility sum with every utility >= uv_min1 - epsilon.

    Ties prefer lower total throughput, then (in app-id order) the larger
    throughput index, the looser delay level and the lower-ranked path.
    """
    start = time.perf_counter()
    if not problem.apps:
        return _trivial(problem, "exact")
    search = _Search(problem)
    assignment = _stage2(search, uv_min1, None)
    stats = SolverStats("exact", search.nodes, time.perf_counter() - start, True)
    return result_from_assignment(problem, assignment, uv_min1, stats)


def solve(problem: AllocationProblem) -> AllocationResult:
    """Run both stages: max-min utility, then max utility sum under the slack."""
    start = time.perf_counter()
    if not problem.apps:
        return _trivial(problem, "exact")
    search = _Search(problem)
    uv_min1, witness, _ = _stage1(search)
    assignment = _stage2(search, uv_min1, witness)
    stats = SolverStats("exact", search.nodes, time.perf_counter() - start, True)
    return result_from_assignment(problem, assignment, uv_min1, stats)
