"""Fast greedy allocator: no optimality claim, always feasible when it returns."""

from __future__ import annotations

import math
import time

from ..errors import InfeasibleError
from .model import (
    AllocationProblem,
    AllocationResult,
    Choice,
    SolverStats,
    evaluate,
    network_state,
    result_from_assignment,
)
from .solver import _TOL, _Search, _feasible


class _Greedy:
    def __init__(self, search: _Search):
        self.s = search
        # distinct link tuples used by each group, refreshed after placement
        self.group_paths: list[set[tuple[int, ...]]] = [set() for _ in search.groups]

    def delays(self, loads: list[float]) -> list[float]:
        cache: dict[tuple[int, ...], float] = {}
        out = []
        for paths in self.group_paths:
            worst = 0.0
            for links in paths:
                d = cache.get(links)
                if d is None:
                    d = cache[links] = self.s._path_delay(links, loads)
                worst = max(worst, d)
            out.append(worst)
        return out

    def place(self, threshold: float):
        """Lowest throughput per group that reaches ``threshold``; first fitting path per app."""
        s = self.s
        loads = [0.0] * len(s.capacity)
        tp_idx = [0] * len(s.groups)
        path_idx = [0] * len(s.problem.apps)
        self.group_paths = [set() for _ in s.groups]
        for gi, g in enumerate(s.groups):
            pos0 = g.members[0]
            est = min(s._path_delay(l, loads) for l in s.path_links[pos0])
            tpi = next(
                (t for t in range(len(g.tp_levels)) if (g.ub(t, est) or -1.0) >= threshold), None
            )
            if tpi is None:
                return None
            tp = g.tp_levels[tpi]
            for pos in g.members:
                pi = next(
                    (i for i, l in enumerate(s.path_links[pos]) if s._fits(l, loads, tp)), None
                )
                if pi is None:
                    return None
                for li in s.path_links[pos][pi]:
                    loads[li] += tp
                path_idx[pos] = pi
                self.group_paths[gi].add(s.path_links[pos][pi])
            tp_idx[gi] = tpi
        # repair groups whose realized delay pushed them under the threshold
        for _ in range(sum(len(g.tp_levels) for g in s.groups)):
            delays = self.delays(loads)
            bad = [
                gi
                for gi, g in enumerate(s.groups)
                if (g.ub(tp_idx[gi], delays[gi]) or -1.0) < threshold
            ]
            if not bad:
                return tp_idx, path_idx, loads, self.group_paths
            gi = bad[0]
            g = s.groups[gi]
            up = next(
                (t for t in range(tp_idx[gi] + 1, len(g.tp_levels)) if (g.ub(t, delays[gi]) or -1.0) >= threshold),
                None,
            )
            if up is None or not self._shift(gi, tp_idx, path_idx, loads, up):
                return None
        return None

    def adopt(self, witness: dict[str, Choice] | None):
        """Placement tuple for an assignment found elsewhere."""
        if witness is None:
            return None
        s = self.s
        apps = s.problem.apps
        loads = [0.0] * len(s.capacity)
        tp_idx = [0] * len(s.groups)
        path_idx = [0] * len(apps)
        self.group_paths = [set() for _ in s.groups]
        for pos, app in enumerate(apps):
            c = witness[app.id]
            gi = s.group_of[pos]
            pi = s.paths[pos].index(tuple(c.path))
            tp_idx[gi], path_idx[pos] = c.tp_index, pi
            for li in s.path_links[pos][pi]:
                loads[li] += s.groups[gi].tp_levels[c.tp_index]
            self.group_paths[gi].add(s.path_links[pos][pi])
        return tp_idx, path_idx, loads, self.group_paths

    def _shift(self, gi, tp_idx, path_idx, loads, new_tpi) -> bool:
        s = self.s
        g = s.groups[gi]
        delta = g.tp_levels[new_tpi] - g.tp_levels[tp_idx[gi]]
        trial = list(loads)
        for pos in g.members:
            for li in s.path_links[pos][path_idx[pos]]:
                trial[li] += delta
        if any(trial[li] > s.capacity[li] * (1 + _TOL) for li in range(len(trial))):
            return False
        loads[:] = trial
        tp_idx[gi] = new_tpi
        return True

    def utilities(self, tp_idx, loads) -> list[float] | None:
        out = []
        for g, tpi, d in zip(self.s.groups, tp_idx, self.delays(loads)):
            v = g.ub(tpi, d)
            if v is None:
                return None
            out.append(v)
        return out

    def improve(self, tp_idx, path_idx, loads, floor: float) -> None:
        """Raise group throughputs while the utility sum grows and all stay above ``floor``."""
        s = self.s
        sizes = [g.size for g in s.groups]
        current = self.utilities(tp_idx, loads)
        total = math.fsum(u * n for u, n in zip(current, sizes))
        while True:
            best = None
            for gi, g in enumerate(s.groups):
                for up in range(tp_idx[gi] + 1, len(g.tp_levels)):
                    trial_tp = list(tp_idx)
                    trial_loads = list(loads)
                    if not self._shift(gi, trial_tp, path_idx, trial_loads, up):
                        break
                    utils = self.utilities(trial_tp, trial_loads)
                    if utils is None or min(utils) < floor:
                        continue
                    gain = math.fsum(u * n for u, n in zip(utils, sizes)) - total
                    if gain <= _TOL:
                        continue
                    cost = g.size * (g.tp_levels[up] - g.tp_levels[tp_idx[gi]])
                    ratio = gain / cost
                    if best is None or ratio > best[0] + _TOL:
                        best = (ratio, gi, up, gain)
            if best is None:
                return
            _, gi, up, gain = best
            self._shift(gi, tp_idx, path_idx, loads, up)
            total += gain


def solve_heuristic(problem: AllocationProblem) -> AllocationResult:
    """Greedy max-min placement found by binary search, then greedy sum improvement."""
    start = time.perf_counter()
    if not problem.apps:
        return result_from_assignment(problem, {}, None, SolverStats("heuristic", 0, 0.0, None))
    search = _Search(problem)
    greedy = _Greedy(search)
    values = sorted({v for a in problem.apps for row in a.grid.values for v in row})
    ceiling = min(a.grid.max() for a in problem.apps)
    values = [v for v in values if v <= ceiling]

    placed = greedy.place(values[0])
    tries = 1
    if placed is None:
        # greedy routing can paint itself into a corner; fall back to a search at the floor
        placed = greedy.adopt(_feasible(search, values[0]))
        if placed is None:
            binding = "capacity" if _feasible(search, values[0], ignore_delay=True) is None else "delay"
            raise InfeasibleError(
                f"no feasible assignment even at the lowest utility levels ({binding} constraints bind)",
                binding,
            )
    lo, hi, level = 0, len(values) - 1, 0
    while lo < hi:
        mid = (lo + hi + 1) // 2
        found = greedy.place(values[mid])
        tries += 1
        if found is not None:
            lo, level, placed = mid, mid, found
        else:
            hi = mid - 1
    tp_idx, path_idx, loads, greedy.group_paths = placed
    uv = min(greedy.utilities(tp_idx, loads))
    greedy.improve(tp_idx, path_idx, loads, uv - problem.epsilon)

    apps = problem.apps
    routes = []
    for pos in range(len(apps)):
        g = search.groups[search.group_of[pos]]
        routes.append((g.tp_levels[tp_idx[search.group_of[pos]]], search.paths[pos][path_idx[pos]]))
    _, _, route_delay = network_state(problem.topology, routes, problem.d_max)
    assignment = {}
    for gi, g in enumerate(search.groups):
        picked = g.best_d(tp_idx[gi], max(route_delay[pos] for pos in g.members))
        if picked is None:
            raise InfeasibleError("greedy placement lost feasibility after rounding", "delay")
        for pos in g.members:
            assignment[apps[pos].id] = Choice(tp_idx[gi], picked[0], search.paths[pos][path_idx[pos]])
    if not evaluate(problem, assignment).feasible:
        raise InfeasibleError("greedy placement lost feasibility after rounding", "capacity")
    stats = SolverStats("heuristic", tries, time.perf_counter() - start, None)
    return result_from_assignment(problem, assignment, uv, stats)
