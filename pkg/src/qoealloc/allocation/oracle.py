"""Exhaustive reference solver for small instances."""

from __future__ import annotations

import itertools
import math
import time

from ..errors import InfeasibleError, OracleBudgetError
from ..topology import all_paths
from .model import AllocationProblem, AllocationResult, Choice, SolverStats, network_state, result_from_assignment

ORACLE_BUDGET = 10**7


def _groups(problem: AllocationProblem) -> list[list[int]]:
    """Positions of apps that share one grid choice (every app alone unless per-type equal)."""
    buckets: dict[str, list[int]] = {}
    for pos, a in enumerate(problem.apps):
        buckets.setdefault(a.app_type if problem.per_type_equal else a.id, []).append(pos)
    return list(buckets.values())


def search_space(problem: AllocationProblem, simple_paths: bool = False) -> int:
    paths = _paths(problem, simple_paths)
    grids = math.prod(problem.apps[g[0]].grid.size for g in _groups(problem))
    return grids * math.prod(len(paths[a.id]) for a in problem.apps)


def _paths(problem: AllocationProblem, simple_paths: bool):
    if not simple_paths:
        return problem.paths()
    return {a.id: all_paths(problem.topology, a.src, a.dst) for a in problem.apps}


def brute_force_oracle(
    problem: AllocationProblem, *, simple_paths: bool = False, budget: int = ORACLE_BUDGET
) -> AllocationResult:
    """Enumerate every (throughput, delay, path) combination.

    Uses the same candidate paths as the exact solver unless ``simple_paths``
    is set, in which case every loop-free path is considered.
    """
    start = time.perf_counter()
    apps = problem.apps
    if not apps:
        return result_from_assignment(problem, {}, None, SolverStats("oracle", 0, 0.0, True))
    size = search_space(problem, simple_paths)
    if size > budget:
        raise OracleBudgetError(size, budget)
    paths = _paths(problem, simple_paths)
    missing = [a.id for a in apps if not paths[a.id]]
    if missing:
        raise InfeasibleError(f"no path for {', '.join(missing)}", "path", missing)

    caps = {k: l.capacity for k, l in problem.topology.links.items()}
    groups = _groups(problem)
    group_of = {pos: gi for gi, g in enumerate(groups) for pos in g}
    heads = [apps[g[0]].grid for g in groups]
    tp_opts = [range(len(grid.tp_levels)) for grid in heads]
    d_opts = [range(len(grid.d_levels)) for grid in heads]
    path_opts = [range(len(paths[a.id])) for a in apps]
    n_d = math.prod(len(r) for r in d_opts)
    # best candidate per distinct minimum utility; the floor is only known at the end
    best: dict[float, tuple] = {}
    capacity_ok = False
    visited = 0
    for tps in itertools.product(*tp_opts):
        for pis in itertools.product(*path_opts):
            routes = [
                (a.grid.tp_levels[tps[group_of[i]]], paths[a.id][pi]) for i, (a, pi) in enumerate(zip(apps, pis))
            ]
            usage, _, delays = network_state(problem.topology, routes, problem.d_max)
            if any(lu > caps[k] for k, lu in usage.items()):
                visited += n_d
                continue
            capacity_ok = True
            for ds in itertools.product(*d_opts):
                visited += 1
                if any(delays[i] > a.grid.d_levels[ds[group_of[i]]] for i, a in enumerate(apps)):
                    continue
                idx = [(tps[group_of[i]], ds[group_of[i]]) for i in range(len(apps))]
                utils = [a.grid.values[ti][dj] for a, (ti, dj) in zip(apps, idx)]
                key = (
                    -math.fsum(utils),
                    math.fsum(r[0] for r in routes),
                    tuple((-ti, -dj, pi) for (ti, dj), pi in zip(idx, pis)),
                )
                low = min(utils)
                if low not in best or key < best[low][0]:
                    best[low] = (key, idx, pis)

    if not best:
        binding = "delay" if capacity_ok else "capacity"
        raise InfeasibleError(f"no feasible assignment ({binding} constraints bind)", binding)
    uv_min1 = max(best)
    floor = uv_min1 - problem.epsilon
    _, idx, pis = min(v for low, v in best.items() if low >= floor)
    assignment = {a.id: Choice(ti, dj, paths[a.id][pi]) for a, (ti, dj), pi in zip(apps, idx, pis)}
    stats = SolverStats("oracle", visited, time.perf_counter() - start, True)
    return result_from_assignment(problem, assignment, uv_min1, stats)

