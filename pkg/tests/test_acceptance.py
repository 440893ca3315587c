"""One test per acceptance criterion."""

from __future__ import annotations

import math
import random
import subprocess
import sys
import time
from pathlib import Path

import pytest

from instances import random_problem
from qoealloc.allocation import (
    brute_force_oracle,
    encode_delay_segments,
    evaluate,
    solve,
    solve_heuristic,
    solve_stage1,
)
from qoealloc.errors import InfeasibleError
from qoealloc.scenario import load_scenario, run_experiment
from qoealloc.topology import DelayCurve, link_delay
from qoealloc.utility import mos_dl, mos_web, u_has, u_ssh, u_voip

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
CORPUS_SEEDS = range(300)


@pytest.fixture(scope="module")
def corpus():
    """Random instances with their exact and exhaustive results (None when infeasible)."""
    out = []
    t0 = time.perf_counter()
    for seed in CORPUS_SEEDS:
        p = random_problem(seed)
        try:
            o = brute_force_oracle(p)
        except InfeasibleError:
            o = None
        try:
            s = solve(p)
        except InfeasibleError:
            s = None
        out.append((p, s, o))
    return out, time.perf_counter() - t0


def test_c1_oracle_equivalence(corpus):
    cases, elapsed = corpus
    solved = [(p, s, o) for p, s, o in cases if o is not None]
    assert len(solved) >= 200
    for p, s, o in cases:
        assert (s is None) == (o is None)
        if o is None:
            continue
        assert (s.uv_min1, s.uv_min2, s.utility_sum) == (o.uv_min1, o.uv_min2, o.utility_sum)
        assert s.assignment == o.assignment
    assert elapsed < 60


def test_c2_two_stage_contract(corpus):
    cases, _ = corpus
    for p, s, _ in cases:
        if s is None:
            continue
        assert s.uv_min2 >= s.uv_min1 - p.epsilon
        _, witness = solve_stage1(p)
        assert s.utility_sum >= math.fsum(evaluate(p, witness).utility.values())


def test_c3_delay_encoding():
    rng = random.Random(2024)
    for _ in range(1000):
        n = rng.randint(2, 7)
        usage = [0.0]
        for _ in range(n - 1):
            usage.append(usage[-1] + rng.uniform(0.01, 5000))
        delay = sorted(rng.uniform(0, 200) for _ in range(n))
        curve = DelayCurve(tuple(usage), tuple(delay))
        x = rng.choice([rng.uniform(0, usage[-1]), rng.choice(usage)])
        enc = encode_delay_segments(curve, x)
        assert abs(enc.delay - link_delay(curve, x)) <= 1e-9
        assert abs(enc.usage - x) <= 1e-9 * max(1.0, x)


def test_c4_utility_anchors():
    assert mos_web(2.2) == pytest.approx(4.03, abs=0.05)
    assert mos_web(6.8) == pytest.approx(3.03, abs=0.05)
    assert mos_dl(28) == pytest.approx(4.01, abs=0.05)
    assert u_ssh(0) == 5.0 and u_ssh(1200) == 1.0
    assert (u_has(0, 0, 4), u_has(2, 0, 4), u_has(4, 0, 4)) == (1.0, 3.0, 5.0)
    assert u_voip(0, 34.5) == pytest.approx(5.0, abs=0.05)
    assert u_voip(0.08, 80) == pytest.approx(4.9, abs=0.05)


@pytest.fixture(scope="module")
def testbed_sweep():
    scenario = load_scenario(SCENARIOS / "testbed_sweep.json")
    report = run_experiment(scenario, include_timing=True)
    assert [p.total for p in report.points] == list(range(10, 121, 10))
    assert all(p.status == "ok" for p in report.points)
    return report


@pytest.mark.slow
def test_c5_managed_link_qos(testbed_sweep):
    for p in testbed_sweep.points:
        assert p.managed.total("dropped") == 0, p.id
        assert p.managed.link.queue_delay_p95 < 5.0, p.id
        assert p.timing["managed_sim"] < 30.0, p.id


@pytest.mark.slow
def test_c6_best_effort_degradation(testbed_sweep):
    losses = [p.best_effort.loss for p in testbed_sweep.points]
    for p, loss in zip(testbed_sweep.points, losses):
        if p.total >= 40:
            assert loss > 0, p.id
    inversions = sum(1 for a, b in zip(losses, losses[1:]) if b < a)
    assert inversions <= 1
    last = testbed_sweep.points[-1]
    assert last.best_effort.link.queue_delay_mean >= 10 * last.managed.link.queue_delay_mean


@pytest.mark.slow
def test_c7_predictability(testbed_sweep):
    for p in testbed_sweep.points:
        rows = {r["type"]: r for r in p.per_type}
        for t in ("WEB", "DL", "SSH", "VoIP"):
            assert abs(rows[t]["deviation"]) <= 0.5, (p.id, t)
        for t in ("DL", "SSH"):
            assert abs(rows[t]["deviation"]) <= 0.2, (p.id, t)


@pytest.mark.slow
def test_c8_fairness(testbed_sweep):
    for p in testbed_sweep.points:
        for r in p.per_type:
            assert r["f_index"] >= 0.98, (p.id, r["type"])


def test_c9_solver_runtime(corpus):
    scenario = load_scenario(SCENARIOS / "testbed_sweep.json")
    problem = scenario.problem(scenario.points()[-1])
    assert len(problem.apps) == 120
    t0 = time.perf_counter()
    exact = solve(problem)
    assert time.perf_counter() - t0 < 60
    t0 = time.perf_counter()
    heur = solve_heuristic(problem)
    assert time.perf_counter() - t0 < 1
    assert evaluate(problem, exact.assignment).feasible
    assert evaluate(problem, heur.assignment).feasible
    for p, s, _ in corpus[0]:
        if s is not None:
            assert evaluate(p, solve_heuristic(p).assignment).feasible


def _pipeline(scenario: Path, out: Path) -> dict[str, bytes]:
    command = "sweep" if scenario.stem.startswith("sweep") else "run"
    for fmt in ("json", "csv"):
        subprocess.run(
            [sys.executable, "-m", "qoealloc.cli", "--out-dir", str(out), "--format", fmt, command, str(scenario)],
            check=True,
            capture_output=True,
        )
    return {f.name: f.read_bytes() for f in sorted(out.iterdir())}


@pytest.mark.parametrize("name", ["minimal.json", "small_mix.json", "sweep_small.json"])
def test_c10_determinism(name, tmp_path):
    first = _pipeline(SCENARIOS / name, tmp_path / "one")
    second = _pipeline(SCENARIOS / name, tmp_path / "two")
    assert set(first) == {"report.json", "per_app.csv", "per_type.csv", "per_link.csv", "sweep.csv"}
    assert first == second
