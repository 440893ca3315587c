from __future__ import annotations

import csv

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qoealloc.allocation import AllocationProblem, ApplicationFlow, solve
from qoealloc.errors import ConfigError
from qoealloc.sim import (
    AimdState,
    Pacer,
    Policer,
    Shaper,
    SimConfig,
    SourceSpec,
    aimd_step,
    allocation_to_sim,
    next_departure,
    run,
)
from qoealloc.topology import DelayCurve, Link, Topology, two_node
from qoealloc.utility import UtilityGrid

MSS = 1500


def paced(n, total, cap, **kw):
    return SimConfig(
        cap,
        sources=tuple(SourceSpec(f"f{i}", "paced", rate=total / n) for i in range(n)),
        **kw,
    )


# disciplines -----------------------------------------------------------------

@pytest.mark.parametrize("pkt,rate,gap_us", [(1500, 12000, 1000.0), (0, 12000, 0.0), (1500, 100, 120000.0)])
def test_next_departure(pkt, rate, gap_us):
    assert next_departure(5.0, pkt, rate) == pytest.approx(5.0 + gap_us)


def test_next_departure_rejects_bad_rate():
    with pytest.raises(ConfigError):
        next_departure(0, 1500, 0)


def test_aimd_examples():
    assert aimd_step(AimdState(10 * MSS, ssthresh=0), "loss").cwnd == 5 * MSS
    assert aimd_step(AimdState(MSS, ssthresh=0), "loss").cwnd == MSS
    state = AimdState(10.0 * MSS, ssthresh=0)
    for _ in range(10):
        state = aimd_step(state, "ack")
    assert state.cwnd / MSS == pytest.approx(11.0, abs=0.05)


def test_aimd_slow_start_doubles_per_window():
    state = AimdState(4.0 * MSS)
    for _ in range(4):
        state = aimd_step(state, "ack")
    assert state.cwnd == 8 * MSS


def test_policer_empty_bucket_drops():
    pol = Policer(1000, 1500)
    assert pol.admit(1500, 0).action == "transmit"
    assert pol.admit(1500, 0).action == "drop"
    # 1500 B at 1000 kbps accrue in 12 ms
    assert pol.admit(1500, 12000).action == "transmit"


def test_shaper_enqueues_then_releases():
    sh = Shaper(1000, 1500, 3000)
    assert sh.admit(1500, 0).action == "transmit"
    d = sh.admit(1500, 0)
    assert d.action == "enqueue" and d.time == pytest.approx(12000)
    assert sh.admit(1500, 0).time == pytest.approx(24000)
    assert sh.admit(1500, 0).action == "drop"


def test_pacer_burst_schedule():
    pacer = Pacer(1200)
    times = [pacer.admit(1500, 0).time for _ in range(10)]
    assert times == pytest.approx([k * 1500 * 8 / 1200 * 1000 for k in range(10)])


# engine ----------------------------------------------------------------------

def test_paced_at_95_percent_no_loss_shallow_queue():
    m = run(paced(2, 95000, 100000, duration=10.0))
    assert m.total("dropped") == 0
    assert m.link.max_queue_packets <= 2
    assert m.link.utilization == pytest.approx(0.95, abs=0.01)


def test_cbr_twice_capacity_loses_half():
    cfg = SimConfig(10000, duration=30.0, buffer_size=100_000, sources=(SourceSpec("c", "cbr", rate=20000),))
    assert run(cfg).loss == pytest.approx(0.5, abs=0.02)


def test_same_seed_identical_metrics():
    cfg = SimConfig(
        5000,
        duration=6.0,
        buffer_size=60_000,
        rng_seed=3,
        sources=(
            SourceSpec("a", "aimd"),
            SourceSpec("b", "aimd"),
            SourceSpec("c", "cbr", rate=1000),
            SourceSpec("p", "policed", rate=800, bucket=3000, offered=1200),
            SourceSpec("s", "shaped", rate=800, bucket=3000, queue=6000, offered=1200),
        ),
    )
    assert run(cfg).to_dict(samples=True) == run(cfg).to_dict(samples=True)


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        run(SimConfig(1000, duration=1.0, warmup=2.0))
    with pytest.raises(ConfigError):
        run(SimConfig(1000, sources=(SourceSpec("x", "paced", rate=0),)))
    with pytest.raises(ConfigError):
        run(SimConfig(1000, sources=(SourceSpec("x", "paced", rate=10, pkt_len=20),)))


def test_paced_rate_conformance():
    m = run(paced(4, 40000, 100000, duration=10.0))
    for f in m.flows.values():
        assert f.throughput == pytest.approx(10000, rel=0.01)


def test_policer_and_shaper_limit_throughput():
    cfg = SimConfig(
        100000,
        duration=10.0,
        sources=(
            SourceSpec("p", "policed", rate=2000, bucket=3000, offered=4000),
            SourceSpec("s", "shaped", rate=2000, bucket=3000, queue=30000, offered=4000),
        ),
    )
    m = run(cfg)
    assert m.flows["p"].throughput == pytest.approx(2000, rel=0.02)
    assert m.flows["s"].throughput == pytest.approx(2000, rel=0.02)
    assert m.flows["p"].loss == pytest.approx(0.5, abs=0.02)


def test_queue_delay_bound_paced_100mbps():
    m = run(paced(40, 95000, 100000, duration=10.0))
    assert m.link.queue_delay_p95 < 5.0 and m.total("dropped") == 0


def test_aimd_loss_grows_with_flow_count():
    losses = []
    for n in (4, 8, 16, 32):
        cfg = SimConfig(
            10000, duration=20.0, buffer_size=30_000, sources=tuple(SourceSpec(f"a{i:02d}", "aimd") for i in range(n))
        )
        losses.append(run(cfg).loss)
    assert losses[0] > 0
    assert all(b >= a for a, b in zip(losses, losses[1:]))


def test_trace_csv(tmp_path):
    path = tmp_path / "trace.csv"
    cfg = SimConfig(1000, duration=1.0, warmup=0.0, buffer_size=3000, sources=(SourceSpec("c", "cbr", rate=2000),))
    run(cfg, trace=path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["time_us", "flow_id", "event", "queue_bytes"]
    events = {r[2] for r in rows[1:]}
    assert events == {"enq", "deq", "drop"}
    times = [int(r[0]) for r in rows[1:]]
    assert times == sorted(times)
    assert int(rows[-1][3]) == 0


@st.composite
def configs(draw):
    kinds = draw(st.lists(st.sampled_from(["paced", "cbr", "policed", "shaped", "aimd"]), min_size=1, max_size=5))
    cap = draw(st.sampled_from([500.0, 2000.0, 10000.0]))
    sources = []
    for i, kind in enumerate(kinds):
        rate = draw(st.sampled_from([100.0, 400.0, 1500.0, 5000.0]))
        sources.append(SourceSpec(f"f{i}", kind, rate=None if kind == "aimd" else rate, bucket=3000,
                                  queue=6000, offered=rate * 1.5 if kind in ("policed", "shaped") else None))
    return SimConfig(cap, duration=3.0, warmup=0.5, buffer_size=draw(st.sampled_from([3000, 30000])),
                     rng_seed=draw(st.integers(0, 100)), sources=tuple(sources))


@settings(max_examples=25, deadline=None)
@given(configs())
def test_conservation_and_bounds(cfg):
    m = run(cfg)
    for f in m.flows.values():
        assert f.sent == f.delivered + f.dropped
        assert 0 <= f.loss <= 1
    assert 0 <= m.link.utilization <= 1


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.floats(0.3, 0.95))
def test_paced_below_capacity_never_drops(n, load):
    m = run(paced(n, 20000 * load, 20000, duration=3.0, warmup=0.5))
    assert m.total("dropped") == 0


# allocation mapping ----------------------------------------------------------

def three_app_result(capacity=300.0):
    grid = UtilityGrid((50.0, 100.0), (10.0,), ((3.0,), (5.0,)))
    apps = tuple(ApplicationFlow(f"a{i}", "X", "S", "C", grid) for i in range(3))
    return solve(AllocationProblem(two_node(capacity, 2.0), apps))


def test_allocation_to_sim_structure():
    res = three_app_result()
    cfg = allocation_to_sim(res, SimConfig(300.0, duration=5.0))
    assert [s.flow_id for s in cfg.sources] == ["a0", "a1", "a2"]
    assert all(s.discipline == "paced" for s in cfg.sources)
    assert [s.rate for s in cfg.sources] == [res.throughput[a] for a in ("a0", "a1", "a2")]


def test_allocation_to_sim_empty():
    res = solve(AllocationProblem(two_node(300.0, 2.0), ()))
    assert allocation_to_sim(res, SimConfig(300.0)).sources == ()


def test_feasible_allocation_simulates_without_loss():
    res = three_app_result(250.0)
    assert sum(res.throughput.values()) <= 250.0
    m = run(allocation_to_sim(res, SimConfig(250.0, duration=10.0)))
    assert m.total("dropped") == 0


def test_allocation_off_bottleneck_rejected():
    curve = DelayCurve.constant(1, 1000)
    topo = Topology(frozenset("SRC"), {("S", "R"): Link(1000, curve), ("R", "C"): Link(1000, curve)})
    grid = UtilityGrid((50.0,), (10.0,), ((3.0,),))
    res = solve(AllocationProblem(topo, (ApplicationFlow("a", "X", "S", "C", grid),)))
    with pytest.raises(ConfigError, match="S->R"):
        allocation_to_sim(res, SimConfig(1000.0), bottleneck=("R", "C"))
