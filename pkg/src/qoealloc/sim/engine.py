"""Event loop: sources feeding one drop-tail bottleneck.

Events are ordered by (integer microsecond, flow index, sequence number).
The bottleneck is a virtual FIFO: a packet's departure time is fixed when
it is accepted, so no dequeue events are needed and work conservation
holds by construction. Service times are kept as float microseconds
because small voice packets serialize in under two microseconds.
"""

from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from pathlib import Path

import numpy as np

from .config import FlowMetrics, LinkMetrics, SimConfig, SimMetrics, SourceSpec
from .disciplines import AimdState, Pacer, Policer, Shaper, aimd_step, tx_time_us

_EMIT, _INJECT, _ACK, _LOSS = 0, 1, 2, 3


class _Source:
    __slots__ = ("spec", "index", "metrics", "limiter", "gap", "next_t", "aimd", "inflight", "seq", "recovery")

    def __init__(self, spec: SourceSpec, index: int, line_rate: float):
        self.spec = spec
        self.index = index
        size = spec.mss if spec.discipline == "aimd" else spec.pkt_len
        self.metrics = FlowMetrics(spec.flow_id, spec.app_id, size)
        self.limiter = None
        self.gap = 0.0  # application inter-packet time, 0 = always backlogged
        self.aimd = None
        self.inflight = 0
        self.seq = 0
        self.recovery = -1
        d = spec.discipline
        if d == "paced":
            self.limiter = Pacer(spec.rate)
            if spec.offered is not None and spec.offered < spec.rate:
                self.gap = tx_time_us(spec.pkt_len, spec.offered)
        elif d == "cbr":
            self.gap = tx_time_us(spec.pkt_len, spec.rate)
        elif d in ("policed", "shaped"):
            offered = spec.offered if spec.offered is not None else line_rate
            self.gap = tx_time_us(spec.pkt_len, offered)
            if d == "policed":
                self.limiter = Policer(spec.rate, spec.bucket)
            else:
                self.limiter = Shaper(spec.rate, spec.bucket, spec.queue)
        else:
            self.aimd = AimdState(float(spec.initial_window * spec.mss), spec.mss)


def run(config: SimConfig, trace: str | Path | None = None) -> SimMetrics:
    """Simulate ``config`` and return metrics for the [warmup, duration) window."""
    config.validate()
    rng = np.random.default_rng(config.rng_seed)
    specs = sorted(config.sources, key=lambda s: s.flow_id)
    draws = rng.uniform(0.0, config.max_start_jitter, size=len(specs))
    cap = float(config.bottleneck_capacity)
    ser_per_byte = 8000.0 / cap  # µs per byte
    rtt_base = 2000.0 * config.base_delay  # µs
    base_ms = float(config.base_delay)
    buf = config.buffer_size
    warm = int(round(config.warmup * 1e6))
    end = int(round(config.duration * 1e6))

    sources = [_Source(s, i, cap) for i, s in enumerate(specs)]
    heap: list = []
    counter = 0
    for src, draw in zip(sources, draws):
        jitter = src.spec.start_jitter if src.spec.start_jitter is not None else float(draw)
        start = jitter * 1000.0
        src.next_t = start
        heap.append((math.ceil(start), src.index, counter, _EMIT, start, 0))
        counter += 1
    heapq.heapify(heap)

    fifo: deque = deque()  # (depart µs, size, flow index)
    busy = 0.0
    qbytes = 0
    max_qb = max_qp = 0
    busy_in_window = 0.0
    arrivals = link_drops = 0
    qdelays: list[float] = []
    log: list | None = [] if trace is not None else None
    events = 0

    def inject(now: int, src: _Source, size: int, emitted: int):
        """Offer one packet to the bottleneck; return its departure time or None if dropped."""
        nonlocal busy, qbytes, max_qb, max_qp, busy_in_window, arrivals, link_drops
        while fifo and fifo[0][0] <= now:
            dep, sz, fi = fifo.popleft()
            qbytes -= sz
            if log is not None:
                log.append((math.ceil(dep), sources[fi].spec.flow_id, "deq", qbytes))
        in_window = warm <= now < end
        m = src.metrics
        counted = warm <= emitted < end
        if in_window:
            arrivals += 1
        if qbytes + size > buf:
            if in_window:
                link_drops += 1
            if counted:
                m.dropped += 1
            if log is not None:
                log.append((now, src.spec.flow_id, "drop", qbytes))
            return None
        start = busy if busy > now else float(now)
        dep = start + size * ser_per_byte
        busy = dep
        fifo.append((dep, size, src.index))
        qbytes += size
        if log is not None:
            log.append((now, src.spec.flow_id, "enq", qbytes))
        if in_window:
            busy_in_window += max(0.0, min(dep, end) - max(start, warm))
            qdelays.append(start - now)
            if qbytes > max_qb:
                max_qb = qbytes
            if len(fifo) > max_qp:
                max_qp = len(fifo)
        if counted:
            m.delivered += 1
            m.delivered_bytes += size
            m.send_times.append(emitted / 1e6)
            m.delays.append(base_ms + (dep - emitted) / 1000.0)
        return dep

    def aimd_send(now: int, src: _Source) -> None:
        nonlocal counter
        mss = src.spec.mss
        while src.inflight + mss <= src.aimd.cwnd and now < end:
            seq = src.seq
            src.seq += 1
            src.inflight += mss
            if warm <= now < end:
                src.metrics.sent += 1
            dep = inject(now, src, mss, now)
            if dep is None:
                t, kind = busy + rtt_base, _LOSS
            else:
                t, kind = dep + rtt_base, _ACK
            heapq.heappush(heap, (math.ceil(t), src.index, counter, kind, seq, 0))
            counter += 1

    while heap:
        now, fi, _, kind, a, b = heapq.heappop(heap)
        if now >= end and kind != _INJECT:
            continue  # sources stop at the horizon; held packets still drain
        events += 1
        src = sources[fi]
        spec = src.spec
        if kind == _EMIT:
            if spec.discipline == "aimd":
                aimd_send(now, src)
                continue
            emitted = now
            if warm <= now < end:
                src.metrics.sent += 1
            lim = src.limiter
            if src.gap == 0.0:
                # backlogged pacer: the next packet is ready exactly when allowed
                lim.admit(spec.pkt_len, src.next_t)
                inject(now, src, spec.pkt_len, emitted)
                src.next_t = lim.next_free
            else:
                decision = lim.admit(spec.pkt_len, src.next_t) if lim is not None else None
                if decision is None or (decision.action == "transmit" and decision.time <= now):
                    inject(now, src, spec.pkt_len, emitted)
                elif decision.action == "drop":
                    if warm <= emitted < end:
                        src.metrics.dropped += 1
                else:
                    heapq.heappush(heap, (math.ceil(decision.time), fi, counter, _INJECT, emitted, 0))
                    counter += 1
                src.next_t += src.gap
            heapq.heappush(heap, (math.ceil(src.next_t), fi, counter, _EMIT, 0, 0))
            counter += 1
        elif kind == _INJECT:
            inject(now, src, spec.pkt_len, a)
        else:
            src.inflight -= spec.mss
            if kind == _ACK:
                src.aimd = aimd_step(src.aimd, "ack")
            elif a > src.recovery:
                # one window reduction per loss episode
                src.aimd = aimd_step(src.aimd, "loss")
                src.recovery = src.seq - 1
            aimd_send(now, src)

    if log is not None:
        while fifo:
            dep, sz, fi = fifo.popleft()
            qbytes -= sz
            log.append((math.ceil(dep), sources[fi].spec.flow_id, "deq", qbytes))
        _write_trace(trace, log)

    span = (end - warm) / 1e6
    flows = {}
    for src in sources:
        m = src.metrics
        m.throughput = m.delivered_bytes * 8 / span / 1000.0
        if m.delays:
            d = np.asarray(m.delays)
            m.mean_delay = float(d.mean())
            m.jitter = float(np.abs(np.diff(d)).mean()) if len(d) > 1 else 0.0
        flows[m.flow_id] = m
    q = np.asarray(qdelays) / 1000.0
    link = LinkMetrics(
        max_queue_bytes=max_qb,
        max_queue_packets=max_qp,
        utilization=min(1.0, busy_in_window / (end - warm)),
        queue_delay_p95=float(np.percentile(q, 95)) if len(q) else 0.0,
        queue_delay_mean=float(q.mean()) if len(q) else 0.0,
        loss=link_drops / arrivals if arrivals else 0.0,
    )
    return SimMetrics(flows, link, (config.warmup, config.duration), events)


def _write_trace(path: str | Path, log: list) -> None:
    order = sorted(range(len(log)), key=lambda i: (log[i][0], i))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_us", "flow_id", "event", "queue_bytes"])
        for i in order:
            w.writerow(log[i])
