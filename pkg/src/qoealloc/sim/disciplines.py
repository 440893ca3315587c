"""Per-flow rate limiters and the AIMD window rule.

Times are microseconds, rates kbps, sizes bytes. 1 kbps moves one bit per
millisecond, so a packet of ``n`` bytes takes ``n * 8 / rate`` ms.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from ..errors import ConfigError


def tx_time_us(pkt_len: float, rate_kbps: float) -> float:
    return pkt_len * 8.0 / rate_kbps * 1000.0


def next_departure(now: float, pkt_len: float, target_rate: float) -> float:
    """Earliest time the next packet may leave a pacer running at ``target_rate``."""
    if not target_rate > 0:
        raise ConfigError(f"target rate must be > 0, got {target_rate}")
    return now + tx_time_us(pkt_len, target_rate)


@dataclass(frozen=True)
class Decision:
    action: str  # "transmit" | "enqueue" | "drop"
    time: float | None = None  # release time for transmit/enqueue


class Pacer:
    """Spaces departures at the target rate; never drops."""

    def __init__(self, rate_kbps: float):
        if not rate_kbps > 0:
            raise ConfigError(f"pacing rate must be > 0, got {rate_kbps}")
        self.rate = rate_kbps
        self.next_free = 0.0

    def admit(self, pkt_len: int, now: float) -> Decision:
        t = max(now, self.next_free)
        self.next_free = next_departure(t, pkt_len, self.rate)
        return Decision("transmit", t)


class _TokenBucket:
    def __init__(self, rate_kbps: float, bucket_bytes: float):
        if not rate_kbps > 0:
            raise ConfigError(f"token rate must be > 0, got {rate_kbps}")
        if bucket_bytes <= 0:
            raise ConfigError(f"bucket must be > 0 bytes, got {bucket_bytes}")
        self.rate = rate_kbps
        self.bucket = float(bucket_bytes)
        self.tokens = float(bucket_bytes)  # starts full
        self.stamp = 0.0

    def refill(self, now: float) -> None:
        if now > self.stamp:
            self.tokens = min(self.bucket, self.tokens + (now - self.stamp) * self.rate / 8000.0)
            self.stamp = now


class Policer(_TokenBucket):
    """Token bucket that drops non-conforming packets."""

    def admit(self, pkt_len: int, now: float) -> Decision:
        self.refill(now)
        if self.tokens >= pkt_len:
            self.tokens -= pkt_len
            return Decision("transmit", now)
        return Decision("drop")


class Shaper(_TokenBucket):
    """Token bucket that holds non-conforming packets in a bounded FIFO."""

    def __init__(self, rate_kbps: float, bucket_bytes: float, queue_bytes: float):
        super().__init__(rate_kbps, bucket_bytes)
        if queue_bytes < 0:
            raise ConfigError("shaper queue must be >= 0 bytes")
        self.queue_limit = queue_bytes
        self.pending: deque[tuple[float, int]] = deque()  # (release time, size)
        self.queued = 0

    def admit(self, pkt_len: int, now: float) -> Decision:
        while self.pending and self.pending[0][0] <= now:
            self.queued -= self.pending.popleft()[1]
        if not self.pending:
            self.refill(now)
            if self.tokens >= pkt_len:
                self.tokens -= pkt_len
                return Decision("transmit", now)
        if self.queued + pkt_len > self.queue_limit:
            return Decision("drop")
        # release once the FIFO ahead has drained and enough tokens accrued
        start = max(now, self.stamp)
        self.refill(start)
        release = start + max(0.0, pkt_len - self.tokens) * 8000.0 / self.rate
        self.refill(release)
        self.tokens -= pkt_len
        self.pending.append((release, pkt_len))
        self.queued += pkt_len
        return Decision("enqueue", release)


@dataclass(frozen=True)
class AimdState:
    cwnd: float  # bytes
    mss: int = 1500
    ssthresh: float = float("inf")


def aimd_step(state: AimdState, event: str) -> AimdState:
    """Advance the congestion window on one ``"ack"`` or ``"loss"``."""
    mss = state.mss
    if event == "loss":
        cwnd = max(float(mss), state.cwnd / 2)
        return AimdState(cwnd, mss, cwnd)
    if event != "ack":
        raise ValueError(f"unknown AIMD event {event!r}")
    if state.cwnd < state.ssthresh:
        return AimdState(state.cwnd + mss, mss, state.ssthresh)
    return AimdState(state.cwnd + mss * mss / state.cwnd, mss, state.ssthresh)
