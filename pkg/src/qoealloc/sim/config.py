from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

from ..errors import ConfigError

DISCIPLINES = ("paced", "policed", "shaped", "aimd", "cbr")


@dataclass(frozen=True)
class SourceSpec:
    """One traffic source feeding the bottleneck.

    ``offered`` is the application's own sending rate in kbps; ``None``
    means the application always has data. ``start_jitter`` in ms is drawn
    from the run's RNG when left unset.
    """

    flow_id: str
    discipline: str
    rate: float | None = None  # kbps; paced, policed, shaped, cbr
    bucket: int | None = None  # bytes; policed, shaped
    queue: int | None = None  # bytes; shaped
    mss: int = 1500  # aimd
    initial_window: int = 10  # aimd, in segments
    pkt_len: int = 1500
    offered: float | None = None
    start_jitter: float | None = None
    app_id: str | None = None

    def problems(self) -> list[str]:
        name = f"source {self.flow_id}"
        out = []
        if self.discipline not in DISCIPLINES:
            return [f"{name}: unknown discipline {self.discipline!r}"]
        if self.discipline != "aimd" and not (self.rate is not None and self.rate > 0):
            out.append(f"{name}: rate must be > 0")
        if self.discipline in ("policed", "shaped") and not (self.bucket and self.bucket > 0):
            out.append(f"{name}: bucket must be > 0 bytes")
        if self.discipline == "shaped" and (self.queue is None or self.queue < 0):
            out.append(f"{name}: shaper queue must be >= 0 bytes")
        if self.discipline == "aimd":
            if not 64 <= self.mss <= 9000:
                out.append(f"{name}: mss must lie in [64, 9000]")
            if self.initial_window < 1:
                out.append(f"{name}: initial window must be >= 1")
        # application-limited voice streams use tiny payloads; bulk sources are framed
        low = 1 if self.discipline == "cbr" or self.offered is not None else 64
        if not low <= self.pkt_len <= 9000:
            out.append(f"{name}: pkt_len must lie in [{low}, 9000]")
        if self.offered is not None and not self.offered > 0:
            out.append(f"{name}: offered rate must be > 0")
        if self.start_jitter is not None and self.start_jitter < 0:
            out.append(f"{name}: start jitter must be >= 0")
        return out


@dataclass(frozen=True)
class SimConfig:
    bottleneck_capacity: float  # kbps
    base_delay: float = 2.0  # ms, one way
    duration: float = 60.0  # s
    warmup: float = 2.0  # s
    buffer_size: int = 1_000_000  # bytes
    rng_seed: int = 0
    sources: tuple[SourceSpec, ...] = ()
    max_start_jitter: float = 1000.0  # ms

    def problems(self) -> list[str]:
        out = []
        if not self.bottleneck_capacity > 0:
            out.append("bottleneck capacity must be > 0")
        if self.base_delay < 0:
            out.append("base delay must be >= 0")
        if not (self.duration > self.warmup >= 0):
            out.append("need duration > warmup >= 0")
        if not self.buffer_size > 0:
            out.append("buffer size must be > 0")
        ids = [s.flow_id for s in self.sources]
        if len(set(ids)) != len(ids):
            out.append("flow ids must be unique")
        for s in self.sources:
            out.extend(s.problems())
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["sources"] = [asdict(s) for s in self.sources]
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimConfig":
        data = dict(data)
        sources = tuple(SourceSpec(**s) for s in data.pop("sources", ()))
        return cls(sources=sources, **data)


@dataclass
class FlowMetrics:
    flow_id: str
    app_id: str | None
    pkt_bytes: int = 1500
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    delivered_bytes: int = 0
    throughput: float = 0.0  # kbps over the measurement window
    mean_delay: float = 0.0  # ms
    jitter: float = 0.0  # ms
    # per delivered packet: send time (s) and one-way delay (ms)
    send_times: list[float] = field(default_factory=list, repr=False)
    delays: list[float] = field(default_factory=list, repr=False)

    @property
    def loss(self) -> float:
        return self.dropped / self.sent if self.sent else 0.0

    def to_dict(self, samples: bool = False) -> dict[str, Any]:
        d = {
            "flow_id": self.flow_id,
            "app_id": self.app_id,
            "sent": self.sent,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "loss": self.loss,
            "throughput_kbps": self.throughput,
            "mean_delay_ms": self.mean_delay,
            "jitter_ms": self.jitter,
        }
        if samples:
            d["send_times_s"] = list(self.send_times)
            d["delays_ms"] = list(self.delays)
        return d


@dataclass
class LinkMetrics:
    max_queue_bytes: int = 0
    max_queue_packets: int = 0
    utilization: float = 0.0
    queue_delay_p95: float = 0.0  # ms
    queue_delay_mean: float = 0.0  # ms
    loss: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_queue_bytes": self.max_queue_bytes,
            "max_queue_packets": self.max_queue_packets,
            "utilization": self.utilization,
            "queue_delay_p95_ms": self.queue_delay_p95,
            "queue_delay_mean_ms": self.queue_delay_mean,
            "loss": self.loss,
        }


@dataclass
class SimMetrics:
    flows: dict[str, FlowMetrics]
    link: LinkMetrics
    window: tuple[float, float]  # measurement window, s
    events: int = 0

    def total(self, attr: str) -> int:
        return sum(getattr(f, attr) for f in self.flows.values())

    @property
    def loss(self) -> float:
        sent = self.total("sent")
        return self.total("dropped") / sent if sent else 0.0

    def to_dict(self, samples: bool = False) -> dict[str, Any]:
        return {
            "window_s": list(self.window),
            "link": self.link.to_dict(),
            "flows": [f.to_dict(samples) for _, f in sorted(self.flows.items())],
        }

