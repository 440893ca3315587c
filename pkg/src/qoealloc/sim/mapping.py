from __future__ import annotations

from dataclasses import replace

from ..allocation.model import AllocationResult
from ..errors import ConfigError
from ..topology import LinkKey, path_links
from .config import SimConfig, SourceSpec

VOIP_PKT_BYTES = 20
VOIP_OFFERED_KBPS = 8.0  # 20 B at 50 packets/s


def allocation_to_sim(
    result: AllocationResult, template: SimConfig, bottleneck: LinkKey | None = None
) -> SimConfig:
    """One paced source per application at its allocated throughput, ordered by app id.

    Voice applications keep their native 20 B / 50 pps stream under the
    pacer. When ``bottleneck`` is given, every allocated path must stay on
    that link.
    """
    sources = []
    for app_id, choice in sorted(result.assignment.items()):
        links = path_links(tuple(choice.path))
        if bottleneck is not None and any(l != tuple(bottleneck) for l in links):
            extra = [l for l in links if l != tuple(bottleneck)]
            raise ConfigError(
                f"app {app_id} is routed over {extra[0][0]}->{extra[0][1]}, which the simulated bottleneck does not model"
            )
        rate = result.throughput[app_id]
        if result.app_types.get(app_id) == "VoIP":
            spec = SourceSpec(app_id, "paced", rate=rate, pkt_len=VOIP_PKT_BYTES,
                              offered=min(rate, VOIP_OFFERED_KBPS), app_id=app_id)
        else:
            spec = SourceSpec(app_id, "paced", rate=rate, app_id=app_id)
        sources.append(spec)
    return replace(template, sources=tuple(sources))
