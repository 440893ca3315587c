"""Packet-level simulation of rate-limited and window-controlled sources on one bottleneck."""

from .config import DISCIPLINES, FlowMetrics, LinkMetrics, SimConfig, SimMetrics, SourceSpec
from .disciplines import AimdState, Decision, Pacer, Policer, Shaper, aimd_step, next_departure
from .engine import run
from .mapping import allocation_to_sim

__all__ = [
    "DISCIPLINES",
    "AimdState",
    "Decision",
    "FlowMetrics",
    "LinkMetrics",
    "Pacer",
    "Policer",
    "Shaper",
    "SimConfig",
    "SimMetrics",
    "SourceSpec",
    "aimd_step",
    "allocation_to_sim",
    "next_departure",
    "run",
]
