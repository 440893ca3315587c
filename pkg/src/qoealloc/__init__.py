"""QoE-fair network allocation with a packet-level validation simulator."""

__version__ = "0.1.0"
