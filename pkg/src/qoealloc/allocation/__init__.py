"""Two-stage QoE-fair allocation of throughput, delay budgets and paths."""

from .heuristic import solve_heuristic
from .model import (
    D_MAX,
    AllocationProblem,
    AllocationResult,
    ApplicationFlow,
    Choice,
    Evaluation,
    SegmentEncoding,
    SolverStats,
    encode_delay_segments,
    evaluate,
    network_state,
)
from .oracle import ORACLE_BUDGET, brute_force_oracle, search_space
from .solver import solve, solve_stage1, solve_stage2

__all__ = [
    "D_MAX",
    "AllocationProblem",
    "AllocationResult",
    "ApplicationFlow",
    "Choice",
    "Evaluation",
    "SegmentEncoding",
    "SolverStats",
    "ORACLE_BUDGET",
    "brute_force_oracle",
    "encode_delay_segments",
    "evaluate",
    "network_state",
    "search_space",
    "solve",
    "solve_heuristic",
    "solve_stage1",
    "solve_stage2",
]
