"""Fairness indices and per-type utility statistics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

SOURCES = ("allocated", "simulated")


@dataclass(frozen=True)
class UtilitySample:
    app_id: str
    app_type: str
    value: float
    source: str = "simulated"

    def __post_init__(self) -> None:
        if not 1.0 <= self.value <= 5.0:
            raise DomainError(f"utility {self.value} of {self.app_id} outside [1, 5]")
        if self.source not in SOURCES:
            raise DomainError(f"unknown sample source {self.source!r}")


def f_index(values: Sequence[float], low: float = 1.0, high: float = 5.0) -> float:
    """QoE fairness: one minus twice the population std over the scale width."""
    if len(values) == 0:
        raise DomainError("f_index needs at least one value")
    if not high > low:
        raise DomainError("scale top must exceed scale bottom")
    x = np.asarray(values, dtype=float)
    if np.any((x < low) | (x > high)):
        raise DomainError(f"values must lie in [{low}, {high}]")
    return float(min(1.0, max(0.0, 1.0 - 2.0 * x.std() / (high - low))))


def jain_index(values: Sequence[float]) -> float:
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise DomainError("jain_index needs at least one value")
    if np.any(x < 0):
        raise DomainError("jain_index needs non-negative values")
    sq = float(np.sum(x * x))
    if sq == 0:
        raise DomainError("jain_index is undefined when every value is zero")
    return float(x.sum()) ** 2 / (x.size * sq)


@dataclass
class Summary:
    per_type: dict[str, float]  # mean over apps of each app's p-th percentile
    per_app: dict[str, float]  # p-th percentile per app
    per_app_std: dict[str, float]
    overall: float | None
    notices: list[str]

    def to_dict(self) -> dict:
        return {
            "per_type": dict(sorted(self.per_type.items())),
            "per_app": dict(sorted(self.per_app.items())),
            "per_app_std": dict(sorted(self.per_app_std.items())),
            "overall": self.overall,
            "notices": list(self.notices),
        }


def percentile_summary(
    samples: Iterable[UtilitySample], p: float, types: Iterable[str] = ()
) -> Summary:
    """Per-app p-th percentile (linear interpolation), averaged per type.

    Types listed in ``types`` that have no samples are left out and
    reported in ``notices``.
    """
    if not 0.0 <= p <= 100.0:
        raise DomainError(f"percentile must lie in [0, 100], got {p}")
    by_app: dict[str, list[float]] = defaultdict(list)
    app_type: dict[str, str] = {}
    for s in samples:
        by_app[s.app_id].append(s.value)
        app_type[s.app_id] = s.app_type
    per_app, per_std = {}, {}
    by_type: dict[str, list[float]] = defaultdict(list)
    for app_id in sorted(by_app):
        vals = np.asarray(by_app[app_id])
        per_app[app_id] = float(np.percentile(vals, p, method="linear"))
        per_std[app_id] = float(vals.std())
        by_type[app_type[app_id]].append(per_app[app_id])
    notices = [f"type {t}: no samples" for t in sorted(set(types) - set(by_type))]
    per_type = {t: math.fsum(v) / len(v) for t, v in sorted(by_type.items())}
    overall = math.fsum(per_app.values()) / len(per_app) if per_app else None
    return Summary(per_type, per_app, per_std, overall, notices)
