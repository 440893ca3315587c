"""QoE models for the five application classes and quantized utility grids.

All public evaluators return utilities on the common ``[1, 5]`` scale.
Throughput is in kbps, delay and response time in ms, waiting times in s.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DomainError, GridBuildError, GridLoadError, OutOfRangeError

UTILITY_MIN = 1.0
UTILITY_MAX = 5.0

WEB_MOS_MAX = 4.6
SSH_MOS_MAX = 4.3
VOIP_MOS_MAX = 3.65

# average bitrates (kbps) of the six encoded quality levels
VOD_LADDER = (486.0, 944.0, 1389.0, 1847.0, 2291.0, 2750.0)
LIVE_LADDER = (572.0, 1103.0, 1625.0, 2145.0, 2660.0, 3172.0)

CLASSES = ("WEB", "DL", "SSH", "VoIP", "VoD", "Live")

DEFAULT_TP_RANGE = {
    "DL": (100.0, 5000.0),
    "WEB": (100.0, 12000.0),
    "VoD": (750.0, 5000.0),
    "Live": (750.0, 5000.0),
    "VoIP": (100.0, 500.0),
    "SSH": (100.0, 500.0),
}
DEFAULT_D_RANGE = {
    "DL": (0.0, 240.0),
    "WEB": (0.0, 240.0),
    "VoD": (0.0, 240.0),
    "Live": (0.0, 240.0),
    "VoIP": (0.0, 500.0),
    "SSH": (0.0, 500.0),
}
# 8 delay levels over 240 ms give ~34 ms spacing; the 500 ms classes get
# 15 levels to keep the same delay resolution.
DEFAULT_STEPS = {
    "DL": (12, 8),
    "WEB": (12, 8),
    "VoD": (12, 8),
    "Live": (12, 8),
    "VoIP": (12, 15),
    "SSH": (12, 15),
}

DL_SIZE_KBIT = 80000.0  # 10 MB attachment
WEB_PAGE_BYTES = 1.3e6
WEB_OBJECTS = 22
WEB_CONNECTIONS = 6
VOIP_RATE_KBPS = 8.0  # 20 B payloads at 50 packets/s


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def mos_web(page_load_time: float) -> float:
    """Web browsing MOS from page load time in seconds, clamped to [1, 5]."""
    if not page_load_time > 0:
        raise DomainError(f"page load time must be > 0 s, got {page_load_time}")
    return _clamp(-0.88 * math.log(page_load_time) + 4.72, 1.0, 5.0)


def mos_dl(download_time: float) -> float:
    """File download MOS from download time in seconds, clamped to [1, 5]."""
    if not download_time > 0:
        raise DomainError(f"download time must be > 0 s, got {download_time}")
    return _clamp(-1.68 * math.log(download_time) + 9.61, 1.0, 5.0)


def scale_mos(mos: float, mos_max: float) -> float:
    """Stretch a MOS model whose range tops out at ``mos_max`` onto [1, 5]."""
    if not 1.0 < mos_max <= 5.0:
        raise DomainError(f"mos_max must lie in (1, 5], got {mos_max}")
    if not 1.0 <= mos <= mos_max:
        raise DomainError(f"mos {mos} outside [1, {mos_max}]")
    return (mos - 1.0) * 4.0 / (mos_max - 1.0) + 1.0


def u_web(page_load_time: float) -> float:
    return scale_mos(min(mos_web(page_load_time), WEB_MOS_MAX), WEB_MOS_MAX)


def u_dl(download_time: float) -> float:
    return mos_dl(download_time)


@dataclass(frozen=True)
class SshAnchorTable:
    """Response-time (ms) to MOS anchors for remote terminal work.

    The defaults are a configurable reading of a published opinion-score
    curve; only the 0 ms and 1200 ms endpoints are fixed.
    """

    points: tuple[tuple[float, float], ...] = (
        (0.0, 4.3),
        (120.0, 4.0),
        (250.0, 3.3),
        (375.0, 2.6),
        (500.0, 2.0),
        (1200.0, 1.0),
    )

    def __post_init__(self) -> None:
        rts = [p[0] for p in self.points]
        if len(rts) < 2 or any(b <= a for a, b in zip(rts, rts[1:])):
            raise ConfigError("SSH anchor response times must be strictly ascending")
        if rts[0] > 0.0 or rts[-1] < 1200.0:
            raise ConfigError("SSH anchors must cover [0, 1200] ms")
        if any(not 1.0 <= m <= SSH_MOS_MAX for _, m in self.points):
            raise ConfigError(f"SSH anchor MOS values must lie in [1, {SSH_MOS_MAX}]")

    def mos(self, response_time: float) -> float:
        rts = [p[0] for p in self.points]
        i = bisect.bisect_right(rts, response_time) - 1
        if i >= len(rts) - 1:
            return self.points[-1][1]
        (x0, y0), (x1, y1) = self.points[i], self.points[i + 1]
        return y0 + (y1 - y0) * (response_time - x0) / (x1 - x0)


DEFAULT_SSH_ANCHORS = SshAnchorTable()


def u_ssh(response_time: float, anchors: SshAnchorTable = DEFAULT_SSH_ANCHORS) -> float:
    """Remote terminal utility; response times past 1200 ms floor at 1."""
    if response_time < 0:
        raise DomainError(f"response time must be >= 0 ms, got {response_time}")
    if response_time >= 1200.0:
        return UTILITY_MIN
    return scale_mos(anchors.mos(response_time), SSH_MOS_MAX)


def u_has(q_avg: float, q_min: float, q_max: float) -> float:
    """Adaptive streaming utility from the average played quality level."""
    if not q_min < q_max:
        raise DomainError(f"degenerate quality range [{q_min}, {q_max}]")
    if not q_min <= q_avg <= q_max:
        raise DomainError(f"average quality {q_avg} outside [{q_min}, {q_max}]")
    return (q_avg - q_min) / (q_max - q_min) * 4.0 + 1.0


_VOIP_KEYS = "abcdefghij"


@dataclass(frozen=True)
class VoipCoefficients:
    """Coefficients of a bivariate cubic MOS polynomial for VoIP.

    ``x`` is packet loss in percent and ``y`` one-way delay in ms::

        MOS = a + b x + c y + d x^2 + e y^2 + f x y + g x^3 + h y^3 + i x^2 y + j x y^2

    The shipped defaults are a calibration, not the published codec table;
    pass a coefficient file to use the real values.
    """

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float
    g: float
    h: float
    i: float
    j: float
    mos_min: float = 1.0
    mos_max: float = VOIP_MOS_MAX

    @classmethod
    def from_mapping(cls, data: Mapping[str, float]) -> "VoipCoefficients":
        missing = [k for k in _VOIP_KEYS if k not in data]
        if missing:
            raise ConfigError(f"VoIP coefficients missing: {', '.join(missing)}")
        values = {}
        for fld in fields(cls):
            if fld.name in data:
                v = float(data[fld.name])
                if not math.isfinite(v):
                    raise ConfigError(f"VoIP coefficient {fld.name} is not finite")
                values[fld.name] = v
        return cls(**values)

    @classmethod
    def default(cls) -> "VoipCoefficients":
        text = resources.files("qoealloc").joinpath("data/voip_default.json").read_text()
        return cls.from_mapping(json.loads(text))

    def mos(self, loss: float, delay: float) -> float:
        x, y = 100.0 * loss, delay
        raw = (
            self.a + self.b * x + self.c * y
            + self.d * x * x + self.e * y * y + self.f * x * y
            + self.g * x ** 3 + self.h * y ** 3 + self.i * x * x * y + self.j * x * y * y
        )
        return _clamp(raw, self.mos_min, self.mos_max)


def load_voip_coefficients(path: str | Path) -> VoipCoefficients:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read VoIP coefficients from {path}: {exc}") from None
    return VoipCoefficients.from_mapping(data)


_DEFAULT_VOIP: VoipCoefficients | None = None


def default_voip() -> VoipCoefficients:
    global _DEFAULT_VOIP
    if _DEFAULT_VOIP is None:
        _DEFAULT_VOIP = VoipCoefficients.default()
    return _DEFAULT_VOIP


def u_voip(loss: float, delay: float, coeffs: VoipCoefficients | None = None) -> float:
    if coeffs is None:
        coeffs = default_voip()
    if not 0.0 <= loss <= 1.0:
        raise DomainError(f"loss fraction must lie in [0, 1], got {loss}")
    if delay < 0:
        raise DomainError(f"delay must be >= 0 ms, got {delay}")
    mos = coeffs.mos(loss, delay)
    return scale_mos(mos, coeffs.mos_max)


# --- KPI synthesis -------------------------------------------------------

def web_page_load_time(tp_kbps: float, delay_ms: float) -> float:
    """Seconds to fetch the reference page over persistent connections."""
    rounds = math.ceil(WEB_OBJECTS / WEB_CONNECTIONS) + 1
    return (WEB_PAGE_BYTES * 8.0 / tp_kbps) / 1000.0 + rounds * delay_ms / 1000.0


def dl_download_time(tp_kbps: float, delay_ms: float, size_kbit: float = DL_SIZE_KBIT) -> float:
    return size_kbit / tp_kbps + 2.0 * delay_ms / 1000.0


def video_quality_level(tp_kbps: float, delay_ms: float, live: bool) -> int:
    ladder, headroom = (LIVE_LADDER, 0.8) if live else (VOD_LADDER, 0.9)
    level = 0
    for i, rate in enumerate(ladder):
        if rate <= headroom * tp_kbps:
            level = i
    if live and delay_ms > 120.0:
        level = max(0, level - 1)
    return level


UtilityModel = Callable[[float, float], float]


def class_model(
    name: str,
    *,
    ssh_anchors: SshAnchorTable = DEFAULT_SSH_ANCHORS,
    voip: VoipCoefficients | None = None,
) -> UtilityModel:
    """Return the analytic (throughput kbps, delay ms) -> utility model of a class."""

    def web(tp: float, d: float) -> float:
        return u_web(web_page_load_time(tp, d)) if tp > 0 else UTILITY_MIN

    def dl(tp: float, d: float) -> float:
        return u_dl(dl_download_time(tp, d)) if tp > 0 else UTILITY_MIN

    def ssh(tp: float, d: float) -> float:
        return u_ssh(d, ssh_anchors)

    def voip_model(tp: float, d: float) -> float:
        loss = 1.0 if tp <= 0 else max(0.0, 1.0 - tp / VOIP_RATE_KBPS)
        return u_voip(loss, d, voip)

    def vod(tp: float, d: float) -> float:
        return u_has(video_quality_level(tp, d, live=False), 0, len(VOD_LADDER) - 1)

    def live(tp: float, d: float) -> float:
        return u_has(video_quality_level(tp, d, live=True), 0, len(LIVE_LADDER) - 1)

    models = {"WEB": web, "DL": dl, "SSH": ssh, "VoIP": voip_model, "VoD": vod, "Live": live}
    try:
        return models[name]
    except KeyError:
        raise ConfigError(f"unknown application class {name!r}; expected one of {CLASSES}") from None


# --- grids ---------------------------------------------------------------

@dataclass(frozen=True)
class UtilityGrid:
    """Quantized utility over (throughput level, delay level), indexed ``[tp][d]``."""

    tp_levels: tuple[float, ...]
    d_levels: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]
    repairs: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tp_levels", tuple(float(x) for x in self.tp_levels))
        object.__setattr__(self, "d_levels", tuple(float(x) for x in self.d_levels))
        object.__setattr__(self, "values", tuple(tuple(float(x) for x in row) for row in self.values))
        problems = grid_problems(self.tp_levels, self.d_levels, self.values)
        if problems:
            r, c, msg = problems[0]
            raise GridLoadError(f"invalid utility grid at row {r}, column {c}: {msg}")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.tp_levels), len(self.d_levels)

    @property
    def size(self) -> int:
        return len(self.tp_levels) * len(self.d_levels)

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def max(self) -> float:
        return max(max(row) for row in self.values)


def grid_problems(
    tp_levels: Sequence[float], d_levels: Sequence[float], values: Sequence[Sequence[float]]
) -> list[tuple[int, int, str]]:
    """Invariant violations as (tp row, d column, message); -1 marks a whole axis."""
    out: list[tuple[int, int, str]] = []
    if not tp_levels or not d_levels:
        out.append((-1, -1, "grid needs at least one throughput and one delay level"))
        return out
    for i, (a, b) in enumerate(zip(tp_levels, tp_levels[1:])):
        if not b > a:
            out.append((i + 1, -1, "throughput levels not ascending"))
    for j, (a, b) in enumerate(zip(d_levels, d_levels[1:])):
        if not b > a:
            out.append((-1, j + 1, "delay levels not ascending"))
    if len(values) != len(tp_levels) or any(len(row) != len(d_levels) for row in values):
        out.append((-1, -1, "value matrix dimensions do not match levels"))
        return out
    for i, row in enumerate(values):
        for j, v in enumerate(row):
            if not (UTILITY_MIN <= v <= UTILITY_MAX):
                out.append((i, j, f"utility {v} outside [1, 5]"))
            if i > 0 and v < values[i - 1][j]:
                out.append((i, j, "utility decreases with throughput"))
            if j > 0 and v > row[j - 1]:
                out.append((i, j, "utility increases with delay"))
    return out


def _monotone_repair(values: np.ndarray) -> tuple[np.ndarray, list[str]]:
    log: list[str] = []
    fixed = np.clip(values, UTILITY_MIN, UTILITY_MAX)
    for i, j in zip(*np.nonzero(fixed != values)):
        log.append(f"({i},{j}): clamped {values[i, j]} into [1, 5]")
    # running max along throughput, then running min along delay; the second
    # pass preserves the first because a min of non-decreasing rows stays
    # non-decreasing
    stepped = np.maximum.accumulate(fixed, axis=0)
    stepped = np.minimum.accumulate(stepped, axis=1)
    for i, j in zip(*np.nonzero(stepped != fixed)):
        log.append(f"({i},{j}): monotone repair {fixed[i, j]} -> {stepped[i, j]}")
    return stepped, log


def levels(lo: float, hi: float, steps: int) -> tuple[float, ...]:
    if steps < 1:
        raise ConfigError("grid needs at least one step per axis")
    if steps == 1:
        return (float(lo),)
    if not hi > lo:
        raise ConfigError(f"empty range [{lo}, {hi}]")
    return tuple(float(x) for x in np.linspace(lo, hi, steps))


def build_grid(
    model: UtilityModel,
    tp_range: tuple[float, float],
    d_range: tuple[float, float],
    tp_steps: int,
    d_steps: int,
) -> UtilityGrid:
    """Evaluate ``model`` on an evenly spaced grid; repairs are logged on the result."""
    tps = levels(*tp_range, tp_steps)
    ds = levels(*d_range, d_steps)
    raw = np.empty((len(tps), len(ds)))
    for i, tp in enumerate(tps):
        for j, d in enumerate(ds):
            try:
                v = float(model(tp, d))
            except Exception as exc:
                raise GridBuildError(f"model failed at tp={tp} kbps, d={d} ms: {exc}") from exc
            if not math.isfinite(v):
                raise GridBuildError(f"model returned {v} at tp={tp} kbps, d={d} ms")
            raw[i, j] = v
    fixed, log = _monotone_repair(raw)
    return UtilityGrid(tps, ds, tuple(map(tuple, fixed.tolist())), tuple(log))


def builtin_grid(
    name: str,
    *,
    tp_steps: int | None = None,
    d_steps: int | None = None,
    ssh_anchors: SshAnchorTable = DEFAULT_SSH_ANCHORS,
    voip: VoipCoefficients | None = None,
) -> UtilityGrid:
    model = class_model(name, ssh_anchors=ssh_anchors, voip=voip)
    default_tp, default_d = DEFAULT_STEPS[name]
    return build_grid(
        model,
        DEFAULT_TP_RANGE[name],
        DEFAULT_D_RANGE[name],
        tp_steps or default_tp,
        d_steps or default_d,
    )


def grid_lookup(grid: UtilityGrid, tp_index: int, d_index: int) -> float:
    n_tp, n_d = grid.shape
    if not (0 <= tp_index < n_tp and 0 <= d_index < n_d):
        raise OutOfRangeError(f"grid index ({tp_index}, {d_index}) outside {n_tp}x{n_d}")
    return grid.values[tp_index][d_index]


def save_grid(grid: UtilityGrid, path: str | Path) -> None:
    """Write the CSV layout: header of delay levels, first column throughput levels."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tp_kbps\\d_ms", *(repr(d) for d in grid.d_levels)])
        for tp, row in zip(grid.tp_levels, grid.values):
            w.writerow([repr(tp), *(repr(v) for v in row)])


def load_grid(path: str | Path, repair: bool = False) -> UtilityGrid:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise GridLoadError(f"cannot read grid {path}: {exc}") from None
    if len(rows) < 2:
        raise GridLoadError(f"{path}: need a header row and at least one data row")

    def num(text: str, r: int, c: int) -> float:
        try:
            v = float(text)
        except ValueError:
            raise GridLoadError(f"{path}: row {r}, column {c}: not a number: {text!r}") from None
        if not math.isfinite(v):
            raise GridLoadError(f"{path}: row {r}, column {c}: non-finite value")
        return v

    d_levels = [num(t, 1, c + 2) for c, t in enumerate(rows[0][1:])]
    tp_levels, values = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(d_levels) + 1:
            raise GridLoadError(f"{path}: row {r} has {len(row) - 1} values, expected {len(d_levels)}")
        tp_levels.append(num(row[0], r, 1))
        values.append([num(t, r, c + 2) for c, t in enumerate(row[1:])])

    problems = grid_problems(tp_levels, d_levels, values)
    ordering = [p for p in problems if "ascending" in p[2] or "dimensions" in p[2] or "at least" in p[2]]
    if ordering or (problems and not repair):
        r, c, msg = (ordering or problems)[0]
        # file rows/columns: header is row 1, levels are column 1
        loc = f"row {r + 2 if r >= 0 else '-'}, column {c + 2 if c >= 0 else '-'}"
        raise GridLoadError(f"{path}: {loc}: {msg}")
    log: list[str] = []
    if problems:
        fixed, log = _monotone_repair(np.array(values, dtype=float))
        values = fixed.tolist()
    return UtilityGrid(tuple(tp_levels), tuple(d_levels), tuple(map(tuple, values)), tuple(log))
