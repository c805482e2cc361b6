"""Anchor grid over the pyramid levels and per-anchor training targets."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .geometry import AnnotationError, Interval, IntervalClass

DEFAULT_SIZE_LIMITS = (0.0, 0.546, 0.955, 1.588, 2.359, math.inf)


@dataclass(frozen=True)
class LevelConfig:
    sample_rate: int = 22050
    base_level: int = 7
    num_levels: int = 5
    size_limits: tuple[float, ...] = DEFAULT_SIZE_LIMITS
    beat_radius: float = 2.5
    downbeat_radius: float = 4.5
    # "stride": sub-box width = radius * level stride (default).
    # "length": literal reading, width = radius * interval length.
    sub_box_mode: str = "stride"

    def __post_init__(self) -> None:
        lim = tuple(float(m) for m in self.size_limits)
        object.__setattr__(self, "size_limits", lim)
        if len(lim) != self.num_levels + 1:
            raise ValueError(f"need {self.num_levels + 1} size limits, got {len(lim)}")
        if lim[0] != 0.0 or lim[-1] != math.inf:
            raise ValueError("size limits must start at 0 and end at +inf")
        if any(b <= a for a, b in zip(lim[:-1], lim[1:])):
            raise ValueError("size limits must be strictly ascending")
        if self.beat_radius <= 0 or self.downbeat_radius <= 0:
            raise ValueError("sub-box radii must be positive")
        if self.sub_box_mode not in ("stride", "length"):
            raise ValueError(f"unknown sub_box_mode {self.sub_box_mode!r}")

    @property
    def levels(self) -> range:
        return range(self.base_level, self.base_level + self.num_levels)

    def stride(self, level_idx: int) -> int:
        """Stride in samples of the level with 0-based index ``level_idx``."""
        return 2 ** (self.base_level + level_idx)

    def stride_seconds(self, level_idx: int) -> float:
        return self.stride(level_idx) / self.sample_rate

    def radius(self, cls: IntervalClass) -> float:
        return self.beat_radius if cls == IntervalClass.BEAT else self.downbeat_radius

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "base_level": self.base_level,
            "num_levels": self.num_levels,
            "size_limits": [m if math.isfinite(m) else "inf" for m in self.size_limits],
            "beat_radius": self.beat_radius,
            "downbeat_radius": self.downbeat_radius,
            "sub_box_mode": self.sub_box_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LevelConfig":
        d = dict(d)
        if "size_limits" in d:
            d["size_limits"] = tuple(float(m) for m in d["size_limits"])
        return cls(**d)


def level_for_length(s: float, cfg: LevelConfig) -> int:
    """0-based index of the level whose (m_{i-1}, m_i] contains ``s``."""
    if not s > 0:
        raise ValueError(f"interval length must be positive, got {s}")
    # bisect_left on the interior limits gives the half-open-on-the-left bins
    return bisect.bisect_left(cfg.size_limits[1:-1], s)


@dataclass(frozen=True)
class AnchorPoint:
    level: int
    index: int
    position: float


@dataclass
class AnchorGrid:
    track_len: int
    cfg: LevelConfig
    positions: list[np.ndarray]

    def points(self, level_idx: int) -> Iterator[AnchorPoint]:
        level = self.cfg.base_level + level_idx
        for i, p in enumerate(self.positions[level_idx]):
            yield AnchorPoint(level, i, float(p))

    def counts(self) -> list[int]:
        return [len(p) for p in self.positions]

    @property
    def duration(self) -> float:
        return self.track_len / self.cfg.sample_rate


def anchor_grid(track_len: int, cfg: LevelConfig) -> AnchorGrid:
    if track_len <= 0:
        raise ValueError("track_len must be positive")
    positions = []
    for li in range(cfg.num_levels):
        stride = cfg.stride(li)
        n = -(-track_len // stride)
        positions.append((np.arange(n) + 0.5) * stride / cfg.sample_rate)
    return AnchorGrid(track_len, cfg, positions)


def leftness(l, r):
    """sqrt(r / (l + r)): 1 at the left edge, falling to 0 at the right."""
    l = np.asarray(l, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return np.sqrt(r / (l + r))


def centerness(l, r):
    l = np.asarray(l, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return np.sqrt(np.minimum(l, r) / np.maximum(l, r))


QUALITY_FNS = {"leftness": leftness, "centerness": centerness}


@dataclass
class LevelTargets:
    cls: np.ndarray  # (N, 2) uint8
    reg: np.ndarray  # (N, 2) stride-normalised (l, r); NaN on negatives
    quality: np.ndarray  # (N,) leftness (or centerness) target; NaN on negatives
    matched: np.ndarray  # (N,) index into TargetSet.intervals, -1 if none

    @property
    def positive(self) -> np.ndarray:
        return self.matched >= 0


@dataclass
class TargetSet:
    grid: AnchorGrid
    levels: list[LevelTargets]
    intervals: list[Interval] = field(default_factory=list)
    quality_mode: str = "leftness"

    @property
    def num_anchors(self) -> int:
        return sum(len(t.matched) for t in self.levels)

    @property
    def num_positive(self) -> int:
        return sum(int(t.positive.sum()) for t in self.levels)


def assign_targets(
    beat_ivs: Sequence[Interval],
    downbeat_ivs: Sequence[Interval],
    grid: AnchorGrid,
    cfg: LevelConfig | None = None,
    quality: str = "leftness",
) -> TargetSet:
    """Label anchors inside each interval's left-biased sub-box as positive.

    Each interval goes to exactly one level (by length).  When an anchor is
    positive for several intervals the shortest one owns the regression and
    quality targets; classification is set per class independently.
    """
    cfg = cfg or grid.cfg
    qfn = QUALITY_FNS[quality]
    duration = grid.duration
    intervals = list(beat_ivs) + list(downbeat_ivs)
    levels = []
    for pos in grid.positions:
        n = len(pos)
        levels.append(
            LevelTargets(
                cls=np.zeros((n, 2), dtype=np.uint8),
                reg=np.full((n, 2), np.nan),
                quality=np.full(n, np.nan),
                matched=np.full(n, -1, dtype=np.int64),
            )
        )
    best_len = [np.full(len(p), np.inf) for p in grid.positions]

    for k, iv in enumerate(intervals):
        if iv.length > duration:
            raise AnnotationError(
                f"interval ({iv.left:.6f}, {iv.right:.6f}) is longer than the track ({duration:.6f} s)"
            )
        li = level_for_length(iv.length, cfg)
        stride_s = cfg.stride_seconds(li)
        width = cfg.radius(iv.cls) * (stride_s if cfg.sub_box_mode == "stride" else iv.length)
        hi = min(iv.left + width, iv.right)
        pos = grid.positions[li]
        a = np.searchsorted(pos, iv.left, side="left")
        b = np.searchsorted(pos, hi, side="left")
        if b <= a:
            continue
        t = levels[li]
        t.cls[a:b, int(iv.cls)] = 1
        sel = np.arange(a, b)
        sel = sel[iv.length < best_len[li][a:b]]
        if len(sel) == 0:
            continue
        best_len[li][sel] = iv.length
        p = pos[sel]
        l = (p - iv.left) / stride_s
        r = (iv.right - p) / stride_s
        t.reg[sel, 0] = l
        t.reg[sel, 1] = r
        t.quality[sel] = qfn(l, r)
        t.matched[sel] = k
    return TargetSet(grid=grid, levels=levels, intervals=intervals, quality_mode=quality)
