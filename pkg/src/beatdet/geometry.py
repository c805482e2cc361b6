"""Interval arithmetic and the beat-sequence <-> interval conversion.

Beats and downbeats are detected as spans between consecutive events: a beat
interval runs from one beat to the next, a downbeat interval from one
downbeat to the next.  A downbeat therefore shows up twice, once as the left
edge of a beat interval and once as the left edge of a downbeat interval.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

MIN_BEAT_GAP = 1e-3  # seconds; closer beats are treated as duplicate annotations


class AnnotationError(ValueError):
    """Raised for malformed beat annotations or invalid intervals."""


class IntervalClass(enum.IntEnum):
    BEAT = 0
    DOWNBEAT = 1


@dataclass(frozen=True)
class Interval:
    left: float
    right: float
    cls: IntervalClass = IntervalClass.BEAT

    def __post_init__(self) -> None:
        if not (math.isfinite(self.left) and math.isfinite(self.right)):
            raise AnnotationError(f"non-finite interval ({self.left}, {self.right})")
        if self.left < 0:
            raise AnnotationError(f"negative interval start {self.left}")
        if not self.left < self.right:
            raise AnnotationError(
                f"interval must satisfy left < right, got ({self.left}, {self.right})"
            )

    @property
    def length(self) -> float:
        return self.right - self.left


def intersection(a: Interval, b: Interval) -> float:
    return max(0.0, min(a.right, b.right) - max(a.left, b.left))


def hull_length(a: Interval, b: Interval) -> float:
    return max(a.right, b.right) - min(a.left, b.left)


def iou(a: Interval, b: Interval) -> float:
    inter = intersection(a, b)
    union = a.length + b.length - inter
    return inter / union


def giou(a: Interval, b: Interval) -> float:
    """Generalized IoU: IoU minus the empty fraction of the enclosing hull."""
    inter = intersection(a, b)
    union = a.length + b.length - inter
    hull = hull_length(a, b)
    return inter / union - (hull - union) / hull


def iou_arrays(left_a, right_a, left_b, right_b) -> np.ndarray:
    """Vectorised IoU over broadcastable endpoint arrays."""
    inter = np.clip(np.minimum(right_a, right_b) - np.maximum(left_a, left_b), 0.0, None)
    union = (right_a - left_a) + (right_b - left_b) - inter
    return inter / union


@dataclass
class BeatSequence:
    """Beat times with metrical positions.

    ``positions`` may be None for prediction-only sequences; downbeats are then
    carried separately in ``downbeat_times`` (which may itself be None when no
    downbeat information exists at all).
    """

    times: np.ndarray
    positions: Optional[np.ndarray] = None
    downbeat_times: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        _check_times(self.times, "beat")
        if self.positions is not None:
            self.positions = np.asarray(self.positions, dtype=np.int64).reshape(-1)
            if self.positions.shape != self.times.shape:
                raise AnnotationError(
                    f"{len(self.positions)} positions for {len(self.times)} beats"
                )
            if np.any(self.positions < 1):
                raise AnnotationError("metrical positions must be >= 1")
            if self.downbeat_times is not None:
                raise AnnotationError("give either positions or downbeat_times, not both")
        elif self.downbeat_times is not None:
            self.downbeat_times = np.asarray(self.downbeat_times, dtype=np.float64).reshape(-1)
            _check_times(self.downbeat_times, "downbeat")
            if not np.all(np.isin(self.downbeat_times, self.times)):
                raise AnnotationError("every downbeat time must also be a beat time")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def has_downbeats(self) -> bool:
        return self.positions is not None or self.downbeat_times is not None

    @property
    def downbeats(self) -> Optional[np.ndarray]:
        if self.positions is not None:
            return self.times[self.positions == 1]
        return self.downbeat_times

    def inferred_positions(self, default_meter: int = 4) -> Optional[np.ndarray]:
        """Positions for every beat, counting up from each downbeat.

        Beats before the first downbeat are treated as a pickup and counted
        backwards using the most common bar length.
        """
        if self.positions is not None:
            return self.positions.copy()
        downbeats = self.downbeats
        if downbeats is None:
            return None
        n = len(self.times)
        if len(downbeats) == 0:
            return None
        db_idx = np.searchsorted(self.times, downbeats)
        if len(db_idx) >= 2:
            counts, freq = np.unique(np.diff(db_idx), return_counts=True)
            meter = int(counts[np.argmax(freq)])
        else:
            meter = default_meter
        pos = np.zeros(n, dtype=np.int64)
        for k, start in enumerate(db_idx):
            stop = db_idx[k + 1] if k + 1 < len(db_idx) else n
            pos[start:stop] = np.arange(1, stop - start + 1)
        first = db_idx[0]
        for i in range(first):
            pos[i] = (meter - (first - i)) % meter + 1
        return pos


def _check_times(times: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(times)):
        raise AnnotationError(f"non-finite {what} time")
    if np.any(times < 0):
        raise AnnotationError(f"negative {what} time")
    gaps = np.diff(times)
    if np.any(gaps <= 0):
        i = int(np.argmax(gaps <= 0)) + 1
        raise AnnotationError(f"{what} times not strictly ascending at index {i}")
    if np.any(gaps < MIN_BEAT_GAP):
        i = int(np.argmax(gaps < MIN_BEAT_GAP)) + 1
        raise AnnotationError(f"{what} times closer than 1 ms at index {i}")


def _consecutive(times: Sequence[float], cls: IntervalClass) -> list[Interval]:
    return [Interval(float(a), float(b), cls) for a, b in zip(times[:-1], times[1:])]


def intervals_from_beats(seq: BeatSequence) -> tuple[list[Interval], list[Interval]]:
    """Beat intervals between consecutive beats and downbeat intervals
    between consecutive downbeats."""
    beat_ivs = _consecutive(seq.times, IntervalClass.BEAT)
    downbeats = seq.downbeats
    if downbeats is None:
        return beat_ivs, []
    return beat_ivs, _consecutive(downbeats, IntervalClass.DOWNBEAT)
