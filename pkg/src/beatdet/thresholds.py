"""IoU histograms of neighbouring detections and a valley-based threshold pick."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .decoding import Detection
from .geometry import IntervalClass, iou_arrays

# score ranges of the small-multiples layout: (0, 0.1], ..., (0.6, 0.7], (0.7, 1]
DEFAULT_CONFIDENCE_EDGES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 1.0)
NUM_IOU_BINS = 10


class NoSeparationError(ValueError):
    """The aggregated histogram has no valley between low- and high-IoU modes."""


@dataclass
class IoUHistogram:
    confidence_edges: tuple[float, ...] = DEFAULT_CONFIDENCE_EDGES
    counts: dict[IntervalClass, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.confidence_edges) - 1
        for c in IntervalClass:
            self.counts.setdefault(c, np.zeros((n, NUM_IOU_BINS), dtype=np.int64))

    @property
    def confidence_bins(self) -> list[tuple[float, float]]:
        e = self.confidence_edges
        return list(zip(e[:-1], e[1:]))

    @property
    def iou_edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, NUM_IOU_BINS + 1)

    def mass(self, cls: IntervalClass) -> np.ndarray:
        """Row-normalised frequencies; all-zero rows stay zero."""
        c = self.counts[cls].astype(np.float64)
        tot = c.sum(axis=1, keepdims=True)
        return np.divide(c, tot, out=np.zeros_like(c), where=tot > 0)

    def merge(self, other: "IoUHistogram") -> "IoUHistogram":
        if tuple(other.confidence_edges) != tuple(self.confidence_edges):
            raise ValueError("cannot merge histograms with different confidence bins")
        return IoUHistogram(
            self.confidence_edges,
            {c: self.counts[c] + other.counts[c] for c in IntervalClass},
        )

    def is_empty(self) -> bool:
        return all(v.sum() == 0 for v in self.counts.values())


def _conf_bin(scores: np.ndarray, edges: Sequence[float]) -> np.ndarray:
    # (low, high] bins; a score of exactly 0 goes to the first bin
    idx = np.searchsorted(np.asarray(edges[1:-1]), scores, side="left")
    return idx


def _iou_bin(ious: np.ndarray) -> np.ndarray:
    return np.minimum((ious * NUM_IOU_BINS).astype(np.int64), NUM_IOU_BINS - 1)


def track_histogram(
    dets: dict[IntervalClass, Sequence[Detection]],
    confidence_edges: Sequence[float] = DEFAULT_CONFIDENCE_EDGES,
) -> IoUHistogram:
    """Histogram for one track.

    A detection in confidence bin (lo, hi] is paired with its successor in
    left-edge order among the detections scoring above lo, so that adding
    less confident detections never alters a more confident row.
    """
    hist = IoUHistogram(tuple(confidence_edges))
    for c, ds in dets.items():
        if len(ds) < 2:
            continue
        ds = sorted(ds, key=lambda d: (d.left, d.right, -d.score))
        left = np.array([d.left for d in ds])
        right = np.array([d.right for d in ds])
        score = np.array([d.score for d in ds])
        cb = _conf_bin(score, confidence_edges)
        counts = hist.counts[IntervalClass(c)]
        for b, lo in enumerate(confidence_edges[:-1]):
            idx = np.flatnonzero(score > lo)
            if len(idx) < 2:
                continue
            first, second = idx[:-1], idx[1:]
            own = cb[first] == b
            first, second = first[own], second[own]
            ious = iou_arrays(left[first], right[first], left[second], right[second])
            np.add.at(counts[b], _iou_bin(ious), 1)
    return hist


def neighbor_iou_histogram(
    tracks: Iterable[dict[IntervalClass, Sequence[Detection]]],
    confidence_edges: Sequence[float] = DEFAULT_CONFIDENCE_EDGES,
) -> IoUHistogram:
    hist = IoUHistogram(tuple(confidence_edges))
    for dets in tracks:
        hist = hist.merge(track_histogram(dets, confidence_edges))
    return hist


def select_iou_threshold(
    hist: IoUHistogram,
    min_confidence: float = 0.2,
    classes: Sequence[IntervalClass] = (IntervalClass.BEAT, IntervalClass.DOWNBEAT),
    valley_ratio: float = 0.5,
) -> float:
    """Right edge of the emptiest IoU bin between the low- and high-IoU modes.

    Rows whose lower confidence bound is >= ``min_confidence`` are pooled.  The
    low mode is the fullest bin below IoU 0.5, the high mode the fullest above;
    the valley must hold less than ``valley_ratio`` times the smaller mode.
    """
    rows = [i for i, (lo, _) in enumerate(hist.confidence_bins) if lo >= min_confidence]
    if not rows:
        raise ValueError(f"no confidence bins at or above {min_confidence}")
    agg = np.zeros(NUM_IOU_BINS)
    for c in classes:
        agg += hist.counts[c][rows].sum(axis=0)
    if agg.sum() == 0:
        raise ValueError("no high-confidence neighbour pairs to analyse")
    agg = agg / agg.sum()
    half = NUM_IOU_BINS // 2
    lo_mode = int(np.argmax(agg[:half]))
    hi_mode = half + int(np.argmax(agg[half:]))
    between = agg[lo_mode + 1 : hi_mode]
    if between.size == 0:
        raise NoSeparationError("no separation: modes are adjacent")
    valley = lo_mode + 1 + int(np.argmin(between))
    if not agg[valley] < valley_ratio * min(agg[lo_mode], agg[hi_mode]):
        raise NoSeparationError("no separation between low- and high-IoU modes")
    return (valley + 1) / NUM_IOU_BINS
