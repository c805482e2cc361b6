"""Turn per-anchor head outputs into suppressed detections and beat times."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assignment import AnchorGrid, LevelConfig
from .geometry import BeatSequence, Interval, IntervalClass, iou_arrays

DEDUP_WINDOW = 0.010  # seconds


@dataclass(frozen=True)
class Detection:
    interval: Interval
    score: float
    source_level: int
    source_index: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def left(self) -> float:
        return self.interval.left

    @property
    def right(self) -> float:
        return self.interval.right

    def with_score(self, score: float) -> "Detection":
        return Detection(self.interval, score, self.source_level, self.source_index)


@dataclass(frozen=True)
class DecodeConfig:
    nms: str = "soft-linear"  # hard | soft-linear | soft-gaussian
    iou_threshold: float = 0.2
    score_threshold: float = 0.2
    sigma: float = 0.5
    pre_filter: float = 0.05
    score_mode: str = "product"  # product: cls * quality; cls: classification only

    def __post_init__(self) -> None:
        if self.nms not in ("hard", "soft-linear", "soft-gaussian"):
            raise ValueError(f"unknown nms mode {self.nms!r}")
        if self.score_mode not in ("product", "cls"):
            raise ValueError(f"unknown score mode {self.score_mode!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def score_and_collect(
    cls_prob: Sequence[np.ndarray],
    reg: Sequence[np.ndarray],
    quality_prob: Sequence[np.ndarray],
    grid: AnchorGrid,
    cfg: LevelConfig | None = None,
    pre_filter: float = 0.05,
    score_mode: str = "product",
) -> dict[IntervalClass, list[Detection]]:
    """Candidate detections per class from per-level head outputs.

    ``cls_prob[i]`` is (N_i, 2), ``reg[i]`` (N_i, 2) stride-normalised (l, r)
    offsets and ``quality_prob[i]`` (N_i,) for level index i.
    """
    cfg = cfg or grid.cfg
    out: dict[IntervalClass, list[Detection]] = {c: [] for c in IntervalClass}
    for li, pos in enumerate(grid.positions):
        stride_s = cfg.stride_seconds(li)
        cp = np.asarray(cls_prob[li], dtype=np.float64)
        rg = np.asarray(reg[li], dtype=np.float64)
        q = np.asarray(quality_prob[li], dtype=np.float64)
        if len(cp) != len(pos):
            raise ValueError(f"level {li}: {len(cp)} predictions for {len(pos)} anchors")
        scores = cp * q[:, None] if score_mode == "product" else cp
        left = np.maximum(pos - rg[:, 0] * stride_s, 0.0)
        right = pos + rg[:, 1] * stride_s
        level = cfg.base_level + li
        for c in IntervalClass:
            idx = np.flatnonzero((scores[:, int(c)] >= pre_filter) & (right > left))
            for i in idx:
                out[c].append(
                    Detection(
                        Interval(float(left[i]), float(right[i]), c),
                        float(scores[i, int(c)]),
                        level,
                        int(i),
                    )
                )
    return out


def _priority_order(dets: Sequence[Detection]) -> list[int]:
    return sorted(
        range(len(dets)),
        key=lambda i: (-dets[i].score, dets[i].left, dets[i].source_index, dets[i].source_level),
    )


def _by_left(dets: Sequence[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: (d.left, -d.score, d.source_index, d.source_level))


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy NMS for a single class; result sorted by left edge."""
    if not dets:
        return []
    order = np.asarray(_priority_order(dets))
    left = np.array([d.left for d in dets])
    right = np.array([d.right for d in dets])
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        ious = iou_arrays(left[i], right[i], left[rest], right[rest])
        order = rest[ious <= iou_threshold]
    return _by_left([dets[i] for i in keep])


def soft_nms(
    dets: Sequence[Detection],
    iou_threshold: float = 0.2,
    mode: str = "linear",
    sigma: float = 0.5,
    final_score_threshold: float = 0.2,
) -> list[Detection]:
    """Soft-NMS for a single class.

    linear:   score *= (1 - iou) for overlaps with iou > iou_threshold
    gaussian: score *= exp(-iou^2 / sigma)
    Detections whose (decayed) score falls below final_score_threshold are dropped.
    """
    if mode not in ("linear", "gaussian"):
        raise ValueError(f"unknown soft-nms mode {mode!r}")
    if not dets:
        return []
    left = np.array([d.left for d in dets])
    right = np.array([d.right for d in dets])
    scores = np.array([d.score for d in dets])
    # tie-break rank, fixed up front so that equal decayed scores resolve deterministically
    rank = np.empty(len(dets), dtype=np.int64)
    rank[_priority_order(dets)] = np.arange(len(dets))
    alive = np.flatnonzero(scores >= final_score_threshold)
    kept: list[Detection] = []
    while alive.size:
        s = scores[alive]
        best = s.max()
        cands = alive[s == best]
        i = cands[np.argmin(rank[cands])]
        kept.append(dets[i].with_score(float(scores[i])))
        alive = alive[alive != i]
        if not alive.size:
            break
        ious = iou_arrays(left[i], right[i], left[alive], right[alive])
        if mode == "linear":
            w = np.where(ious > iou_threshold, 1.0 - ious, 1.0)
        else:
            w = np.exp(-(ious**2) / sigma)
        scores[alive] = scores[alive] * w
        alive = alive[scores[alive] >= final_score_threshold]
    return _by_left(kept)


def suppress(dets: Sequence[Detection], cfg: DecodeConfig) -> list[Detection]:
    if cfg.nms == "hard":
        kept = nms(dets, cfg.iou_threshold)
        return [d for d in kept if d.score >= cfg.score_threshold]
    mode = "linear" if cfg.nms == "soft-linear" else "gaussian"
    return soft_nms(dets, cfg.iou_threshold, mode, cfg.sigma, cfg.score_threshold)


def _dedup(times: np.ndarray, window: float) -> np.ndarray:
    times = np.sort(times)
    if times.size == 0:
        return times
    keep = [times[0]]
    for t in times[1:]:
        if t - keep[-1] >= window:
            keep.append(t)
    return np.asarray(keep)


def detections_to_beats(
    beat_dets: Sequence[Detection],
    downbeat_dets: Sequence[Detection],
    end_time: Optional[float] = None,
    dedup_window: float = DEDUP_WINDOW,
) -> BeatSequence:
    """Invert the interval representation.

    Beats are the left edges of all detections plus the rightmost beat right
    edge (the final beat owns no interval).  Downbeats are the downbeat left
    edges plus the rightmost downbeat right edge.  Times past ``end_time`` are
    dropped.
    """
    db = [d.left for d in downbeat_dets]
    if downbeat_dets:
        db.append(max(d.right for d in downbeat_dets))
    beats = [d.left for d in beat_dets] + db
    if beat_dets:
        beats.append(max(d.right for d in beat_dets))
    beats = np.asarray(beats, dtype=np.float64)
    db = np.asarray(db, dtype=np.float64)
    if end_time is not None:
        beats = beats[beats <= end_time]
        db = db[db <= end_time]
    beats = _dedup(beats, dedup_window)
    db = _dedup(db, dedup_window)
    # snap downbeats onto the surviving beat times so they stay a subset
    if db.size and beats.size:
        idx = np.argmin(np.abs(beats[None, :] - db[:, None]), axis=1)
        db = np.unique(beats[idx])
    return BeatSequence(beats, downbeat_times=db)
