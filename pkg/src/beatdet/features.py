"""Deterministic onset-strength feature pyramid.

This stands in for a learned backbone.  Each anchor cell on level i gets a
fixed-width vector of onset statistics.  Onset strength is normalized by
its track maximum; everything else looks only backwards from the anchor:

    0..6   pooled onset strength of the current cell and the 6 cells before it
    7      1 if an onset peak precedes the anchor
    8      log time since that peak            (level-stride units)
    9      log interval between the last two peaks
    10     log expected time to the next peak (interval minus elapsed)
    11     relative strength of the last peak
    12     1 if an accented peak precedes the anchor
    13-15  as 8-10 for accented peaks only

Log features are zero whenever their indicator is zero, so silence maps to
an all-zero pyramid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import LevelConfig

NUM_FEATURES = 16
NUM_LAGS = 7
HOP = 32
WIN = 64
ONSET_LAG = WIN // HOP
PEAK_THRESHOLD = 0.3
ACCENT_THRESHOLD = 0.7
MIN_PEAK_GAP = 0.03  # seconds
SILENCE = 1e-4
# centre of the rising edge relative to the start of the peak frame, in samples
LATENCY = 16


@dataclass
class OnsetPeaks:
    times: np.ndarray
    strength: np.ndarray  # relative to the strongest peak of the track
    accented: np.ndarray


@dataclass
class FeaturePyramid:
    features: list[np.ndarray]  # per level, (N_i, NUM_FEATURES)
    onset: list[np.ndarray]  # per level, (N_i,) pooled onset strength
    track_len: int
    peaks: OnsetPeaks

    @property
    def num_features(self) -> int:
        return self.features[0].shape[1]


def energy_envelope(audio: np.ndarray, hop: int = HOP, win: int = WIN) -> np.ndarray:
    n_frames = -(-len(audio) // hop)
    padded = np.zeros(n_frames * hop + win)
    padded[: len(audio)] = audio
    sq = np.concatenate(([0.0], np.cumsum(padded**2)))
    starts = np.arange(n_frames) * hop
    return np.sqrt((sq[starts + win] - sq[starts]) / win)


def onset_strength(env: np.ndarray, lag: int = ONSET_LAG) -> np.ndarray:
    """Half-wave rectified difference of the envelope over ``lag`` frames.

    A lag of one window length captures the whole rise of a click however it
    straddles frame boundaries.
    """
    prev = np.concatenate((np.zeros(lag), env[:-lag])) if lag < len(env) else np.zeros_like(env)
    return np.maximum(env - prev, 0.0)


def pick_peaks(onset: np.ndarray, env: np.ndarray, sample_rate: int, hop: int = HOP) -> OnsetPeaks:
    empty = OnsetPeaks(np.zeros(0), np.zeros(0), np.zeros(0, dtype=bool))
    top = onset.max(initial=0.0)
    if env.max(initial=0.0) < SILENCE or top <= 0:
        return empty
    o = onset / top
    left = np.concatenate(([0.0], o[:-1]))
    right = np.concatenate((o[1:], [0.0]))
    cand = np.flatnonzero((o >= PEAK_THRESHOLD) & (o > left) & (o >= right))
    gap = int(round(MIN_PEAK_GAP * sample_rate / hop))
    kept: list[int] = []
    for i in cand:
        if kept and i - kept[-1] < gap:
            if o[i] > o[kept[-1]]:
                kept[-1] = i
            continue
        kept.append(i)
    if not kept:
        return empty
    idx = np.asarray(kept)
    # strength: envelope maximum shortly after the rise, robust to frame phase
    span = max(1, int(round(0.015 * sample_rate / hop)))
    strength = np.array([env[i : i + span].max() for i in idx])
    strength = strength / strength.max()
    times = (idx * hop + LATENCY) / sample_rate
    return OnsetPeaks(times, strength, strength >= ACCENT_THRESHOLD)


def _timing_block(t: np.ndarray, peak_times: np.ndarray, stride_s: float) -> np.ndarray:
    """[has, log elapsed, log interval, log remaining] for anchors at times t."""
    out = np.zeros((len(t), 4))
    if peak_times.size == 0:
        return out
    last = np.searchsorted(peak_times, t, side="right") - 1
    has = last >= 0
    elapsed = np.where(has, t - peak_times[np.maximum(last, 0)], 0.0) / stride_s
    out[:, 0] = has
    out[:, 1] = np.where(has, np.log(np.maximum(elapsed, 0.05)), 0.0)
    has2 = last >= 1
    ioi = np.where(
        has2, peak_times[np.maximum(last, 0)] - peak_times[np.maximum(last - 1, 0)], 0.0
    ) / stride_s
    out[:, 2] = np.where(has2, np.log(np.maximum(ioi, 1e-3)), 0.0)
    out[:, 3] = np.where(has2, np.log(np.maximum(ioi - elapsed, 0.1)), 0.0)
    return out


def extract_pyramid(audio, cfg: LevelConfig = LevelConfig()) -> FeaturePyramid:
    audio = np.asarray(audio, dtype=np.float64)
    if audio.size == 0:
        raise ValueError("empty audio")
    sr = cfg.sample_rate
    env = energy_envelope(audio)
    onset = onset_strength(env)
    peaks = pick_peaks(onset, env, sr)
    top = onset.max(initial=0.0)
    on = onset / top if env.max(initial=0.0) >= SILENCE and top > 0 else np.zeros_like(onset)
    frame_sample = np.arange(len(on)) * HOP + LATENCY

    feats, pooled_levels = [], []
    for li in range(cfg.num_levels):
        stride = cfg.stride(li)
        n = -(-len(audio) // stride)
        cell = np.minimum(frame_sample // stride, n - 1)
        pooled = np.zeros(n)
        np.maximum.at(pooled, cell, on)
        t = (np.arange(n) + 0.5) * stride / sr
        stride_s = stride / sr
        f = np.zeros((n, NUM_FEATURES))
        for k in range(min(NUM_LAGS, n)):
            f[k:, k] = pooled[: n - k]
        f[:, 7:11] = _timing_block(t, peaks.times, stride_s)
        if peaks.times.size:
            last = np.searchsorted(peaks.times, t, side="right") - 1
            f[:, 11] = np.where(last >= 0, peaks.strength[np.maximum(last, 0)], 0.0)
        f[:, 12:16] = _timing_block(t, peaks.times[peaks.accented], stride_s)
        feats.append(f)
        pooled_levels.append(pooled)
    return FeaturePyramid(feats, pooled_levels, len(audio), peaks)
