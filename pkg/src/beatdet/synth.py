"""Synthetic click-track corpus with exact beat annotations."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .geometry import BeatSequence

SAMPLE_RATE = 22050


@dataclass(frozen=True)
class SynthSpec:
    tempo: float = 120.0  # BPM at the start of the track
    drift: float = 0.0  # fractional tempo change by the end (linear in time)
    meter: int = 4
    duration: float = 10.0
    offset: float = 0.1  # time of the first beat, seconds
    first_position: int = 1  # metrical position of the first beat
    click_amp: float = 0.4
    accent: float = 2.0  # downbeat amplitude multiplier
    click_decay: float = 0.02  # seconds
    click_freq: float = 1000.0
    jitter: float = 0.05  # relative per-click amplitude jitter
    noise_floor: float = 0.005
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = sorted((self.tempo, self.tempo * (1 + self.drift)))
        if lo < 40 or hi > 300:
            raise ValueError(f"tempo must stay within [40, 300] BPM, got {lo:.1f}..{hi:.1f}")
        if self.meter not in (3, 4):
            raise ValueError(f"meter must be 3 or 4, got {self.meter}")
        if self.duration <= 2 * 60.0 / lo:
            raise ValueError("duration must exceed two beat periods")
        if not 1 <= self.first_position <= self.meter:
            raise ValueError("first_position must lie within the bar")
        if self.offset < 0:
            raise ValueError("offset must be non-negative")

    def tempo_at(self, t: float) -> float:
        return self.tempo * (1.0 + self.drift * t / self.duration)

    def to_dict(self) -> dict:
        return asdict(self)


def beat_grid(spec: SynthSpec) -> BeatSequence:
    times = []
    t = spec.offset
    while t < spec.duration:
        times.append(t)
        t += 60.0 / spec.tempo_at(t)
    positions = (np.arange(len(times)) + spec.first_position - 1) % spec.meter + 1
    return BeatSequence(np.asarray(times), positions)


def synth_track(spec: SynthSpec, sample_rate: int = SAMPLE_RATE) -> tuple[np.ndarray, BeatSequence]:
    """Decaying-sine clicks on the beat grid plus a white-noise floor.

    Annotation times are the exact click onsets.
    """
    rng = np.random.default_rng(spec.seed)
    ann = beat_grid(spec)
    n = int(round(spec.duration * sample_rate))
    audio = spec.noise_floor * rng.standard_normal(n)
    click_len = int(6 * spec.click_decay * sample_rate)
    tt = np.arange(click_len) / sample_rate
    click = np.sin(2 * np.pi * spec.click_freq * tt) * np.exp(-tt / spec.click_decay)
    gains = 1.0 + spec.jitter * rng.uniform(-1.0, 1.0, len(ann))
    for t, pos, g in zip(ann.times, ann.positions, gains):
        start = int(round(t * sample_rate))
        amp = spec.click_amp * g * (spec.accent if pos == 1 else 1.0)
        stop = min(n, start + click_len)
        audio[start:stop] += amp * click[: stop - start]
    # annotate the sample-exact onsets actually rendered
    exact = np.round(ann.times * sample_rate) / sample_rate
    return audio, BeatSequence(exact, ann.positions)


def make_corpus(
    n: int,
    seed: int = 0,
    tempo_range: tuple[float, float] = (60.0, 180.0),
    meters: Sequence[int] = (3, 4),
    duration: float = 10.0,
    max_drift: float = 0.0,
    noise_floor: float = 0.005,
) -> list[SynthSpec]:
    """``n`` random track specs; fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(n):
        tempo = float(rng.uniform(*tempo_range))
        meter = int(rng.choice(meters))
        drift = float(rng.uniform(-max_drift, max_drift)) if max_drift > 0 else 0.0
        # keep drifted tempi inside the requested range
        end = np.clip(tempo * (1 + drift), *tempo_range)
        drift = float(end / tempo - 1.0)
        specs.append(
            SynthSpec(
                tempo=tempo,
                drift=drift,
                meter=meter,
                duration=duration,
                offset=float(rng.uniform(0.0, 60.0 / tempo)),
                first_position=int(rng.integers(1, meter + 1)),
                click_freq=float(rng.uniform(600.0, 2500.0)),
                noise_floor=noise_floor,
                seed=int(rng.integers(2**31 - 1)),
            )
        )
    return specs
