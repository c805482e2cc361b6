"""Fit pyramid size limits from interval lengths with 1D k-means."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class LevelFit:
    centroids: np.ndarray
    boundaries: tuple[float, ...]
    inertia: float
    n_iter: int = 0
    inertia_history: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "centroids": [float(c) for c in self.centroids],
            "boundaries": [b if math.isfinite(b) else "inf" for b in self.boundaries],
            "inertia": self.inertia,
        }


def midpoint_boundaries(centroids) -> tuple[float, ...]:
    c = np.sort(np.asarray(centroids, dtype=np.float64))
    inner = (c[:-1] + c[1:]) / 2.0
    return (0.0, *map(float, inner), math.inf)


def _plusplus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total == 0:
            # every remaining point coincides with a chosen centre
            rest = np.setdiff1d(x, centers)
            centers.append(rest[0])
            continue
        centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.sort(np.asarray(centers, dtype=np.float64))


def _assign(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # x and c sorted: nearest centroid is found by the midpoint partition
    mids = (c[:-1] + c[1:]) / 2.0
    return np.searchsorted(mids, x, side="left")


def kmeans_1d(
    lengths, k: int = 5, seed: int = 0, tol: float = 1e-12, max_iter: int = 300
) -> LevelFit:
    """Seeded k-means++ followed by Lloyd iterations on sorted 1D data.

    Points exactly on a midpoint go to the lower cluster, matching the
    (m_{i-1}, m_i] convention of the level bins.
    """
    x = np.sort(np.asarray(lengths, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("no interval lengths given")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise ValueError("interval lengths must be finite and positive")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(np.unique(x)):
        raise ValueError(f"k={k} exceeds the number of distinct lengths ({len(np.unique(x))})")

    rng = np.random.default_rng(seed)
    c = _plusplus_init(x, k, rng)
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        labels = _assign(x, c)
        history.append(float(np.sum((x - c[labels]) ** 2)))
        new = c.copy()
        counts = np.bincount(labels, minlength=k)
        sums = np.bincount(labels, weights=x, minlength=k)
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled]
        for j in np.flatnonzero(~filled):
            # reseed at the point farthest from its current centroid
            far = int(np.argmax(np.abs(x - new[labels])))
            new[j] = x[far]
        new = np.sort(new)
        shift = float(np.max(np.abs(new - c)))
        c = new
        if shift <= tol:
            break
    labels = _assign(x, c)
    inertia = float(np.sum((x - c[labels]) ** 2))
    history.append(inertia)
    return LevelFit(c, midpoint_boundaries(c), inertia, n_iter, tuple(history))
