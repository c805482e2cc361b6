"""Beat-tracking metrics: F-measure and the continuity family (CMLc/t, AMLc/t).

Not-applicable results (no reference beats, missing downbeat labels) are NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import BeatSequence

F_WINDOW = 0.07
CONTINUITY_TOL = 0.175
SKIP_SECONDS = 5.0
NA = math.nan


def trim(times, skip: float = SKIP_SECONDS) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)
    return t[t >= skip]


def _match_count(est: np.ndarray, ref: np.ndarray, window: float) -> int:
    """One-to-one greedy matching: closest pairs within the window first."""
    if est.size == 0 or ref.size == 0:
        return 0
    d = np.abs(est[:, None] - ref[None, :])
    ei, ri = np.nonzero(d <= window)
    if ei.size == 0:
        return 0
    order = np.lexsort((ri, ei, d[ei, ri]))
    used_e, used_r = set(), set()
    for k in order:
        e, r = int(ei[k]), int(ri[k])
        if e in used_e or r in used_r:
            continue
        used_e.add(e)
        used_r.add(r)
    return len(used_e)


def f_measure(est, ref, window: float = F_WINDOW, skip: float = SKIP_SECONDS) -> float:
    est = trim(est, skip)
    ref = trim(ref, skip)
    if ref.size == 0:
        return NA
    if est.size == 0:
        return 0.0
    hits = _match_count(est, ref, window)
    if hits == 0:
        return 0.0
    p = hits / est.size
    r = hits / ref.size
    return 2 * p * r / (p + r)


def match_counts(est, ref, window: float = F_WINDOW, skip: float = SKIP_SECONDS) -> tuple[int, int, int]:
    """(hits, false positives, false negatives) after trimming."""
    est = trim(est, skip)
    ref = trim(ref, skip)
    hits = _match_count(est, ref, window)
    return hits, est.size - hits, ref.size - hits


def metrical_variations(ref: np.ndarray, include_triple: bool = False) -> list[np.ndarray]:
    """identity, offbeat, double tempo, half tempo (odd), half tempo (even)."""
    idx = np.arange(0, ref.size - 0.5, 0.5)
    double = np.interp(idx, np.arange(ref.size), ref)
    out = [ref, double[1::2], double, ref[::2], ref[1::2]]
    if include_triple:
        tidx = np.arange(0, ref.size - 1 + 1e-9, 1.0 / 3.0)
        triple = np.interp(tidx, np.arange(ref.size), ref)
        out += [triple, ref[::3], ref[1::3], ref[2::3]]
    return out


def _continuity_single(est: np.ndarray, ref: np.ndarray, tol: float) -> tuple[float, float]:
    """(longest correct run, total correct) / number of annotations."""
    n_ref = ref.size
    if n_ref < 2:
        return 0.0, 0.0
    used = np.zeros(n_ref, dtype=bool)
    ok = np.zeros(est.size, dtype=bool)
    for m in range(est.size):
        diffs = np.abs(est[m] - ref)
        j = int(np.argmin(diffs))
        if used[j]:
            continue
        if m == 0 or j == 0:
            # no predecessor: compare against the following interval
            ref_iv = ref[j + 1] - ref[j] if j + 1 < n_ref else ref[j] - ref[j - 1]
            if est.size < 2:
                continue
            est_iv = est[m + 1] - est[m] if m + 1 < est.size else est[m] - est[m - 1]
        else:
            ref_iv = ref[j] - ref[j - 1]
            est_iv = est[m] - est[m - 1]
        phase = diffs[j] / ref_iv
        period = abs(1.0 - est_iv / ref_iv)
        if phase < tol and period < tol:
            used[j] = True
            ok[m] = True
    padded = np.concatenate(([False], ok, [False]))
    fails = np.flatnonzero(~padded)
    longest = int(np.max(np.diff(fails)) - 1) if fails.size > 1 else 0
    return longest / n_ref, ok.sum() / n_ref


def continuity(
    est,
    ref,
    tolerance: float = CONTINUITY_TOL,
    skip: float = SKIP_SECONDS,
    include_triple: bool = False,
) -> tuple[float, float, float, float]:
    """(CMLc, CMLt, AMLc, AMLt).

    An estimated beat is correct when it lies within ``tolerance`` of the local
    inter-annotation interval from its nearest unused annotation and its own
    inter-beat interval agrees with that annotation interval to the same
    tolerance.  c-scores use the longest correct run, t-scores all correct
    beats; both are divided by the annotation count of the variation.
    """
    est = trim(est, skip)
    ref = trim(ref, skip)
    if ref.size < 2:
        return NA, NA, NA, NA
    if est.size == 0:
        return 0.0, 0.0, 0.0, 0.0
    scores = [_continuity_single(est, v, tolerance) for v in metrical_variations(ref, include_triple)]
    cmlc, cmlt = scores[0]
    return cmlc, cmlt, max(s[0] for s in scores), max(s[1] for s in scores)


@dataclass
class ClassMetrics:
    f_measure: float = NA
    cmlc: float = NA
    cmlt: float = NA
    amlc: float = NA
    amlt: float = NA
    hits: int = 0
    false_positives: int = 0
    false_negatives: int = 0

    @property
    def applicable(self) -> bool:
        return not math.isnan(self.f_measure)

    def as_row(self) -> list[float]:
        return [self.f_measure, self.cmlc, self.cmlt, self.amlc, self.amlt]


@dataclass
class MetricReport:
    beat: ClassMetrics = field(default_factory=ClassMetrics)
    downbeat: ClassMetrics = field(default_factory=ClassMetrics)

    @property
    def joint_f(self) -> float:
        return (self.beat.f_measure + self.downbeat.f_measure) / 2.0

    def summary(self) -> dict[str, str]:
        return {"beat": format_triplet(self.beat), "downbeat": format_triplet(self.downbeat)}


def class_metrics(est, ref, window=F_WINDOW, tolerance=CONTINUITY_TOL, skip=SKIP_SECONDS) -> ClassMetrics:
    if ref is None:
        return ClassMetrics()
    est = np.asarray([] if est is None else est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    f = f_measure(est, ref, window, skip)
    cmlc, cmlt, amlc, amlt = continuity(est, ref, tolerance, skip)
    hits, fp, fn = match_counts(est, ref, window, skip)
    return ClassMetrics(f, cmlc, cmlt, amlc, amlt, hits, fp, fn)


def joint_report(
    est: BeatSequence,
    ref: BeatSequence,
    window: float = F_WINDOW,
    tolerance: float = CONTINUITY_TOL,
    skip: float = SKIP_SECONDS,
) -> MetricReport:
    beat = class_metrics(est.times, ref.times, window, tolerance, skip)
    ref_db = ref.downbeats if ref.has_downbeats else None
    est_db = est.downbeats if est.has_downbeats else None
    downbeat = class_metrics(est_db, ref_db, window, tolerance, skip)
    return MetricReport(beat, downbeat)


def format_triplet(m: ClassMetrics) -> str:
    if not m.applicable:
        return "-- / -- / --"
    return " / ".join(_fmt(v) for v in (m.f_measure, m.cmlt, m.amlt))


def _fmt(v: float) -> str:
    return "--" if math.isnan(v) else f"{v:.3f}"


def mean_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Unweighted per-track mean, skipping not-applicable entries."""
    out = MetricReport()
    for name in ("beat", "downbeat"):
        rows = [getattr(r, name) for r in reports]
        agg = ClassMetrics()
        for attr in ("f_measure", "cmlc", "cmlt", "amlc", "amlt"):
            vals = [getattr(m, attr) for m in rows if not math.isnan(getattr(m, attr))]
            setattr(agg, attr, float(np.mean(vals)) if vals else NA)
        for attr in ("hits", "false_positives", "false_negatives"):
            setattr(agg, attr, sum(getattr(m, attr) for m in rows))
        setattr(out, name, agg)
    return out
