import numpy as np
import pytest
from hypothesis import given, strategies as st

from beatdet.decoding import Detection
from beatdet.geometry import Interval, IntervalClass
from beatdet.thresholds import (
    IoUHistogram,
    NoSeparationError,
    neighbor_iou_histogram,
    select_iou_threshold,
    track_histogram,
)

B, D = IntervalClass.BEAT, IntervalClass.DOWNBEAT


def det(a, b, s, i=0, cls=B):
    return Detection(Interval(a, b, cls), s, 7, i)


def hist_from_rows(rows, cls=B):
    """Histogram whose confidence rows >= 0.2 all hold ``rows`` (10 IoU counts)."""
    h = IoUHistogram()
    for b, (lo, _) in enumerate(h.confidence_bins):
        if lo >= 0.2:
            h.counts[cls][b] = rows
    return h


class TestHistogram:
    def test_single_detection(self):
        assert track_histogram({B: [det(0, 1, 0.9)]}).is_empty()

    def test_constructed_population(self):
        tracks = []
        for i in range(100):
            tracks.append({B: [det(0, 1, 0.95), det(0.01, 1, 0.95, 1)]})  # IoU 0.99
            tracks.append({B: [det(0, 1, 0.95), det(2, 3, 0.95, 1)]})  # IoU 0
        h = neighbor_iou_histogram(tracks)
        top = h.mass(B)[-1]
        assert top[9] == pytest.approx(0.5) and top[0] == pytest.approx(0.5)
        assert h.counts[B][-1].sum() == 200
        assert h.counts[D].sum() == 0

    def test_rows_normalised(self):
        rng = np.random.default_rng(0)
        dets = [det(float(a), float(a + w), float(s), i) for i, (a, w, s) in enumerate(zip(rng.uniform(0, 10, 50), rng.uniform(0.1, 2, 50), rng.uniform(0, 1, 50)))]
        m = track_histogram({B: dets}).mass(B)
        sums = m.sum(axis=1)
        assert np.all((np.abs(sums - 1) < 1e-12) | (sums == 0))
        assert np.all(m >= 0)

    def test_merge_mismatch(self):
        with pytest.raises(ValueError):
            IoUHistogram().merge(IoUHistogram((0.0, 0.5, 1.0)))

    @given(st.lists(st.tuples(st.integers(0, 100), st.integers(1, 30), st.integers(1, 20)), min_size=0, max_size=25), st.randoms())
    def test_order_invariant(self, raw, rnd):
        dets = [det(a / 10, (a + w) / 10, s / 20, i) for i, (a, w, s) in enumerate(raw)]
        tracks = [{B: dets[: len(dets) // 2]}, {B: dets[len(dets) // 2 :]}]
        ref = neighbor_iou_histogram(tracks)
        shuffled = [{B: rnd.sample(t[B], len(t[B]))} for t in tracks[::-1]]
        out = neighbor_iou_histogram(shuffled)
        for c in IntervalClass:
            np.testing.assert_array_equal(out.counts[c], ref.counts[c])


class TestSelect:
    def test_bimodal(self):
        rows = np.array([50, 0, 1, 1, 1, 1, 1, 2, 3, 40])
        assert select_iou_threshold(hist_from_rows(rows)) == 0.2

    def test_uniform(self):
        with pytest.raises(NoSeparationError, match="no separation"):
            select_iou_threshold(hist_from_rows(np.full(10, 7)))

    def test_adjacent_modes(self):
        with pytest.raises(NoSeparationError):
            select_iou_threshold(hist_from_rows(np.array([0, 0, 0, 0, 9, 9, 0, 0, 0, 0])))

    def test_no_rows(self):
        with pytest.raises(ValueError):
            select_iou_threshold(IoUHistogram(), min_confidence=0.2)
        with pytest.raises(ValueError):
            select_iou_threshold(IoUHistogram(), min_confidence=1.5)

    def test_tie_goes_low(self):
        rows = np.array([50, 0, 0, 1, 1, 1, 1, 1, 1, 40])
        assert select_iou_threshold(hist_from_rows(rows)) == 0.2

    def test_low_confidence_rows_ignored(self):
        h = hist_from_rows(np.array([50, 0, 1, 1, 1, 1, 1, 2, 3, 40]))
        h.counts[B][0] = np.full(10, 1000)
        assert select_iou_threshold(h) == 0.2

    @given(st.lists(st.tuples(st.integers(0, 300), st.integers(1, 30)), min_size=2, max_size=40),
           st.lists(st.tuples(st.integers(0, 300), st.integers(1, 30), st.integers(1, 4)), max_size=40))
    def test_low_confidence_detections_never_change_threshold(self, confident, weak):
        base = [det(a / 10, (a + w) / 10, 0.9, i) for i, (a, w) in enumerate(confident)]
        # duplicates of the confident set guarantee a high-IoU mode
        base += [det(d.left + 0.001, d.right, 0.85, 1000 + i) for i, d in enumerate(base)]
        extra = [det(a / 10, (a + w) / 10, s / 20, 2000 + i) for i, (a, w, s) in enumerate(weak)]

        def pick(ds):
            try:
                return select_iou_threshold(neighbor_iou_histogram([{B: ds}]))
            except NoSeparationError:
                return "none"

        t0 = pick(base)
        assert pick(base + extra) == t0
        if t0 != "none":
            assert 0 < t0 < 1
