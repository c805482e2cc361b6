"""One test per primary acceptance criterion, each at its stated tolerance.

Every test prints a PASS/FAIL line; the lines are repeated in the terminal
summary under "acceptance criteria".
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from beatdet.assignment import DEFAULT_SIZE_LIMITS, LevelConfig, level_for_length
from beatdet.decoding import Detection, DecodeConfig, detections_to_beats, nms
from beatdet.geometry import BeatSequence, Interval, giou, intervals_from_beats, iou
from beatdet.levels import kmeans_1d
from beatdet.losses import bce_logits, focal_loss_logits, giou_loss_offsets, gradient_check
from beatdet.metrics import continuity, joint_report
from beatdet.thresholds import NoSeparationError, neighbor_iou_histogram, select_iou_threshold
from beatdet.toy import ToyHeads, build_examples, evaluate, predict_detections, run_ablation, train_toy
from oracles import brute_force_nms, naive_continuity
from test_decoding import random_dets
from test_metrics import random_case
from test_thresholds import hist_from_rows
from test_toy import head_grad_error


def test_nms_oracle_equivalence(criterion):
    with criterion("NMS equals brute force on 1000 x 200 intervals in < 10 s") as info:
        rng = np.random.default_rng(2024)
        cases = [(random_dets(rng, 200), float(rng.uniform(0, 1))) for _ in range(1000)]
        t0 = time.perf_counter()
        ours = [nms(ds, thr) for ds, thr in cases]
        info["nms_seconds"] = time.perf_counter() - t0
        mismatches = sum(o != brute_force_nms(ds, thr) for o, (ds, thr) in zip(ours, cases))
        info["mismatches"] = mismatches
        assert mismatches == 0
        assert info["nms_seconds"] < 10


def test_gradient_suite(criterion, toy_run):
    with criterion("focal, GIoU, leftness-BCE and head gradients match central differences (< 1e-4)") as info:
        rng = np.random.default_rng(7)
        worst = {"focal": 0.0, "giou": 0.0, "bce": 0.0}
        for _ in range(100):
            x = rng.uniform(-6, 6, 1)
            c = int(rng.integers(0, 2))
            worst["focal"] = max(worst["focal"], gradient_check(lambda v: (float(focal_loss_logits(v, c)[0].sum()), focal_loss_logits(v, c)[1]), x))
            y = float(rng.uniform(0, 1))
            worst["bce"] = max(worst["bce"], gradient_check(lambda v: (float(bce_logits(v, y)[0].sum()), bce_logits(v, y)[1]), x))
            lt, rt = rng.uniform(0.1, 4, 2)

            def g(raw):
                l, r = np.exp(raw)
                loss, dl, dr = giou_loss_offsets(l, r, lt, rt)
                return float(loss), np.array([dl * l, dr * r])

            raw = np.log([lt, rt]) + rng.uniform(-1, 1, 2)
            while np.min(np.abs(np.exp(raw) - [lt, rt])) < 1e-3:
                raw = raw + 0.01
            worst["giou"] = max(worst["giou"], gradient_check(g, raw))
        ex = toy_run["train"][0]
        worst["heads_leftness"] = head_grad_error(ToyHeads.init(LevelConfig(), seed=0), ex)
        worst["heads_centerness"] = head_grad_error(ToyHeads.init(LevelConfig(), seed=0, quality="centerness"), ex)
        info.update(worst)
        assert max(worst.values()) < 1e-4


def test_geometry_identities(criterion):
    with criterion("GIoU identities and analytic examples to 1e-12") as info:
        a = giou(Interval(0, 1), Interval(2, 3))
        b = giou(Interval(0, 2), Interval(1, 3))
        info["giou_disjoint"] = a
        info["giou_overlap"] = b
        assert abs(a + 1 / 3) <= 1e-12 and abs(b - 1 / 3) <= 1e-12
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            p = np.sort(np.round(rng.uniform(0, 10, 2), 3))
            q = np.sort(np.round(rng.uniform(0, 10, 2), 3))
            if p[0] == p[1] or q[0] == q[1]:
                continue
            x, y = Interval(*p), Interval(*q)
            assert giou(x, y) <= iou(x, y) + 1e-15
            assert (giou(x, y) == 1.0) == (x.left == y.left and x.right == y.right)
            assert giou(x, x) == 1.0


def random_sequence(rng):
    meter = int(rng.integers(2, 8))
    n = int(rng.integers(2 * meter + 1, 80))
    gaps = rng.integers(11, 2000, n) / 1000.0
    times = np.round(np.cumsum(gaps) + rng.uniform(0, 5), 6)
    pos = (np.arange(n) + int(rng.integers(0, meter))) % meter + 1
    return BeatSequence(times, pos)


def test_interval_round_trip(criterion):
    with criterion("500 random sequences survive intervals -> detections -> beats exactly") as info:
        rng = np.random.default_rng(11)
        failures = 0
        for _ in range(500):
            seq = random_sequence(rng)
            b, d = intervals_from_beats(seq)
            out = detections_to_beats(
                [Detection(x, 1.0, 7, i) for i, x in enumerate(b)],
                [Detection(x, 1.0, 9, i) for i, x in enumerate(d)],
            )
            ok = np.array_equal(out.times, seq.times) and np.array_equal(out.downbeats, seq.downbeats)
            failures += not ok
        info["failures"] = failures
        assert failures == 0


def test_metric_identities(criterion):
    with criterion("metric identities, double-tempo/offbeat cases and 1000 ordering cases") as info:
        ref = np.arange(0.0, 30.0, 0.5)
        seq = BeatSequence(ref, np.arange(len(ref)) % 4 + 1)
        rep = joint_report(seq, seq)
        for m in (rep.beat, rep.downbeat):
            assert (m.f_measure, m.cmlc, m.cmlt, m.amlc, m.amlt) == (1.0, 1.0, 1.0, 1.0, 1.0)
        double = np.sort(np.concatenate([ref, ref[:-1] + 0.25]))
        offbeat = ref[:-1] + 0.25
        for est in (double, offbeat):
            c = continuity(est, ref)
            assert c[1] == 0.0 and c[3] == 1.0
            assert c == pytest.approx(naive_continuity(est, ref), abs=1e-12)
        rng = np.random.default_rng(1)
        violations = 0
        for _ in range(1000):
            cmlc, cmlt, amlc, amlt = continuity(*random_case(rng))
            violations += not (cmlc <= cmlt <= amlt)
        info["ordering_violations"] = violations
        assert violations == 0


def test_level_fitting(criterion):
    with criterion("planted 5-cluster k-means and size-limit vector") as info:
        centers = np.array([0.4, 0.75, 1.2, 2.0, 3.0])
        rng = np.random.default_rng(0)
        data = np.concatenate([c + rng.uniform(-0.02, 0.02, 1000) for c in centers])
        fit = kmeans_1d(data, k=5, seed=0)
        info["max_centroid_err"] = float(np.max(np.abs(fit.centroids - centers)))
        assert info["max_centroid_err"] < 0.01
        c = fit.centroids
        assert fit.boundaries == (0.0, *((c[i] + c[i + 1]) / 2 for i in range(4)), math.inf)
        nearest = np.argmin(np.abs(data[:, None] - c[None, :]), axis=1)
        cfg = LevelConfig(size_limits=fit.boundaries)
        assert all(level_for_length(float(x), cfg) == k for x, k in zip(data, nearest))
        published = LevelConfig(size_limits=DEFAULT_SIZE_LIMITS)
        assert [level_for_length(s, published) for s in (0.5, 1.0, 3.0)] == [0, 2, 4]


def test_threshold_selection(criterion, toy_run):
    with criterion("IoU threshold: bimodal -> 0.2, uniform -> no separation, toy in [0.1, 0.5]") as info:
        assert select_iou_threshold(hist_from_rows(np.array([50, 0, 1, 1, 1, 1, 1, 2, 3, 40]))) == 0.2
        with pytest.raises(NoSeparationError):
            select_iou_threshold(hist_from_rows(np.full(10, 7)))
        heads, cfg = toy_run["heads"], toy_run["cfg"]
        tracks = [predict_detections(heads, ex.pyramid, cfg.decode) for ex in toy_run["val"]]
        thr = select_iou_threshold(neighbor_iou_histogram(tracks))
        info["toy_threshold"] = thr
        assert 0.1 <= thr <= 0.5


def test_end_to_end_toy(criterion, toy_run):
    with criterion("toy: 50 train / 20 test tracks, beat F >= 0.90, downbeat F >= 0.75, < 10 min, deterministic") as info:
        cfg = toy_run["cfg"]
        t0 = time.perf_counter()
        rep, _ = evaluate(toy_run["heads"], toy_run["test"], cfg.decode)
        info["beat_f1"] = rep.beat.f_measure
        info["downbeat_f1"] = rep.downbeat.f_measure
        info["wall_seconds"] = toy_run["elapsed"] + time.perf_counter() - t0
        assert len(toy_run["train"]) == 50 and len(toy_run["test"]) == 20
        specs = cfg.corpus.specs("train")
        assert all(60 <= s.tempo <= 180 and s.meter in (3, 4) and s.duration == 10 for s in specs)
        # second independent run with the same seed
        train = build_examples(specs, cfg.level)
        val = build_examples(cfg.corpus.specs("val"), cfg.level)
        heads, _ = train_toy(train, ToyHeads.init(cfg.level, seed=cfg.seed), cfg.train, cfg.loss, val, cfg.decode)
        rep2, _ = evaluate(heads, toy_run["test"], cfg.decode)
        info["deterministic"] = rep2.beat.as_row() == rep.beat.as_row() and rep2.downbeat.as_row() == rep.downbeat.as_row()
        assert rep.beat.f_measure >= 0.90
        assert rep.downbeat.f_measure >= 0.75
        assert info["wall_seconds"] < 600
        assert info["deterministic"]


def test_ablation_direction(criterion, toy_run):
    with criterion("ablation: soft-NMS >= hard NMS - 0.02 on beat F; leftness and centerness cells complete") as info:
        cfg = toy_run["cfg"]
        rows = run_ablation(
            toy_run["train"], toy_run["test"], cfg.train, cfg.loss, toy_run["val"], decode=cfg.decode, level_cfg=cfg.level
        )
        cells = {(r["quality"], r["nms"]): r for r in rows}
        assert set(cells) == {(q, m) for q in ("leftness", "centerness") for m in ("hard", "soft-linear")}
        for (q, m), r in sorted(cells.items()):
            info[f"{q}/{m}"] = r["beat_f1"]
            assert all(math.isfinite(r[k]) for k in ("beat_f1", "downbeat_f1"))
        for q in ("leftness", "centerness"):
            assert cells[(q, "soft-linear")]["beat_f1"] >= cells[(q, "hard")]["beat_f1"] - 0.02
