"""Linear detection heads over the onset feature pyramid, trained with Adam.

The heads are one affine map per level from the F features of a cell to its
five raw outputs: two class logits, two log-offsets and one quality logit.
Features are constants, so every gradient is the loss gradient with respect
to the raw outputs pulled back through a matrix product.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .assignment import LevelConfig, TargetSet, anchor_grid, assign_targets
from .decoding import DecodeConfig, Detection, detections_to_beats, score_and_collect, suppress
from .features import NUM_FEATURES, FeaturePyramid, extract_pyramid
from .geometry import BeatSequence, IntervalClass, intervals_from_beats
from .losses import LevelPrediction, LossConfig, PredictionSet, item_loss
from .metrics import MetricReport, joint_report, mean_reports
from .synth import SynthSpec, synth_track

CHECKPOINT_FORMAT = "beatdet-toyheads"
CHECKPOINT_VERSION = 1
NUM_OUTPUTS = 5  # 2 class logits, 2 log-offsets, 1 quality logit


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 150
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 16
    seed: int = 0
    quality: str = "leftness"
    patience: int = 3
    lr_decay: float = 0.1
    eval_every: int = 10  # plateau patience counts evaluations, not passes
    init_std: float = 0.01
    prior: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.quality not in ("leftness", "centerness"):
            raise ValueError(f"unknown quality mode {self.quality!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


@dataclass
class ToyHeads:
    weights: list[np.ndarray]  # per level, (F, 5)
    biases: list[np.ndarray]  # per level, (5,)
    level_cfg: LevelConfig = field(default_factory=LevelConfig)
    quality: str = "leftness"
    adam: Optional[AdamState] = None

    @classmethod
    def init(
        cls,
        level_cfg: LevelConfig = LevelConfig(),
        num_features: int = NUM_FEATURES,
        seed: int = 0,
        std: float = 0.01,
        prior: float = 0.01,
        quality: str = "leftness",
    ) -> "ToyHeads":
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for _ in range(level_cfg.num_levels):
            weights.append(std * rng.standard_normal((num_features, NUM_OUTPUTS)))
            b = np.zeros(NUM_OUTPUTS)
            b[:2] = -math.log((1 - prior) / prior)
            biases.append(b)
        return cls(weights, biases, level_cfg, quality)

    # parameters are flattened level by level as [W.ravel(), b] for the optimizer
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "ToyHeads":
        adam = None
        if self.adam is not None:
            adam = AdamState([m.copy() for m in self.adam.m], [v.copy() for v in self.adam.v], self.adam.t)
        return ToyHeads(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.level_cfg, self.quality, adam
        )

    def forward(self, pyr: FeaturePyramid) -> PredictionSet:
        if len(pyr.features) != len(self.weights):
            raise ValueError("feature pyramid and heads have different level counts")
        levels = []
        for f, w, b in zip(pyr.features, self.weights, self.biases):
            out = f @ w + b
            levels.append(LevelPrediction(out[:, :2], out[:, 2:4], out[:, 4]))
        return PredictionSet(levels)

    def item_grads(
        self, pyr: FeaturePyramid, target: TargetSet, loss_cfg: LossConfig = LossConfig()
    ) -> tuple[float, list[np.ndarray], list]:
        """Loss of one item and gradients for every entry of ``params()``."""
        pred = self.forward(pyr)
        brk, lg = item_loss(target, pred, loss_cfg)
        grads = []
        for f, g in zip(pyr.features, lg):
            dout = np.concatenate([g.cls_logit, g.reg_raw, g.qual_logit[:, None]], axis=1)
            grads += [f.T @ dout, dout.sum(axis=0)]
        return brk.total, grads, brk

    def to_dict(self) -> dict:
        d = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "level_config": self.level_cfg.to_dict(),
            "quality": self.quality,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        if self.adam is not None:
            d["adam"] = {"t": self.adam.t, "m": [m.tolist() for m in self.adam.m], "v": [v.tolist() for v in self.adam.v]}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ToyHeads":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a toy-heads checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        adam = None
        if "adam" in d:
            a = d["adam"]
            adam = AdamState([np.asarray(m, dtype=np.float64) for m in a["m"]], [np.asarray(v, dtype=np.float64) for v in a["v"]], int(a["t"]))
        heads = cls(
            [np.asarray(w, dtype=np.float64) for w in d["weights"]],
            [np.asarray(b, dtype=np.float64) for b in d["biases"]],
            LevelConfig.from_dict(d["level_config"]),
            d.get("quality", "leftness"),
            adam,
        )
        if not all(np.all(np.isfinite(p)) for p in heads.params()):
            raise ValueError("checkpoint holds non-finite parameters")
        return heads


def save_checkpoint(path, heads: ToyHeads, provenance: Optional[dict] = None) -> None:
    d = {"provenance": provenance or {}, **heads.to_dict()}
    Path(path).write_text(json.dumps(d) + "\n")


def load_checkpoint(path) -> ToyHeads:
    return ToyHeads.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# data


@dataclass
class Example:
    spec: Optional[SynthSpec]
    audio: np.ndarray
    annotation: BeatSequence
    pyramid: FeaturePyramid


def _build_example(args) -> Example:
    spec, level_cfg = args
    audio, ann = synth_track(spec, level_cfg.sample_rate)
    return Example(spec, audio, ann, extract_pyramid(audio, level_cfg))


def map_ordered(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """``list(map(fn, items))``, optionally in worker processes; order preserved."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def build_examples(specs: Sequence[SynthSpec], level_cfg: LevelConfig = LevelConfig(), jobs: int = 1) -> list[Example]:
    return map_ordered(_build_example, [(s, level_cfg) for s in specs], jobs)


def example_targets(ex: Example, level_cfg: LevelConfig, quality: str) -> TargetSet:
    grid = anchor_grid(len(ex.audio), level_cfg)
    b, d = intervals_from_beats(ex.annotation)
    return assign_targets(b, d, grid, level_cfg, quality)


# ---------------------------------------------------------------------------
# inference


def head_outputs(heads: ToyHeads, pyr: FeaturePyramid):
    pred = heads.forward(pyr)
    return (
        [p.cls_prob for p in pred.levels],
        [p.reg for p in pred.levels],
        [p.quality_prob for p in pred.levels],
    )


def predict_detections(
    heads: ToyHeads, audio_or_pyr, decode: DecodeConfig = DecodeConfig()
) -> dict[IntervalClass, list[Detection]]:
    """Scored candidates before suppression."""
    pyr = audio_or_pyr if isinstance(audio_or_pyr, FeaturePyramid) else extract_pyramid(audio_or_pyr, heads.level_cfg)
    grid = anchor_grid(pyr.track_len, heads.level_cfg)
    cp, rg, qp = head_outputs(heads, pyr)
    return score_and_collect(cp, rg, qp, grid, heads.level_cfg, decode.pre_filter, decode.score_mode)


def predict(heads: ToyHeads, audio_or_pyr, decode: DecodeConfig = DecodeConfig()) -> BeatSequence:
    pyr = audio_or_pyr if isinstance(audio_or_pyr, FeaturePyramid) else extract_pyramid(audio_or_pyr, heads.level_cfg)
    dets = predict_detections(heads, pyr, decode)
    kept = {c: suppress(dets[c], decode) for c in IntervalClass}
    end = pyr.track_len / heads.level_cfg.sample_rate
    return detections_to_beats(kept[IntervalClass.BEAT], kept[IntervalClass.DOWNBEAT], end_time=end)


def evaluate(heads: ToyHeads, examples: Sequence[Example], decode: DecodeConfig = DecodeConfig()) -> tuple[MetricReport, list[MetricReport]]:
    per_track = [joint_report(predict(heads, ex.pyramid, decode), ex.annotation) for ex in examples]
    return mean_reports(per_track), per_track


# ---------------------------------------------------------------------------
# training


def adam_step(heads: ToyHeads, grads: list[np.ndarray], cfg: TrainConfig, lr: float) -> None:
    params = heads.params()
    if heads.adam is None:
        heads.adam = AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    st = heads.adam
    st.t += 1
    c1 = 1 - cfg.beta1**st.t
    c2 = 1 - cfg.beta2**st.t
    for p, g, m, v in zip(params, grads, st.m, st.v):
        g = g + cfg.weight_decay * p  # L2-style decay, as in classic Adam
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


def train_toy(
    train: Sequence[Example],
    heads: ToyHeads,
    cfg: TrainConfig = TrainConfig(),
    loss_cfg: LossConfig = LossConfig(),
    val: Sequence[Example] = (),
    decode: DecodeConfig = DecodeConfig(),
    log_fn: Optional[Callable[[dict], None]] = None,
) -> tuple[ToyHeads, list[dict]]:
    """Mini-batch Adam on the total loss; returns trained heads and a per-epoch log.

    With a validation set the learning rate is multiplied by ``lr_decay`` when
    the validation joint F-measure has not improved for ``patience`` evaluations.
    """
    if not train:
        raise ValueError("empty training corpus")
    heads = heads.copy()
    targets = [example_targets(ex, heads.level_cfg, heads.quality) for ex in train]
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.lr
    best, stall = -math.inf, 0
    log: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        sums = np.zeros(3)
        totals = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            acc = None
            for i in batch:
                total, grads, brk = heads.item_grads(train[i].pyramid, targets[i], loss_cfg)
                if not math.isfinite(total):
                    raise DivergenceError(
                        f"loss became {total} at epoch {epoch} (track {i}, lr {lr:g}); "
                        "try a lower learning rate"
                    )
                acc = grads if acc is None else [a + g for a, g in zip(acc, grads)]
                sums += (brk.cls, brk.reg, brk.lft)
                totals.append(total)
            adam_step(heads, [a / len(batch) for a in acc], cfg, lr)
        n = len(train)
        row = {
            "epoch": epoch,
            "cls": sums[0] / n,
            "reg": sums[1] / n,
            "lft": sums[2] / n,
            "total": math.fsum(totals) / n,
            "lr": lr,
        }
        if val and cfg.eval_every > 0 and epoch % cfg.eval_every == 0:
            rep, _ = evaluate(heads, val, decode)
            row["val_beat_f1"] = rep.beat.f_measure
            row["val_downbeat_f1"] = rep.downbeat.f_measure
            jf = rep.joint_f
            if jf > best + 1e-9:
                best, stall = jf, 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    lr *= cfg.lr_decay
                    stall = 0
        log.append(row)
        if log_fn:
            log_fn(row)
    return heads, log


# ---------------------------------------------------------------------------
# experiment helpers


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def provenance(config: dict, seed: int) -> dict:
    return {"config_hash": config_hash(config), "seed": seed, "version": __version__}


ABLATION_HEADER = ["quality", "nms", "beat_f1", "beat_cmlt", "beat_amlt", "downbeat_f1", "downbeat_cmlt", "downbeat_amlt"]


def run_ablation(
    train: Sequence[Example],
    test: Sequence[Example],
    cfg: TrainConfig = TrainConfig(),
    loss_cfg: LossConfig = LossConfig(),
    val: Sequence[Example] = (),
    qualities: Sequence[str] = ("leftness", "centerness"),
    nms_modes: Sequence[str] = ("hard", "soft-linear"),
    decode: DecodeConfig = DecodeConfig(),
    level_cfg: LevelConfig = LevelConfig(),
) -> list[dict]:
    """One training run per quality mode, each decoded with every NMS mode."""
    rows = []
    for q in qualities:
        heads = ToyHeads.init(level_cfg, seed=cfg.seed, std=cfg.init_std, prior=cfg.prior, quality=q)
        heads, _ = train_toy(train, heads, replace(cfg, quality=q), loss_cfg, val, decode)
        for mode in nms_modes:
            rep, _ = evaluate(heads, test, replace(decode, nms=mode))
            rows.append(
                {
                    "quality": q,
                    "nms": mode,
                    "beat_f1": rep.beat.f_measure,
                    "beat_cmlt": rep.beat.cmlt,
                    "beat_amlt": rep.beat.amlt,
                    "downbeat_f1": rep.downbeat.f_measure,
                    "downbeat_cmlt": rep.downbeat.cmlt,
                    "downbeat_amlt": rep.downbeat.amlt,
                }
            )
    return rows
