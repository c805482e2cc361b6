"""Detection losses (focal classification, 1D GIoU regression, leftness BCE)
with analytic gradients with respect to the raw head outputs.

Raw head outputs per anchor:
    cls_logit  (2,)  sigmoid -> per-class probability
    reg_raw    (2,)  exp     -> stride-normalised (l, r) offsets
    qual_logit ()    sigmoid -> leftness (or centerness) probability
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .assignment import QUALITY_FNS, TargetSet
from .geometry import Interval, giou

EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    alpha: float = 0.25
    cls_weight: float = 1.0
    reg_weight: float = 1.0
    lft_weight: float = 1.0
    eps: float = EPS

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


# ---------------------------------------------------------------------------
# scalar / elementwise losses


def focal_loss(p, c, gamma: float = 2.0, alpha: float = 0.25, eps: float = EPS):
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    c = np.asarray(c)
    pos = -alpha * (1.0 - p) ** gamma * np.log(p)
    neg = -(1.0 - alpha) * p**gamma * np.log1p(-p)
    out = np.where(c > 0, pos, neg)
    return float(out) if out.ndim == 0 else out


def focal_loss_logits(x, c, gamma: float = 2.0, alpha: float = 0.25, eps: float = EPS):
    """Focal loss of sigmoid(x) and its derivative with respect to x."""
    p = sigmoid(x)
    clipped = (p < eps) | (p > 1.0 - eps)
    pc = np.clip(p, eps, 1.0 - eps)
    c = np.asarray(c) > 0
    q = 1.0 - pc
    loss = np.where(
        c,
        -alpha * q**gamma * np.log(pc),
        -(1.0 - alpha) * pc**gamma * np.log(q),
    )
    grad = np.where(
        c,
        alpha * (gamma * pc * q**gamma * np.log(pc) - q ** (gamma + 1.0)),
        (1.0 - alpha) * (pc ** (gamma + 1.0) - gamma * pc**gamma * q * np.log(q)),
    )
    grad = np.where(clipped, 0.0, grad)
    return loss, grad


def bce(p, y, eps: float = EPS):
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def bce_logits(x, y, eps: float = EPS):
    p = sigmoid(x)
    clipped = (p < eps) | (p > 1.0 - eps)
    pc = np.clip(p, eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    grad = np.where(clipped, 0.0, p - y)
    return loss, grad


def giou_loss(pred: Interval, gt: Interval) -> float:
    return 1.0 - giou(pred, gt)


def giou_loss_endpoints(a1, a2, b1, b2):
    """1 - GIoU of [a1, a2] against [b1, b2], and d/da1, d/da2."""
    a1, a2, b1, b2 = (np.asarray(v, dtype=np.float64) for v in (a1, a2, b1, b2))
    raw_inter = np.minimum(a2, b2) - np.maximum(a1, b1)
    overlap = raw_inter > 0
    inter = np.where(overlap, raw_inter, 0.0)
    union = (a2 - a1) + (b2 - b1) - inter
    hull = np.maximum(a2, b2) - np.minimum(a1, b1)
    g = inter / union - (hull - union) / hull

    di1 = np.where(overlap & (a1 > b1), -1.0, 0.0)
    di2 = np.where(overlap & (a2 < b2), 1.0, 0.0)
    du1 = -1.0 - di1
    du2 = 1.0 - di2
    dh1 = np.where(a1 < b1, -1.0, 0.0)
    dh2 = np.where(a2 > b2, 1.0, 0.0)

    def dg(di, du, dh):
        return (di * union - inter * du) / union**2 + (du * hull - union * dh) / hull**2

    return 1.0 - g, -dg(di1, du1, dh1), -dg(di2, du2, dh2)


def giou_loss_offsets(l, r, lt, rt):
    """GIoU loss of anchor-centred offsets (l, r) against targets (lt, rt).

    Returns the loss and its derivatives with respect to l and r.
    """
    loss, d1, d2 = giou_loss_endpoints(-np.asarray(l), r, -np.asarray(lt), rt)
    return loss, -d1, d2


def leftness_bce(reg_target, leftness_prob, eps: float = EPS, quality: str = "leftness") -> float:
    l, r = reg_target
    y = QUALITY_FNS[quality](l, r)
    return float(bce(leftness_prob, y, eps))


# ---------------------------------------------------------------------------
# per-anchor predictions and batch loss


@dataclass
class LevelPrediction:
    cls_logit: np.ndarray  # (N, 2)
    reg_raw: np.ndarray  # (N, 2)
    qual_logit: np.ndarray  # (N,)

    @property
    def cls_prob(self) -> np.ndarray:
        return sigmoid(self.cls_logit)

    @property
    def reg(self) -> np.ndarray:
        return np.exp(self.reg_raw)

    @property
    def quality_prob(self) -> np.ndarray:
        return sigmoid(self.qual_logit)


@dataclass
class PredictionSet:
    levels: list[LevelPrediction]

    @classmethod
    def from_probs(cls, cls_prob, reg, quality_prob) -> "PredictionSet":
        """Build from per-level probabilities and positive offsets."""
        levels = []
        for cp, rg, qp in zip(cls_prob, reg, quality_prob):
            cp = np.clip(np.asarray(cp, dtype=np.float64), EPS, 1 - EPS)
            qp = np.clip(np.asarray(qp, dtype=np.float64), EPS, 1 - EPS)
            rg = np.asarray(rg, dtype=np.float64)
            if np.any(rg <= 0):
                raise ValueError("regression offsets must be strictly positive")
            levels.append(LevelPrediction(logit(cp), np.log(rg), logit(qp)))
        return cls(levels)


@dataclass
class LossBreakdown:
    total: float
    cls: float
    reg: float
    lft: float
    num_positive: int


@dataclass
class LevelGrads:
    cls_logit: np.ndarray
    reg_raw: np.ndarray
    qual_logit: np.ndarray


def item_loss(
    target: TargetSet, pred: PredictionSet, cfg: LossConfig = LossConfig(), with_grad: bool = True
) -> tuple[LossBreakdown, list[LevelGrads] | None]:
    """Mean per-anchor loss of one batch item, and gradients of that mean."""
    n_total = target.num_anchors
    if n_total == 0:
        raise ValueError("batch item has no anchors")
    if len(target.levels) != len(pred.levels):
        raise ValueError("targets and predictions have different level counts")
    cls_terms, reg_terms, lft_terms = [], [], []
    grads = [] if with_grad else None
    npos = 0
    for t, p in zip(target.levels, pred.levels):
        if p.cls_logit.shape != t.cls.shape:
            raise ValueError("targets and predictions are not aligned anchor-for-anchor")
        fl, dfl = focal_loss_logits(p.cls_logit, t.cls, cfg.gamma, cfg.alpha, cfg.eps)
        cls_terms.append(fl.ravel())
        pos = t.positive
        npos += int(pos.sum())
        dreg = np.zeros_like(p.reg_raw)
        dq = np.zeros_like(p.qual_logit)
        if pos.any():
            off = np.exp(p.reg_raw[pos])
            gl, dl, dr = giou_loss_offsets(off[:, 0], off[:, 1], t.reg[pos, 0], t.reg[pos, 1])
            reg_terms.append(gl)
            dreg[pos, 0] = dl * off[:, 0]
            dreg[pos, 1] = dr * off[:, 1]
            bl, db = bce_logits(p.qual_logit[pos], t.quality[pos], cfg.eps)
            lft_terms.append(bl)
            dq[pos] = db
        if with_grad:
            grads.append(
                LevelGrads(
                    cfg.cls_weight * dfl / n_total,
                    cfg.reg_weight * dreg / n_total,
                    cfg.lft_weight * dq / n_total,
                )
            )
    cls = cfg.cls_weight * _fsum(cls_terms) / n_total
    reg = cfg.reg_weight * _fsum(reg_terms) / n_total
    lft = cfg.lft_weight * _fsum(lft_terms) / n_total
    return LossBreakdown(cls + reg + lft, cls, reg, lft, npos), grads


def _fsum(parts: Sequence[np.ndarray]) -> float:
    # exactly rounded, hence independent of anchor order
    return math.fsum(itertools.chain.from_iterable(np.ravel(p).tolist() for p in parts))


def total_loss(
    targets: Sequence[TargetSet], preds: Sequence[PredictionSet], cfg: LossConfig = LossConfig()
) -> LossBreakdown:
    """Per-item mean over anchors, then mean over the batch."""
    if len(targets) != len(preds) or not targets:
        raise ValueError("need equally many (>0) targets and predictions")
    items = [item_loss(t, p, cfg, with_grad=False)[0] for t, p in zip(targets, preds)]
    b = len(items)
    cls = math.fsum(i.cls for i in items) / b
    reg = math.fsum(i.reg for i in items) / b
    lft = math.fsum(i.lft for i in items) / b
    return LossBreakdown(cls + reg + lft, cls, reg, lft, sum(i.num_positive for i in items))


# ---------------------------------------------------------------------------


def gradient_check(
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    step: float = 1e-6,
    floor: float = 1e-8,
) -> float:
    """Max relative error between fn's analytic gradient and central differences.

    ``fn(x)`` returns ``(value, grad)``.  Entries where both gradients are
    below ``floor`` in magnitude are compared against ``floor`` instead.
    """
    x = np.array(x, dtype=np.float64)
    _, analytic = fn(x)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(x.shape)
    numeric = np.empty_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(x)[0]
        flat[i] = orig - step
        fm = fn(x)[0]
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
