"""Classification + offset regression + sequence cross-entropy objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import TrainingError, bce, bce_grad, smooth_l1, smooth_l1_grad


@dataclass(frozen=True)
class LossWeights:
    alpha_r: float = 1.0
    alpha_s: float = 1.0

    def __post_init__(self):
        if self.alpha_r < 0 or self.alpha_s < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossReport:
    l_cla: float
    l_reg: float
    l_seq: float
    total: float

    def as_dict(self):
        return {"l_cla": self.l_cla, "l_reg": self.l_reg, "l_seq": self.l_seq, "total": self.total}


@dataclass
class LossGrads:
    scores: np.ndarray
    offsets_c: np.ndarray
    offsets_l: np.ndarray
    logits: np.ndarray | None


def composite_loss(pmap, batch, probs, targets, weights=LossWeights()):
    """Evaluate the objective and its gradients.

    ``probs`` holds one softmax row per decoding step (end step included) and
    ``targets`` the matching class indices; pass ``probs=None`` to skip the
    sequence term. Gradients are w.r.t. the activated proposal maps and the
    decoder logits. Positives whose target offsets lie outside (-1, 1) are
    excluded from regression.
    """
    n_cls = batch.num_positive + batch.num_negative
    if n_cls == 0:
        raise ValueError("assignment batch is empty")
    g_s = np.zeros_like(pmap.scores)
    g_c = np.zeros_like(pmap.offsets_c)
    g_l = np.zeros_like(pmap.offsets_l)

    idx_k = np.array([k for k, _, _ in batch.positives] + [k for k, _ in batch.negatives], dtype=np.int64)
    idx_t = np.array([t for _, t, _ in batch.positives] + [t for _, t in batch.negatives], dtype=np.int64)
    labels = np.zeros(n_cls)
    labels[:batch.num_positive] = 1.0
    picked_scores = pmap.scores[idx_k, idx_t]
    l_cla = float(bce(picked_scores, labels).sum() / n_cls)
    np.add.at(g_s, (idx_k, idx_t), bce_grad(picked_scores, labels) / n_cls)

    regress = [(k, t, o) for k, t, o in batch.positives
               if abs(o.theta_c) < 1.0 and abs(o.theta_l) < 1.0]
    l_reg = 0.0
    for k, t, o in regress:
        pred = np.array([pmap.offsets_c[k, t], pmap.offsets_l[k, t]])
        target = np.array([o.theta_c, o.theta_l])
        l_reg += smooth_l1(pred, target)
        g = smooth_l1_grad(pred, target) * (weights.alpha_r / len(regress))
        g_c[k, t] += g[0]
        g_l[k, t] += g[1]
    if regress:
        l_reg /= len(regress)

    l_seq = 0.0
    g_logits = None
    if probs is not None:
        probs = np.asarray(probs, dtype=np.float64)
        steps = len(targets)
        picked = probs[np.arange(steps), targets]
        with np.errstate(divide="ignore"):
            l_seq = float(-np.log(picked).mean())
        g_logits = probs.copy()
        g_logits[np.arange(steps), targets] -= 1.0
        g_logits *= weights.alpha_s / steps

    total = l_cla + weights.alpha_r * l_reg + weights.alpha_s * l_seq
    for name, value in (("l_cla", l_cla), ("l_reg", l_reg), ("l_seq", l_seq), ("total", total)):
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss component {name}")
    return LossReport(l_cla, l_reg, l_seq, total), LossGrads(g_s, g_c, g_l, g_logits)
