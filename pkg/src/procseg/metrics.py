"""Jaccard (intersection over prediction), mIoU and recall/precision/F1."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .anchors import iou

log = logging.getLogger(__name__)


def _overlap(a, b):
    return max(0, min(a.end, b.end) - max(a.start, b.start))


def jaccard_score(preds, gts):
    """Mean over gts of the best intersection-over-prediction among ``preds``."""
    if not gts:
        raise ValueError("jaccard needs at least one ground-truth segment")
    if not preds:
        return 0.0
    return sum(max(_overlap(g, p) / p.length for p in preds) for g in gts) / len(gts)


def miou_score(preds, gts):
    if not gts:
        raise ValueError("mIoU needs at least one ground-truth segment")
    if not preds:
        return 0.0
    return sum(max(iou(g, p) for p in preds) for g in gts) / len(gts)


def prf_at_iou(preds, gts, scores=None, tiou=0.5):
    """Recall, precision and F1 with greedy one-to-one matching.

    Predictions are visited by descending score (input order when ``scores``
    is None). Each claims the unmatched gt it overlaps best, if that IoU
    reaches ``tiou``.
    """
    if not preds or not gts:
        return 0.0, 0.0, 0.0
    order = range(len(preds)) if scores is None else sorted(range(len(preds)), key=lambda i: -scores[i])
    free = set(range(len(gts)))
    tp = 0
    for i in order:
        best = max(free, key=lambda j: (iou(preds[i], gts[j]), -j), default=None)
        if best is not None and iou(preds[i], gts[best]) >= tiou:
            free.discard(best)
            tp += 1
    recall = tp / len(gts)
    precision = tp / len(preds)
    f1 = 0.0 if tp == 0 else 2 * recall * precision / (recall + precision)
    return recall, precision, f1


@dataclass
class VideoScores:
    id: str
    jaccard: float
    miou: float
    recall: float
    precision: float
    f1: float
    num_preds: int


@dataclass
class EvalReport:
    """Corpus metrics in percent, averaged over videos."""

    method: str
    videos: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def _mean(self, attr):
        if not self.videos:
            return 0.0
        return 100.0 * sum(getattr(v, attr) for v in self.videos) / len(self.videos)

    @property
    def jaccard(self):
        return self._mean("jaccard")

    @property
    def miou(self):
        return self._mean("miou")

    @property
    def recall(self):
        return self._mean("recall")

    @property
    def precision(self):
        return self._mean("precision")

    @property
    def f1(self):
        return self._mean("f1")

    def to_dict(self):
        return {
            "method": self.method,
            "header": self.header,
            "num_videos": len(self.videos),
            "jaccard": self.jaccard,
            "miou": self.miou,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
            "mean_num_preds": (sum(v.num_preds for v in self.videos) / len(self.videos)
                               if self.videos else 0.0),
            "per_video": [vars(v).copy() for v in sorted(self.videos, key=lambda v: v.id)],
        }


def score_video(video_id, preds, gts, prf_preds, prf_scores=None, tiou=0.5):
    """Per-video scores; returns None (with a warning) for videos without gts."""
    if not gts:
        log.warning("video %s has no ground-truth segments; skipped", video_id)
        return None
    r, p, f = prf_at_iou(prf_preds, gts, prf_scores, tiou)
    return VideoScores(video_id, jaccard_score(preds, gts), miou_score(preds, gts), r, p, f, len(preds))
