"""Anchor grid, center/log-length offset codec, 1-D IoU and sample assignment.

Frames are unit cells: frame ``t`` covers ``[t, t+1)`` in continuous time,
so the anchor placed at frame ``t`` has continuous center ``t + 0.5`` and,
for odd length ``l``, the integer extent ``[t - (l-1)/2, t + (l+1)/2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ConfigurationError(ValueError):
    pass


class AssignmentError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class Segment:
    """Half-open frame interval ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"empty segment [{self.start}, {self.end})")

    @property
    def center(self) -> float:
        return (self.start + self.end) / 2.0

    @property
    def length(self) -> int:
        return self.end - self.start

    def shifted(self, offset: int) -> "Segment":
        return Segment(self.start + offset, self.end + offset)

    def to_dict(self):
        return {"start_frame": self.start, "end_frame": self.end}


@dataclass(frozen=True)
class Anchor:
    center: float
    length: float

    @classmethod
    def at_frame(cls, frame: int, length: int) -> "Anchor":
        return cls(frame + 0.5, length)

    @property
    def extent(self) -> tuple[int, int]:
        return _round_half_up(self.center - self.length / 2), _round_half_up(self.center + self.length / 2)


@dataclass(frozen=True)
class OffsetPair:
    theta_c: float
    theta_l: float


@dataclass
class AssignmentBatch:
    """Sampled training placements; each placement is ``(k, t)``."""

    positives: list  # (k, t, OffsetPair)
    negatives: list  # (k, t)

    @property
    def num_positive(self):
        return len(self.positives)

    @property
    def num_negative(self):
        return len(self.negatives)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_anchor_lengths(min_len: int, interval: int, count: int) -> list[int]:
    if count < 1:
        raise ConfigurationError("anchor count must be >= 1")
    lengths = [min_len + k * interval for k in range(count)]
    bad = [n for n in lengths if n < 1 or n % 2 == 0]
    if bad:
        raise ConfigurationError(f"anchor lengths must be odd and positive, got {bad}")
    return lengths


def encode_offsets(anchor: Anchor, gt: Segment) -> OffsetPair:
    return OffsetPair((gt.center - anchor.center) / anchor.length,
                      math.log(gt.length / anchor.length))


def decode_continuous(anchor: Anchor, offsets: OffsetPair) -> tuple[float, float]:
    """Center and length in continuous frame units, before rounding."""
    return (anchor.center + offsets.theta_c * anchor.length,
            anchor.length * math.exp(offsets.theta_l))


def _to_segment(start: float, end: float, L: int) -> Segment:
    s = min(max(_round_half_up(start), 0), L - 1)
    e = min(max(_round_half_up(end), s + 1), L)
    return Segment(s, e)


def decode_segment(anchor: Anchor, offsets: OffsetPair, L: int) -> Segment:
    if L < 1:
        raise ValueError("L must be >= 1")
    c, length = decode_continuous(anchor, offsets)
    return _to_segment(c - length / 2, c + length / 2, L)


def decode_grid(lengths, theta_c, theta_l, L):
    """Vectorized decode for a K x L grid; returns integer (starts, ends)."""
    la = np.asarray(lengths, dtype=np.float64)[:, None]
    ca = np.arange(theta_c.shape[1], dtype=np.float64)[None, :] + 0.5
    c = ca + theta_c * la
    ln = la * np.exp(theta_l)
    s = np.floor(c - ln / 2 + 0.5).astype(np.int64)
    e = np.floor(c + ln / 2 + 0.5).astype(np.int64)
    s = np.clip(s, 0, L - 1)
    e = np.clip(np.maximum(e, s + 1), None, L)
    return s, e


def iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    return inter / (a.length + b.length - inter)


def iou_matrix(starts, ends, gt_starts, gt_ends):
    """IoU between every interval in (starts, ends) and every gt, broadcast on a new last axis."""
    s = np.asarray(starts, dtype=np.float64)[..., None]
    e = np.asarray(ends, dtype=np.float64)[..., None]
    gs = np.asarray(gt_starts, dtype=np.float64)
    ge = np.asarray(gt_ends, dtype=np.float64)
    inter = np.clip(np.minimum(e, ge) - np.maximum(s, gs), 0.0, None)
    union = (e - s) + (ge - gs) - inter
    return inter / union


def anchor_extents(lengths, L):
    """Raw (unclipped) integer extents of every anchor placement, each K x L."""
    la = np.asarray(lengths, dtype=np.int64)[:, None]
    t = np.arange(L, dtype=np.int64)[None, :]
    return t - (la - 1) // 2, t + (la + 1) // 2


def assign_training_samples(lengths, L, gts, U, rng, pos_thresh=0.8, neg_thresh=0.2):
    """Label anchor placements by IoU with the ground truth and sample them.

    Positives (IoU >= ``pos_thresh`` with some gt) carry the encoded offsets
    of their best-matching gt; negatives have IoU < ``neg_thresh`` with all
    gts. Up to ``U`` of each are drawn; missing positives are replaced by
    extra negatives.
    """
    if not pos_thresh > neg_thresh:
        raise ConfigurationError("pos_thresh must exceed neg_thresh")
    gts = sorted(gts, key=lambda g: (g.start, g.end))
    starts, ends = anchor_extents(lengths, L)
    if gts:
        ious = iou_matrix(starts, ends, [g.start for g in gts], [g.end for g in gts])
        best = ious.max(axis=-1)
        best_gt = ious.argmax(axis=-1)  # first max -> earliest gt
    else:
        best = np.zeros(starts.shape)
        best_gt = np.zeros(starts.shape, dtype=np.int64)
    pos_flat = np.flatnonzero(best >= pos_thresh)
    neg_flat = np.flatnonzero(best < neg_thresh)
    if neg_flat.size == 0:
        raise AssignmentError("no negative anchor placements available")
    n_pos = min(U, pos_flat.size)
    n_neg = min(2 * U - n_pos, neg_flat.size)
    pos_pick = np.sort(rng.choice(pos_flat, size=n_pos, replace=False)) if n_pos else pos_flat[:0]
    neg_pick = np.sort(rng.choice(neg_flat, size=n_neg, replace=False))
    positives = []
    for flat in pos_pick:
        k, t = divmod(int(flat), L)
        g = gts[best_gt[k, t]]
        positives.append((k, t, encode_offsets(Anchor.at_frame(t, lengths[k]), g)))
    negatives = [divmod(int(flat), L) for flat in neg_pick]
    return AssignmentBatch(positives, negatives)
