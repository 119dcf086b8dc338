"""Segment-level sequential prediction over a pooled candidate grid.

The decoder LSTM consumes, at every step, the concatenation of the proposal
vector (max-pooled scores, fixed per video), the location embedding of the
previous segment and the reduced mean-pooled content of that segment. Its
softmax ranges over the M candidates plus an end class at index M.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .anchors import Segment, iou, iou_matrix
from .encoder import uniform_init
from .numerics import (ParamSlot, affine, affine_backward, log_softmax, lstm_backward,
                       lstm_forward, lstm_step, softmax)

START = "start"
ABLATIONS = ("proposal_vec", "location_emb", "segment_content")


@dataclass
class CandidateGrid:
    rows: int
    cols: int
    scores: np.ndarray       # proposal vector, length M
    win_k: np.ndarray
    win_t: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    segments: list = field(default_factory=list)

    @property
    def size(self):
        return self.scores.shape[0]

    def flat_index(self, row, col):
        return col * self.rows + row


def grid_size(K, L, h, w):
    return math.ceil(K / h) * math.ceil(L / w)


def build_candidate_grid(pmap, h, w, lengths, L=None):
    """Max-pool the score map with non-overlapping h x w windows.

    Cells are flattened column by column. Inside a window the winner is the
    highest score, ties going to the smaller anchor row and then the earlier
    frame. Each cell's segment is the winner's offset-adjusted proposal.
    """
    if h < 1 or w < 1:
        raise ValueError("pooling window must be at least 1 x 1")
    K, Lm = pmap.scores.shape
    L = Lm if L is None else L
    R, C = math.ceil(K / h), math.ceil(Lm / w)
    padded = np.full((R * h, C * w), -np.inf)
    padded[:K, :Lm] = pmap.scores
    # (R, h, C, w) -> (C, R, h*w): column-major cells, window flattened k-major
    win = padded.reshape(R, h, C, w).transpose(2, 0, 1, 3).reshape(C * R, h * w)
    arg = win.argmax(axis=1)
    cells = np.arange(C * R)
    col, row = np.divmod(cells, R)
    win_k = row * h + arg // w
    win_t = col * w + arg % w
    starts_all, ends_all = pmap.decoded(lengths)
    starts = starts_all[win_k, win_t]
    ends = np.minimum(ends_all[win_k, win_t], L)
    segs = [Segment(int(s), int(e)) for s, e in zip(starts, ends)]
    return CandidateGrid(R, C, win[cells, arg].copy(), win_k, win_t, starts, ends, segs)


def nearest_candidate(gt, grid):
    """Index of the candidate with the highest IoU against ``gt``.

    Ties go to the smaller index; when nothing overlaps, the candidate with
    the closest center wins.
    """
    ious = iou_matrix(grid.starts, grid.ends, [gt.start], [gt.end])[:, 0]
    best = int(ious.argmax())
    if ious[best] > 0:
        return best
    centers = (grid.starts + grid.ends) / 2.0
    return int(np.abs(centers - gt.center).argmin())


# ---------------------------------------------------------------- parameters

def init_decoder(rng, D, H, M, prefix="dec"):
    return {
        f"{prefix}.embed": ParamSlot(rng.uniform(-1.0, 1.0, size=(M + 1, M)) / np.sqrt(M)),
        f"{prefix}.content.W": ParamSlot(uniform_init(rng, (M, D), D)),
        f"{prefix}.content.b": ParamSlot(np.zeros(M)),
        f"{prefix}.lstm.W": ParamSlot(uniform_init(rng, (4 * H, 3 * M + H), 3 * M + H)),
        f"{prefix}.lstm.b": ParamSlot(np.zeros(4 * H)),
        f"{prefix}.out.W": ParamSlot(uniform_init(rng, (M + 1, H), H)),
        f"{prefix}.out.b": ParamSlot(np.zeros(M + 1)),
    }


def input_mask(M, ablate=()):
    """Multiplier over the 3M-wide decoder input that zeroes ablated thirds."""
    unknown = set(ablate) - set(ABLATIONS)
    if unknown:
        raise ValueError(f"unknown ablation(s): {sorted(unknown)}")
    mask = np.ones(3 * M)
    for i, name in enumerate(ABLATIONS):
        if name in ablate:
            mask[i * M:(i + 1) * M] = 0.0
    return mask


def pooled_features(x, seg):
    if seg.start < 0 or seg.end > x.shape[0]:
        raise ValueError(f"segment [{seg.start}, {seg.end}) outside {x.shape[0]} frames")
    return np.asarray(x[seg.start:seg.end], dtype=np.float64).mean(axis=0)


def segment_content(x, seg, params, prefix="dec"):
    """Mean frame feature over ``seg``, reduced to the proposal-vector width."""
    return affine(pooled_features(x, seg), params[f"{prefix}.content.W"].value,
                  params[f"{prefix}.content.b"].value)


def location_embedding(token, params, prefix="dec"):
    E = params[f"{prefix}.embed"].value
    M = E.shape[1]
    if token == START:
        return E[M].copy()
    if not (isinstance(token, (int, np.integer)) and 0 <= token < M):
        raise IndexError(f"candidate index {token!r} outside [0, {M})")
    return E[token].copy()


# ---------------------------------------------------------------- training pass

@dataclass
class TeacherForcedCache:
    inputs: np.ndarray
    hidden: np.ndarray
    lstm: list
    pooled: np.ndarray
    prev_tokens: list
    mask: np.ndarray


def sequence_forward_teacher_forced(grid, x, gts, params, ablate=(), prefix="dec"):
    """Run the decoder on ground-truth history.

    Returns ``(probs, targets, cache)``: probs is ``(N+1) x (M+1)``; targets are
    the nearest-candidate indices of the sorted gts followed by the end class.
    """
    gts = sorted(gts, key=lambda g: (g.start, g.end))
    if not gts:
        raise ValueError("teacher forcing needs at least one ground-truth segment")
    M = grid.size
    targets = [nearest_candidate(g, grid) for g in gts] + [M]
    whole = Segment(0, x.shape[0])
    prev_segs = [whole] + gts
    prev_tokens = [START] + targets[:-1]
    pooled = np.stack([pooled_features(x, s) for s in prev_segs])
    Wc, bc = params[f"{prefix}.content.W"].value, params[f"{prefix}.content.b"].value
    content = affine(pooled, Wc, bc)
    E = params[f"{prefix}.embed"].value
    emb = E[[M if t == START else t for t in prev_tokens]]
    T = len(prev_tokens)
    mask = input_mask(M, ablate)
    inputs = np.concatenate([np.tile(grid.scores, (T, 1)), emb, content], axis=1) * mask
    hidden, lstm_cache = lstm_forward(inputs, params[f"{prefix}.lstm.W"].value,
                                      params[f"{prefix}.lstm.b"].value)
    logits = affine(hidden, params[f"{prefix}.out.W"].value, params[f"{prefix}.out.b"].value)
    probs = softmax(logits)
    cache = TeacherForcedCache(inputs, hidden, lstm_cache, pooled, prev_tokens, mask)
    return probs, targets, cache


def sequence_backward(d_logits, cache, params, prefix="dec"):
    """Accumulates decoder gradients; returns the gradient w.r.t. the proposal vector."""
    Wo = params[f"{prefix}.out.W"]
    dH, dW, db = affine_backward(d_logits, cache.hidden, Wo.value)
    Wo.grad += dW
    params[f"{prefix}.out.b"].grad += db
    dX, dW, db = lstm_backward(dH, cache.lstm, params[f"{prefix}.lstm.W"].value)
    params[f"{prefix}.lstm.W"].grad += dW
    params[f"{prefix}.lstm.b"].grad += db
    dX = dX * cache.mask
    M = dX.shape[1] // 3
    E = params[f"{prefix}.embed"]
    for row, tok in enumerate(cache.prev_tokens):
        E.grad[M if tok == START else tok] += dX[row, M:2 * M]
    Wc = params[f"{prefix}.content.W"]
    _, dW, db = affine_backward(dX[:, 2 * M:], cache.pooled, Wc.value)
    Wc.grad += dW
    params[f"{prefix}.content.b"].grad += db
    return dX[:, :M].sum(axis=0)


# ---------------------------------------------------------------- inference

def _step_input(grid, x, token, seg, params, mask, prefix):
    return np.concatenate([grid.scores, location_embedding(token, params, prefix),
                           segment_content(x, seg, params, prefix)]) * mask


def decode(grid, x, params, beam_size=1, s_max=16, ablate=(), prefix="dec"):
    """Beam search over candidate indices; returns ``[(Segment, prob), ...]``.

    Hypotheses are ranked by summed log-probability and finish on the end
    class or after ``s_max`` segments. Candidates already emitted by a
    hypothesis are masked out for it. ``prob`` is the (renormalized) step
    probability of the emitted candidate.
    """
    if s_max < 1 or beam_size < 1:
        raise ValueError("s_max and beam_size must be >= 1")
    M = grid.size
    mask = input_mask(M, ablate)
    W, b = params[f"{prefix}.lstm.W"].value, params[f"{prefix}.lstm.b"].value
    Wo, bo = params[f"{prefix}.out.W"].value, params[f"{prefix}.out.b"].value
    H = W.shape[0] // 4
    whole = Segment(0, x.shape[0])
    # (logp, tokens, step probs, h, c)
    beams = [(0.0, [], [], np.zeros(H), np.zeros(H))]
    completed = []
    for _ in range(s_max):
        expanded = []
        for logp, toks, probs, h, c in beams:
            prev_tok = toks[-1] if toks else START
            prev_seg = grid.segments[toks[-1]] if toks else whole
            h2, c2, _ = lstm_step(_step_input(grid, x, prev_tok, prev_seg, params, mask, prefix),
                                  h, c, W, b)
            logits = Wo @ h2 + bo
            if toks:
                logits[toks] = -np.inf
            lp = log_softmax(logits)
            order = np.argsort(-lp, kind="stable")[:beam_size]
            for tok in order:
                if not np.isfinite(lp[tok]):
                    continue
                expanded.append((logp + lp[tok], toks + [int(tok)], probs + [math.exp(lp[tok])], h2, c2))
        expanded.sort(key=lambda e: -e[0])
        beams = []
        for cand in expanded[:beam_size]:
            logp, toks, probs, h, c = cand
            if toks[-1] == M:
                completed.append((logp, toks[:-1], probs[:-1]))
            elif len(toks) >= s_max:
                completed.append((logp, toks, probs))
            else:
                beams.append(cand)
        if not beams or len(completed) >= beam_size:
            break
    if not completed:
        completed = [(lp_, t, p) for lp_, t, p, _, _ in beams]
    best = max(completed, key=lambda e: e[0])
    return [(grid.segments[t], p) for t, p in zip(best[1], best[2])]


# ---------------------------------------------------------------- baselines

def nms_select(segments, scores, iou_thresh=0.5, n=7):
    """Greedy non-maximum suppression; kept ``(segment, score)`` pairs sorted by start."""
    if n < 1:
        raise ValueError("n must be >= 1")
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    kept = []
    for i in order:
        seg = segments[i]
        if all(iou(seg, k) < iou_thresh for k, _ in kept):
            kept.append((seg, float(scores[i])))
            if len(kept) == n:
                break
    return sorted(kept, key=lambda p: (p[0].start, p[0].end))


def uniform_segments(L, n=7):
    if n > L:
        raise ValueError(f"cannot split {L} frames into {n} segments")
    if n < 1:
        raise ValueError("n must be >= 1")
    step = L // n
    return [Segment(i * step, L if i == n - 1 else (i + 1) * step) for i in range(n)]
