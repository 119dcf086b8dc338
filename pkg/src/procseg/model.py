"""The full segmentation network: encoder, proposal head and decoder."""
from __future__ import annotations

import numpy as np

from .anchors import ConfigurationError, Segment, assign_training_samples
from .config import RunConfig
from .decoder import (build_candidate_grid, decode, grid_size, init_decoder,
                      sequence_backward, sequence_forward_teacher_forced)
from .encoder import encode_context, encode_context_backward, init_encoder
from .loss import LossWeights, composite_loss
from .numerics import AdamHyper, adam_step
from .proposal import init_proposal, propose, propose_backward


class ProcNet:
    def __init__(self, cfg: RunConfig, params=None):
        self.cfg = cfg
        self.lengths = cfg.anchor_lengths
        self.M = grid_size(len(self.lengths), cfg.L, cfg.h, cfg.w)
        if params is None:
            rng = np.random.default_rng(cfg.seed)
            params = {}
            params.update(init_encoder(rng, cfg.D, cfg.H))
            params.update(init_proposal(rng, cfg.D, self.lengths))
            params.update(init_decoder(rng, cfg.D, cfg.H, self.M))
        self.params = params
        self.weights = LossWeights(cfg.alpha_r, cfg.alpha_s)
        self.hyper = AdamHyper(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.cfg.L, self.cfg.D):
            raise ConfigurationError(
                f"features are {x.shape}, model expects ({self.cfg.L}, {self.cfg.D})")
        return x

    def proposal_map(self, x):
        x = self._check(x)
        b, _ = encode_context(x, self.params)
        pmap, _ = propose(b, self.lengths, self.params)
        return pmap

    def candidate_grid(self, x):
        return build_candidate_grid(self.proposal_map(x), self.cfg.h, self.cfg.w, self.lengths, self.cfg.L)

    def sample_batch(self, gts, rng):
        return assign_training_samples(self.lengths, self.cfg.L, gts, self.cfg.U, rng,
                                       self.cfg.pos_iou, self.cfg.neg_iou)

    def loss_and_backward(self, x, gts, batch, backward=True):
        """Composite loss for one video; accumulates parameter gradients when ``backward``."""
        x = self._check(x)
        b, enc_cache = encode_context(x, self.params)
        pmap, cols = propose(b, self.lengths, self.params)
        grid = build_candidate_grid(pmap, self.cfg.h, self.cfg.w, self.lengths, self.cfg.L)
        probs, targets, dec_cache = sequence_forward_teacher_forced(
            grid, x, gts, self.params, self.cfg.ablate)
        report, grads = composite_loss(pmap, batch, probs, targets, self.weights)
        if backward:
            d_vec = sequence_backward(grads.logits, dec_cache, self.params)
            np.add.at(grads.scores, (grid.win_k, grid.win_t), d_vec)
            d_b = propose_backward(grads.scores, grads.offsets_c, grads.offsets_l, pmap, cols,
                                   self.lengths, self.params, self.cfg.D)
            encode_context_backward(d_b, enc_cache, self.params)
        return report

    def step(self):
        for name, slot in self.params.items():
            adam_step(slot, self.hyper, name)

    def zero_grad(self):
        for slot in self.params.values():
            slot.zero_grad()

    def predict(self, x, beam_size=None, s_max=None, grid=None):
        """Decoded ``[(Segment, step probability), ...]`` in emission order."""
        grid = grid if grid is not None else self.candidate_grid(x)
        return decode(grid, self._check(x), self.params,
                      beam_size=beam_size or self.cfg.beam_size,
                      s_max=s_max or self.cfg.S_max, ablate=self.cfg.ablate)

    def proposals(self, x):
        """Every offset-adjusted proposal with its score, flattened row-major over K x L."""
        pmap = self.proposal_map(x)
        starts, ends = pmap.decoded(self.lengths)
        segs = [Segment(int(s), int(e)) for s, e in zip(starts.ravel(), ends.ravel())]
        return segs, pmap.scores.ravel()
