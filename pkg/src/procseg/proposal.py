"""Per-anchor-length temporal convolutions producing the proposal maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import ConfigurationError, decode_grid
from .encoder import uniform_init
from .numerics import ParamSlot, sigmoid, temporal_conv, temporal_conv_backward


@dataclass
class ProposalMap:
    scores: np.ndarray     # K x L, after sigmoid
    offsets_c: np.ndarray  # K x L, after tanh
    offsets_l: np.ndarray  # K x L, after tanh

    @property
    def shape(self):
        return self.scores.shape

    def decoded(self, lengths):
        """Integer (starts, ends) of every proposal, each K x L."""
        return decode_grid(lengths, self.offsets_c, self.offsets_l, self.scores.shape[1])


def init_proposal(rng, D, lengths, prefix="prop"):
    params = {}
    for k, width in enumerate(lengths):
        params[f"{prefix}.{k}.W"] = ParamSlot(uniform_init(rng, (3, width * D), width * D))
        params[f"{prefix}.{k}.b"] = ParamSlot(np.zeros(3))
    return params


def propose(b, lengths, params, prefix="prop"):
    b = np.asarray(b, dtype=np.float64)
    L = b.shape[0]
    K = len(lengths)
    if f"{prefix}.{K - 1}.W" not in params or f"{prefix}.{K}.W" in params:
        raise ConfigurationError(f"proposal parameters do not match {K} anchor lengths")
    scores = np.empty((K, L))
    oc = np.empty((K, L))
    ol = np.empty((K, L))
    cols = []
    for k, width in enumerate(lengths):
        W = params[f"{prefix}.{k}.W"].value
        if W.shape[1] != width * b.shape[1]:
            raise ConfigurationError(f"row {k}: kernel {W.shape} does not fit width {width}")
        out, c = temporal_conv(b, width, W, params[f"{prefix}.{k}.b"].value)
        cols.append(c)
        scores[k] = sigmoid(out[:, 0])
        oc[k] = np.tanh(out[:, 1])
        ol[k] = np.tanh(out[:, 2])
    return ProposalMap(scores, oc, ol), cols


def propose_backward(d_scores, d_oc, d_ol, pmap, cols, lengths, params, D, prefix="prop"):
    """Gradients arrive w.r.t. the activated maps; returns the gradient w.r.t. ``b``."""
    K, L = pmap.scores.shape
    db_total = np.zeros((L, D))
    for k, width in enumerate(lengths):
        s = pmap.scores[k]
        d_pre = np.stack([
            d_scores[k] * s * (1.0 - s),
            d_oc[k] * (1.0 - pmap.offsets_c[k] ** 2),
            d_ol[k] * (1.0 - pmap.offsets_l[k] ** 2),
        ], axis=1)
        W = params[f"{prefix}.{k}.W"]
        dB, dW, dbias = temporal_conv_backward(d_pre, cols[k], width, W.value, L, D)
        W.grad += dW
        params[f"{prefix}.{k}.b"].grad += dbias
        db_total += dB
    return db_total
