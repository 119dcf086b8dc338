"""Context-aware frame encoding: Bi-LSTM states concatenated with the raw
frame features, then linearly reduced back to the input width."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import ConfigurationError
from .numerics import ParamSlot, affine, affine_backward, bilstm, bilstm_backward


def uniform_init(rng, shape, fan_in):
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


def init_encoder(rng, D, H, prefix="enc"):
    return {
        f"{prefix}.fwd.W": ParamSlot(uniform_init(rng, (4 * H, D + H), D + H)),
        f"{prefix}.fwd.b": ParamSlot(np.zeros(4 * H)),
        f"{prefix}.bwd.W": ParamSlot(uniform_init(rng, (4 * H, D + H), D + H)),
        f"{prefix}.bwd.b": ParamSlot(np.zeros(4 * H)),
        f"{prefix}.reduce.W": ParamSlot(uniform_init(rng, (D, D + 2 * H), D + 2 * H)),
        f"{prefix}.reduce.b": ParamSlot(np.zeros(D)),
    }


@dataclass
class EncoderCache:
    x: np.ndarray
    concat: np.ndarray
    lstm: tuple


def encode_context(x, params, prefix="enc"):
    """Returns the L x D context features and a cache for backward."""
    x = np.asarray(x, dtype=np.float64)
    Wr = params[f"{prefix}.reduce.W"].value
    if x.ndim != 2 or x.shape[0] < 1:
        raise ConfigurationError(f"expected L x D features with L >= 1, got {x.shape}")
    if Wr.shape[0] != x.shape[1]:
        raise ConfigurationError(f"encoder built for D={Wr.shape[0]}, features have D={x.shape[1]}")
    hidden, lstm_cache = bilstm(x, params[f"{prefix}.fwd.W"].value, params[f"{prefix}.fwd.b"].value,
                                params[f"{prefix}.bwd.W"].value, params[f"{prefix}.bwd.b"].value)
    concat = np.concatenate([x, hidden], axis=1)
    out = affine(concat, Wr, params[f"{prefix}.reduce.b"].value)
    return out, EncoderCache(x, concat, lstm_cache)


def encode_context_backward(d_out, cache, params, prefix="enc"):
    """Accumulates parameter gradients; returns the gradient w.r.t. the input features."""
    Wr = params[f"{prefix}.reduce.W"]
    d_concat, dW, db = affine_backward(d_out, cache.concat, Wr.value)
    Wr.grad += dW
    params[f"{prefix}.reduce.b"].grad += db
    D = cache.x.shape[1]
    dx, dWf, dbf, dWb, dbb = bilstm_backward(
        d_concat[:, D:], cache.lstm, params[f"{prefix}.fwd.W"].value, params[f"{prefix}.bwd.W"].value)
    params[f"{prefix}.fwd.W"].grad += dWf
    params[f"{prefix}.fwd.b"].grad += dbf
    params[f"{prefix}.bwd.W"].grad += dWb
    params[f"{prefix}.bwd.b"].grad += dbb
    return dx + d_concat[:, :D]
