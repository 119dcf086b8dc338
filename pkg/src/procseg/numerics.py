"""Small differentiable core: layer forward/backward rules, losses, Adam.

Everything runs in float64. Backward functions return gradients; callers
accumulate them into the matching ``ParamSlot.grad``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BCE_EPS = 1e-7


class DimensionError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class ParamSlot:
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    adam_m: np.ndarray = field(default=None)
    adam_v: np.ndarray = field(default=None)
    step_count: int = 0

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        for name in ("grad", "adam_m", "adam_v"):
            arr = getattr(self, name)
            if arr is None:
                setattr(self, name, np.zeros_like(self.value))
            elif arr.shape != self.value.shape:
                raise DimensionError(f"{name} shape {arr.shape} != value shape {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 4e-5
    beta1: float = 0.8
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


def adam_step(slot: ParamSlot, hyper: AdamHyper, name: str = "?") -> ParamSlot:
    """Bias-corrected Adam update in place; the gradient is zeroed afterwards."""
    g = slot.grad
    if not np.all(np.isfinite(g)):
        raise TrainingError(f"non-finite gradient for parameter {name!r}")
    slot.step_count += 1
    t = slot.step_count
    slot.adam_m *= hyper.beta1
    slot.adam_m += (1.0 - hyper.beta1) * g
    slot.adam_v *= hyper.beta2
    slot.adam_v += (1.0 - hyper.beta2) * (g * g)
    m_hat = slot.adam_m / (1.0 - hyper.beta1 ** t)
    v_hat = slot.adam_v / (1.0 - hyper.beta2 ** t)
    slot.value -= hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.epsilon)
    slot.grad.fill(0.0)
    return slot


# ---------------------------------------------------------------- activations

def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------- affine

def affine(x, W, b):
    """``W @ x + b`` for a vector, or row-wise for a matrix of inputs."""
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"affine: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W.T + b


def affine_backward(dy, x, W):
    """Returns ``(dx, dW, db)``; batch rows are summed into dW and db."""
    dy = np.asarray(dy, dtype=np.float64)
    if dy.ndim == 1:
        return W.T @ dy, np.outer(dy, x), dy.copy()
    return dy @ W, dy.T @ x, dy.sum(axis=0)


# ---------------------------------------------------------------- LSTM
# Gate rows of W are ordered input, forget, output, candidate.
# W has shape (4H, Din + H) acting on [x; h_prev].

def _check_lstm(x, h_prev, W, b):
    H = h_prev.shape[-1]
    if W.shape != (4 * H, x.shape[-1] + H) or b.shape != (4 * H,):
        raise DimensionError(
            f"lstm: x {x.shape}, h {h_prev.shape}, W {W.shape}, b {b.shape}")
    return H


def lstm_step(x_t, h_prev, c_prev, W, b):
    """One LSTM cell step. Returns ``(h_t, c_t, cache)``."""
    H = _check_lstm(x_t, h_prev, W, b)
    xh = np.concatenate([x_t, h_prev])
    z = W @ xh + b
    i = sigmoid(z[:H])
    f = sigmoid(z[H:2 * H])
    o = sigmoid(z[2 * H:3 * H])
    g = np.tanh(z[3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (xh, c_prev, i, f, o, g, tc)


def lstm_step_backward(dh, dc, cache, W):
    """Returns ``(dx, dh_prev, dc_prev, dW, db)``."""
    xh, c_prev, i, f, o, g, tc = cache
    H = i.shape[0]
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c_prev * f * (1.0 - f),
        dh * tc * o * (1.0 - o),
        dc * i * (1.0 - g * g),
    ])
    dxh = W.T @ dz
    din = xh.shape[0] - H
    return dxh[:din], dxh[din:], dc * f, np.outer(dz, xh), dz


def lstm_forward(X, W, b, reverse=False):
    """Run an LSTM over the rows of ``X`` from zero initial state.

    With ``reverse`` the sequence is consumed last row first, and row t of
    the output still holds the state produced at input row t.
    """
    X = np.asarray(X, dtype=np.float64)
    L = X.shape[0]
    H = W.shape[0] // 4
    h = np.zeros(H)
    c = np.zeros(H)
    out = np.zeros((L, H))
    caches = [None] * L
    order = range(L - 1, -1, -1) if reverse else range(L)
    for t in order:
        h, c, caches[t] = lstm_step(X[t], h, c, W, b)
        out[t] = h
    return out, caches


def lstm_backward(dOut, caches, W, reverse=False):
    L = len(caches)
    H = W.shape[0] // 4
    din = W.shape[1] - H
    dX = np.zeros((L, din))
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[0])
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    order = range(L) if reverse else range(L - 1, -1, -1)
    for t in order:
        dx, dh_next, dc_next, dWt, dbt = lstm_step_backward(
            dOut[t] + dh_next, dc_next, caches[t], W)
        dX[t] = dx
        dW += dWt
        db += dbt
    return dX, dW, db


def bilstm(X, Wf, bf, Wb, bb):
    """Bidirectional LSTM; row t is ``[h_fwd_t ; h_bwd_t]``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("bilstm needs a non-empty L x D input")
    hf, cf = lstm_forward(X, Wf, bf)
    hb, cb = lstm_forward(X, Wb, bb, reverse=True)
    return np.concatenate([hf, hb], axis=1), (cf, cb)


def bilstm_backward(dOut, cache, Wf, Wb):
    """Returns ``(dX, dWf, dbf, dWb, dbb)``."""
    cf, cb = cache
    H = Wf.shape[0] // 4
    dXf, dWf, dbf = lstm_backward(dOut[:, :H], cf, Wf)
    dXb, dWb, dbb = lstm_backward(dOut[:, H:], cb, Wb, reverse=True)
    return dXf + dXb, dWf, dbf, dWb, dbb


# ---------------------------------------------------------------- temporal conv

def _windows(B, k):
    pad = (k - 1) // 2
    Bp = np.pad(B, ((pad, pad), (0, 0)))
    # (L, k, D) view flattened frame-major to (L, k*D)
    win = np.lib.stride_tricks.sliding_window_view(Bp, k, axis=0)
    return win.transpose(0, 2, 1).reshape(B.shape[0], -1)


def temporal_conv(B, kernel_width, W, b):
    """Stride-1, zero-padded 1-D convolution over frames.

    ``W`` has shape ``(C_out, k * D)`` with the window flattened frame-major;
    the output is ``L x C_out`` and defined at every frame.
    """
    k = int(kernel_width)
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel width must be odd, got {k}")
    B = np.asarray(B, dtype=np.float64)
    if W.shape[1] != k * B.shape[1] or b.shape != (W.shape[0],):
        raise DimensionError(f"temporal_conv: B {B.shape}, k {k}, W {W.shape}, b {b.shape}")
    cols = _windows(B, k)
    return cols @ W.T + b, cols


def temporal_conv_backward(dOut, cols, kernel_width, W, L, D):
    """Returns ``(dB, dW, db)``."""
    k = int(kernel_width)
    pad = (k - 1) // 2
    dW = dOut.T @ cols
    db = dOut.sum(axis=0)
    dcols = (dOut @ W).reshape(L, k, D)
    dBp = np.zeros((L + 2 * pad, D))
    for j in range(k):
        dBp[j:j + L] += dcols[:, j, :]
    return dBp[pad:pad + L], dW, db


# ---------------------------------------------------------------- losses

def bce(score, label):
    s = np.clip(np.asarray(score, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(label, dtype=np.float64)
    return -(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))


def bce_grad(score, label):
    """Derivative of :func:`bce` with respect to the (clamped) score."""
    s = np.clip(np.asarray(score, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(label, dtype=np.float64)
    return (s - y) / (s * (1.0 - s))


def smooth_l1(pred, target):
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    ad = np.abs(d)
    per = np.where(ad < 1.0, 0.5 * d * d, ad - 0.5)
    return float(per.mean())


def smooth_l1_grad(pred, target):
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.clip(d, -1.0, 1.0) / d.size


def softmax_ce(logits, target_index):
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= target_index < logits.shape[-1]:
        raise IndexError(f"target {target_index} outside {logits.shape[-1]} classes")
    return float(-log_softmax(logits)[target_index])


def softmax_ce_grad(logits, target_index):
    g = softmax(logits)
    g[target_index] -= 1.0
    return g


# ---------------------------------------------------------------- grad check

@dataclass
class GradCheckReport:
    max_rel_error: dict
    tolerance: float

    @property
    def worst(self):
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def failed(self):
        return sorted(n for n, e in self.max_rel_error.items() if e > self.tolerance)

    @property
    def ok(self):
        return not self.failed


def grad_check(loss_fn, params, fd_step=1e-5, tolerance=1e-4, max_entries=None,
               rng=None, floor=1e-6):
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` must return the scalar loss and accumulate analytic
    gradients into ``params[name].grad``. The relative error of one entry is
    ``|a - n| / max(|a|, |n|, floor)``. With ``max_entries`` only a random
    subset of each parameter's entries is probed.
    """
    for slot in params.values():
        slot.zero_grad()
    loss_fn()
    analytic = {name: slot.grad.copy() for name, slot in params.items()}
    report = {}
    for name, slot in params.items():
        flat = slot.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng if rng is not None else np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + fd_step
            up = loss_fn()
            flat[i] = orig - fd_step
            down = loss_fn()
            flat[i] = orig
            num = (up - down) / (2.0 * fd_step)
            a = a_flat[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
        report[name] = worst
    for slot in params.values():
        slot.zero_grad()
    return GradCheckReport(report, tolerance)
