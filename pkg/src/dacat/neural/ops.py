"""Forward/backward pairs for the small operator set the model is built from.

Every forward returns its output plus a ``tape`` (whatever the backward needs);
every backward takes the upstream gradient and the tape and returns gradients
for inputs and parameters. Vectors are 1-D; there is no batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import DimensionError, EmptyInputError, LSTMState


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


def log_softmax(z):
    shifted = z - np.max(z)
    return shifted - np.log(np.exp(shifted).sum())


# -- affine -----------------------------------------------------------------

def _check_affine(x, W, b):
    if W.ndim != 2 or x.shape != (W.shape[1],) or b.shape != (W.shape[0],):
        raise DimensionError(
            f"affine shapes disagree: x {x.shape}, W {W.shape}, b {b.shape}")


def linear(x, W, b):
    _check_affine(x, W, b)
    return W @ x + b


def linear_backward(dy, x, W):
    """Returns ``(dx, dW, db)``."""
    return W.T @ dy, np.outer(dy, x), dy.copy()


def encode(x, W, b):
    """Toy observation encoder: ``tanh(W x + b)``."""
    return np.tanh(linear(x, W, b))


def encode_backward(dy, x, y, W):
    dpre = dy * (1.0 - y * y)
    return linear_backward(dpre, x, W)


# -- LSTM -------------------------------------------------------------------

@dataclass
class LSTMTape:
    xh: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


def lstm_step(x, state: LSTMState, W, b, record: bool = False):
    """One LSTM step; ``W`` is (4h, in + h) with gate blocks ordered i, f, g, o.

    Returns ``(h, new_state)`` or ``(h, new_state, tape)`` when ``record``.
    """
    H = state.h.shape[0]
    if W.shape != (4 * H, x.shape[0] + H) or b.shape != (4 * H,) or state.c.shape != (H,):
        raise DimensionError(
            f"lstm shapes disagree: x {x.shape}, h {state.h.shape}, W {W.shape}, b {b.shape}")
    xh = np.concatenate([x, state.h])
    z = W @ xh + b
    i = sigmoid(z[:H])
    f = sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = sigmoid(z[3 * H:])
    c = f * state.c + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    new_state = LSTMState(h, c)
    if record:
        return h, new_state, LSTMTape(xh, state.c, i, f, g, o, tanh_c)
    return h, new_state


def lstm_gate_grads(dh, dc, tape: LSTMTape):
    """Gradient w.r.t. the gate pre-activations and the previous cell state."""
    do = dh * tape.tanh_c
    dc = dc + dh * tape.o * (1.0 - tape.tanh_c ** 2)
    di = dc * tape.g
    dg = dc * tape.i
    df = dc * tape.c_prev
    dz = np.concatenate([
        di * tape.i * (1.0 - tape.i),
        df * tape.f * (1.0 - tape.f),
        dg * (1.0 - tape.g ** 2),
        do * tape.o * (1.0 - tape.o),
    ])
    return dz, dc * tape.f


def lstm_step_backward(dh, dc, tape: LSTMTape, W):
    """Returns ``(dx, dh_prev, dc_prev, dW, db)``."""
    dz, dc_prev = lstm_gate_grads(dh, dc, tape)
    dxh = W.T @ dz
    n_in = tape.xh.shape[0] - dh.shape[0]
    return dxh[:n_in], dxh[n_in:], dc_prev, np.outer(dz, tape.xh), dz


# -- read-out interactions --------------------------------------------------

def mean_pool_temporal(clip):
    clip = np.asarray(clip)
    if clip.ndim != 2 or clip.shape[0] == 0:
        raise EmptyInputError("mean_pool_temporal needs a non-empty (n, d) clip")
    return clip.mean(axis=0)


def mean_pool_backward(dm, n: int):
    return np.broadcast_to(dm / n, (n, dm.shape[0])).copy()


def concat_project(x, m, W, b):
    """``W [x; m] + b``; keeps the output at dimension d."""
    return linear(np.concatenate([x, m]), W, b)


def concat_project_backward(dy, x, m, W):
    """Returns ``(dx, dm, dW, db)``."""
    xm = np.concatenate([x, m])
    dxm, dW, db = linear_backward(dy, xm, W)
    n = x.shape[0]
    return dxm[:n], dxm[n:], dW, db


@dataclass
class AttentionTape:
    query: np.ndarray
    clip: np.ndarray
    q: np.ndarray
    u: np.ndarray
    weights: np.ndarray
    pooled: np.ndarray
    z: np.ndarray
    scale: float


def cross_attention(query, clip, Wq, Wk, Wv, Wo, record: bool = False):
    """Single-head scaled dot-product attention of one query over a clip.

    Computed as ``scores = clip @ (Wk^T Wq query) / sqrt(dk)`` and
    ``out = Wo Wv (weights @ clip)``, which equals projecting every clip entry
    but costs O(n d + d^2) instead of O(n d^2).
    """
    clip = np.asarray(clip)
    if clip.ndim != 2 or clip.shape[0] == 0:
        raise EmptyInputError("cross_attention needs a non-empty clip")
    if Wq.shape[1] != query.shape[0] or Wk.shape != (Wq.shape[0], clip.shape[1]) \
            or Wv.shape[1] != clip.shape[1] or Wo.shape[1] != Wv.shape[0]:
        raise DimensionError("cross_attention projection shapes disagree")
    scale = 1.0 / math.sqrt(Wq.shape[0])
    q = Wq @ query
    u = Wk.T @ q
    weights = softmax((clip @ u) * scale)
    pooled = weights @ clip
    z = Wv @ pooled
    out = Wo @ z
    if record:
        return out, AttentionTape(query, clip, q, u, weights, pooled, z, scale)
    return out


def cross_attention_backward(dout, tape: AttentionTape, Wq, Wk, Wv, Wo,
                             clip_grad: bool = False):
    """Returns ``(dquery, dclip, dWq, dWk, dWv, dWo)``; ``dclip`` is None
    unless ``clip_grad`` (the cache is frozen in the model)."""
    dWo = np.outer(dout, tape.z)
    dz = Wo.T @ dout
    dWv = np.outer(dz, tape.pooled)
    dpooled = Wv.T @ dz
    a = tape.weights
    da = tape.clip @ dpooled
    ds = a * (da - a @ da) * tape.scale
    du = tape.clip.T @ ds
    dWk = np.outer(tape.q, du)
    dq = Wk @ du
    dWq = np.outer(dq, tape.query)
    dquery = Wq.T @ dq
    dclip: Optional[np.ndarray] = None
    if clip_grad:
        dclip = np.outer(a, dpooled) + np.outer(ds, tape.u)
    return dquery, dclip, dWq, dWk, dWv, dWo


# -- loss -------------------------------------------------------------------

def cross_entropy(logits, target: int):
    """Returns ``(loss, probs)`` for one frame."""
    K = logits.shape[0]
    if not 0 <= target < K:
        raise ValueError(f"target {target} outside [0, {K})")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits contain non-finite values")
    lsm = log_softmax(logits)
    return float(-lsm[target]), np.exp(lsm)


def cross_entropy_backward(probs, target: int):
    d = probs.copy()
    d[target] -= 1.0
    return d
