"""Two-stage training with truncated BPTT and carried LSTM state.

Stage 1 fits the cache encoder with its own LSTM and head on per-frame
labels. Stage 2 freezes the cache encoder and trains everything else on the
fused logits, rebuilding the cache from frame 1 for every video pass.

Both stages use batch size 1: one optimiser step per segment. Within a video
the LSTM state is carried across segment boundaries (values only; gradient is
cut), and it is reset between videos.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import LSTMState, ModelConfig
from ..neural import ops
from ..neural.optim import AdamWState, adamw_step
from .model import DualStreamModel, check_cache_params, init_cache_params, init_dacat_params

log = logging.getLogger(__name__)


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)
    step_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: Optional[int] = None


def _check_dataset(dataset, config: ModelConfig):
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    out = []
    for X, y in dataset:
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(getattr(y, "labels", y), dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != config.d_raw:
            raise ValueError(f"observations have shape {X.shape}, expected (T, {config.d_raw})")
        if labels.shape != (X.shape[0],):
            raise ValueError("observation and label lengths differ")
        if labels.size and (labels.min() < 0 or labels.max() >= config.K):
            raise ValueError(f"label out of range [0, {config.K})")
        out.append((X, labels))
    return out


def _segments(T: int, seg: int):
    for s in range(0, T, seg):
        yield s, min(s + seg, T)


def _clip_grads(grads: dict, max_norm: Optional[float]) -> None:
    if not max_norm:
        return
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        for g in grads.values():
            g *= max_norm / total


# -- stage 1 ----------------------------------------------------------------

def _stage1_segment(p, X, y, state: LSTMState, K: int):
    W, b = p["cache.lstm.W"], p["cache.lstm.b"]
    Wh, bh = p["cache.head.W"], p["cache.head.b"]
    F = np.tanh(X @ p["cache.enc.W"].T + p["cache.enc.b"])
    n, H, d = X.shape[0], state.h.shape[0], F.shape[1]
    tapes, hs = [], np.zeros((n, H))
    dL = np.zeros((n, K))
    loss, correct = 0.0, 0
    for t in range(n):
        h, state, tape = ops.lstm_step(F[t], state, W, b, record=True)
        logits = Wh @ h + bh
        l, probs = ops.cross_entropy(logits, int(y[t]))
        loss += l
        correct += int(np.argmax(logits) == y[t])
        dL[t] = ops.cross_entropy_backward(probs, int(y[t])) / n
        tapes.append(tape)
        hs[t] = h
    dZ = np.zeros((n, 4 * H))
    dF = np.zeros((n, d))
    dh_next, dc_next = np.zeros(H), np.zeros(H)
    for t in range(n - 1, -1, -1):
        dh = Wh.T @ dL[t] + dh_next
        dz, dc_next = ops.lstm_gate_grads(dh, dc_next, tapes[t])
        dZ[t] = dz
        dxh = W.T @ dz
        dF[t], dh_next = dxh[:d], dxh[d:]
    XH = np.stack([tp.xh for tp in tapes])
    dpre = dF * (1.0 - F * F)
    grads = {
        "cache.lstm.W": dZ.T @ XH, "cache.lstm.b": dZ.sum(axis=0),
        "cache.head.W": dL.T @ hs, "cache.head.b": dL.sum(axis=0),
        "cache.enc.W": dpre.T @ X, "cache.enc.b": dpre.sum(axis=0),
    }
    return loss / n, correct, grads, state


def train_cache_encoder(dataset, config: ModelConfig, epochs: int, segment_len: int = 256,
                        lr: float = 1e-4, weight_decay: float = 0.01, seed: Optional[int] = None,
                        init: Optional[dict] = None, max_grad_norm: Optional[float] = None,
                        history: Optional[TrainHistory] = None) -> dict:
    """Stage 1. Returns the trained ``cache.*`` parameters."""
    data = _check_dataset(dataset, config)
    seed = config.seed if seed is None else seed
    p = {k: np.array(v, dtype=np.float64) for k, v in
         (init if init is not None else init_cache_params(config, seed)).items()}
    history = history if history is not None else TrainHistory()
    opt = AdamWState()
    rng = np.random.default_rng([seed, 11])
    for epoch in range(epochs):
        total, correct, frames = 0.0, 0, 0
        for vi in rng.permutation(len(data)):
            X, y = data[vi]
            state = LSTMState.zeros(config.hidden)
            for s, e in _segments(len(y), segment_len):
                loss, ok, grads, state = _stage1_segment(p, X[s:e], y[s:e], state, config.K)
                _clip_grads(grads, max_grad_norm)
                adamw_step(p, grads, opt, lr, weight_decay)
                history.step_loss.append(loss)
                total += loss * (e - s)
                correct += ok
                frames += e - s
        history.epoch_loss.append(total / frames)
        history.epoch_accuracy.append(correct / frames)
        log.info("stage1 epoch %d loss %.4f acc %.4f", epoch + 1, total / frames,
                 correct / frames)
    return p


# -- stage 2 ----------------------------------------------------------------

def _stage2_segment(model: DualStreamModel, X, y, C, s, e, fwb, acb):
    F = model.frame_features(X[s:e])
    n = e - s
    tapes, dlogits = [], np.zeros((n, model.config.K))
    loss, correct = 0.0, 0
    for i in range(n):
        t = s + i
        out = model.frame(X[t], C[:t + 1], fwb, acb, F=F[i], record=True)
        fwb, acb = out.fwb_state, out.acb_state
        l, probs = ops.cross_entropy(out.fused, int(y[t]))
        loss += l
        correct += int(np.argmax(out.fused) == y[t])
        dlogits[i] = ops.cross_entropy_backward(probs, int(y[t])) / n
        tapes.append(out.tape)
    grads = model.backward(tapes, dlogits)
    return loss / n, correct, grads, fwb, acb


def train_dacat(dataset, cache_params: dict, config: ModelConfig, epochs: int,
                segment_len: int = 64, lr: float = 1e-5, weight_decay: float = 0.01,
                seed: Optional[int] = None, init: Optional[dict] = None,
                max_grad_norm: Optional[float] = None,
                val_data: Optional[Sequence] = None,
                history: Optional[TrainHistory] = None,
                on_epoch: Optional[Callable[[int, dict], None]] = None) -> dict:
    """Stage 2. ``cache_params`` is read, never modified.

    With ``val_data`` the parameters from the epoch with the best validation
    accuracy are returned instead of the last epoch's.
    """
    data = _check_dataset(dataset, config)
    check_cache_params(config, cache_params)
    seed = config.seed if seed is None else seed
    params = init if init is not None else init_dacat_params(config, cache_params, seed)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    for name in ("cache.enc.W", "cache.enc.b"):
        params[name] = np.array(cache_params[name], dtype=np.float64)
    model = DualStreamModel(params, config)
    history = history if history is not None else TrainHistory()
    opt = AdamWState()
    rng = np.random.default_rng([seed, 22])
    caches = [model.cache_features(X) for X, _ in data]
    best = (-1.0, None)
    for epoch in range(epochs):
        total, correct, frames = 0.0, 0, 0
        for vi in rng.permutation(len(data)):
            X, y = data[vi]
            fwb = LSTMState.zeros(config.hidden)
            acb = LSTMState.zeros(config.hidden)
            for s, e in _segments(len(y), segment_len):
                loss, ok, grads, fwb, acb = _stage2_segment(model, X, y, caches[vi], s, e, fwb, acb)
                _clip_grads(grads, max_grad_norm)
                adamw_step(model.params, grads, opt, lr, weight_decay)
                history.step_loss.append(loss)
                total += loss * (e - s)
                correct += ok
                frames += e - s
        history.epoch_loss.append(total / frames)
        history.epoch_accuracy.append(correct / frames)
        log.info("stage2 epoch %d loss %.4f acc %.4f", epoch + 1, total / frames,
                 correct / frames)
        if val_data is not None:
            acc = _accuracy(model, config, val_data)
            history.val_accuracy.append(acc)
            if acc > best[0]:
                best = (acc, {k: v.copy() for k, v in model.params.items()})
                history.best_epoch = epoch + 1
        if on_epoch is not None:
            on_epoch(epoch, model.params)
    if best[1] is not None:
        return best[1]
    return {k: v.copy() for k, v in model.params.items()}


def _accuracy(model, config, data) -> float:
    from .engine import run_inference

    hits = frames = 0
    for X, y in data:
        labels = np.asarray(getattr(y, "labels", y))
        pred = run_inference(X, model, config).timeline.labels
        hits += int(np.sum(pred == labels))
        frames += labels.size
    return hits / frames
