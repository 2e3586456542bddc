"""Parameter layout and the per-frame forward/backward of the dual-stream model.

Parameter names::

    cache.enc.{W,b}      frozen cache encoder (trained in stage 1)
    cache.lstm.{W,b}     stage-1 temporal model, unused after stage 1
    cache.head.{W,b}
    fwb.enc.{W,b}        frame-wise encoder, initialised from cache.enc
    fwb.lstm.{W,b}       frame-wise LSTM (the shared LSTM when fusing before)
    fwb.head.{W,b}
    ca.{Wq,Wk,Wv,Wo}     cross-attention (interaction='ca')
    concat.{W,b}         concat projection (interaction='concat')
    acb.lstm.{W,b}       clip-aware LSTM (fusion='after')
    acb.head.{W,b}
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import maxr
from ..core import DimensionError, LSTMState, ModelConfig
from ..neural import ops


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _lstm_params(rng, n_in, hidden):
    W = _uniform(rng, (4 * hidden, n_in + hidden), n_in + hidden)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate
    return W, b


def init_cache_params(config: ModelConfig, seed: Optional[int] = None) -> dict:
    rng = np.random.default_rng([config.seed if seed is None else seed, 1])
    d, h = config.d, config.hidden
    p = {
        "cache.enc.W": _uniform(rng, (d, config.d_raw), config.d_raw),
        "cache.enc.b": np.zeros(d),
    }
    p["cache.lstm.W"], p["cache.lstm.b"] = _lstm_params(rng, d, h)
    p["cache.head.W"] = _uniform(rng, (config.K, h), h)
    p["cache.head.b"] = np.zeros(config.K)
    return p


def init_dacat_params(config: ModelConfig, cache_params: dict,
                      seed: Optional[int] = None) -> dict:
    """Fresh stage-2 parameters on top of a (copied) cache encoder."""
    check_cache_params(config, cache_params)
    rng = np.random.default_rng([config.seed if seed is None else seed, 2])
    d, h, K = config.d, config.hidden, config.K
    p = {name: np.array(v, dtype=np.float64) for name, v in cache_params.items()}
    p["fwb.enc.W"] = p["cache.enc.W"].copy()
    p["fwb.enc.b"] = p["cache.enc.b"].copy()
    if config.uses_fwb or config.fusion_mode == "before":
        p["fwb.lstm.W"], p["fwb.lstm.b"] = _lstm_params(rng, d, h)
        p["fwb.head.W"] = _uniform(rng, (K, h), h)
        p["fwb.head.b"] = np.zeros(K)
    if config.uses_acb:
        if config.interaction == "ca":
            for name in ("Wq", "Wk", "Wv", "Wo"):
                p[f"ca.{name}"] = _uniform(rng, (d, d), d)
        elif config.interaction == "concat":
            p["concat.W"] = _uniform(rng, (d, 2 * d), 2 * d)
            p["concat.b"] = np.zeros(d)
        if config.fusion_mode == "after":
            p["acb.lstm.W"], p["acb.lstm.b"] = _lstm_params(rng, d, h)
            p["acb.head.W"] = _uniform(rng, (K, h), h)
            p["acb.head.b"] = np.zeros(K)
    return p


def expected_shapes(config: ModelConfig) -> dict:
    ref = init_dacat_params(config, init_cache_params(config))
    return {k: v.shape for k, v in ref.items()}


def check_cache_params(config: ModelConfig, params: dict) -> None:
    ref = init_cache_params(config)
    for name, arr in ref.items():
        if name.startswith("cache.enc") and name not in params:
            raise KeyError(f"missing parameter {name!r}")
        if name in params and np.shape(params[name]) != arr.shape:
            raise DimensionError(f"parameter {name!r} has shape {np.shape(params[name])}, "
                                 f"config expects {arr.shape}")


def check_params(config: ModelConfig, params: dict) -> None:
    for name, shape in expected_shapes(config).items():
        if name.startswith(("cache.lstm", "cache.head")):
            continue
        if name not in params:
            raise KeyError(f"missing parameter {name!r}; parameters do not match config")
        if params[name].shape != shape:
            raise DimensionError(f"parameter {name!r} has shape {params[name].shape}, "
                                 f"config expects {shape}")


@dataclass
class FrameTape:
    x: np.ndarray
    F: np.ndarray
    start: int = 0
    pooled: Optional[np.ndarray] = None
    clip_n: int = 0
    F_tilde: Optional[np.ndarray] = None
    attn: Optional[ops.AttentionTape] = None
    fwb_h: Optional[np.ndarray] = None
    fwb_lstm: Optional[ops.LSTMTape] = None
    acb_h: Optional[np.ndarray] = None
    acb_lstm: Optional[ops.LSTMTape] = None


@dataclass
class FrameOutput:
    fused: np.ndarray
    fwb_logits: np.ndarray
    acb_logits: np.ndarray
    fwb_state: LSTMState
    acb_state: LSTMState
    clip_start: int
    tape: Optional[FrameTape] = None


class DualStreamModel:
    """The two branches plus fusion, as pure functions of explicit state."""

    def __init__(self, params: dict, config: ModelConfig, dtype=np.float64):
        check_params(config, params)
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}

    def cache_feature(self, x) -> np.ndarray:
        p = self.params
        return ops.encode(x, p["cache.enc.W"], p["cache.enc.b"])

    def cache_features(self, X) -> np.ndarray:
        p = self.params
        return np.tanh(np.asarray(X, dtype=self.dtype) @ p["cache.enc.W"].T + p["cache.enc.b"])

    def frame_features(self, X) -> np.ndarray:
        p = self.params
        return np.tanh(np.asarray(X, dtype=self.dtype) @ p["fwb.enc.W"].T + p["fwb.enc.b"])

    def _interact(self, F, clip, record):
        p, mode = self.params, self.config.interaction
        if mode == "ca":
            return ops.cross_attention(F, clip, p["ca.Wq"], p["ca.Wk"], p["ca.Wv"],
                                       p["ca.Wo"], record=record)
        pooled = ops.mean_pool_temporal(clip)
        if mode == "add":
            out = F + pooled
        else:
            out = ops.concat_project(F, pooled, p["concat.W"], p["concat.b"])
        return (out, pooled) if record else out

    def frame(self, x, C, fwb_state: LSTMState, acb_state: LSTMState,
              F: Optional[np.ndarray] = None, record: bool = False) -> FrameOutput:
        """One frame. ``C`` is the cache (t, d) including this frame's entry."""
        p, cfg = self.params, self.config
        if F is None:
            F = ops.encode(x, p["fwb.enc.W"], p["fwb.enc.b"])
        tape = FrameTape(x, F) if record else None
        F_tilde = None
        start = C.shape[0] - 1
        if cfg.uses_acb:
            start = maxr.clip_start(cfg.readout, F, C)
            clip = C[start:]
            res = self._interact(F, clip, record)
            if record:
                F_tilde, aux = res
                tape.start, tape.clip_n, tape.F_tilde = start, clip.shape[0], F_tilde
                if cfg.interaction == "ca":
                    tape.attn = aux
                else:
                    tape.pooled = aux
            else:
                F_tilde = res

        new_fwb, new_acb = fwb_state, acb_state
        zero = np.zeros(cfg.K, dtype=self.dtype)
        if cfg.fusion_mode == "before":
            out = self._branch("fwb", F + F_tilde, fwb_state, record, tape)
            fused, new_fwb = out[0], out[1]
            return FrameOutput(fused, fused, fused, new_fwb, acb_state, start, tape)

        lf = la = zero
        if cfg.uses_fwb:
            lf, new_fwb = self._branch("fwb", F, fwb_state, record, tape)
        if cfg.uses_acb:
            la, new_acb = self._branch("acb", F_tilde, acb_state, record, tape)
        return FrameOutput(lf + la, lf, la, new_fwb, new_acb, start, tape)

    def _branch(self, name, inp, state, record, tape):
        p = self.params
        res = ops.lstm_step(inp, state, p[f"{name}.lstm.W"], p[f"{name}.lstm.b"], record=record)
        h, new_state = res[0], res[1]
        if record:
            setattr(tape, f"{name}_h", h)
            setattr(tape, f"{name}_lstm", res[2])
        return ops.linear(h, p[f"{name}.head.W"], p[f"{name}.head.b"]), new_state

    # -- backward -----------------------------------------------------------

    def backward(self, tapes, dlogits) -> dict:
        """Gradients of ``sum_t dlogits[t] . fused_t`` w.r.t. trainable params.

        Gradient stops at the segment's initial LSTM states (truncated BPTT)
        and never enters the cache encoder.
        """
        p, cfg = self.params, self.config
        d, H = cfg.d, cfg.hidden
        n = len(tapes)
        grads = {}
        branches = []
        if cfg.fusion_mode == "before" or cfg.uses_fwb:
            branches.append("fwb")
        if cfg.fusion_mode == "after" and cfg.uses_acb:
            branches.append("acb")
        dZ = {b: np.zeros((n, 4 * H)) for b in branches}
        dL = {b: np.zeros((n, cfg.K)) for b in branches}
        carry = {b: (np.zeros(H), np.zeros(H)) for b in branches}
        dF_all = np.zeros((n, d))
        if cfg.uses_acb:
            for name in self._interaction_names():
                grads[name] = np.zeros_like(p[name])

        for t in range(n - 1, -1, -1):
            tape, dl = tapes[t], dlogits[t]
            d_in = {}
            for b in branches:
                dh_next, dc_next = carry[b]
                dL[b][t] = dl
                dh = p[f"{b}.head.W"].T @ dl + dh_next
                lt = getattr(tape, f"{b}_lstm")
                dz, dc_prev = ops.lstm_gate_grads(dh, dc_next, lt)
                dZ[b][t] = dz
                dxh = p[f"{b}.lstm.W"].T @ dz
                d_in[b] = dxh[:d]
                carry[b] = (dxh[d:], dc_prev)
            dF = np.zeros(d)
            if cfg.fusion_mode == "before":
                dF += d_in["fwb"]
                dFt = d_in["fwb"]
            else:
                if cfg.uses_fwb:
                    dF += d_in["fwb"]
                dFt = d_in.get("acb")
            if cfg.uses_acb:
                dF += self._interaction_backward(dFt, tape, grads)
            dF_all[t] = dF

        for b in branches:
            XH = np.stack([getattr(tp, f"{b}_lstm").xh for tp in tapes])
            Hs = np.stack([getattr(tp, f"{b}_h") for tp in tapes])
            grads[f"{b}.lstm.W"] = dZ[b].T @ XH
            grads[f"{b}.lstm.b"] = dZ[b].sum(axis=0)
            grads[f"{b}.head.W"] = dL[b].T @ Hs
            grads[f"{b}.head.b"] = dL[b].sum(axis=0)
        X = np.stack([tp.x for tp in tapes])
        Fs = np.stack([tp.F for tp in tapes])
        dpre = dF_all * (1.0 - Fs * Fs)
        grads["fwb.enc.W"] = dpre.T @ X
        grads["fwb.enc.b"] = dpre.sum(axis=0)
        return grads

    def _interaction_names(self):
        if self.config.interaction == "ca":
            return ["ca.Wq", "ca.Wk", "ca.Wv", "ca.Wo"]
        if self.config.interaction == "concat":
            return ["concat.W", "concat.b"]
        return []

    def _interaction_backward(self, dFt, tape: FrameTape, grads) -> np.ndarray:
        p, mode = self.params, self.config.interaction
        if mode == "ca":
            dq, _, dWq, dWk, dWv, dWo = ops.cross_attention_backward(
                dFt, tape.attn, p["ca.Wq"], p["ca.Wk"], p["ca.Wv"], p["ca.Wo"])
            grads["ca.Wq"] += dWq
            grads["ca.Wk"] += dWk
            grads["ca.Wv"] += dWv
            grads["ca.Wo"] += dWo
            return dq
        if mode == "add":
            return dFt
        dx, _, dW, db = ops.concat_project_backward(dFt, tape.F, tape.pooled, p["concat.W"])
        grads["concat.W"] += dW
        grads["concat.b"] += db
        return dx
