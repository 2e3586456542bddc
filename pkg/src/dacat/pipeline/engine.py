"""Online (strictly causal) inference, one frame at a time."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import DimensionError, EmptyInputError, ModelConfig, PhaseTimeline, StreamState
from .model import DualStreamModel


@dataclass
class PhasePrediction:
    fused_logits: np.ndarray
    fwb_logits: np.ndarray
    acb_logits: np.ndarray
    predicted: int
    t: int
    clip_start: int  # 1-based first frame of the clip the branch read


@dataclass
class InferenceResult:
    timeline: PhaseTimeline
    predictions: list
    state: StreamState
    frame_seconds: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _as_model(params, config, dtype) -> DualStreamModel:
    if isinstance(params, DualStreamModel):
        return params
    if params is None:
        raise ValueError("parameters are not initialised")
    return DualStreamModel(params, config, dtype=dtype)


def step_online(obs, state: StreamState, params, config: ModelConfig,
                dtype=np.float64):
    """Consume one raw observation; returns ``(PhasePrediction, state)``.

    ``state`` is updated in place (cache grows, LSTM states advance) and also
    returned. ``params`` may be a parameter dict or a prepared
    ``DualStreamModel`` (preferred in loops: avoids re-validating).
    """
    model = _as_model(params, config, dtype)
    x = np.asarray(obs, dtype=model.dtype)
    if x.shape != (config.d_raw,):
        raise DimensionError(f"observation has shape {x.shape}, expected ({config.d_raw},)")
    state.cache.append(model.cache_feature(x))
    C = state.cache.view()
    out = model.frame(x, C, state.fwb_lstm, state.acb_lstm)
    state.fwb_lstm, state.acb_lstm = out.fwb_state, out.acb_state
    state.t += 1
    evicted = state.t - C.shape[0]
    pred = PhasePrediction(out.fused, out.fwb_logits, out.acb_logits,
                           int(np.argmax(out.fused)), state.t,
                           evicted + out.clip_start + 1)
    return pred, state


def run_inference(video, params, config: ModelConfig, state: Optional[StreamState] = None,
                  dtype=np.float64, fps: float = 1.0, timed: bool = False) -> InferenceResult:
    """Run ``step_online`` over every frame of ``video`` (shape (T, d_raw)).

    Passing the ``state`` returned by a previous call continues the same
    stream, so splitting a video into chunks gives the same predictions as one
    call.
    """
    video = np.asarray(video)
    if video.ndim != 2 or video.shape[0] == 0:
        raise EmptyInputError("video must be a non-empty (T, d_raw) array")
    model = _as_model(params, config, dtype)
    if state is None:
        state = StreamState.fresh(config, dtype=model.dtype)
    preds = []
    times = np.zeros(video.shape[0])
    for i, obs in enumerate(video):
        t0 = time.perf_counter() if timed else 0.0
        pred, state = step_online(obs, state, model, config)
        if timed:
            times[i] = time.perf_counter() - t0
        preds.append(pred)
    labels = np.array([p.predicted for p in preds], dtype=np.int64)
    return InferenceResult(PhaseTimeline(labels, fps), preds, state, times)
