"""Per-frame latency of the online step as a function of cache length."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .. import maxr
from ..core import ModelConfig, StreamState
from ..pipeline.engine import step_online
from ..pipeline.model import DualStreamModel, init_cache_params, init_dacat_params


@dataclass
class BenchRow:
    length: int
    d: int
    mean_ms: float
    p95_ms: float
    fps: float


def _prefill_features(rng, n, d, dtype):
    # tanh of Gaussian: same range as real cache features
    return np.tanh(rng.standard_normal((n, d))).astype(dtype)


def bench_throughput(params, config: ModelConfig, lengths, n_frames: int = 20,
                     warmup: int = 3, seed: int = 0, dtype=np.float64) -> list:
    """Time ``step_online`` at each cache length in ``lengths``.

    For each length L the cache is prefilled with L - 1 entries and every
    timed step sees exactly L entries (the appended frame is dropped again
    between samples). ``params=None`` uses a random initialisation.
    """
    if params is None:
        params = init_dacat_params(config, init_cache_params(config, seed), seed)
    model = DualStreamModel(params, config, dtype=dtype)
    rng = np.random.default_rng(seed)
    obs = rng.standard_normal((warmup + n_frames, config.d_raw)).astype(model.dtype)
    rows = []
    for L in lengths:
        L = int(L)
        state = StreamState.fresh(config, dtype=model.dtype)
        state.cache.extend(_prefill_features(rng, L - 1, config.d, model.dtype))
        state.t = L - 1
        samples = []
        for i in range(warmup + n_frames):
            t0 = time.perf_counter()
            step_online(obs[i], state, model, config)
            dt = time.perf_counter() - t0
            state.cache.truncate(L - 1)
            state.t = L - 1
            if i >= warmup:
                samples.append(dt * 1e3)
        samples = np.array(samples)
        mean = float(samples.mean())
        rows.append(BenchRow(L, config.d, mean, float(np.percentile(samples, 95)), 1e3 / mean))
    return rows


def maxr_scan_ms(t: int, d: int, repeats: int = 20, seed: int = 0) -> float:
    """Best-of-``repeats`` wall time (ms) of the parameter-free read-out alone."""
    rng = np.random.default_rng(seed)
    C = _prefill_features(rng, t, d, np.float64)
    q = np.tanh(rng.standard_normal(d))
    maxr.select_adaptive(q, C)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        maxr.select_adaptive(q, C)
        best = min(best, time.perf_counter() - t0)
    return float(best * 1e3)


def scaling_exponent(rows) -> float:
    """Slope of log(mean latency) against log(length)."""
    x = np.log([r.length for r in rows])
    y = np.log([r.mean_ms for r in rows])
    return float(np.polyfit(x, y, 1)[0])


def bench_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["length", "d", "mean_ms", "p95_ms", "fps"])
    for r in rows:
        wr.writerow([r.length, r.d, f"{r.mean_ms:.4f}", f"{r.p95_ms:.4f}", f"{r.fps:.2f}"])
    return buf.getvalue()
