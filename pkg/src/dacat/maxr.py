"""Max clip-response read-out and the fixed-window ablation read-outs.

Given the current frame feature ``q`` and cached features ``f_1..f_t``:

    S[i] = q . f_i                  (raw dot product, no normalisation)
    P[j] = S[j] + S[j+1] + ... + S[t]
    delta = smallest argmax_j P[j]

and the adaptive clip is ``f_delta..f_t``. Indices here are 1-based in the
public API, matching ``FeatureCache.slice``.
"""

from __future__ import annotations

import numpy as np

from .core import ClipSelection, DimensionError, EmptyInputError, FeatureCache


def _matrix(cache) -> np.ndarray:
    return cache.view() if isinstance(cache, FeatureCache) else np.asarray(cache)


def frame_response(query, cache) -> np.ndarray:
    C = _matrix(cache)
    q = np.asarray(query)
    if C.shape[0] == 0:
        raise EmptyInputError("frame_response on an empty cache")
    if C.ndim != 2 or q.shape != (C.shape[1],):
        raise DimensionError(f"query shape {q.shape} does not match cache shape {C.shape}")
    return C @ q


def suffix_sum(S) -> np.ndarray:
    """P[j] = sum(S[j:]), one reverse pass."""
    S = np.asarray(S)
    if S.ndim != 1 or S.shape[0] == 0:
        raise EmptyInputError("suffix_sum needs a non-empty 1-D vector")
    return np.cumsum(S[::-1])[::-1]


def select_start(P) -> int:
    """1-based index of the first maximum of ``P``; ties go to the longest clip."""
    P = np.asarray(P)
    if P.ndim != 1 or P.shape[0] == 0:
        raise EmptyInputError("select_start needs a non-empty 1-D vector")
    if not np.all(np.isfinite(P)):
        raise ValueError("clip response contains NaN or inf")
    return int(np.argmax(P)) + 1


def select_adaptive(query, cache) -> ClipSelection:
    S = frame_response(query, cache)
    P = suffix_sum(S)
    return ClipSelection(S, P, select_start(P))


def read_adaptive(query, cache):
    """Return ``(clip, selection)`` with ``clip = cache[delta..t]``."""
    C = _matrix(cache)
    sel = select_adaptive(query, C)
    return C[sel.start_index - 1:], sel


def read_fixed(cache, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    C = _matrix(cache)
    if C.shape[0] == 0:
        raise EmptyInputError("read_fixed on an empty cache")
    return C[-k:]


def read_all(cache) -> np.ndarray:
    C = _matrix(cache)
    if C.shape[0] == 0:
        raise EmptyInputError("read_all on an empty cache")
    return C


def clip_start(readout, query, cache) -> int:
    """0-based first row of the clip chosen by ``readout`` over a (t, d) matrix."""
    C = _matrix(cache)
    t = C.shape[0]
    if t == 0:
        raise EmptyInputError("read-out on an empty cache")
    if readout.kind == "adaptive":
        return select_adaptive(query, C).start_index - 1
    if readout.kind == "fixed":
        return max(0, t - readout.k)
    return 0
