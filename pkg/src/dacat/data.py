"""Synthetic phase streams and on-disk embedding/annotation formats.

Embedding file (little-endian)::

    b"DCAT" | u32 version (=1) | u32 d | u64 n_frames | n_frames*d f32, row-major

Annotation file: UTF-8 lines ``frame_index,phase_id`` without a header, frame
indices contiguous from 0.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import PhaseTimeline

EMBED_MAGIC = b"DCAT"
EMBED_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class EmbeddingFormatError(ValueError):
    pass


class BadMagicError(EmbeddingFormatError):
    pass


class VersionMismatchError(EmbeddingFormatError):
    pass


class TruncatedPayloadError(EmbeddingFormatError):
    pass


class NonFiniteValueError(EmbeddingFormatError):
    pass


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for ``gen_stream``.

    ``video_len`` fixes the length exactly (sampled dwell times are rescaled
    to fit); with ``video_len=None`` the length is the sum of the dwell times.
    ``phase_skip_rate`` drops each non-initial phase with that probability, a
    stand-in for patient-specific variations of the phase sequence.
    ``interference_leak`` keeps that fraction of the phase mean in an
    interference frame's cluster centre (0 = full replacement; below 0.5 the
    frame stays closer to the interference mean than to its phase mean).
    ``interference_burst`` is the mean length of an interference run; 1 gives
    independent frames, larger values a two-state Markov chain with the same
    marginal ``interference_rate``.
    """

    K: int = 7
    d_raw: int = 16
    mean_dwell: float = 40.0
    dwell_jitter: float = 0.5
    interference_rate: float = 0.2
    noise_scale: float = 1.0
    cluster_separation: float = 3.0
    n_videos: int = 1
    video_len: Optional[int] = 280
    seed: int = 0
    phase_skip_rate: float = 0.0
    interference_leak: float = 0.0
    interference_burst: float = 1.0

    def __post_init__(self):
        if self.K < 1 or self.d_raw < 1:
            raise ValueError("K and d_raw must be >= 1")
        if not 0.0 <= self.interference_rate <= 1.0:
            raise ValueError("interference_rate must lie in [0, 1]")
        if not 0.0 <= self.phase_skip_rate < 1.0:
            raise ValueError("phase_skip_rate must lie in [0, 1)")
        if not 0.0 <= self.interference_leak < 0.5:
            raise ValueError("interference_leak must lie in [0, 0.5)")
        if self.interference_burst < 1.0:
            raise ValueError("interference_burst must be >= 1")
        if self.interference_burst > 1.0 and self.interference_rate >= 1.0:
            raise ValueError("bursty interference needs interference_rate < 1")
        if not 0.0 <= self.dwell_jitter < 1.0:
            raise ValueError("dwell_jitter must lie in [0, 1)")
        if self.mean_dwell <= 0 or self.noise_scale < 0 or self.cluster_separation < 0:
            raise ValueError("mean_dwell must be positive; scales non-negative")
        if self.video_len is not None and self.video_len < max(self.K, 1) \
                and self.phase_skip_rate == 0.0:
            raise ValueError("video_len must be >= K for a monotone progression")
        if self.n_videos < 0:
            raise ValueError("n_videos must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def cluster_means(config: SyntheticConfig) -> tuple:
    """Phase means (K, d_raw) and the shared interference mean (d_raw,).

    The K + 1 means form a regular simplex centred at the origin, mutually
    ``cluster_separation`` apart, when ``d_raw >= K + 1``; otherwise they are
    random directions of equal norm, also centred. Centring matters: it makes
    dot products between different clusters negative on average.
    """
    rng = np.random.default_rng([config.seed, 0])
    n = config.K + 1
    radius = config.cluster_separation / np.sqrt(2.0)
    if config.d_raw >= n:
        Q, _ = np.linalg.qr(rng.standard_normal((config.d_raw, n)))
        dirs = Q.T
    else:
        dirs = rng.standard_normal((n, config.d_raw))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = radius * dirs
    means -= means.mean(axis=0)
    return means[:config.K], means[config.K]


def _dwell_times(rng, config: SyntheticConfig, phases: np.ndarray) -> np.ndarray:
    raw = config.mean_dwell * (1.0 + config.dwell_jitter * rng.uniform(-1, 1, len(phases)))
    if config.video_len is None:
        return np.maximum(1, np.round(raw)).astype(np.int64)
    L = config.video_len
    if L < len(phases):
        # too short for every phase: keep the first L phases, one frame each
        out = np.zeros(len(phases), dtype=np.int64)
        out[:L] = 1
        return out
    # one guaranteed frame per phase, the rest split by largest remainder
    spare = L - len(phases)
    share = raw / raw.sum() * spare
    base = np.floor(share).astype(np.int64)
    rest = spare - base.sum()
    order = np.argsort(-(share - base), kind="stable")
    base[order[:rest]] += 1
    return base + 1


def _interference_mask(rng, config: SyntheticConfig, T: int) -> np.ndarray:
    u = rng.uniform(size=T)
    rate, burst = config.interference_rate, config.interference_burst
    if burst <= 1.0 or rate == 0.0:
        return u < rate
    p_exit = 1.0 / burst
    p_enter = min(1.0, rate / (1.0 - rate) * p_exit)
    mask = np.empty(T, dtype=bool)
    on = u[0] < rate
    for t in range(T):
        if t:
            on = u[t] >= p_exit if on else u[t] < p_enter
        mask[t] = on
    return mask


def _generate(config: SyntheticConfig, rng):
    means, interference = cluster_means(config)
    phases = np.arange(config.K)
    if config.phase_skip_rate > 0 and config.K > 1:
        keep = rng.uniform(size=config.K - 1) >= config.phase_skip_rate
        phases = np.concatenate([[0], phases[1:][keep]])
    dwell = _dwell_times(rng, config, phases)
    labels = np.repeat(phases, dwell)
    T = labels.shape[0]
    noise = config.noise_scale * rng.standard_normal((T, config.d_raw))
    mask = _interference_mask(rng, config, T)
    leak = config.interference_leak
    corrupted = (1.0 - leak) * interference[None, :] + leak * means[labels]
    centers = np.where(mask[:, None], corrupted, means[labels])
    return centers + noise, PhaseTimeline(labels), mask


def gen_stream(config: SyntheticConfig, rng=None):
    """One synthetic video: ``(observations (T, d_raw), PhaseTimeline)``.

    Phases advance monotonically. Each frame is drawn from its phase's
    Gaussian cluster; with probability ``interference_rate`` it is instead
    drawn from the shared interference cluster while keeping its phase label.
    """
    obs, labels, _ = _generate(config, np.random.default_rng(config.seed) if rng is None else rng)
    return obs, labels


def gen_stream_with_mask(config: SyntheticConfig, rng=None):
    """Like ``gen_stream`` but also returns the boolean interference mask."""
    return _generate(config, np.random.default_rng(config.seed) if rng is None else rng)


def gen_dataset(config: SyntheticConfig, n_videos: Optional[int] = None) -> list:
    """``n_videos`` streams with independent per-video seeds derived from ``seed``."""
    n = config.n_videos if n_videos is None else n_videos
    seeds = np.random.SeedSequence(config.seed).spawn(n)
    return [gen_stream(config, np.random.default_rng(s)) for s in seeds]


# -- embedding files --------------------------------------------------------

def write_embeddings(path, feats) -> None:
    feats = np.asarray(feats, dtype="<f4")
    if feats.ndim != 2:
        raise ValueError("embeddings must be a (n_frames, d) array")
    n, d = feats.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMBED_MAGIC, EMBED_VERSION, d, n))
        fh.write(np.ascontiguousarray(feats).tobytes())


def load_embeddings(path) -> np.ndarray:
    """Returns a float32 array of shape (n_frames, d)."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != EMBED_MAGIC:
        raise BadMagicError("bad magic")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError("truncated header")
    _, version, d, n = _HEADER.unpack_from(data)
    if version != EMBED_VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, "
                                   f"expected {EMBED_VERSION}")
    expected = _HEADER.size + 4 * d * n
    if len(data) < expected:
        raise TruncatedPayloadError(f"truncated payload: {len(data)} bytes, "
                                    f"expected {expected}")
    if len(data) > expected:
        raise TruncatedPayloadError(f"payload length mismatch: {len(data) - expected} "
                                    f"trailing bytes")
    feats = np.frombuffer(data, dtype="<f4", count=d * n, offset=_HEADER.size)
    feats = feats.reshape(n, d).astype(np.float32)
    if not np.all(np.isfinite(feats)):
        raise NonFiniteValueError("non-finite values in embedding payload")
    return feats


# -- annotations ------------------------------------------------------------

def write_annotations(path, timeline) -> None:
    labels = getattr(timeline, "labels", timeline)
    text = "".join(f"{i},{int(p)}\n" for i, p in enumerate(labels))
    Path(path).write_text(text, encoding="utf-8")


def load_annotations(path, K: Optional[int] = None, fps: float = 1.0) -> PhaseTimeline:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise AnnotationError(f"{path}: empty annotation file")
    labels = []
    for lineno, line in enumerate(lines, 1):
        try:
            idx_s, phase_s = line.split(",")
            idx, phase = int(idx_s), int(phase_s)
        except ValueError:
            raise AnnotationError(f"{path}:{lineno}: cannot parse {line!r}") from None
        if idx != len(labels):
            raise AnnotationError(f"{path}:{lineno}: non-contiguous frame index {idx}, "
                                  f"expected {len(labels)}")
        if phase < 0 or (K is not None and phase >= K):
            raise AnnotationError(f"{path}:{lineno}: phase id {phase} out of range")
        labels.append(phase)
    return PhaseTimeline(np.array(labels, dtype=np.int64), fps)
