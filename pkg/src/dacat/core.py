"""Shared domain types: feature cache, stream state, phase timelines, config.

Frame indices in public signatures are 1-based (frame 1 is the first frame of
a video) unless a docstring says otherwise. Storage is 0-based numpy.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

# A feature vector is a plain 1-D float array of length d.
FeatureVector = np.ndarray


class DimensionError(ValueError):
    """Raised when a vector or matrix has the wrong shape for the run."""


class EmptyInputError(ValueError):
    """Raised when an operation needs at least one element."""


def as_feature(values, d: Optional[int] = None, dtype=np.float64) -> FeatureVector:
    f = np.asarray(values, dtype=dtype)
    if f.ndim != 1:
        raise DimensionError(f"feature must be 1-D, got shape {f.shape}")
    if d is not None and f.shape[0] != d:
        raise DimensionError(f"feature has dimension {f.shape[0]}, expected {d}")
    if not np.all(np.isfinite(f)):
        raise ValueError("feature contains non-finite values")
    return f


class FeatureCache:
    """Append-only store of pooled frame features, kept contiguous in memory.

    With ``capacity=None`` (the default) every appended frame is kept. With a
    capacity the oldest entry is evicted once the cache is full; storage is a
    buffer of twice the capacity that is compacted when the write head reaches
    its end, so ``view()`` is always a single contiguous block.

    Views returned by ``view``/``slice`` are read-only and remain valid until
    the next append.
    """

    def __init__(self, d: int, capacity: Optional[int] = None, dtype=np.float64,
                 initial: int = 256):
        if d < 1:
            raise ValueError("d must be >= 1")
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.d = d
        self.capacity = capacity
        self.dtype = np.dtype(dtype)
        size = 2 * capacity if capacity is not None else max(initial, 1)
        self._buf = np.empty((size, d), dtype=self.dtype)
        self._start = 0
        self._stop = 0
        self.n_appended = 0

    def __len__(self) -> int:
        return self._stop - self._start

    def append(self, f) -> "FeatureCache":
        f = np.asarray(f)
        if f.shape != (self.d,):
            raise DimensionError(
                f"cannot append feature of shape {f.shape} to cache of dimension {self.d}")
        if self.capacity is not None and len(self) == self.capacity:
            self._start += 1
        if self._stop == self._buf.shape[0]:
            self._make_room()
        self._buf[self._stop] = f
        self._stop += 1
        self.n_appended += 1
        return self

    def extend(self, feats) -> "FeatureCache":
        feats = np.asarray(feats)
        if feats.ndim != 2 or feats.shape[1] != self.d:
            raise DimensionError(f"cannot extend cache of dimension {self.d} with {feats.shape}")
        if self.capacity is not None:
            for f in feats:
                self.append(f)
            return self
        n = len(self)
        if self._stop + feats.shape[0] > self._buf.shape[0]:
            size = max(2 * self._buf.shape[0], n + feats.shape[0])
            grown = np.empty((size, self.d), dtype=self.dtype)
            grown[:n] = self._buf[self._start:self._stop]
            self._buf, self._start, self._stop = grown, 0, n
        self._buf[self._stop:self._stop + feats.shape[0]] = feats
        self._stop += feats.shape[0]
        self.n_appended += feats.shape[0]
        return self

    def truncate(self, n: int) -> "FeatureCache":
        """Drop the newest entries so that ``n`` remain (benchmark resets)."""
        if not 0 <= n <= len(self):
            raise IndexError(f"cannot truncate cache of length {len(self)} to {n}")
        removed = len(self) - n
        self._stop -= removed
        self.n_appended -= removed
        return self

    def _make_room(self) -> None:
        n = len(self)
        if self.capacity is not None:
            # buffer holds 2*capacity rows and n < capacity here: compact in place
            self._buf[:n] = self._buf[self._start:self._stop]
        else:
            grown = np.empty((2 * self._buf.shape[0], self.d), dtype=self.dtype)
            grown[:n] = self._buf[self._start:self._stop]
            self._buf = grown
        self._start, self._stop = 0, n

    def view(self) -> np.ndarray:
        """All stored entries, oldest first, as a read-only (n, d) view."""
        v = self._buf[self._start:self._stop]
        v.flags.writeable = False
        return v

    def slice(self, start: int) -> np.ndarray:
        """Entries ``start..t`` (1-based, inclusive of the newest entry)."""
        n = len(self)
        if not 1 <= start <= n:
            raise IndexError(f"start {start} out of range [1, {n}]")
        return self.view()[start - 1:]

    def copy(self) -> "FeatureCache":
        out = FeatureCache(self.d, self.capacity, self.dtype)
        out._buf = self._buf.copy()
        out._start, out._stop, out.n_appended = self._start, self._stop, self.n_appended
        return out


def cache_append(cache: FeatureCache, f) -> FeatureCache:
    return cache.append(f)


def cache_slice(cache: FeatureCache, start: int) -> np.ndarray:
    return cache.slice(start)


@dataclass
class ClipSelection:
    """Result of a max clip-response read-out.

    ``start_index`` is 1-based: the adaptive clip is frames
    ``start_index..t`` of the cache.
    """

    response: np.ndarray
    clip_response: np.ndarray
    start_index: int


@dataclass
class LSTMState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int, dtype=np.float64) -> "LSTMState":
        return cls(np.zeros(hidden, dtype=dtype), np.zeros(hidden, dtype=dtype))

    def copy(self) -> "LSTMState":
        return LSTMState(self.h.copy(), self.c.copy())


@dataclass
class StreamState:
    """Per-video mutable state. Owned by one stream; not thread-safe."""

    cache: FeatureCache
    fwb_lstm: LSTMState
    acb_lstm: LSTMState
    t: int = 0

    @classmethod
    def fresh(cls, config: "ModelConfig", dtype=np.float64) -> "StreamState":
        return cls(
            cache=FeatureCache(config.d, config.capacity, dtype=dtype),
            fwb_lstm=LSTMState.zeros(config.hidden, dtype),
            acb_lstm=LSTMState.zeros(config.hidden, dtype),
        )

    def copy(self) -> "StreamState":
        return StreamState(self.cache.copy(), self.fwb_lstm.copy(),
                           self.acb_lstm.copy(), self.t)


@dataclass
class PhaseTimeline:
    labels: np.ndarray
    fps: float = 1.0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise ValueError("labels must be 1-D")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def validate(self, K: int) -> "PhaseTimeline":
        if len(self) and (self.labels.min() < 0 or self.labels.max() >= K):
            raise ValueError(f"phase labels must lie in [0, {K})")
        return self


@dataclass(frozen=True)
class Readout:
    """Clip read-out strategy: ``adaptive``, ``all`` or ``fixed`` with window k."""

    kind: str = "adaptive"
    k: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("adaptive", "all", "fixed"):
            raise ValueError(f"unknown readout {self.kind!r}")
        if self.kind == "fixed" and (self.k is None or self.k < 1):
            raise ValueError("fixed readout requires k >= 1")

    @classmethod
    def parse(cls, text: str) -> "Readout":
        text = text.strip().lower()
        m = re.fullmatch(r"fixed[:(](\d+)\)?", text)
        if m:
            return cls("fixed", int(m.group(1)))
        return cls(text)

    def __str__(self) -> str:
        return f"fixed:{self.k}" if self.kind == "fixed" else self.kind


FUSION_MODES = ("before", "after")
INTERACTIONS = ("add", "concat", "ca")
BRANCHES = ("both", "fwb", "acb")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 16
    d_raw: int = 16
    K: int = 7
    hidden: int = 32
    fusion_mode: str = "after"
    interaction: str = "ca"
    readout: Readout = field(default_factory=Readout)
    branches: str = "both"
    capacity: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        for name in ("d", "d_raw", "K", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.interaction not in INTERACTIONS:
            raise ValueError(f"interaction must be one of {INTERACTIONS}")
        if self.branches not in BRANCHES:
            raise ValueError(f"branches must be one of {BRANCHES}")
        if isinstance(self.readout, str):
            object.__setattr__(self, "readout", Readout.parse(self.readout))
        if self.fusion_mode == "before" and self.branches != "both":
            raise ValueError("single-branch ablations require fusion_mode='after'")

    @property
    def uses_fwb(self) -> bool:
        return self.branches in ("both", "fwb")

    @property
    def uses_acb(self) -> bool:
        return self.branches in ("both", "acb")

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "d": self.d, "d_raw": self.d_raw, "K": self.K, "hidden": self.hidden,
            "fusion_mode": self.fusion_mode, "interaction": self.interaction,
            "readout": str(self.readout), "branches": self.branches,
            "capacity": self.capacity, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["readout"] = Readout.parse(data.get("readout", "adaptive"))
        return cls(**data)
