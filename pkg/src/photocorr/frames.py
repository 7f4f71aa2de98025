"""Sparse containers for gated camera frames.

A stack is held in CSR form: ``offsets[i]:offsets[i+1]`` indexes the events
of frame ``i`` in the flat ``x``, ``y`` (and, for analog stacks, ``signal``)
arrays. Events inside a frame are sorted by (y, x) and never repeat.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, List, Optional

import numpy as np

from .errors import ValidationError

BINARY = "binary"
ANALOG = "analog"


def canonical_metadata(metadata: Optional[dict]) -> dict:
    """JSON-normalize metadata so in-memory and on-disk copies compare equal."""
    return json.loads(json.dumps(metadata or {}, sort_keys=True, allow_nan=False))


@dataclass(eq=False)
class ControlFrame:
    """Long-exposure dense count map taken before frame ``frame_index``."""

    frame_index: int
    counts: np.ndarray  # (height, width) uint32

    def __eq__(self, other):
        return (isinstance(other, ControlFrame) and self.frame_index == other.frame_index
                and self.counts.dtype == other.counts.dtype
                and np.array_equal(self.counts, other.counts))


@dataclass
class PhotonTimes:
    """Per-photon side channel: frame, field (0 = A, 1 = B) and arrival time in ns."""

    frame: np.ndarray
    field: np.ndarray
    time: np.ndarray


@dataclass(eq=False)
class FrameStack:
    mode: str
    grid_width: int
    grid_height: int
    offsets: np.ndarray
    x: np.ndarray
    y: np.ndarray
    signal: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)
    control_frames: List[ControlFrame] = field(default_factory=list)
    photon_times: Optional[PhotonTimes] = None
    start_frame: int = 0

    def __post_init__(self):
        if self.mode not in (BINARY, ANALOG):
            raise ValidationError(f"unknown stack mode {self.mode!r}")
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        self.x = np.ascontiguousarray(self.x, dtype=np.uint16)
        self.y = np.ascontiguousarray(self.y, dtype=np.uint16)
        if self.mode == ANALOG:
            if self.signal is None:
                raise ValidationError("analog stacks need readout values")
            self.signal = np.ascontiguousarray(self.signal, dtype=np.float32)
        elif self.signal is not None:
            raise ValidationError("binary stacks carry no readout values")
        self.metadata = canonical_metadata(self.metadata)

    # -- construction ------------------------------------------------------

    @classmethod
    def empty(cls, mode, grid_width, grid_height, n_frames=0, metadata=None):
        signal = np.zeros(0, np.float32) if mode == ANALOG else None
        return cls(mode, grid_width, grid_height, np.zeros(n_frames + 1, np.int64),
                   np.zeros(0, np.uint16), np.zeros(0, np.uint16), signal, metadata or {})

    @classmethod
    def from_frames(cls, mode, grid_width, grid_height, frames, metadata=None):
        """Build from a list of per-frame event lists.

        Each frame is a sequence of ``(x, y)`` tuples, or ``(x, y, S)`` for
        analog stacks. Events are sorted; duplicates are rejected by
        :meth:`validate`.
        """
        counts = [len(f) for f in frames]
        offsets = np.concatenate([[0], np.cumsum(counts, dtype=np.int64)])
        width = 3 if mode == ANALOG else 2
        flat = [tuple(ev) for f in frames for ev in f]
        arr = np.array(flat, dtype=float).reshape(-1, width) if flat else np.zeros((0, width))
        frame_idx = np.repeat(np.arange(len(frames)), counts)
        order = np.lexsort((arr[:, 0], arr[:, 1], frame_idx))
        arr = arr[order]
        signal = arr[:, 2].astype(np.float32) if mode == ANALOG else None
        return cls(mode, grid_width, grid_height, offsets,
                   arr[:, 0].astype(np.uint16), arr[:, 1].astype(np.uint16), signal,
                   metadata or {})

    # -- access ------------------------------------------------------------

    @property
    def n_frames(self) -> int:
        return self.offsets.size - 1

    @property
    def n_events(self) -> int:
        return int(self.offsets[-1] - self.offsets[0])

    @property
    def is_analog(self) -> bool:
        return self.mode == ANALOG

    def frame_index(self) -> np.ndarray:
        """Frame number (relative to this stack) of every event."""
        return np.repeat(np.arange(self.n_frames, dtype=np.int64), np.diff(self.offsets))

    def frame(self, i: int):
        """Events of frame ``i`` as ``(x, y)`` or ``(x, y, signal)`` arrays."""
        lo, hi = self.offsets[i] - self.offsets[0], self.offsets[i + 1] - self.offsets[0]
        if self.is_analog:
            return self.x[lo:hi], self.y[lo:hi], self.signal[lo:hi]
        return self.x[lo:hi], self.y[lo:hi]

    def frames(self) -> Iterator[tuple]:
        for i in range(self.n_frames):
            yield self.frame(i)

    def slice(self, start: int, stop: int) -> "FrameStack":
        """Frames ``start:stop`` sharing memory with this stack."""
        stop = min(stop, self.n_frames)
        base = self.offsets[0]
        lo, hi = self.offsets[start] - base, self.offsets[stop] - base
        offsets = self.offsets[start:stop + 1] - self.offsets[start]
        signal = self.signal[lo:hi] if self.is_analog else None
        return FrameStack(self.mode, self.grid_width, self.grid_height, offsets,
                          self.x[lo:hi], self.y[lo:hi], signal, self.metadata,
                          start_frame=self.start_frame + start)

    def iter_chunks(self, chunk_frames: int = 1 << 16) -> Iterator["FrameStack"]:
        for start in range(0, self.n_frames, chunk_frames):
            yield self.slice(start, start + chunk_frames)

    # -- invariants --------------------------------------------------------

    def validate(self):
        """Raise :class:`ValidationError` if any stack invariant is violated."""
        if self.offsets[0] != 0 or np.any(np.diff(self.offsets) < 0):
            raise ValidationError("frame offsets must start at 0 and be non-decreasing")
        n = self.n_events
        if self.x.size != n or self.y.size != n:
            raise ValidationError("coordinate arrays disagree with frame offsets")
        if n and (self.x.max() >= self.grid_width or self.y.max() >= self.grid_height):
            raise ValidationError("event coordinates outside the grid")
        if self.is_analog:
            if self.signal.size != n:
                raise ValidationError("readout array disagrees with frame offsets")
            if not np.all(np.isfinite(self.signal)):
                raise ValidationError("non-finite readout value")
        if n > 1:
            key = (self.frame_index() * self.grid_height + self.y) * self.grid_width + self.x
            d = np.diff(key)
            if np.any(d == 0):
                i = int(self.frame_index()[1:][d == 0][0])
                raise ValidationError(f"duplicate event in frame {i}")
            if np.any(d < 0):
                raise ValidationError("events within a frame are not sorted by (y, x)")
        declared = self.metadata.get("frame_count")
        if declared is not None and declared != self.n_frames:
            raise ValidationError(
                f"metadata declares {declared} frames but the stack holds {self.n_frames}")

    def __eq__(self, other):
        if not isinstance(other, FrameStack):
            return NotImplemented
        same_signal = (self.signal is None and other.signal is None) or (
            self.signal is not None and other.signal is not None
            and self.signal.tobytes() == other.signal.tobytes())
        return (self.mode == other.mode and self.grid_width == other.grid_width
                and self.grid_height == other.grid_height
                and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and same_signal and self.metadata == other.metadata
                and self.control_frames == other.control_frames)

    def accumulate(self) -> np.ndarray:
        """Dense (height, width) map of event counts summed over all frames."""
        flat = self.y.astype(np.int64) * self.grid_width + self.x
        counts = np.bincount(flat, minlength=self.grid_width * self.grid_height)
        return counts.reshape(self.grid_height, self.grid_width)

    def mean_occupancy(self) -> tuple:
        """(grid mean, peak superpixel) events per superpixel per frame."""
        if self.n_frames == 0:
            return 0.0, 0.0
        acc = self.accumulate() / self.n_frames
        return float(acc.mean()), float(acc.max())
