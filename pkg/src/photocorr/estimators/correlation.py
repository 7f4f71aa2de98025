"""Zero-delay pair correlation from per-frame region indicators.

All per-frame statistics are reduced into integer counters
(:class:`FrameTally`), so chunked, parallel and single-pass evaluation give
identical results. A tally over frames ``[start, end)`` also keeps the
region-B indicators of its first ``lag`` frames and the region-A indicators of
its last ``lag`` frames; merging two adjacent tallies pairs those up, which
makes the lagged baseline exact across chunk boundaries.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from ..errors import AllNoiseError, InsufficientCountsError, ModeError, ParameterError
from ..frames import FrameStack
from .regions import N_ROLES, ROLE_A, ROLE_B, ROLE_NOISE, ObjectRegion, RegionIndex


@dataclass
class FrameTally:
    """Integer per-object statistics over a contiguous run of frames.

    Per-object arrays (length ``n_objects``):

    * ``hits[:, role]`` frames with at least one event in the role's region
    * ``events[:, role]`` events in the role's region
    * ``both`` frames with events in both A and B
    * ``lagged`` frame pairs (i, i + lag) with an A event at i and a B event at i + lag

    ``count_hist[obj, c - 1]`` counts frames with ``c`` events in A and B
    together (``c >= 1``).
    """

    start: int
    end: int
    lag: int
    n_objects: int
    hits: np.ndarray
    events: np.ndarray
    both: np.ndarray
    lagged: np.ndarray
    count_hist: np.ndarray
    head_b: np.ndarray  # keys frame * n_objects + obj, frames < start + lag
    tail_a: np.ndarray  # keys, frames >= end - lag

    @property
    def n_frames(self) -> int:
        return self.end - self.start

    @classmethod
    def empty(cls, n_objects: int, lag: int, start: int = 0) -> "FrameTally":
        z = np.zeros(n_objects, np.int64)
        return cls(start, start, lag, n_objects, np.zeros((n_objects, N_ROLES), np.int64),
                   np.zeros((n_objects, N_ROLES), np.int64), z.copy(), z.copy(),
                   np.zeros((n_objects, 0), np.int64), np.zeros(0, np.int64),
                   np.zeros(0, np.int64))

    def merge(self, later: "FrameTally") -> "FrameTally":
        """Combine with the tally of the frames immediately following."""
        if later.start != self.end or later.lag != self.lag or later.n_objects != self.n_objects:
            raise ParameterError("only adjacent tallies with equal lag and objects can merge")
        n, lag = self.n_objects, self.lag
        shifted = later.head_b - lag * n
        cross = np.intersect1d(self.tail_a, shifted, assume_unique=True)
        lagged = self.lagged + later.lagged + np.bincount(cross % n, minlength=n)
        width = max(self.count_hist.shape[1], later.count_hist.shape[1])
        hist = np.zeros((n, width), np.int64)
        hist[:, :self.count_hist.shape[1]] += self.count_hist
        hist[:, :later.count_hist.shape[1]] += later.count_hist
        head = np.concatenate([self.head_b, later.head_b])
        head = head[head // n < self.start + lag]
        tail = np.concatenate([self.tail_a, later.tail_a])
        tail = tail[tail // n >= later.end - lag]
        return FrameTally(self.start, later.end, lag, n, self.hits + later.hits,
                          self.events + later.events, self.both + later.both, lagged, hist,
                          head, tail)


def _require_binary(stack: FrameStack):
    if stack.is_analog:
        raise ModeError("correlation estimators need a binary (thresholded) stack")


def tally_chunk(chunk: FrameStack, index: RegionIndex, lag: int = 1,
                shifts: Optional[np.ndarray] = None) -> FrameTally:
    """Tally one chunk; ``chunk.start_frame`` gives its global position.

    ``shifts`` is an optional (total_frames, 2) integer array of image
    displacements; events are moved back by it before region lookup.
    """
    _require_binary(chunk)
    if lag < 1:
        raise ParameterError("baseline lag must be >= 1")
    n = index.n_objects
    start = chunk.start_frame
    end = start + chunk.n_frames
    frame = chunk.frame_index() + start
    x = chunk.x.astype(np.int64)
    y = chunk.y.astype(np.int64)
    if shifts is not None:
        x = x - shifts[frame, 0]
        y = y - shifts[frame, 1]
        ok = (x >= 0) & (x < index.width) & (y >= 0) & (y < index.height)
        frame, x, y = frame[ok], x[ok], y[ok]
    ev, entry = index.lookup(y * index.width + x)
    f = frame[ev]
    events = np.bincount(entry, minlength=n * N_ROLES).reshape(n, N_ROLES)

    stride = n * N_ROLES
    ukey = np.unique(f * stride + entry)
    uf, uent = np.divmod(ukey, stride)
    hits = np.bincount(uent, minlength=stride).reshape(n, N_ROLES)
    obj, role = np.divmod(uent, N_ROLES)
    a_keys = uf[role == ROLE_A] * n + obj[role == ROLE_A]
    b_keys = uf[role == ROLE_B] * n + obj[role == ROLE_B]
    both = np.bincount(np.intersect1d(a_keys, b_keys, assume_unique=True) % n, minlength=n)
    lagged = np.bincount(np.intersect1d(a_keys, b_keys - lag * n, assume_unique=True) % n,
                         minlength=n)

    signal = entry % N_ROLES != ROLE_NOISE
    key2, per_frame = np.unique(f[signal] * n + entry[signal] // N_ROLES, return_counts=True)
    width = int(per_frame.max()) if per_frame.size else 0
    hist = np.bincount((key2 % n) * width + per_frame - 1, minlength=n * width).reshape(n, width) \
        if width else np.zeros((n, 0), np.int64)

    head = b_keys[b_keys // n < start + lag]
    tail = a_keys[a_keys // n >= end - lag]
    return FrameTally(start, end, lag, n, hits.astype(np.int64), events.astype(np.int64),
                      both.astype(np.int64), lagged.astype(np.int64), hist.astype(np.int64),
                      head, tail)


StackSource = Union[FrameStack, Iterable[FrameStack]]


def tally_stack(source: StackSource, regions: Union[RegionIndex, Sequence[ObjectRegion]],
                lag: int = 1, shifts: Optional[np.ndarray] = None, chunk_frames: int = 1 << 16,
                workers: int = 1) -> FrameTally:
    """Reduce a stack (or an iterator of consecutive chunks) into one tally."""
    if isinstance(source, FrameStack):
        width, height = source.grid_width, source.grid_height
        chunks = source.iter_chunks(chunk_frames)
        start = source.start_frame
    else:
        chunks = iter(source)
        first = next(chunks, None)
        if first is None:
            raise InsufficientCountsError("no frames to analyze")
        width, height, start = first.grid_width, first.grid_height, first.start_frame
        chunks = _prepend(first, chunks)
    index = regions if isinstance(regions, RegionIndex) else RegionIndex(regions, width, height)
    total = FrameTally.empty(index.n_objects, lag, start)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(lambda c: tally_chunk(c, index, lag, shifts), chunks)
            for part in parts:
                total = total.merge(part)
    else:
        for chunk in chunks:
            total = total.merge(tally_chunk(chunk, index, lag, shifts))
    return total


def _prepend(first, rest):
    yield first
    yield from rest


@dataclass(frozen=True)
class CorrelationEstimate:
    id: object
    g2_raw: float
    g2_baseline: float
    g2_normalized: float
    g2_corrected: float
    stderr: float
    stderr_corrected: float
    n_coincidences: int
    n_lagged: int
    n_A: int
    n_B: int
    n_noise: int
    n_frames: int
    signal_fraction_A: float
    signal_fraction_B: float


def estimate_stderr(n_coinc: int, n_a: int, n_b: int, n_frames: int,
                    n_lagged: Optional[int] = None, lag: int = 1) -> float:
    """Shot-noise error of the raw g2 or, given ``n_lagged``, of the normalized g2.

    The relative error of each ratio is sqrt(1/coincidences + 1/n_A + 1/n_B);
    the baseline's error is added in quadrature when ``n_lagged`` is given.
    With no coincidences the error of a single coincidence is reported, a
    one-sided bound.
    """
    if min(n_coinc, n_a, n_b, n_frames) < 0 or (n_lagged is not None and n_lagged < 0):
        raise ParameterError("counts must be >= 0")
    if n_a == 0 or n_b == 0 or n_frames == 0:
        raise InsufficientCountsError("no events in region A or B")
    coinc = max(n_coinc, 1)
    g_raw = coinc * n_frames / (n_a * n_b)
    rel2 = 1.0 / coinc + 1.0 / n_a + 1.0 / n_b
    if n_lagged is None:
        return g_raw * math.sqrt(rel2)
    if n_lagged == 0 or n_frames <= lag:
        return float("nan")
    g_base = n_lagged * n_frames * n_frames / ((n_frames - lag) * n_a * n_b)
    return g_raw / g_base * math.sqrt(rel2 + 1.0 / n_lagged + 1.0 / n_a + 1.0 / n_b)


def _signal_fraction(hits: int, noise_hits: int, has_noise: bool) -> float:
    if not has_noise or hits == 0:
        return 1.0
    return min(1.0, max(0.0, (hits - noise_hits) / hits))


def estimate_from_tally(tally: FrameTally, obj: int = 0, id=None,
                        has_noise: bool = True) -> CorrelationEstimate:
    """Correlation estimate of one object from a finished tally (no background correction).

    Without lagged coincidences the baseline, and everything normalized by
    it, is NaN.
    """
    name = id if id is not None else obj
    n_frames = tally.n_frames
    n_a = int(tally.hits[obj, ROLE_A])
    n_b = int(tally.hits[obj, ROLE_B])
    n_noise = int(tally.hits[obj, ROLE_NOISE])
    if n_frames == 0 or n_a == 0 or n_b == 0:
        raise InsufficientCountsError(
            f"object {name}: no events in region {'A' if n_a == 0 else 'B'}")
    c = int(tally.both[obj])
    lagged = int(tally.lagged[obj])
    mean_a, mean_b = n_a / n_frames, n_b / n_frames
    g_raw = (c / n_frames) / (mean_a * mean_b)
    pairs = n_frames - tally.lag
    if lagged > 0 and pairs > 0:
        g_base = (lagged / pairs) / (mean_a * mean_b)
        g_norm = g_raw / g_base
    else:
        g_base = g_norm = float("nan")
    err = estimate_stderr(c, n_a, n_b, n_frames, lagged, tally.lag)
    rho_a = _signal_fraction(n_a, n_noise, has_noise)
    rho_b = _signal_fraction(n_b, n_noise, has_noise)
    return CorrelationEstimate(name, g_raw, g_base, g_norm, g_norm, err, err, c, lagged,
                               n_a, n_b, n_noise, n_frames, rho_a, rho_b)


def background_correct(est: CorrelationEstimate) -> CorrelationEstimate:
    """Remove uncorrelated background: g_s = (g - 1) / (rho_A rho_B) + 1."""
    weight = est.signal_fraction_A * est.signal_fraction_B
    if weight <= 0:
        raise AllNoiseError(f"object {est.id}: region signal is indistinguishable from noise")
    corrected = (est.g2_normalized - 1.0) / weight + 1.0
    return replace(est, g2_corrected=corrected, stderr_corrected=est.stderr / weight)


def estimate_all(source: StackSource, regions: Sequence[ObjectRegion], baseline_lag: int = 1,
                 shifts: Optional[np.ndarray] = None, correct: bool = True,
                 workers: int = 1) -> List[Union[CorrelationEstimate, Exception]]:
    """Estimates for every region; failed objects yield their exception instead."""
    tally = tally_stack(source, regions, baseline_lag, shifts, workers=workers)
    out = []
    for i, reg in enumerate(regions):
        try:
            est = estimate_from_tally(tally, i, reg.id, bool(reg.noise_region))
            out.append(background_correct(est) if correct else est)
        except (InsufficientCountsError, AllNoiseError) as exc:
            out.append(exc)
    return out


def estimate_g2_zero(stack: StackSource, region: ObjectRegion, baseline_lag: int = 1,
                     shifts: Optional[np.ndarray] = None) -> CorrelationEstimate:
    """Baseline-normalized zero-delay g2 of one object in a single streaming pass.

    Per frame, N_A and N_B are 1 if any event falls in the region and 0
    otherwise. ``g2_corrected`` equals ``g2_normalized`` until
    :func:`background_correct` is applied.
    """
    tally = tally_stack(stack, [region], baseline_lag, shifts)
    return estimate_from_tally(tally, 0, region.id, bool(region.noise_region))
