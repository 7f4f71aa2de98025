"""Higher-order correlations from factorial moments of per-frame region counts."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..core_model import PhotonNumberDist
from ..errors import InsufficientCountsError, ParameterError
from ..frames import FrameStack
from .correlation import FrameTally, StackSource, tally_chunk, tally_stack
from .regions import ObjectRegion, RegionIndex

OCCUPANCY_WARNING = 0.1


class OccupancyWarning(UserWarning):
    """Mean events per superpixel high enough for pile-up to bias moments."""


@dataclass(frozen=True)
class GnEstimate:
    order: int
    value: float
    stderr: float
    mean_count: float
    n_frames: int


def count_histogram(tally, obj: int = 0) -> np.ndarray:
    """Frames with 0, 1, 2, ... events in regions A and B together."""
    hist = tally.count_hist[obj]
    zero = tally.n_frames - int(hist.sum())
    return np.concatenate([[zero], hist]).astype(np.int64)


def _falling(c: np.ndarray, n: int) -> np.ndarray:
    out = np.ones_like(c, dtype=float)
    for j in range(n):
        out *= np.clip(c - j, 0, None)
    return out


def gn_from_histogram(hist: Sequence[int], n: int) -> GnEstimate:
    """g(n) = <c(c-1)...(c-n+1)> / <c>^n with a delta-method error.

    When no frame holds ``n`` counts the value is 0 and the error is that
    of a single such frame.
    """
    if int(n) != n or n < 1:
        raise ParameterError("order must be a positive integer")
    h = np.asarray(hist, dtype=float)
    frames = h.sum()
    c = np.arange(h.size, dtype=float)
    if frames <= 0:
        raise InsufficientCountsError("no frames")
    mu = float((h * c).sum() / frames)
    if mu <= 0:
        raise InsufficientCountsError("no counts in the region")
    x = _falling(c, n)
    fx = float((h * x).sum() / frames)
    value = fx / mu**n
    if fx == 0:
        x_one = math.factorial(n) / frames
        return GnEstimate(n, 0.0, x_one / mu**n, mu, int(frames))
    var_x = float((h * (x - fx) ** 2).sum() / frames)
    var_c = float((h * (c - mu) ** 2).sum() / frames)
    cov = float((h * (x - fx) * (c - mu)).sum() / frames)
    grad_x = 1.0 / mu**n
    grad_c = -n * fx / mu ** (n + 1)
    var = (grad_x**2 * var_x + grad_c**2 * var_c + 2 * grad_x * grad_c * cov) / frames
    return GnEstimate(n, value, math.sqrt(max(var, 0.0)), mu, int(frames))


def elementary_symmetric(p: Sequence[float], n: int) -> float:
    """Sum over all n-element subsets of ``p`` of the product of their entries."""
    e = np.zeros(n + 1)
    e[0] = 1.0
    for v in np.asarray(p, dtype=float):
        e[1:] = e[1:] + v * e[:-1]
    return float(e[n])


def estimate_gn(stack: StackSource, region: ObjectRegion, n: int,
                shifts: Optional[np.ndarray] = None) -> GnEstimate:
    """n-th order correlation of the events in regions A and B together.

    A binary superpixel records at most one event, so the numerator
    <c(c-1)...(c-n+1)> only sees photons in n distinct superpixels. The
    normalization is therefore n! e_n(p) over the per-superpixel event rates
    p rather than <c>^n; the two agree when the light is spread over many
    superpixels, and a Poisson source gives exactly 1 even with collapse.
    Warns with :class:`OccupancyWarning` when the mean events per superpixel
    per frame exceed 0.1.
    """
    if int(n) != n or n < 1:
        raise ParameterError("order must be a positive integer")
    pixels = list(region.region_a) + list(region.region_b)
    chunks = stack.iter_chunks(1 << 16) if isinstance(stack, FrameStack) else iter(stack)
    index = None
    tally = None
    per_pixel = np.zeros(len(pixels), np.int64)
    for chunk in chunks:
        if index is None:
            index = RegionIndex([region], chunk.grid_width, chunk.grid_height)
            flat = np.array([y * chunk.grid_width + x for x, y in pixels], np.int64)
            order = np.argsort(flat)
            tally = FrameTally.empty(1, 1, chunk.start_frame)
        tally = tally.merge(tally_chunk(chunk, index, 1, shifts))
        per_pixel += _pixel_counts(chunk, flat, order, shifts)
    if tally is None:
        raise InsufficientCountsError("no frames to analyze")
    hist = count_histogram(tally, 0)
    est = gn_from_histogram(hist, n)
    frames = tally.n_frames
    rates = per_pixel / frames
    norm = math.factorial(n) * elementary_symmetric(rates, n)
    if norm <= 0:
        raise InsufficientCountsError(f"fewer than {n} superpixels saw events")
    scale = est.mean_count**n / norm
    occupancy = rates.mean()
    if occupancy > OCCUPANCY_WARNING:
        warnings.warn(f"mean occupancy {occupancy:.3g} events per superpixel per frame "
                      f"exceeds {OCCUPANCY_WARNING}; superpixel pile-up biases g({n})",
                      OccupancyWarning, stacklevel=2)
    return GnEstimate(n, est.value * scale, est.stderr * scale, est.mean_count, frames)


def _pixel_counts(chunk: FrameStack, flat: np.ndarray, order: np.ndarray,
                  shifts: Optional[np.ndarray]) -> np.ndarray:
    x = chunk.x.astype(np.int64)
    y = chunk.y.astype(np.int64)
    if shifts is not None:
        frame = chunk.frame_index() + chunk.start_frame
        x = x - shifts[frame, 0]
        y = y - shifts[frame, 1]
        ok = (x >= 0) & (x < chunk.grid_width) & (y >= 0) & (y < chunk.grid_height)
        x, y = x[ok], y[ok]
    ev = y * chunk.grid_width + x
    sorted_flat = flat[order]
    slot = np.minimum(np.searchsorted(sorted_flat, ev), sorted_flat.size - 1)
    hit = sorted_flat[slot] == ev
    counts = np.zeros(flat.size, np.int64)
    np.add.at(counts, order[slot[hit]], 1)
    return counts


def region_count_distribution(stack: StackSource, region: ObjectRegion,
                              shifts: Optional[np.ndarray] = None) -> PhotonNumberDist:
    """Empirical distribution of per-frame event counts in regions A and B."""
    tally = tally_stack(stack, [region], 1, shifts)
    return PhotonNumberDist.from_counts(count_histogram(tally, 0))
