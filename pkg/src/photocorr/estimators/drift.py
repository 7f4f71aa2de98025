"""Rigid drift registration from long-exposure control frames."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from ..errors import RegistrationError
from ..frames import ControlFrame


@dataclass(frozen=True)
class DriftCorrection:
    """Image shift measured at each control frame, relative to the first.

    Frames from ``frame_index[j]`` up to the next control frame use the
    rounded shift of control frame ``j``.
    """

    frame_index: np.ndarray
    shifts: np.ndarray  # (n_controls, 2) float superpixels

    @property
    def rounded(self) -> np.ndarray:
        return np.floor(self.shifts + 0.5).astype(np.int64)

    def per_frame(self, n_frames: int) -> np.ndarray:
        """(n_frames, 2) integer shift for every frame."""
        seg = np.searchsorted(self.frame_index, np.arange(n_frames), side="right") - 1
        return self.rounded[np.clip(seg, 0, None)]


def _find_references(counts: np.ndarray, max_objects: int) -> list:
    background = float(np.median(counts))
    spread = max(float(np.sqrt(max(background, 1.0))), 1.0)
    mask = counts > background + 5.0 * spread
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), int))
    if n == 0:
        raise RegistrationError("control frame is featureless: no bright object found")
    sums = ndimage.sum(counts - background, labels, range(1, n + 1))
    order = np.argsort(sums)[::-1][:max_objects]
    centres = ndimage.center_of_mass(np.clip(counts - background, 0, None), labels,
                                     [int(i) + 1 for i in order])
    return [(float(cx), float(cy)) for cy, cx in centres]


def _centroid(counts: np.ndarray, centre, radius: float):
    h, w = counts.shape
    cx, cy = centre
    x0, x1 = max(int(cx - radius), 0), min(int(cx + radius) + 2, w)
    y0, y1 = max(int(cy - radius), 0), min(int(cy + radius) + 2, h)
    if x0 >= x1 or y0 >= y1:
        return None
    win = counts[y0:y1, x0:x1].astype(float)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    weight = np.where(inside, np.clip(win - np.median(counts), 0, None), 0.0)
    total = weight.sum()
    if total <= 0:
        return None
    return float((weight * xx).sum() / total), float((weight * yy).sum() / total)


def register_drift(control_frames: Sequence[ControlFrame], references: Optional[Sequence] = None,
                   radius: float = 4.0, max_objects: int = 8, iterations: int = 3
                   ) -> DriftCorrection:
    """Track bright objects through the control frames by windowed centroids.

    ``references`` are object positions in the first control frame; when
    omitted the brightest components of that frame are used. Each window
    follows the previous control frame's shift, and the shift of a frame is
    the mean centroid displacement over all objects.
    """
    if not control_frames:
        raise RegistrationError("no control frames")
    first = control_frames[0].counts
    if references is None:
        references = _find_references(first, max_objects)
    base = []
    for ref in references:
        c = _refine(first, ref, radius, iterations)
        if c is not None:
            base.append(c)
    if not base:
        raise RegistrationError("no reference object visible in the first control frame")
    base = np.array(base)
    shifts = np.zeros((len(control_frames), 2))
    for j, cf in enumerate(control_frames[1:], start=1):
        guess = shifts[j - 1]
        moved = []
        for ref in base:
            c = _refine(cf.counts, ref + guess, radius, iterations)
            moved.append(np.nan if c is None else np.asarray(c) - ref)
        moved = np.array([m if np.ndim(m) else [np.nan, np.nan] for m in moved])
        if np.all(np.isnan(moved)):
            raise RegistrationError(f"control frame at {cf.frame_index} is featureless")
        shifts[j] = np.nanmean(moved, axis=0)
    index = np.array([cf.frame_index for cf in control_frames], np.int64)
    return DriftCorrection(index, shifts)


def _refine(counts, centre, radius, iterations):
    c = tuple(centre)
    for _ in range(iterations):
        nxt = _centroid(counts, c, radius)
        if nxt is None:
            return None
        c = nxt
    return c
