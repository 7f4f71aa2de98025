"""Object regions and the pixel -> (object, role) lookup used by every estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..errors import NoObjectsError, ParameterError, ValidationError

ROLE_A, ROLE_B, ROLE_NOISE = 0, 1, 2
N_ROLES = 3

Pixels = Tuple[Tuple[int, int], ...]


def _as_pixels(pixels) -> Pixels:
    return tuple(sorted({(int(x), int(y)) for x, y in pixels}))


@dataclass(frozen=True)
class ObjectRegion:
    """Superpixels of one object's two split images and of its noise reference.

    ``noise_region`` may be empty, in which case no background estimate is
    available and the signal fractions are taken as 1.
    """

    id: object
    region_a: Pixels
    region_b: Pixels
    noise_region: Pixels = ()

    def __post_init__(self):
        for name in ("region_a", "region_b", "noise_region"):
            object.__setattr__(self, name, _as_pixels(getattr(self, name)))
        if not self.region_a or not self.region_b:
            raise ValidationError(f"object {self.id}: regions A and B must be nonempty")
        a, b, n = set(self.region_a), set(self.region_b), set(self.noise_region)
        if a & b or a & n or b & n:
            raise ValidationError(f"object {self.id}: regions must be disjoint")
        if n and len(n) != len(a):
            raise ValidationError(
                f"object {self.id}: noise region has {len(n)} superpixels, region A {len(a)}")

    @property
    def center(self) -> Tuple[float, float]:
        """Centroid of region A."""
        arr = np.array(self.region_a, dtype=float)
        return float(arr[:, 0].mean()), float(arr[:, 1].mean())

    def shifted(self, dx: int, dy: int) -> "ObjectRegion":
        def move(px):
            return tuple((x + dx, y + dy) for x, y in px)
        return ObjectRegion(self.id, move(self.region_a), move(self.region_b),
                            move(self.noise_region))


def disc(center, radius: float) -> Pixels:
    """Superpixels whose centres lie within ``radius`` of ``center``."""
    cx, cy = center
    r = int(math.ceil(radius)) + 1
    x0, y0 = int(math.floor(cx + 0.5)), int(math.floor(cy + 0.5))
    return tuple((x, y) for y in range(y0 - r, y0 + r + 1) for x in range(x0 - r, x0 + r + 1)
                 if (x - cx) ** 2 + (y - cy) ** 2 <= radius * radius)


def translate(pixels: Pixels, offset) -> Pixels:
    dx, dy = (int(round(v)) for v in offset)
    return tuple((x + dx, y + dy) for x, y in pixels)


def disc_region(id, center, radius: float, offset_b, noise_center=None) -> ObjectRegion:
    """Region A is a disc at ``center``; B and the noise region are translated copies."""
    a = disc(center, radius)
    b = translate(a, offset_b)
    noise = ()
    if noise_center is not None:
        noise = translate(a, (round(noise_center[0] - center[0]),
                              round(noise_center[1] - center[1])))
    return ObjectRegion(id, a, b, noise)


class RegionIndex:
    """CSR map from flat superpixel index to ``object * 3 + role`` entries.

    A superpixel may belong to several objects (e.g. a shared noise area).
    """

    def __init__(self, regions: Sequence[ObjectRegion], width: int, height: int):
        if not regions:
            raise NoObjectsError("no object regions supplied")
        self.regions = list(regions)
        self.width, self.height = int(width), int(height)
        self.n_objects = len(self.regions)
        pix, ent = [], []
        self.sizes = np.zeros((self.n_objects, N_ROLES), np.int64)
        for i, reg in enumerate(self.regions):
            for role, pixels in enumerate((reg.region_a, reg.region_b, reg.noise_region)):
                for x, y in pixels:
                    if not (0 <= x < width and 0 <= y < height):
                        raise ValidationError(
                            f"object {reg.id}: superpixel ({x}, {y}) outside the "
                            f"{width}x{height} grid")
                    pix.append(y * width + x)
                    ent.append(i * N_ROLES + role)
                self.sizes[i, role] = len(pixels)
        pix = np.array(pix, np.int64)
        ent = np.array(ent, np.int64)
        order = np.lexsort((ent, pix))
        self._pix = pix[order]
        self._entries = ent[order]
        self._unique_pix, first = np.unique(self._pix, return_index=True)
        self._start = first
        self._count = np.diff(np.append(first, self._pix.size))

    def lookup(self, flat: np.ndarray):
        """For flat superpixel indices, return (event index, entry) pairs."""
        flat = np.asarray(flat, np.int64)
        slot = np.searchsorted(self._unique_pix, flat)
        slot_c = np.minimum(slot, self._unique_pix.size - 1)
        hit = self._unique_pix[slot_c] == flat
        events = np.flatnonzero(hit)
        slot_c = slot_c[hit]
        counts = self._count[slot_c]
        ev = np.repeat(events, counts)
        base = np.repeat(self._start[slot_c], counts)
        run_start = np.repeat(np.cumsum(counts) - counts, counts)
        pos = base + np.arange(ev.size) - run_start
        return ev, self._entries[pos]


def _noise_placement(acc: np.ndarray, pixels: Pixels, forbidden: np.ndarray,
                     anchor) -> Optional[Pixels]:
    """Translate ``pixels`` to the lowest-count area avoiding ``forbidden``."""
    h, w = acc.shape
    arr = np.array(pixels)
    x0, y0 = arr.min(axis=0)
    kx, ky = arr[:, 0] - x0, arr[:, 1] - y0
    kw, kh = kx.max() + 1, ky.max() + 1
    if kw > w or kh > h:
        return None
    # sums over the shape placed with its bounding-box corner at (u, v)
    totals = np.zeros((h - kh + 1, w - kw + 1))
    blocked = np.zeros_like(totals, dtype=bool)
    for dx, dy in zip(kx, ky):
        totals += acc[dy:dy + h - kh + 1, dx:dx + w - kw + 1]
        blocked |= forbidden[dy:dy + h - kh + 1, dx:dx + w - kw + 1]
    if blocked.all():
        return None
    vv, uu = np.mgrid[0:totals.shape[0], 0:totals.shape[1]]
    dist = (uu - (anchor[0] - x0)) ** 2 + (vv - (anchor[1] - y0)) ** 2
    score = np.where(blocked, np.inf, totals)
    best = np.lexsort((dist.ravel(), score.ravel()))[0]
    v, u = divmod(int(best), totals.shape[1])
    return tuple((int(u + x), int(v + y)) for x, y in zip(kx, ky))


def auto_regions(accumulated: np.ndarray, image_offset_b, factor: float = 5.0,
                 min_size: int = 2, grow: int = 1, noise_margin: int = 2) -> list:
    """Detect objects in an accumulated count map.

    Superpixels above ``factor`` times the median count (the mean when the
    median is zero) are grouped into 8-connected components; components
    smaller than ``min_size`` are dropped. A component whose centroid,
    shifted by ``image_offset_b``, falls inside another component is an A
    image; its region B is the translated copy of region A. Each region is
    dilated by ``grow`` superpixels, and each object gets a noise region of
    the same shape in the lowest-count free area.
    """
    acc = np.asarray(accumulated, dtype=float)
    if acc.ndim != 2:
        raise ParameterError("accumulated map must be 2-D")
    offset = tuple(int(round(v)) for v in image_offset_b)
    if offset == (0, 0):
        raise ParameterError("automatic regions need a nonzero image offset between fields")
    level = np.median(acc)
    if level <= 0:
        level = acc.mean()
    if level <= 0:
        raise NoObjectsError("no objects found: the accumulated map is empty")
    labels, n = ndimage.label(acc > factor * level, structure=np.ones((3, 3), int))
    comps = []
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        if xs.size >= min_size:
            w = acc[ys, xs]
            comps.append((lab, xs, ys, (float((xs * w).sum() / w.sum()),
                                        float((ys * w).sum() / w.sum()))))
    h, wd = acc.shape
    pairs = []
    for lab, xs, ys, (cx, cy) in comps:
        tx, ty = int(round(cx + offset[0])), int(round(cy + offset[1]))
        if 0 <= tx < wd and 0 <= ty < h and labels[ty, tx] not in (0, lab):
            pairs.append((cx, cy, xs, ys, int(labels[ty, tx])))
    if not pairs:
        raise NoObjectsError("no objects found")
    pairs.sort(key=lambda p: (round(p[1]), round(p[0])))
    structure = np.ones((3, 3), bool)
    shapes = []
    for cx, cy, xs, ys, _ in pairs:
        mask = np.zeros_like(acc, dtype=bool)
        mask[ys, xs] = True
        if grow > 0:
            mask = ndimage.binary_dilation(mask, structure, iterations=grow)
        yy, xx = np.nonzero(mask)
        a = tuple(zip(xx.tolist(), yy.tolist()))
        b = tuple((x, y) for x, y in translate(a, offset) if 0 <= x < wd and 0 <= y < h)
        if len(b) != len(a):
            continue
        shapes.append(((cx, cy), a, b))
    if not shapes:
        raise NoObjectsError("no objects found with both images inside the grid")
    regions = [ObjectRegion(i, a, b) for i, (_, a, b) in enumerate(shapes)]
    return attach_noise_regions(regions, acc, noise_margin)


def attach_noise_regions(regions: Sequence[ObjectRegion], accumulated: np.ndarray,
                         margin: int = 2) -> list:
    """Give each object a noise region shaped like its region A.

    The copy goes to the placement with the fewest accumulated counts that
    stays ``margin`` superpixels clear of every object's A and B regions,
    preferring placements close to the object. Objects with no free
    placement keep an empty noise region.
    """
    acc = np.asarray(accumulated, dtype=float)
    h, w = acc.shape
    occupied = np.zeros((h, w), bool)
    for reg in regions:
        for x, y in reg.region_a + reg.region_b:
            if 0 <= x < w and 0 <= y < h:
                occupied[y, x] = True
    forbidden = ndimage.binary_dilation(occupied, np.ones((3, 3), bool), iterations=margin) \
        if margin > 0 else occupied
    out = []
    for reg in regions:
        noise = _noise_placement(acc, reg.region_a, forbidden, reg.center) or ()
        out.append(ObjectRegion(reg.id, reg.region_a, reg.region_b, noise))
    return out
