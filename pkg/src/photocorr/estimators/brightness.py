"""Dimensionless brightness and brightness grouping."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import NormalizationError, ParameterError
from .correlation import StackSource, tally_stack
from .regions import ROLE_A, ROLE_NOISE, ObjectRegion

DEFAULT_BOUNDARIES = (1.25, 2.5, 4.0)


@dataclass(frozen=True)
class BrightnessEstimate:
    id: object
    brightness: float
    stderr: float
    mean_events: float
    mean_noise: float


def brightness_from_counts(events_a: int, events_noise: int, n_frames: int, gate_width: float,
                           intensity: float) -> Tuple[float, float]:
    """B = (<N_A> - <N_noise>) / (T_g I~) and its shot-noise error."""
    if not intensity > 0:
        raise NormalizationError("normalized excitation intensity must be > 0")
    if not gate_width > 0:
        raise ParameterError("gate width must be > 0")
    if n_frames <= 0:
        raise ParameterError("no frames")
    scale = n_frames * gate_width * intensity
    return (events_a - events_noise) / scale, math.sqrt(events_a + events_noise) / scale


def estimate_brightness(stack: StackSource, region: ObjectRegion, gate_width: float,
                        intensity: float, shifts: Optional[np.ndarray] = None
                        ) -> BrightnessEstimate:
    """Brightness of one object from region A event counts, noise-subtracted."""
    if not intensity > 0:
        raise NormalizationError("normalized excitation intensity must be > 0")
    tally = tally_stack(stack, [region], 1, shifts)
    return brightness_from_tally(tally, 0, region.id, gate_width, intensity)


def brightness_from_tally(tally, obj: int, id, gate_width: float,
                          intensity: float) -> BrightnessEstimate:
    ev_a = int(tally.events[obj, ROLE_A])
    ev_n = int(tally.events[obj, ROLE_NOISE])
    b, err = brightness_from_counts(ev_a, ev_n, tally.n_frames, gate_width, intensity)
    return BrightnessEstimate(id, b, err, ev_a / tally.n_frames, ev_n / tally.n_frames)


def brightness_group(b: float, boundaries: Sequence[float] = DEFAULT_BOUNDARIES) -> int:
    """1-based group of half-open intervals; a value on a boundary joins the upper group."""
    return bisect.bisect_right(list(boundaries), b) + 1


def group_by_brightness(objects: Iterable[Tuple[object, float]],
                        boundaries: Sequence[float] = DEFAULT_BOUNDARIES) -> Dict[int, List]:
    bounds = list(boundaries)
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise ParameterError("group boundaries must be strictly increasing")
    groups: Dict[int, List] = {g: [] for g in range(1, len(bounds) + 2)}
    for oid, b in objects:
        groups[brightness_group(b, bounds)].append(oid)
    return groups
