"""Readout thresholding and threshold scans of analog stacks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import AnalysisError, CapabilityError, ModeError
from ..frames import BINARY, FrameStack
from .correlation import background_correct, estimate_from_tally, tally_stack
from .regions import ROLE_A, ROLE_NOISE, ObjectRegion

DEFAULT_THRESHOLDS = tuple(float(t) for t in range(650, 721, 5))


def binarize(stack: FrameStack, threshold: float) -> FrameStack:
    """Keep readouts with S > threshold as single-photon events."""
    if not stack.is_analog:
        raise ModeError("stack is already binary")
    keep = stack.signal > threshold
    kept_before = np.concatenate([[0], np.cumsum(keep, dtype=np.int64)])
    offsets = kept_before[stack.offsets - stack.offsets[0]]
    meta = dict(stack.metadata)
    meta["threshold"] = float(threshold)
    out = FrameStack(BINARY, stack.grid_width, stack.grid_height, offsets, stack.x[keep],
                     stack.y[keep], None, meta, start_frame=stack.start_frame)
    out.control_frames = stack.control_frames
    out.photon_times = stack.photon_times
    return out


@dataclass(frozen=True)
class ThresholdPoint:
    threshold: float
    g2_normalized: float
    g2_corrected: float
    stderr: float
    snr: float
    signal_events: int
    noise_events: int


def _snr(signal: int, noise: int) -> float:
    if noise == 0:
        return math.inf if signal > 0 else 0.0
    return (signal - noise) / noise


def threshold_scan(stack: FrameStack, region: ObjectRegion,
                   thresholds: Sequence[float] = DEFAULT_THRESHOLDS, baseline_lag: int = 1,
                   shifts: Optional[np.ndarray] = None) -> List[ThresholdPoint]:
    """Correlation and signal-to-noise of one object at each threshold.

    SNR is (events in region A - events in the noise region) / events in the
    noise region. Thresholds at which the estimate fails give NaN entries.
    """
    if not stack.is_analog:
        raise CapabilityError("threshold scans need an analog stack")
    points = []
    for th in thresholds:
        binary = binarize(stack, th)
        tally = tally_stack(binary, [region], baseline_lag, shifts)
        sig = int(tally.events[0, ROLE_A])
        noise = int(tally.events[0, ROLE_NOISE])
        try:
            est = background_correct(estimate_from_tally(tally, 0, region.id,
                                                         bool(region.noise_region)))
            g_norm, g_corr, err = est.g2_normalized, est.g2_corrected, est.stderr_corrected
        except AnalysisError:
            g_norm = g_corr = err = math.nan
        points.append(ThresholdPoint(float(th), g_norm, g_corr, err, _snr(sig, noise), sig, noise))
    return points


def select_threshold(points: Sequence[ThresholdPoint]) -> Tuple[float, Optional[float]]:
    """(SNR-maximizing threshold, stderr-minimizing threshold).

    SNR ties go to the higher threshold; the second value is None when no
    point has a finite error.
    """
    if not points:
        raise AnalysisError("empty threshold scan")
    best_snr = max(points, key=lambda p: (p.snr, p.threshold)).threshold
    finite = [p for p in points if math.isfinite(p.stderr)]
    best_err = min(finite, key=lambda p: (p.stderr, -p.threshold)).threshold if finite else None
    return best_snr, best_err
