"""End-to-end analysis of a frame stack: regions, drift, g2, brightness, verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .classifier import calibrate_single_refs, classify
from .config import scene_from_metadata
from .errors import AnalysisError, NoObjectsError, ParameterError
from .estimators.brightness import brightness_from_tally, brightness_group
from .estimators.correlation import background_correct, estimate_from_tally, tally_stack
from .estimators.drift import DriftCorrection, register_drift
from .estimators.regions import ObjectRegion, attach_noise_regions, auto_regions, disc_region
from .estimators.threshold import DEFAULT_THRESHOLDS, binarize, select_threshold, threshold_scan
from .frames import FrameStack

OBJECT_COLUMNS = ("id", "x", "y", "B", "group", "g2_raw", "g2_norm", "g2_corr", "stderr",
                  "m_hat", "confidence", "status")


@dataclass
class ObjectRow:
    id: object
    x: float
    y: float
    B: float = math.nan
    group: Optional[int] = None
    g2_raw: float = math.nan
    g2_norm: float = math.nan
    g2_corr: float = math.nan
    stderr: float = math.nan
    m_hat: Optional[int] = None
    confidence: Optional[float] = None
    status: str = "ok"

    def as_row(self) -> dict:
        return {c: getattr(self, c) for c in OBJECT_COLUMNS}


@dataclass
class AnalysisReport:
    rows: List[ObjectRow]
    regions: List[ObjectRegion]
    estimates: list
    brightness: list
    single_refs: Optional[tuple]
    threshold: Optional[float] = None
    drift: Optional[DriftCorrection] = None
    notes: List[str] = field(default_factory=list)


def stack_gate_width(stack: FrameStack, default: float = 10.0) -> float:
    cam = stack.metadata.get("camera") or {}
    return float((cam.get("gate") or {}).get("gate_width", default))


def stack_image_offset(stack: FrameStack):
    cam = stack.metadata.get("camera") or {}
    offset = cam.get("image_offset_b")
    if offset is None:
        raise ParameterError("stack metadata has no image offset; pass image_offset_b")
    return tuple(offset)


def shifted_accumulate(stack: FrameStack, shifts: Optional[np.ndarray]) -> np.ndarray:
    """Accumulated count map with per-frame drift removed."""
    if shifts is None:
        return stack.accumulate()
    f = stack.frame_index() + stack.start_frame
    x = stack.x.astype(np.int64) - shifts[f, 0]
    y = stack.y.astype(np.int64) - shifts[f, 1]
    ok = (x >= 0) & (x < stack.grid_width) & (y >= 0) & (y < stack.grid_height)
    flat = y[ok] * stack.grid_width + x[ok]
    return np.bincount(flat, minlength=stack.grid_width * stack.grid_height).reshape(
        stack.grid_height, stack.grid_width)


def scene_regions(stack: FrameStack, radius: float = 3.0) -> list:
    """Disc regions at the simulated object positions recorded in the metadata,
    each with a noise region in the emptiest free area of the accumulated map.
    """
    scene = scene_from_metadata(stack.metadata)
    if scene is None:
        raise NoObjectsError("stack metadata carries no scene description")
    offset = stack_image_offset(stack)
    out = []
    for i, obj in enumerate(scene.objects):
        out.append(disc_region(i, obj.center, radius, offset))
    return attach_noise_regions(out, stack.accumulate())


def measure_drift(stack: FrameStack) -> Optional[DriftCorrection]:
    """Registration from the stack's control frames, or None if drift is not modelled."""
    drift = stack.metadata.get("drift") or {}
    if drift.get("kind", "none") == "none" or len(stack.control_frames) < 2:
        return None
    return register_drift(stack.control_frames)


def analyze_stack(stack: FrameStack, regions: Union[str, Sequence[ObjectRegion]] = "auto",
                  baseline_lag: int = 1, threshold: Optional[float] = None,
                  gate_width: Optional[float] = None, intensity: Optional[float] = None,
                  single_refs: Optional[tuple] = None, correct_drift: Optional[bool] = None,
                  image_offset_b=None, workers: int = 1) -> AnalysisReport:
    """Per-object brightness, correlation and emitter-count verdicts.

    Analog stacks are thresholded at ``threshold``, or at the SNR-optimal
    value of the default scan for the first object when None. The excitation
    intensity of each object comes from the scene in the stack metadata
    unless ``intensity`` is given. Single-emitter references are calibrated
    from the dim group unless supplied.
    """
    notes = []
    if stack.n_frames == 0 or stack.n_events == 0:
        raise NoObjectsError("no objects found: the stack holds no events")
    correction = None
    if correct_drift is None or correct_drift:
        correction = measure_drift(stack)
    shifts = correction.per_frame(stack.n_frames) if correction is not None else None
    offset = image_offset_b if image_offset_b is not None else stack_image_offset(stack)

    if isinstance(regions, str):
        if regions != "auto":
            raise ParameterError(f"unknown region mode {regions!r}")
        regions = auto_regions(shifted_accumulate(stack, shifts), offset)
    regions = list(regions)
    if not regions:
        raise NoObjectsError("no objects found")

    used_threshold = None
    if stack.is_analog:
        if threshold is None:
            points = threshold_scan(stack, regions[0], DEFAULT_THRESHOLDS, baseline_lag, shifts)
            threshold = select_threshold(points)[0]
            notes.append(f"threshold {threshold:g} chosen by signal-to-noise scan")
        used_threshold = float(threshold)
        stack = binarize(stack, threshold)

    tally = tally_stack(stack, regions, baseline_lag, shifts, workers=workers)
    scene = scene_from_metadata(stack.metadata) if intensity is None else None
    width = gate_width if gate_width is not None else stack_gate_width(stack)

    rows, estimates, brightness = [], [], []
    for i, reg in enumerate(regions):
        cx, cy = reg.center
        row = ObjectRow(reg.id, cx, cy)
        rows.append(row)
        try:
            level = intensity if intensity is not None else (
                scene.normalized_intensity(cx, cy) if scene is not None else 1.0)
            b = brightness_from_tally(tally, i, reg.id, width, level)
            row.B, row.group = b.brightness, brightness_group(b.brightness)
            brightness.append(b)
        except AnalysisError as exc:
            row.status = f"brightness: {exc}"
            brightness.append(exc)
        try:
            est = background_correct(estimate_from_tally(tally, i, reg.id,
                                                         bool(reg.noise_region)))
            row.g2_raw, row.g2_norm = est.g2_raw, est.g2_normalized
            row.g2_corr, row.stderr = est.g2_corrected, est.stderr_corrected
            estimates.append(est)
        except AnalysisError as exc:
            row.status = f"correlation: {exc}"
            estimates.append(exc)

    refs = single_refs
    if refs is None:
        candidates = [(r.B, r.g2_corr, r.stderr) for r in rows
                      if r.status == "ok" and math.isfinite(r.g2_corr)]
        try:
            refs = calibrate_single_refs(candidates)
        except AnalysisError as exc:
            notes.append(f"no single-emitter calibration: {exc}")
    if refs is not None:
        for row, b in zip(rows, brightness):
            if row.status != "ok":
                continue
            v = classify(row.B, row.g2_corr, row.stderr, refs, B_err=b.stderr, id=row.id)
            row.m_hat, row.confidence = v.m_hat, v.confidence
            if v.flags != "consistent":
                row.status = v.flags
    return AnalysisReport(rows, regions, estimates, brightness, refs, used_threshold,
                          correction, notes)
