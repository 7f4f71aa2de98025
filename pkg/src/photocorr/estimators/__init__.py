"""Streaming estimators over frame stacks."""

from .brightness import (DEFAULT_BOUNDARIES, BrightnessEstimate, brightness_from_counts,
                         brightness_from_tally, brightness_group, estimate_brightness,
                         group_by_brightness)
from .correlation import (CorrelationEstimate, FrameTally, background_correct, estimate_all,
                          estimate_from_tally, estimate_g2_zero, estimate_stderr, tally_chunk,
                          tally_stack)
from .drift import DriftCorrection, register_drift
from .higher_order import (GnEstimate, OccupancyWarning, count_histogram, estimate_gn,
                           elementary_symmetric, gn_from_histogram, region_count_distribution)
from .regions import (ObjectRegion, RegionIndex, attach_noise_regions, auto_regions, disc,
                      disc_region, translate)
from .threshold import (DEFAULT_THRESHOLDS, ThresholdPoint, binarize, select_threshold,
                        threshold_scan)
from .timing import (CoincidenceHistogram, FitResult, build_coincidence_histogram, decay_model,
                     fit_decay_model, histogram_from_times)

__all__ = [name for name in dir() if not name.startswith("_")]
