"""Emitter-count inference from brightness and antibunching evidence."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from .errors import CalibrationError, IndeterminateError, ParameterError
from .estimators.brightness import DEFAULT_BOUNDARIES

CONSISTENT = "consistent"
INCONSISTENT = "inconsistent"
INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class ObjectVerdict:
    id: object
    m_brightness: float
    m_correlation: Optional[float]
    m_hat: int
    confidence: Optional[float]
    flags: str
    m_brightness_err: float = math.nan
    m_correlation_err: Optional[float] = None


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def classify(B: float, g2: float, g2_err: float, single_refs: Tuple[float, float],
             B_err: Optional[float] = None, id=None, counts_scale: Optional[float] = None
             ) -> ObjectVerdict:
    """Fuse m = B / B1 with m = (1 - g2_1) / (1 - g2) by inverse-variance weighting.

    ``B_err`` is the shot-noise error of B. When it is not given, it is
    taken as ``sqrt(B / counts_scale)`` if the number of counts per unit B is
    known, and otherwise as 10% of B. The verdict is the half-up rounded
    combination; with g2 >= 1 only brightness is used and the verdict is
    flagged indeterminate.
    """
    b1, g21 = single_refs
    if not b1 > 0:
        raise ParameterError("single-emitter brightness B1 must be > 0")
    if not g21 < 1:
        raise ParameterError("single-emitter g2 must be < 1")
    if not g2_err >= 0:
        raise ParameterError("g2 error must be >= 0")
    if B_err is None:
        B_err = math.sqrt(abs(B) / counts_scale) if counts_scale else 0.1 * abs(B)
    m_b = B / b1
    sig_b = max(abs(B_err) / b1, 1e-12)
    if not g2 < 1:
        return ObjectVerdict(id, m_b, None, max(round_half_up(m_b), 1), None, INDETERMINATE,
                             sig_b, None)
    m_c = (1.0 - g21) / (1.0 - g2)
    sig_c = max(m_c * g2_err / (1.0 - g2), 1e-12)
    w_b, w_c = 1.0 / sig_b**2, 1.0 / sig_c**2
    combined = (w_b * m_b + w_c * m_c) / (w_b + w_c)
    sig = 1.0 / math.sqrt(w_b + w_c)
    m_hat = max(round_half_up(combined), 1)
    confidence = float(norm.cdf((m_hat + 0.5 - combined) / sig)
                       - norm.cdf((m_hat - 0.5 - combined) / sig))
    flag = CONSISTENT if round_half_up(m_b) == round_half_up(m_c) else INCONSISTENT
    return ObjectVerdict(id, m_b, m_c, m_hat, confidence, flag, sig_b, sig_c)


def calibrate_single_refs(objects: Sequence[Tuple[float, float, float]],
                          boundary: float = DEFAULT_BOUNDARIES[0]) -> Tuple[float, float]:
    """(B1, g2_1) from the dim group B < ``boundary``.

    B1 is the median brightness of the group and g2_1 the inverse-variance
    weighted mean of its g2 values (plain mean if any error is zero).
    """
    dim = [(b, g, e) for b, g, e in objects if b < boundary and math.isfinite(g)]
    if not dim:
        raise CalibrationError(f"no objects with B < {boundary} to calibrate against")
    bs = np.array([d[0] for d in dim])
    gs = np.array([d[1] for d in dim])
    es = np.array([d[2] for d in dim])
    if np.all(es > 0) and np.all(np.isfinite(es)):
        w = 1.0 / es**2
        g21 = float((w * gs).sum() / w.sum())
    else:
        g21 = float(gs.mean())
    return float(np.median(bs)), g21


def predict_higher_order_verdict(gn_estimates: Sequence[Tuple[int, float, float]]) -> int:
    """Emitter count from the last significantly nonzero correlation order.

    Orders must be consecutive from 2. Raises :class:`IndeterminateError`
    when no order is significant or when the highest supplied order still
    is, so no cutoff was observed (classical light has none).
    """
    est = sorted(gn_estimates, key=lambda t: t[0])
    if not est:
        raise IndeterminateError("no estimates supplied", "empty")
    orders = [int(n) for n, _, _ in est]
    if orders[0] != 2 or orders != list(range(2, 2 + len(orders))):
        raise ParameterError("orders must be consecutive starting at 2")
    significant = [n for n, v, e in est if v > 3.0 * e]
    if not significant:
        raise IndeterminateError("no order is significantly nonzero", "no-signal")
    top = max(significant)
    if top == orders[-1]:
        raise IndeterminateError(
            f"order {top} is still significant; no cutoff within the supplied orders",
            "no-cutoff")
    return top
