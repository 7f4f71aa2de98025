"""Start-stop coincidence histograms and the exponential-dip fit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import least_squares

from ..errors import CapabilityError, FitError, ParameterError
from ..frames import FrameStack

_PAIR_BLOCK = 1 << 15
_P_CEILING = 1.0 - 1e-6


@dataclass(frozen=True)
class CoincidenceHistogram:
    """Counts of delays t_B - t_A in bins ``[edges[i], edges[i+1])``.

    ``expected`` is the count each bin would hold for uncorrelated arrivals
    with the same singles, so ``counts / expected`` is the normalized pair
    correlation.
    """

    bin_width: float
    edges: np.ndarray
    counts: np.ndarray
    expected: np.ndarray
    n_a: int = 0
    n_b: int = 0

    @property
    def total_pairs(self) -> float:
        return float(self.counts.sum())

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def bins(self) -> dict:
        """Lower bin edge -> count."""
        return {float(lo): c for lo, c in zip(self.edges[:-1], self.counts.tolist())}

    def normalized(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.expected > 0, self.counts / self.expected, np.nan)


def _triangle_integral(lo: np.ndarray, hi: np.ndarray, length: float) -> np.ndarray:
    """Integral of max(length - |t|, 0) over [lo, hi]."""
    def anti(t):
        u = np.minimum(np.abs(t), length)
        return np.sign(t) * (length * u - 0.5 * u * u)
    return anti(hi) - anti(lo)


def _pair_delays(ta: np.ndarray, tb: np.ndarray, window: float):
    """Yield blocks of delays tb - ta with -window <= delay < window."""
    for i in range(0, ta.size, _PAIR_BLOCK):
        a = ta[i:i + _PAIR_BLOCK]
        lo = np.searchsorted(tb, a - window, side="left")
        hi = np.searchsorted(tb, a + window, side="left")
        cnt = hi - lo
        total = int(cnt.sum())
        if not total:
            continue
        run_start = np.repeat(np.cumsum(cnt) - cnt, cnt)
        idx = np.repeat(lo, cnt) + np.arange(total) - run_start
        yield tb[idx] - np.repeat(a, cnt)


def histogram_from_times(times_a, times_b, bin_width: float, window: Optional[float] = None,
                         duration: Optional[float] = None, segments: int = 1
                         ) -> CoincidenceHistogram:
    """Histogram delays between two sorted arrival-time lists.

    The arrivals come from ``segments`` independent records of ``duration``
    ns each (one long stream by default; one record per gate for gated
    data). ``window`` defaults to 100 bins and is rounded up to whole bins.
    """
    if not bin_width > 0:
        raise ParameterError("bin_width must be > 0")
    ta = np.sort(np.asarray(times_a, dtype=float))
    tb = np.sort(np.asarray(times_b, dtype=float))
    if window is None:
        window = 100 * bin_width
    n_half = int(math.ceil(window / bin_width - 1e-9))
    window = n_half * bin_width
    edges = bin_width * np.arange(-n_half, n_half + 1, dtype=float)
    counts = np.zeros(2 * n_half, np.int64)
    for delays in _pair_delays(ta, tb, window):
        idx = np.floor(delays / bin_width).astype(np.int64) + n_half
        idx = idx[(idx >= 0) & (idx < 2 * n_half)]
        counts += np.bincount(idx, minlength=2 * n_half)
    if duration is None:
        both = np.concatenate([ta, tb])
        duration = float(both.max() - both.min()) if both.size > 1 else 0.0
    expected = np.zeros(2 * n_half)
    if duration > 0 and ta.size and tb.size:
        expected = (ta.size * tb.size / segments / duration**2
                    * _triangle_integral(edges[:-1], edges[1:], duration))
    return CoincidenceHistogram(bin_width, edges, counts, expected, ta.size, tb.size)


def build_coincidence_histogram(source, bin_width: float, window: Optional[float] = None,
                                duration: Optional[float] = None) -> CoincidenceHistogram:
    """Coincidence histogram from a stack's photon-time side channel or from a
    ``(times_a, times_b)`` pair of arrival-time arrays.

    For stacks, photons of field A and field B are paired within each gate
    over the whole image.
    """
    if isinstance(source, FrameStack):
        side = source.photon_times
        if side is None:
            raise CapabilityError("the stack carries no photon arrival times")
        gate = float(source.metadata.get("camera", {}).get("gate", {}).get("gate_width", 0.0))
        if not gate > 0:
            gate = float(side.time.max()) if side.time.size else 1.0
        if window is None:
            window = gate
        spacing = 2.0 * gate + 2.0 * window
        t = side.frame.astype(float) * spacing + side.time
        field_b = side.field.astype(bool)
        return histogram_from_times(t[~field_b], t[field_b], bin_width, window, gate,
                                    segments=source.n_frames)
    if isinstance(source, tuple) and len(source) == 2:
        return histogram_from_times(source[0], source[1], bin_width, window, duration)
    raise CapabilityError("coincidence histograms need photon arrival times")


# ---------------------------------------------------------------------------
# fitting

def bin_mean_exp(k: float, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Average of exp(-k|t|) over each bin [lo, hi]."""
    def anti(t):
        return np.sign(t) * -np.expm1(-k * np.abs(t)) / k
    return (anti(hi) - anti(lo)) / (hi - lo)


def decay_model(k: float, p: float, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Bin-averaged 1 - (1 - p) exp(-k|t|)."""
    return 1.0 - (1.0 - p) * bin_mean_exp(k, lo, hi)


@dataclass(frozen=True)
class FitResult:
    k_hat: float
    p_hat: float
    covariance: np.ndarray
    residual_norm: float
    chi2_reduced: float
    n_bins: int
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def k_err(self) -> float:
        return float(math.sqrt(self.covariance[0, 0]))

    @property
    def p_err(self) -> float:
        return float(math.sqrt(self.covariance[1, 1]))


def _initial_guess(tau: np.ndarray, y: np.ndarray, width: float) -> Tuple[float, float]:
    centre = np.argsort(np.abs(tau))[:2]
    dip = float(np.clip(1.0 - y[centre].mean(), 1e-3, 1.0))
    area = float(np.sum(1.0 - y) * width)
    k0 = 2.0 * dip / area if area > 0 else 4.0 / np.abs(tau).max()
    near = (np.abs(tau) <= 5.0 / k0) & (y < 1.0)
    if near.sum() >= 2:
        slope, intercept = np.polyfit(np.abs(tau[near]), np.log(1.0 - y[near]), 1)
        if slope < 0 and np.isfinite(intercept):
            return -slope, float(np.clip(1.0 - math.exp(intercept), 0.0, 0.99))
    return k0, float(np.clip(1.0 - dip, 0.0, 0.99))


def fit_decay_model(hist: CoincidenceHistogram, max_evaluations: int = 500) -> FitResult:
    """Weighted least-squares fit of 1 - (1 - p) exp(-k|t|) to the normalized histogram.

    Bins are weighted by their inverse Poisson variance. Raises
    :class:`FitError` when the fit does not converge or the dip is absent
    (p at its upper bound, k not identifiable).
    """
    usable = hist.expected > 0
    nonempty = usable & (hist.counts > 0)
    if nonempty.sum() < 5:
        raise FitError("fewer than 5 nonempty bins", {"nonempty_bins": int(nonempty.sum())})
    lo, hi = hist.edges[:-1][usable], hist.edges[1:][usable]
    counts = hist.counts[usable].astype(float)
    expected = hist.expected[usable]
    y = counts / expected
    sigma = np.sqrt(np.maximum(counts, 1.0)) / expected
    tau = 0.5 * (lo + hi)
    k0, p0 = _initial_guess(tau, y, hist.bin_width)

    def residuals(theta):
        return (y - decay_model(theta[0], theta[1], lo, hi)) / sigma

    res = least_squares(residuals, x0=[k0, p0], bounds=([1e-12, 0.0], [np.inf, 1.0]),
                        x_scale="jac", ftol=1e-15, xtol=1e-15, gtol=1e-15,
                        max_nfev=max_evaluations)
    k_hat, p_hat = (float(v) for v in res.x)
    dof = max(counts.size - 2, 1)
    chi2 = float(np.sum(res.fun**2))
    diagnostics = {"status": int(res.status), "message": res.message, "nfev": int(res.nfev),
                   "k_init": k0, "p_init": p0, "k_hat": k_hat, "p_hat": p_hat}
    if res.status <= 0:
        raise FitError(f"decay fit did not converge: {res.message}", diagnostics)
    if p_hat >= _P_CEILING:
        raise FitError("no dip: p reached 1 and k is unidentifiable", diagnostics)
    jac = res.jac
    with np.errstate(all="ignore"):
        try:
            cov = np.linalg.inv(jac.T @ jac)
        except np.linalg.LinAlgError:
            cov = np.full((2, 2), np.nan)
    if not np.all(np.isfinite(cov)) or cov[0, 0] < 0 or cov[1, 1] < 0:
        raise FitError("singular covariance", diagnostics)
    if math.sqrt(cov[0, 0]) > k_hat:
        raise FitError("decay rate not determined (error exceeds value)", diagnostics)
    span = hist.edges[1:][nonempty].max() - hist.edges[:-1][nonempty].min()
    if span < 3.0 / k_hat:
        raise FitError(f"nonempty bins span {span:.3g} ns, less than 3/k", diagnostics)
    return FitResult(k_hat, p_hat, cov, float(math.sqrt(chi2)), chi2 / dof, int(counts.size),
                     diagnostics)
