"""Closed-form photon statistics.

Everything here is a pure function of its arguments. The simulator and the
estimators are validated against these expressions, so nothing in this
module may depend on either of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ParameterError, UndefinedRatioError, NoAntibunchingError

# kT below this uses the power series of the gate average
_SERIES_SWITCH = 1.0
_SERIES_TERMS = 22
_CHAIN_TOL = 1e-12
_NORM_TOL = 1e-12
_POISSON_TAIL = 1e-15

EXCITATION_MODES = ("cw", "pulsed")


@dataclass(frozen=True)
class EmitterParams:
    """Stochastic model of one emitter.

    Attributes:
        decay_rate: recovery rate of the antibunching dip, 1/ns.
        two_photon_prob: value of the pair correlation at zero delay.
        brightness_coeff: expected collected photons per gate per unit
            normalized excitation intensity.
        blink_on_rate, blink_off_rate: off->on and on->off switching rates, 1/s.
        bleach_rate: irreversible bleaching rate, 1/s.
        excitation: ``"cw"`` for continuous pumping during the gate, or
            ``"pulsed"`` for a single excitation at the start of each gate.
    """

    decay_rate: float = 0.1
    two_photon_prob: float = 0.22
    brightness_coeff: float = 1.0
    blink_on_rate: float = 0.0
    blink_off_rate: float = 0.0
    bleach_rate: float = 0.0
    excitation: str = "cw"

    def __post_init__(self):
        if not (math.isfinite(self.decay_rate) and self.decay_rate > 0):
            raise ParameterError(f"decay_rate must be > 0, got {self.decay_rate}")
        if not 0.0 <= self.two_photon_prob <= 1.0:
            raise ParameterError(
                f"two_photon_prob must lie in [0, 1], got {self.two_photon_prob}")
        for name in ("brightness_coeff", "blink_on_rate", "blink_off_rate", "bleach_rate"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ParameterError(f"{name} must be finite and >= 0, got {value}")
        if self.excitation not in EXCITATION_MODES:
            raise ParameterError(f"excitation must be one of {EXCITATION_MODES}")


@dataclass(frozen=True)
class GateConfig:
    """Gate width in ns and the time between successive gates in ms."""

    gate_width: float = 10.0
    frame_period: float = 33.3

    def __post_init__(self):
        if not (math.isfinite(self.gate_width) and self.gate_width > 0):
            raise ParameterError(f"gate_width must be > 0 ns, got {self.gate_width}")
        if not self.frame_period * 1e6 > self.gate_width:
            raise ParameterError("frame_period must exceed the gate width")


@dataclass(frozen=True)
class LossChannel:
    efficiency: float

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ParameterError(f"efficiency must lie in [0, 1], got {self.efficiency}")

    @property
    def transmission(self) -> float:
        return math.sqrt(self.efficiency)

    @property
    def reflection(self) -> float:
        return math.sqrt(1.0 - self.efficiency)


class PhotonNumberDist:
    """Probabilities p_0 ... p_max of detecting k photons."""

    __slots__ = ("probs",)

    def __init__(self, probs: Sequence[float]):
        arr = np.array(probs, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ParameterError("a photon-number distribution needs at least one entry")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ParameterError("photon-number probabilities must be finite and >= 0")
        if abs(math.fsum(arr) - 1.0) > _NORM_TOL:
            raise ParameterError(
                f"photon-number probabilities sum to {math.fsum(arr)!r}, not 1")
        arr.setflags(write=False)
        self.probs = arr

    @classmethod
    def from_counts(cls, histogram: Sequence[float]) -> "PhotonNumberDist":
        """Normalize a histogram of per-frame photon counts."""
        h = np.asarray(histogram, dtype=float)
        total = math.fsum(h)
        if total <= 0:
            raise ParameterError("empty count histogram")
        probs = h / total
        # renormalize the largest entry so the sum is 1 to rounding
        probs[np.argmax(probs)] += 1.0 - math.fsum(probs)
        return cls(np.clip(probs, 0.0, None))

    @classmethod
    def poisson(cls, mean: float) -> "PhotonNumberDist":
        """Poisson distribution truncated where the remaining tail is below 1e-15."""
        if mean < 0:
            raise ParameterError("Poisson mean must be >= 0")
        probs = [math.exp(-mean)]
        tail = 1.0 - probs[0]
        k = 0
        while tail > _POISSON_TAIL and k < 10_000:
            k += 1
            probs.append(probs[-1] * mean / k)
            tail -= probs[-1]
        probs = np.array(probs)
        return cls(probs / math.fsum(probs))

    @classmethod
    def fock(cls, n: int) -> "PhotonNumberDist":
        probs = np.zeros(n + 1)
        probs[n] = 1.0
        return cls(probs)

    def __len__(self):
        return self.probs.size

    def __getitem__(self, k: int) -> float:
        if k < 0 or k >= self.probs.size:
            return 0.0
        return float(self.probs[k])

    def __eq__(self, other):
        return isinstance(other, PhotonNumberDist) and np.array_equal(self.probs, other.probs)

    def __repr__(self):
        return f"PhotonNumberDist({self.probs.tolist()!r})"

    @property
    def max_photons(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        return math.fsum(self.probs * np.arange(self.probs.size))


Gate = Union[GateConfig, float]


def _gate_width(gate: Gate) -> float:
    if isinstance(gate, GateConfig):
        return gate.gate_width
    width = float(gate)
    if not (math.isfinite(width) and width > 0):
        raise ParameterError(f"gate width must be > 0 ns, got {gate}")
    return width


def g2_pair_time(params: EmitterParams, tau: float) -> float:
    """Pair correlation of one emitter at delay ``tau`` (ns)."""
    if not math.isfinite(tau):
        raise ParameterError("tau must be finite")
    p = params.two_photon_prob
    return 1.0 - (1.0 - p) * math.exp(-params.decay_rate * abs(tau))


def gate_average_factor(x: float) -> float:
    """Mean of exp(-|t1 - t2|) over the unit square scaled to kT = x.

    Equals 2/x + 2/x**2 * (exp(-x) - 1). The closed form cancels badly for
    small x, where the series sum_n 2 (-x)^n / (n + 2)! is used instead.
    """
    if x < 0:
        raise ParameterError("kT must be >= 0")
    if x < _SERIES_SWITCH:
        total = 0.0
        term = 1.0  # 2 / 2!
        for n in range(_SERIES_TERMS):
            total += term
            term *= -x / (n + 3)
        return total
    return 2.0 / x + 2.0 * math.expm1(-x) / (x * x)


def g2_integrated(params: EmitterParams, gate: Gate) -> float:
    """Gate-integrated g2 of one emitter for a gate of width T_g."""
    x = params.decay_rate * _gate_width(gate)
    return 1.0 - (1.0 - params.two_photon_prob) * gate_average_factor(x)


def g2_m_emitters(g2_single: float, m: int) -> float:
    """g2 of m independent, equally bright emitters."""
    if g2_single < 0:
        raise ParameterError("g2_single must be >= 0")
    if int(m) != m or m < 1:
        raise ParameterError(f"m must be a positive integer, got {m}")
    return 1.0 + (g2_single - 1.0) / m


def invert_m(g2_single: float, g2_observed: float) -> float:
    """Real-valued emitter count implied by an observed g2."""
    if g2_single >= 1:
        raise ParameterError("g2_single must be < 1 for the count to be defined")
    if g2_observed >= 1:
        raise NoAntibunchingError(
            f"observed g2 = {g2_observed} shows no antibunching; emitter count indeterminate")
    return (1.0 - g2_single) / (1.0 - g2_observed)


def binomial_loss_dist(n_photons: int, channel: LossChannel) -> PhotonNumberDist:
    """Detected photon number of an N-photon Fock state after a lossy channel."""
    if int(n_photons) != n_photons or n_photons < 0:
        raise ParameterError("photon number must be a non-negative integer")
    n = int(n_photons)
    eta = channel.efficiency
    probs = [math.comb(n, k) * eta**k * (1.0 - eta) ** (n - k) for k in range(n + 1)]
    total = math.fsum(probs)
    return PhotonNumberDist([q / total for q in probs])


def klyshko_ratio(dist: PhotonNumberDist, k: int) -> float:
    """((k+1)/k) p_{k+1} p_{k-1} / p_k^2; values below 1 are nonclassical."""
    if int(k) != k or k < 1:
        raise ParameterError("k must be a positive integer")
    pk, above, below = dist[k], dist[k + 1], dist[k - 1]
    if pk == 0:
        raise UndefinedRatioError(f"p_{k} = 0, ratio undefined")
    if above == 0 or below == 0:
        return 0.0
    # neighbour ratios keep tiny p_k from underflowing when squared
    ratio = (above / pk) * (below / pk)
    if ratio == 0 or not math.isfinite(ratio):
        ratio = math.exp(math.log(above) + math.log(below) - 2.0 * math.log(pk))
    return (k + 1) / k * ratio


def factorial_moment(dist: PhotonNumberDist, n: int) -> float:
    """Unnormalized factorial moment <k(k-1)...(k-n+1)>."""
    ks = np.arange(dist.probs.size, dtype=float)
    falling = np.ones_like(ks)
    for j in range(n):
        falling *= np.clip(ks - j, 0.0, None)
    return math.fsum(falling * dist.probs)


def factorial_moment_gn(dist: PhotonNumberDist, n: int) -> float:
    """Normalized n-th order factorial moment; order 0 is 1 by convention."""
    if int(n) != n or n < 0:
        raise ParameterError("order must be a non-negative integer")
    if n == 0:
        return 1.0
    mean = dist.mean()
    if mean <= 0:
        raise UndefinedRatioError("zero-mean distribution, g(n) undefined")
    return factorial_moment(dist, n) / mean**n


@dataclass(frozen=True)
class ChainResult:
    order: int
    g_lower: float
    g_order: float
    g_upper: float
    nonclassical: bool


def check_chain_inequality(dist: PhotonNumberDist, order: int) -> ChainResult:
    """Test g(N-1) g(N+1) < g(N)^2 at N = ``order``."""
    if int(order) != order or order < 1:
        raise ParameterError("order must be a positive integer")
    lo = factorial_moment_gn(dist, order - 1)
    mid = factorial_moment_gn(dist, order)
    hi = factorial_moment_gn(dist, order + 1)
    # tolerance scales with g(N)^2: for large Fock states g(N) itself is ~1e-12
    return ChainResult(order, lo, mid, hi, lo * hi < mid * mid * (1.0 - _CHAIN_TOL))


def cluster_dist(m: int, per_gate_dist_single: PhotonNumberDist) -> PhotonNumberDist:
    """Photon-number distribution of m independent copies of one emitter."""
    if int(m) != m or m < 1:
        raise ParameterError("m must be a positive integer")
    probs = np.array([1.0])
    for _ in range(int(m)):
        probs = np.convolve(probs, per_gate_dist_single.probs)
    probs = np.clip(probs, 0.0, None)
    return PhotonNumberDist(probs / math.fsum(probs))


def predict_gn_cluster(m: int, per_gate_dist_single: PhotonNumberDist, n: int) -> float:
    """n-th order normalized moment for a cluster of m independent emitters."""
    return factorial_moment_gn(cluster_dist(m, per_gate_dist_single), n)
