"""Seeded Monte Carlo generator of gated camera frame stacks.

Emitter model
-------------
A cw emitter is the superposition of two independent processes sharing one
blink/bleach state:

* a two-level (ground/excited) Markov chain with excitation rate ``r`` and
  emission rate ``g``, ``r + g = k``, whose photons have pair correlation
  ``1 - exp(-k|tau|)``;
* a Poisson stream.

If the chain carries a fraction ``f`` of the photon rate, the pair
correlation of the sum is ``1 - f**2 exp(-k|tau|)``, so ``f = sqrt(1 - p)``
reproduces ``1 - (1 - p) exp(-k|tau|)`` exactly, for every gate width. The
total emitted rate is fixed at ``k / 4`` (the chain at saturation, r = g,
when p = 0). Collected photons are an independent thinning of the emitted
ones, which leaves every normalized correlation unchanged.

A pulsed emitter is excited once at the start of each gate, emits one photon
after an exponential delay (rate k, truncated to the gate) and, with
probability p, a second one.

Random numbers
--------------
Every random quantity is drawn from a Philox stream keyed by
``(seed, purpose, chunk, object, emitter)``; frames are generated in fixed
chunks of ``CHUNK_FRAMES``, so results do not depend on the worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from .core_model import EmitterParams, GateConfig
from .errors import CapabilityError, ConfigurationError, ParameterError
from .frames import ANALOG, BINARY, ControlFrame, FrameStack, PhotonTimes

CHUNK_FRAMES = 1 << 15

# substream purposes
_STATE, _PHOTONS, _DARK, _READOUT, _DRIFT, _CONTROL, _STREAM = range(7)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one (purpose, chunk, object, emitter) key."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))))


# ---------------------------------------------------------------------------
# configuration types

@dataclass(frozen=True)
class ExcitationField:
    """Excitation intensity I over the grid (arbitrary units).

    ``kind`` is ``"uniform"`` or ``"gaussian"``; a Gaussian field falls off as
    ``exp(-2 r^2 / waist^2)`` around ``center``.
    """

    kind: str = "uniform"
    peak: float = 1.0
    center: Tuple[float, float] = (0.0, 0.0)
    waist: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.kind not in ("uniform", "gaussian"):
            raise ConfigurationError(f"unknown excitation field kind {self.kind!r}")
        if not self.peak >= 0:
            raise ConfigurationError("excitation peak must be >= 0")
        if self.kind == "gaussian" and not self.waist > 0:
            raise ConfigurationError("gaussian excitation needs waist > 0")

    def intensity(self, x: float, y: float) -> float:
        if self.kind == "uniform":
            return self.peak
        r2 = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
        return self.peak * math.exp(-2.0 * r2 / self.waist**2)


@dataclass(frozen=True)
class ObjectSpec:
    center: Tuple[float, float]
    emitters: Tuple[EmitterParams, ...]
    psf_sigma: float = 1.0
    # photon counting statistics do not depend on the mode structure of
    # independent emitters; recorded for bookkeeping only
    same_mode: bool = False

    def __post_init__(self):
        object.__setattr__(self, "emitters", tuple(self.emitters))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.emitters:
            raise ConfigurationError("an object needs at least one emitter")
        if not self.psf_sigma >= 0:
            raise ConfigurationError("psf_sigma must be >= 0")

    @property
    def m(self) -> int:
        return len(self.emitters)


@dataclass(frozen=True)
class SceneSpec:
    objects: Tuple[ObjectSpec, ...]
    grid_width: int
    grid_height: int
    excitation: ExcitationField = ExcitationField()
    normalization_alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.grid_width < 1 or self.grid_height < 1:
            raise ConfigurationError("grid dimensions must be positive")
        if self.grid_width > 65535 or self.grid_height > 65535:
            raise ConfigurationError("grid dimensions must fit in 16 bits")
        if not self.normalization_alpha >= 0:
            raise ConfigurationError("normalization_alpha must be >= 0")
        for i, obj in enumerate(self.objects):
            x, y = obj.center
            if not (-0.5 <= x < self.grid_width - 0.5 and -0.5 <= y < self.grid_height - 0.5):
                raise ConfigurationError(f"object {i} centre {obj.center} lies outside the grid")

    def normalized_intensity(self, x: float, y: float) -> float:
        """I~ = alpha * I at a grid position."""
        return self.normalization_alpha * self.excitation.intensity(x, y)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class CameraConfig:
    gate: GateConfig = GateConfig()
    binning: int = 4
    quantum_efficiency: float = 1.0
    dark_event_rate: float = 0.0
    readout_photon_mean: float = 900.0
    readout_photon_sd: float = 100.0
    readout_empty_mean: float = 640.0
    readout_empty_sd: float = 30.0
    splitter_ratio: float = 0.5
    image_offset_b: Tuple[float, float] = (0.0, 0.0)
    mode: str = BINARY

    def __post_init__(self):
        object.__setattr__(self, "image_offset_b", tuple(float(v) for v in self.image_offset_b))
        if self.binning < 1:
            raise ConfigurationError("binning must be >= 1")
        if not 0 <= self.quantum_efficiency <= 1:
            raise ConfigurationError("quantum_efficiency must lie in [0, 1]")
        if not 0 <= self.splitter_ratio <= 1:
            raise ConfigurationError("splitter_ratio must lie in [0, 1]")
        if not (math.isfinite(self.dark_event_rate) and self.dark_event_rate >= 0):
            raise ConfigurationError("dark_event_rate must be >= 0")
        if not (self.readout_photon_mean > 0 and self.readout_empty_mean > 0):
            raise ConfigurationError("readout means must be positive")
        if self.readout_photon_sd < 0 or self.readout_empty_sd < 0:
            raise ConfigurationError("readout spreads must be >= 0")
        if self.mode not in (BINARY, ANALOG):
            raise ConfigurationError(f"camera mode must be {BINARY!r} or {ANALOG!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DriftModel:
    """Rigid random walk of the whole image plus periodic control frames.

    ``control_accumulate`` is the exposure of a control frame in units of
    standard gates.
    """

    kind: str = "none"
    step_sd: float = 0.0
    control_frame_interval: int = 10_000
    control_accumulate: int = 10_000

    def __post_init__(self):
        if self.kind not in ("none", "random-walk"):
            raise ConfigurationError(f"unknown drift kind {self.kind!r}")
        if not self.step_sd >= 0:
            raise ConfigurationError("step_sd must be >= 0")
        if self.control_frame_interval < 1:
            raise ConfigurationError("control_frame_interval must be > 0")
        if self.control_accumulate < 1:
            raise ConfigurationError("control_accumulate must be >= 1")

    def max_excursion(self, n_frames: int) -> float:
        if self.kind == "none":
            return 0.0
        return 5.0 * self.step_sd * math.sqrt(n_frames)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# emitter process

def _chain_rates(emitter: EmitterParams):
    """(excitation, emission) rates of the antibunched component and its photon share."""
    k = emitter.decay_rate
    share = math.sqrt(1.0 - emitter.two_photon_prob)
    spread = math.sqrt(max(0.0, 1.0 - share))
    return 0.5 * k * (1.0 - spread), 0.5 * k * (1.0 + spread), share


def emitted_per_gate(emitter: EmitterParams, gate_width: float) -> float:
    """Mean number of photons emitted (before collection) in one gate."""
    if emitter.excitation == "pulsed":
        return 1.0 + emitter.two_photon_prob
    return 0.25 * emitter.decay_rate * gate_width


def collection_probability(emitter: EmitterParams, gate_width: float, intensity: float) -> float:
    target = emitter.brightness_coeff * intensity
    emitted = emitted_per_gate(emitter, gate_width)
    prob = target / emitted
    if prob > 1.0 + 1e-12:
        raise ConfigurationError(
            f"brightness_coeff * I~ = {target:.4g} collected photons per gate exceeds the "
            f"emitter's output of {emitted:.4g} per gate")
    return min(prob, 1.0)


def simulate_gates(emitter: EmitterParams, gate, n_gates: int, rng: np.random.Generator,
                   intensity: float = 1.0):
    """Collected photons of ``n_gates`` independent gates.

    Returns ``(gate_index, time)`` arrays sorted by gate then time; times are
    in ns from the start of the gate.
    """
    width = gate.gate_width if isinstance(gate, GateConfig) else float(gate)
    collect = collection_probability(emitter, width, intensity)
    if collect == 0.0 or n_gates == 0:
        return np.zeros(0, np.int64), np.zeros(0)
    k = emitter.decay_rate
    if emitter.excitation == "pulsed":
        idx, t = _pulsed_gates(rng, k, emitter.two_photon_prob, width, n_gates, collect)
    else:
        idx, t = _cw_gates(rng, emitter, width, n_gates, collect)
    order = np.lexsort((t, idx))
    return idx[order], t[order]


def _truncated_exponential(rng, k, width, size):
    u = rng.random(size)
    return -np.log1p(-u * -math.expm1(-k * width)) / k


def _pulsed_gates(rng, k, p, width, n_gates, collect):
    second = np.flatnonzero(rng.random(n_gates) < p)
    idx = np.concatenate([np.arange(n_gates), second])
    t = _truncated_exponential(rng, k, width, idx.size)
    keep = rng.random(idx.size) < collect
    return idx[keep], t[keep]


def _cw_gates(rng, emitter, width, n_gates, collect):
    r, g, share = _chain_rates(emitter)
    out_idx, out_t = [], []
    if r > 0:
        # stationary start: excited with probability r / (r + g)
        idx = np.arange(n_gates)
        excited = rng.random(n_gates) < r / (r + g)
        t = rng.exponential(1.0 / g, n_gates)
        t[~excited] += rng.exponential(1.0 / r, int(n_gates - excited.sum()))
        while idx.size:
            inside = t < width
            idx, t = idx[inside], t[inside]
            if not idx.size:
                break
            hit = rng.random(idx.size) < collect
            out_idx.append(idx[hit])
            out_t.append(t[hit])
            t = t + rng.exponential(1.0 / r, idx.size) + rng.exponential(1.0 / g, idx.size)
    poisson_rate = (1.0 - share) * 0.25 * emitter.decay_rate
    if poisson_rate > 0:
        counts = rng.poisson(poisson_rate * width * collect, n_gates)
        idx = np.repeat(np.arange(n_gates), counts)
        out_idx.append(idx)
        out_t.append(rng.random(idx.size) * width)
    if not out_idx:
        return np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(out_idx).astype(np.int64), np.concatenate(out_t)


def simulate_gate_photons(emitter: EmitterParams, gate, rng: np.random.Generator,
                          intensity: float = 1.0) -> np.ndarray:
    """Collected photon emission times (ns) of a single gate."""
    return simulate_gates(emitter, gate, 1, rng, intensity)[1]


def simulate_photon_stream(emitter: EmitterParams, duration: float, rng: np.random.Generator,
                           efficiency: float = 1.0) -> np.ndarray:
    """Continuous cw photon arrival times over ``duration`` ns, thinned by ``efficiency``."""
    if emitter.excitation != "cw":
        raise CapabilityError("continuous streams are only defined for cw emitters")
    r, g, share = _chain_rates(emitter)
    pieces = []
    if r > 0:
        rate = r * g / (r + g)
        t0 = rng.exponential(1.0 / g) + (0.0 if rng.random() < r / (r + g)
                                         else rng.exponential(1.0 / r))
        times = [np.array([t0])]
        last = t0
        while last < duration:
            n = int((duration - last) * rate * 1.05) + 1000
            steps = rng.exponential(1.0 / r, n) + rng.exponential(1.0 / g, n)
            block = last + np.cumsum(steps)
            times.append(block)
            last = block[-1]
        chain = np.concatenate(times)
        pieces.append(chain[chain < duration])
    poisson_rate = (1.0 - share) * 0.25 * emitter.decay_rate
    if poisson_rate > 0:
        n = rng.poisson(poisson_rate * duration)
        pieces.append(rng.random(n) * duration)
    stream = np.sort(np.concatenate(pieces)) if pieces else np.zeros(0)
    if efficiency < 1.0:
        stream = stream[rng.random(stream.size) < efficiency]
    return stream


def split_stream(times: np.ndarray, rng: np.random.Generator, ratio: float = 0.5):
    """Route each photon to detector A with probability ``ratio``, else B."""
    to_a = rng.random(times.size) < ratio
    return times[to_a], times[~to_a]


def active_frames(emitter: EmitterParams, n_frames: int, frame_period_ms: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Boolean on-state of an emitter at every frame (blinking and bleaching)."""
    t = np.arange(n_frames) * (frame_period_ms * 1e-3)
    active = np.ones(n_frames, bool)
    if n_frames == 0:
        return active
    horizon = t[-1]
    on, off = emitter.blink_on_rate, emitter.blink_off_rate
    if off > 0:
        state_on = True if on == 0 else rng.random() < on / (on + off)
        switches = []
        clock, current = 0.0, state_on
        while clock <= horizon:
            rate = off if current else on
            if rate == 0:
                break
            n = 256
            scale = np.where(np.arange(n) % 2 == 0, 1.0 / rate,
                             1.0 / (on if current else off) if (on if current else off) > 0
                             else np.inf)
            dwell = rng.exponential(1.0, n) * scale
            block = clock + np.cumsum(dwell)
            finite = np.isfinite(block)
            switches.append(block[finite])
            if not finite.all():
                break
            clock = block[-1]
        edges = np.concatenate(switches) if switches else np.zeros(0)
        flips = np.searchsorted(edges, t, side="right")
        active = (flips % 2 == 0) == state_on
    if emitter.bleach_rate > 0:
        death = rng.exponential(1.0 / emitter.bleach_rate)
        active &= t < death
    return active


def drift_track(drift: DriftModel, n_frames: int, seed: int) -> np.ndarray:
    """(n_frames, 2) rigid image offset in superpixels; zero at frame 0."""
    track = np.zeros((n_frames, 2))
    if drift.kind == "random-walk" and drift.step_sd > 0 and n_frames > 1:
        steps = substream(seed, _DRIFT).normal(0.0, drift.step_sd, (n_frames - 1, 2))
        track[1:] = np.cumsum(steps, axis=0)
    return track


# ---------------------------------------------------------------------------
# camera

def psf_weights(center, sigma: float, width: int, height: int) -> np.ndarray:
    """Fraction of a Gaussian spot landing on each superpixel, shape (height, width).

    Superpixel ``i`` covers ``[i - 0.5, i + 0.5)``.
    """
    cx, cy = center
    if sigma == 0:
        out = np.zeros((height, width))
        ix, iy = int(math.floor(cx + 0.5)), int(math.floor(cy + 0.5))
        if 0 <= ix < width and 0 <= iy < height:
            out[iy, ix] = 1.0
        return out
    ex = np.arange(width + 1) - 0.5
    ey = np.arange(height + 1) - 0.5
    wx = np.diff(ndtr((ex - cx) / sigma))
    wy = np.diff(ndtr((ey - cy) / sigma))
    return np.outer(wy, wx)


def object_gate_mean(scene: SceneSpec, obj: ObjectSpec, camera: CameraConfig,
                     active: Optional[Sequence[bool]] = None) -> float:
    """Expected detected photons per gate from one object, both fields together."""
    intensity = scene.normalized_intensity(*obj.center)
    total = 0.0
    for i, em in enumerate(obj.emitters):
        if active is None or active[i]:
            total += em.brightness_coeff * intensity
    return total * camera.quantum_efficiency


def render_control_frame(scene: SceneSpec, camera: CameraConfig, accumulate: int,
                         shift=(0.0, 0.0), rng: Optional[np.random.Generator] = None,
                         active=None) -> np.ndarray:
    """Long-exposure count map equivalent to ``accumulate`` gates.

    With ``rng`` the map is Poisson-sampled (uint32), otherwise the expected
    counts are returned. ``active[i][j]`` switches emitter ``j`` of object
    ``i`` on or off.
    """
    if accumulate < 1:
        raise ParameterError("accumulate must be >= 1")
    w, h = scene.grid_width, scene.grid_height
    expected = np.full((h, w), camera.dark_event_rate, dtype=float)
    s = camera.splitter_ratio
    for i, obj in enumerate(scene.objects):
        mean = object_gate_mean(scene, obj, camera, None if active is None else active[i])
        if mean == 0:
            continue
        for frac, off in ((s, (0.0, 0.0)), (1.0 - s, camera.image_offset_b)):
            if frac == 0:
                continue
            c = (obj.center[0] + shift[0] + off[0], obj.center[1] + shift[1] + off[1])
            expected += mean * frac * psf_weights(c, obj.psf_sigma, w, h)
    expected *= accumulate
    if rng is None:
        return expected
    return rng.poisson(expected).astype(np.uint32)


# ---------------------------------------------------------------------------
# stack assembly

@dataclass
class _Plan:
    scene: SceneSpec
    camera: CameraConfig
    drift: DriftModel
    n_frames: int
    seed: int
    record_times: bool
    intensities: list = field(default_factory=list)
    collect: list = field(default_factory=list)
    active: list = field(default_factory=list)
    track: Optional[np.ndarray] = None


def _check_geometry(scene: SceneSpec, camera: CameraConfig, drift: DriftModel, n_frames: int):
    bound = drift.max_excursion(n_frames)
    w, h = scene.grid_width, scene.grid_height
    for i, obj in enumerate(scene.objects):
        for field_name, off in (("A", (0.0, 0.0)), ("B", camera.image_offset_b)):
            x, y = obj.center[0] + off[0], obj.center[1] + off[1]
            if not (-0.5 <= x - bound and x + bound < w - 0.5
                    and -0.5 <= y - bound and y + bound < h - 0.5):
                raise ConfigurationError(
                    f"object {i} image {field_name} at ({x:.2f}, {y:.2f}) can leave the "
                    f"{w}x{h} grid under drift (bound {bound:.2f} superpixels)")


def _make_plan(scene, camera, drift, n_frames, seed, record_times) -> _Plan:
    _check_geometry(scene, camera, drift, n_frames)
    plan = _Plan(scene, camera, drift, n_frames, seed, record_times)
    width = camera.gate.gate_width
    for i, obj in enumerate(scene.objects):
        intensity = scene.normalized_intensity(*obj.center)
        plan.intensities.append(intensity)
        plan.collect.append([collection_probability(em, width, intensity) for em in obj.emitters])
        plan.active.append([
            active_frames(em, n_frames, camera.gate.frame_period, substream(seed, _STATE, 0, i, j))
            for j, em in enumerate(obj.emitters)])
    plan.track = drift_track(drift, n_frames, seed)
    return plan


def _simulate_chunk(plan: _Plan, chunk: int):
    scene, cam = plan.scene, plan.camera
    w, h = scene.grid_width, scene.grid_height
    start = chunk * CHUNK_FRAMES
    stop = min(start + CHUNK_FRAMES, plan.n_frames)
    n = stop - start
    frames, xs, ys, fields, times = [], [], [], [], []
    for i, obj in enumerate(scene.objects):
        for j, em in enumerate(obj.emitters):
            if plan.collect[i][j] == 0:
                continue
            rng = substream(plan.seed, _PHOTONS, chunk, i, j)
            gates = np.flatnonzero(plan.active[i][j][start:stop])
            gi, t = simulate_gates(em, cam.gate, gates.size, rng, plan.intensities[i])
            local = gates[gi]
            to_b = rng.random(local.size) >= cam.splitter_ratio
            seen = rng.random(local.size) < cam.quantum_efficiency
            local, t, to_b = local[seen], t[seen], to_b[seen]
            shift = plan.track[start + local]
            px = obj.center[0] + shift[:, 0] + np.where(to_b, cam.image_offset_b[0], 0.0)
            py = obj.center[1] + shift[:, 1] + np.where(to_b, cam.image_offset_b[1], 0.0)
            px = px + obj.psf_sigma * rng.standard_normal(local.size)
            py = py + obj.psf_sigma * rng.standard_normal(local.size)
            ix = np.floor(px + 0.5).astype(np.int64)
            iy = np.floor(py + 0.5).astype(np.int64)
            ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
            frames.append(local[ok])
            xs.append(ix[ok])
            ys.append(iy[ok])
            fields.append(to_b[ok])
            times.append(t[ok])
    n_photon = sum(a.size for a in frames)
    if cam.dark_event_rate > 0:
        rng = substream(plan.seed, _DARK, chunk)
        counts = rng.poisson(cam.dark_event_rate * w * h, n)
        total = int(counts.sum())
        frames.append(np.repeat(np.arange(n), counts))
        xs.append(rng.integers(0, w, total))
        ys.append(rng.integers(0, h, total))
    if frames:
        frame = np.concatenate(frames).astype(np.int64)
        key = (frame * h + np.concatenate(ys).astype(np.int64)) * w + np.concatenate(xs)
    else:
        key = np.zeros(0, np.int64)
    is_photon = np.zeros(key.size, bool)
    is_photon[:n_photon] = True
    uniq, inverse = np.unique(key, return_inverse=True)
    hit = np.zeros(uniq.size, bool)
    hit[inverse[is_photon]] = True
    frame_u, rem = np.divmod(uniq, w * h)
    y_u, x_u = np.divmod(rem, w)
    counts = np.bincount(frame_u, minlength=n)
    signal = None
    if cam.mode == ANALOG:
        z = substream(plan.seed, _READOUT, chunk).standard_normal(uniq.size)
        signal = np.where(hit, cam.readout_photon_mean + cam.readout_photon_sd * z,
                          cam.readout_empty_mean + cam.readout_empty_sd * z).astype(np.float32)
    side = None
    if plan.record_times and n_photon:
        side = (np.concatenate(frames[:len(times)]) + start, np.concatenate(fields),
                np.concatenate(times))
    return counts, x_u, y_u, signal, side


def _stack_metadata(scene, camera, drift, n_frames, seed) -> dict:
    return {
        "generator": "photocorr.sim_engine",
        "seed": int(seed),
        "frame_count": int(n_frames),
        "scene_digest": scene.digest(),
        "scene": scene.to_dict(),
        "camera": camera.to_dict(),
        "drift": drift.to_dict(),
    }


def simulate_stack(scene: SceneSpec, camera: CameraConfig, drift: DriftModel, n_frames: int,
                   seed: int, record_times: bool = False, workers: int = 1) -> FrameStack:
    """Simulate ``n_frames`` gated frames of ``scene``.

    The result is fully determined by the arguments except ``workers``,
    which only changes how many chunks are generated concurrently.
    ``record_times`` attaches the per-photon arrival times (before the
    per-superpixel collapse) as :attr:`FrameStack.photon_times`.
    """
    if int(n_frames) != n_frames or n_frames < 1:
        raise ParameterError("n_frames must be >= 1")
    n_frames = int(n_frames)
    plan = _make_plan(scene, camera, drift, n_frames, seed, record_times)
    n_chunks = -(-n_frames // CHUNK_FRAMES)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _simulate_chunk(plan, c), range(n_chunks)))
    else:
        parts = [_simulate_chunk(plan, c) for c in range(n_chunks)]

    counts = np.concatenate([p[0] for p in parts])
    offsets = np.zeros(n_frames + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    x = np.concatenate([p[1] for p in parts]).astype(np.uint16)
    y = np.concatenate([p[2] for p in parts]).astype(np.uint16)
    signal = np.concatenate([p[3] for p in parts]) if camera.mode == ANALOG else None
    stack = FrameStack(camera.mode, scene.grid_width, scene.grid_height, offsets, x, y, signal,
                       _stack_metadata(scene, camera, drift, n_frames, seed))
    stack.control_frames = _control_frames(plan)
    if record_times:
        sides = [p[4] for p in parts if p[4] is not None]
        if sides:
            stack.photon_times = PhotonTimes(*(np.concatenate([s[i] for s in sides])
                                               for i in range(3)))
        else:
            stack.photon_times = PhotonTimes(np.zeros(0, np.int64), np.zeros(0, bool), np.zeros(0))
    return stack


def _control_frames(plan: _Plan):
    out = []
    interval = plan.drift.control_frame_interval
    for j, index in enumerate(range(0, plan.n_frames, interval)):
        active = [[bool(a[index]) for a in obj_active] for obj_active in plan.active]
        counts = render_control_frame(plan.scene, plan.camera, plan.drift.control_accumulate,
                                      tuple(plan.track[index]),
                                      substream(plan.seed, _CONTROL, j), active)
        out.append(ControlFrame(index, counts))
    return out


def with_gate_width(camera: CameraConfig, gate_width: float) -> CameraConfig:
    return replace(camera, gate=replace(camera.gate, gate_width=gate_width))
