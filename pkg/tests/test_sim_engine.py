import io
import math

import numpy as np
import pytest

from photocorr import frame_store
from photocorr.core_model import EmitterParams, GateConfig, g2_integrated, g2_m_emitters
from photocorr.errors import CapabilityError, ConfigurationError, ParameterError
from photocorr.estimators.brightness import estimate_brightness
from photocorr.estimators.correlation import estimate_g2_zero
from photocorr.estimators.drift import register_drift
from photocorr.estimators.higher_order import gn_from_histogram
from photocorr.estimators.regions import disc_region
from photocorr.frames import ANALOG
from photocorr.sim_engine import (CHUNK_FRAMES, CameraConfig, DriftModel, ExcitationField,
                                  ObjectSpec, SceneSpec, active_frames, collection_probability,
                                  drift_track, emitted_per_gate, psf_weights,
                                  render_control_frame, simulate_gate_photons, simulate_gates,
                                  simulate_photon_stream, simulate_stack, substream,
                                  with_gate_width)

OFFSET = (0.0, 20.0)


def emitter(coeff=20.0, **kw):
    return EmitterParams(decay_rate=0.1, two_photon_prob=0.22, brightness_coeff=coeff, **kw)


def row_scene(ms, coeff=20.0, alpha=0.005, spacing=10, psf=1.0, margin=6, **kw):
    """Objects in a row at y = margin; field B is the same row shifted down by OFFSET."""
    objs = [ObjectSpec((margin + spacing * i, margin), [emitter(coeff, **kw)] * m,
                       psf_sigma=psf) for i, m in enumerate(ms)]
    width = 2 * margin + spacing * (len(ms) - 1) + 1
    height = int(2 * margin + OFFSET[1] + 1)
    return SceneSpec(objs, width, height, normalization_alpha=alpha)


def camera(**kw):
    kw.setdefault("image_offset_b", OFFSET)
    return CameraConfig(**kw)


def regions_for(scene, radius=3.0):
    return [disc_region(i, o.center, radius, OFFSET) for i, o in enumerate(scene.objects)]


def per_gate_g2(em, width, n_gates, seed):
    """g2 from the photon-number histogram of simulated gates."""
    gi, _ = simulate_gates(em, width, n_gates, substream(seed, 77), 1.0)
    counts = np.bincount(gi, minlength=n_gates)
    return gn_from_histogram(np.bincount(counts), 2)


class TestGatePhotons:
    def test_dark_emitter_is_empty(self, rng):
        em = emitter(coeff=0.0)
        for _ in range(20):
            assert simulate_gate_photons(em, GateConfig(10.0), rng).size == 0
        gi, t = simulate_gates(em, 10.0, 1000, rng)
        assert gi.size == 0 and t.size == 0

    @pytest.mark.parametrize("p, oracle", [
        (0.0, 0.2642411176571153),   # 1 - F(1), F(x) = 2/x + 2(e^-x - 1)/x^2
        (0.22, 0.4261080717725),     # 1 - 0.78 F(1)
    ])
    def test_gate_integrated_g2(self, p, oracle):
        em = EmitterParams(0.1, p, brightness_coeff=0.25)  # collection probability 1
        assert g2_integrated(em, 10.0) == pytest.approx(oracle, abs=1e-12)
        est = per_gate_g2(em, 10.0, 1_000_000, seed=int(p * 100) + 1)
        assert abs(est.value - oracle) < 3 * est.stderr

    @pytest.mark.parametrize("width", [15.0, 40.0])
    def test_gate_integrated_g2_other_widths(self, width):
        em = EmitterParams(0.1, 0.22, brightness_coeff=0.025 * width)
        est = per_gate_g2(em, width, 400_000, seed=int(width))
        assert abs(est.value - g2_integrated(em, width)) < 3 * est.stderr

    def test_times_inside_gate_and_sorted(self, rng):
        em = EmitterParams(0.1, 0.5, brightness_coeff=1.0)
        gi, t = simulate_gates(em, 10.0, 5000, rng, intensity=0.2)
        assert np.all((t >= 0) & (t <= 10.0))
        order = np.lexsort((t, gi))
        assert np.array_equal(order, np.arange(gi.size))

    def test_mean_photons_per_gate(self):
        em = emitter(coeff=20.0)
        n = 400_000
        gi, _ = simulate_gates(em, 10.0, n, substream(5, 1), 0.005)
        counts = np.bincount(gi, minlength=n)
        assert abs(counts.mean() - 0.1) < 3 * counts.std() / math.sqrt(n)

    def test_pulsed_without_two_photon_emission_is_single(self, rng):
        em = EmitterParams(0.1, 0.0, brightness_coeff=0.5, excitation="pulsed")
        gi, _ = simulate_gates(em, 10.0, 20000, rng)
        assert np.bincount(gi).max() == 1
        assert abs(gi.size / 20000 - 0.5) < 0.02

    def test_too_bright_rejected(self):
        em = emitter(coeff=1.0)
        assert emitted_per_gate(em, 10.0) == pytest.approx(0.25)
        with pytest.raises(ConfigurationError):
            collection_probability(em, 10.0, 0.3)

    def test_stream_only_for_cw(self, rng):
        with pytest.raises(CapabilityError):
            simulate_photon_stream(emitter(excitation="pulsed"), 100.0, rng)

    def test_stream_rate(self):
        em = emitter()
        t = simulate_photon_stream(em, 1e6, substream(3, 2))
        assert np.all(np.diff(t) >= 0)
        # emitted rate is k / 4
        assert t.size / 1e6 == pytest.approx(0.025, rel=0.02)


class TestStates:
    def test_always_on_by_default(self, rng):
        assert active_frames(emitter(), 1000, 33.3, rng).all()

    def test_blinking_duty_cycle(self):
        em = emitter(blink_on_rate=2.0, blink_off_rate=6.0)
        on = active_frames(em, 300_000, 33.3, substream(1, 0))
        assert on.mean() == pytest.approx(0.25, abs=0.03)
        assert 0 < on.sum() < on.size

    def test_bleaching_is_permanent(self):
        em = emitter(bleach_rate=1.0)
        on = active_frames(em, 10_000, 33.3, substream(2, 0))
        first_off = np.argmin(on) if not on.all() else on.size
        assert not on[first_off:].any()

    def test_drift_track_none(self):
        assert not drift_track(DriftModel(), 100, 1).any()

    def test_drift_track_variance(self):
        track = drift_track(DriftModel("random-walk", 0.01), 200_001, 4)
        steps = np.diff(track[::10_000], axis=0)
        assert np.std(steps) == pytest.approx(0.01 * 100, rel=0.3)


class TestStack:
    def test_no_efficiency_no_dark_is_empty(self):
        scene = row_scene([1, 2])
        s = simulate_stack(scene, camera(quantum_efficiency=0.0), DriftModel(), 1000, 3)
        assert s.n_frames == 1000 and s.n_events == 0

    def test_deterministic_and_worker_independent(self):
        scene = row_scene([1, 3])
        cam = camera(dark_event_rate=1e-3)
        n = CHUNK_FRAMES * 2 + 123
        a = simulate_stack(scene, cam, DriftModel(), n, 42)
        b = simulate_stack(scene, cam, DriftModel(), n, 42, workers=4)
        assert a == b
        ba, bb = io.BytesIO(), io.BytesIO()
        frame_store.write_stack(a, ba)
        frame_store.write_stack(b, bb)
        assert ba.getvalue() == bb.getvalue()
        c = simulate_stack(scene, cam, DriftModel(), n, 43)
        assert not np.array_equal(a.x, c.x)

    def test_metadata(self):
        scene = row_scene([1])
        s = simulate_stack(scene, camera(), DriftModel(), 10, 7)
        assert s.metadata["seed"] == 7
        assert s.metadata["frame_count"] == 10
        assert s.metadata["scene_digest"] == scene.digest()
        s.validate()

    def test_zero_frames_rejected(self):
        with pytest.raises(ParameterError):
            simulate_stack(row_scene([1]), camera(), DriftModel(), 0, 1)

    def test_object_leaving_grid_under_drift_rejected(self):
        scene = row_scene([1], margin=3)
        with pytest.raises(ConfigurationError):
            simulate_stack(scene, camera(), DriftModel("random-walk", 0.01), 1_000_000, 1)

    def test_object_outside_grid_rejected(self):
        with pytest.raises(ConfigurationError):
            SceneSpec([ObjectSpec((50, 5), [emitter()])], 20, 20)

    def test_photon_conservation(self):
        scene = row_scene([1, 2], coeff=20.0)
        cam = camera(quantum_efficiency=0.8)
        n = 200_000
        s = simulate_stack(scene, cam, DriftModel(), n, 11, record_times=True)
        side = s.photon_times
        per_frame = np.bincount(side.frame, minlength=n)
        expected = sum(o.m for o in scene.objects) * 20.0 * 0.005 * 0.8
        assert abs(per_frame.mean() - expected) < 3 * per_frame.std() / math.sqrt(n)
        # the splitter sends half of them to field B
        assert side.field.mean() == pytest.approx(0.5, abs=3 * 0.5 / math.sqrt(side.field.size))

    def test_brightness_ratio_two_to_one(self):
        scene = row_scene([1, 2])
        s = simulate_stack(scene, camera(), DriftModel(), 200_000, 5)
        b = [estimate_brightness(s, r, 10.0, 0.005).brightness for r in regions_for(scene)]
        assert b[1] / b[0] == pytest.approx(2.0, rel=0.1)

    def test_nominal_occupancy(self):
        scene = row_scene([1, 2, 4])
        s = simulate_stack(scene, camera(dark_event_rate=2e-4), DriftModel(), 100_000, 9)
        mean, peak = s.mean_occupancy()
        assert peak < 0.1

    def test_analog_readout_model(self):
        scene = row_scene([4], psf=0.0)
        s = simulate_stack(scene, camera(mode=ANALOG), DriftModel(), 50_000, 8)
        assert s.is_analog and s.n_events > 10_000
        assert s.signal.mean() == pytest.approx(900.0, abs=3.0)
        assert s.signal.std() == pytest.approx(100.0, rel=0.05)
        dark = simulate_stack(scene, camera(mode=ANALOG, quantum_efficiency=0.0,
                                            dark_event_rate=0.01), DriftModel(), 20_000, 8)
        assert dark.n_events > 10_000
        assert dark.signal.mean() == pytest.approx(640.0, abs=1.0)
        assert dark.signal.std() == pytest.approx(30.0, rel=0.05)

    @pytest.mark.parametrize("width", [10.0, 15.0, 20.0, 30.0, 40.0])
    def test_antibunching_fidelity_across_gates(self, width):
        # 0.1 detected photons per gate per emitter keeps indicator collapse small
        scene = row_scene([1] * 8, coeff=20.0)
        cam = with_gate_width(camera(), width)
        s = simulate_stack(scene, cam, DriftModel(), 200_000, int(width))
        est = [estimate_g2_zero(s, r) for r in regions_for(scene)]
        w = np.array([1 / e.stderr**2 for e in est])
        mean = float((w * [e.g2_normalized for e in est]).sum() / w.sum())
        err = 1 / math.sqrt(w.sum())
        truth = g2_integrated(emitter(), width)
        assert abs(mean - truth) < 3 * err

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_cluster_mixing(self, m):
        scene = row_scene([m] * 4, coeff=10.0)
        s = simulate_stack(scene, camera(), DriftModel(), 200_000, 100 + m)
        est = [estimate_g2_zero(s, r) for r in regions_for(scene)]
        w = np.array([1 / e.stderr**2 for e in est])
        mean = float((w * [e.g2_normalized for e in est]).sum() / w.sum())
        err = 1 / math.sqrt(w.sum())
        truth = g2_m_emitters(g2_integrated(emitter(), 10.0), m)
        assert abs(mean - truth) < 3 * err


def _centroid(img):
    yy, xx = np.mgrid[0:img.shape[0], 0:img.shape[1]]
    return (img * xx).sum() / img.sum(), (img * yy).sum() / img.sum()


class TestControlFrames:
    def test_psf_weights_sum_to_one(self):
        w = psf_weights((10.3, 7.8), 1.5, 30, 20)
        # the tail beyond the grid edge 5.5 sigma away is ~2e-8
        assert w.sum() == pytest.approx(1.0, abs=1e-7)
        cx, cy = _centroid(w)
        assert (cx, cy) == pytest.approx((10.3, 7.8), abs=1e-6)

    def test_centroid_at_configured_center(self, rng):
        scene = SceneSpec([ObjectSpec((12.3, 9.6), [emitter()], psf_sigma=1.5)], 30, 20,
                          normalization_alpha=0.005)
        img = render_control_frame(scene, CameraConfig(), 10_000, rng=rng).astype(float)
        cx, cy = _centroid(img)
        assert cx == pytest.approx(12.3, abs=0.2)
        assert cy == pytest.approx(9.6, abs=0.2)

    def test_stationary_without_drift(self):
        scene = row_scene([4])
        s = simulate_stack(scene, camera(), DriftModel(control_frame_interval=1000), 10_000, 2)
        assert len(s.control_frames) == 10
        centres = np.array([_centroid(cf.counts[:12].astype(float)) for cf in s.control_frames])
        # ~2000 counts per field: shot-noise scatter of the centroid is ~0.02
        assert np.abs(centres - np.array(scene.objects[0].center)).max() < 0.1

    def test_random_walk_displacement_law(self):
        scene = row_scene([4], margin=20)
        drift = DriftModel("random-walk", 0.003)
        s = simulate_stack(scene, camera(), drift, 1_000_000, 21)
        corr = register_drift(s.control_frames)
        steps = np.diff(corr.shifts, axis=0)
        assert np.std(steps) == pytest.approx(math.sqrt(1e4) * 0.003, rel=0.3)

    def test_excitation_gaussian(self):
        f = ExcitationField("gaussian", 2.0, (5, 5), 4.0)
        assert f.intensity(5, 5) == 2.0
        assert f.intensity(9, 5) == pytest.approx(2.0 * math.exp(-2.0))
