import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import random_stack
from photocorr.errors import (AllNoiseError, InsufficientCountsError, ModeError, NoObjectsError,
                              ParameterError, ValidationError)
from photocorr.estimators.correlation import (FrameTally, background_correct, estimate_all,
                                              estimate_from_tally, estimate_g2_zero,
                                              estimate_stderr, tally_stack)
from photocorr.estimators.regions import (ObjectRegion, RegionIndex, attach_noise_regions,
                                          auto_regions, disc, disc_region)
from photocorr.frames import ANALOG, BINARY, FrameStack

A_PIX, B_PIX, N_PIX = ((0, 0),), ((1, 0),), ((2, 0),)
ONE_PIXEL = ObjectRegion("o", A_PIX, B_PIX)


def ab_stack(pairs):
    """One frame per (a, b) indicator pair using single-pixel regions."""
    frames = [[(0, 0)] * a + [(1, 0)] * b for a, b in pairs]
    return FrameStack.from_frames(BINARY, 3, 1, frames)


class TestRegions:
    def test_disjointness_enforced(self):
        with pytest.raises(ValidationError):
            ObjectRegion(0, ((0, 0),), ((0, 0),))

    def test_noise_size_must_match(self):
        with pytest.raises(ValidationError):
            ObjectRegion(0, ((0, 0), (1, 0)), ((3, 0),), ((5, 0),))

    def test_disc(self):
        assert len(disc((5, 5), 1.0)) == 5
        assert len(disc((5, 5), 0.0)) == 1

    def test_disc_region_translation(self):
        r = disc_region(1, (4, 4), 1.0, (10, 2), noise_center=(4, 12))
        assert set(r.region_b) == {(x + 10, y + 2) for x, y in r.region_a}
        assert set(r.noise_region) == {(x, y + 8) for x, y in r.region_a}

    def test_index_rejects_out_of_grid(self):
        with pytest.raises(ValidationError):
            RegionIndex([disc_region(0, (1, 1), 2, (3, 0))], 5, 5)

    def test_index_requires_regions(self):
        with pytest.raises(NoObjectsError):
            RegionIndex([], 5, 5)

    def test_lookup_with_shared_pixels(self):
        r1 = ObjectRegion(0, ((0, 0),), ((1, 0),), ((4, 0),))
        r2 = ObjectRegion(1, ((2, 0),), ((3, 0),), ((4, 0),))
        idx = RegionIndex([r1, r2], 5, 1)
        ev, entry = idx.lookup(np.array([4, 0, 7]))
        assert sorted(zip(ev.tolist(), entry.tolist())) == [(0, 2), (0, 5), (1, 0)]

    def test_auto_regions_finds_pairs(self, rng):
        acc = rng.poisson(1.0, (30, 60)).astype(float)
        for cx, cy in ((10, 8), (20, 20)):
            acc[cy - 1:cy + 2, cx - 1:cx + 2] += 200
            acc[cy - 1:cy + 2, cx + 29:cx + 32] += 200
        regs = auto_regions(acc, (30, 0))
        assert len(regs) == 2
        centres = sorted(tuple(round(v) for v in r.center) for r in regs)
        assert centres == [(10, 8), (20, 20)]
        for r in regs:
            assert len(r.noise_region) == len(r.region_a)
            assert not set(r.noise_region) & set(r.region_a + r.region_b)

    def test_auto_regions_empty_map(self):
        with pytest.raises(NoObjectsError):
            auto_regions(np.zeros((10, 10)), (5, 0))

    def test_noise_region_avoids_objects(self, rng):
        acc = np.ones((20, 40))
        acc[:, 20:] = 0.0  # right half empty
        reg = disc_region(0, (5, 5), 1.5, (0, 10))
        out = attach_noise_regions([reg], acc)[0]
        assert all(x >= 20 for x, _ in out.noise_region)


class TestEstimateG2:
    def test_spec_arithmetic_example(self):
        est = estimate_g2_zero(ab_stack([(1, 1), (0, 0), (1, 0), (0, 1)]), ONE_PIXEL)
        assert est.g2_raw == pytest.approx(1.0, abs=1e-15)

    def test_perfect_anticorrelation(self):
        est = estimate_g2_zero(ab_stack([(1, 0), (0, 1)] * 10), ONE_PIXEL)
        assert est.g2_raw == 0.0
        assert est.n_coincidences == 0

    def test_baseline_normalization(self):
        # A and B always together: raw 1/(pa pb); lagged pairs give the baseline
        pairs = [(1, 1), (0, 0), (1, 1), (1, 1), (0, 0), (0, 0), (1, 1), (0, 0)]
        est = estimate_g2_zero(ab_stack(pairs), ONE_PIXEL, baseline_lag=1)
        assert est.g2_raw == pytest.approx(2.0)
        # lagged A(i) B(i+1): frames (2,3),(3,4)->no,(6,7)->no ... count exactly
        lagged = sum(pairs[i][0] * pairs[i + 1][1] for i in range(len(pairs) - 1))
        base = (lagged / 7) / 0.25
        assert est.g2_baseline == pytest.approx(base)
        assert est.g2_normalized == pytest.approx(2.0 / base)

    def test_indicator_counts_many_events_once(self):
        frames = [[(0, 0), (0, 1), (1, 0)], []]
        s = FrameStack.from_frames(BINARY, 2, 2, frames)
        reg = ObjectRegion(0, ((0, 0), (0, 1)), ((1, 0),))
        est = estimate_g2_zero(s, reg)
        assert est.n_A == 1 and est.n_coincidences == 1

    def test_no_events_is_insufficient(self):
        with pytest.raises(InsufficientCountsError):
            estimate_g2_zero(ab_stack([(1, 0), (0, 0)]), ONE_PIXEL)

    def test_analog_rejected(self):
        s = FrameStack.from_frames(ANALOG, 3, 1, [[(0, 0, 800.0)]])
        with pytest.raises(ModeError):
            estimate_g2_zero(s, ONE_PIXEL)

    def test_lag_must_be_positive(self):
        with pytest.raises(ParameterError):
            estimate_g2_zero(ab_stack([(1, 1)]), ONE_PIXEL, baseline_lag=0)

    def test_missing_baseline_is_nan(self):
        est = estimate_g2_zero(ab_stack([(1, 1), (0, 0)]), ONE_PIXEL)
        assert math.isnan(est.g2_baseline) and math.isnan(est.g2_normalized)

    def test_estimate_all_reports_failures_per_object(self):
        s = ab_stack([(1, 1), (1, 1), (0, 1)])
        regs = [ONE_PIXEL, ObjectRegion("empty", ((2, 0),), ((1, 0),))]
        out = estimate_all(s, regs)
        assert isinstance(out[1], InsufficientCountsError)
        assert out[0].n_A == 2


class TestStderr:
    def test_spec_example(self):
        # 100 coincidences, 1e5 singles per arm; frames chosen so g2_raw = 0.43
        n_frames = round(0.43 * 1e10 / 100)
        err = estimate_stderr(100, 100_000, 100_000, n_frames)
        assert err == pytest.approx(0.43 * math.sqrt(0.01 + 2e-5), rel=1e-6)
        assert err == pytest.approx(0.043, abs=5e-4)

    def test_shrinks_with_counts(self):
        errs = [estimate_stderr(10**k, 10**(k + 2), 10**(k + 2), 10**(k + 4)) for k in range(2, 7)]
        assert all(b < a for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 2e-3

    def test_zero_coincidences_one_sided(self):
        assert estimate_stderr(0, 100, 100, 1000) == estimate_stderr(1, 100, 100, 1000)

    def test_normalized_adds_baseline_in_quadrature(self):
        raw = estimate_stderr(100, 1000, 1000, 10_000)
        norm = estimate_stderr(100, 1000, 1000, 10_000, n_lagged=100, lag=1)
        g_raw = 100 * 10_000 / 1e6
        g_base = 100 * 10_000**2 / (9_999 * 1e6)
        rel = math.sqrt(1 / 100 + 2 / 1000 + 1 / 100 + 2 / 1000)
        assert norm == pytest.approx(g_raw / g_base * rel)
        assert norm / (g_raw / g_base) > raw / g_raw

    def test_bootstrap_agreement(self, rng):
        # independent Bernoulli arms at low occupancy: the bootstrap spread of g2_raw
        # matches the formula (which overstates it by about 1 + 2p at occupancy p)
        n = 200_000
        a = rng.random(n) < 0.03
        b = rng.random(n) < 0.03
        s = ab_stack(list(zip(a.astype(int), b.astype(int))))
        est = estimate_g2_zero(s, ONE_PIXEL)
        boot = []
        for _ in range(300):
            idx = rng.integers(0, n, n)
            boot.append((a[idx] & b[idx]).mean() / (a[idx].mean() * b[idx].mean()))
        formula = estimate_stderr(est.n_coincidences, est.n_A, est.n_B, n)
        assert np.std(boot) == pytest.approx(formula, rel=0.2)


class TestBackgroundCorrection:
    def _est(self, g2, rho_a=1.0, rho_b=1.0):
        base = estimate_g2_zero(ab_stack([(1, 1), (1, 0), (0, 1), (1, 1)]), ONE_PIXEL)
        return replace(base, g2_normalized=g2, signal_fraction_A=rho_a,
                       signal_fraction_B=rho_b, stderr=0.1)

    def test_identity_without_background(self):
        assert background_correct(self._est(0.5)).g2_corrected == pytest.approx(0.5)

    @pytest.mark.parametrize("rho", [0.1, 0.5, 0.9])
    def test_poissonian_fixed_point(self, rho):
        assert background_correct(self._est(1.0, rho, rho)).g2_corrected == pytest.approx(1.0)

    def test_snr_three_forward_then_invert(self):
        rho = 0.75
        measured = rho * rho * 0.0 + (1 - rho * rho)
        assert measured == pytest.approx(0.4375)
        out = background_correct(self._est(measured, rho, rho))
        assert out.g2_corrected == pytest.approx(0.0, abs=1e-12)
        assert out.stderr_corrected == pytest.approx(0.1 / rho**2)

    def test_all_noise(self):
        with pytest.raises(AllNoiseError):
            background_correct(self._est(0.9, 0.0, 0.8))

    def test_signal_fraction_from_noise_region(self):
        frames = [[(0, 0), (1, 0)], [(0, 0), (2, 0)], [(1, 0)], [(0, 0)]]
        s = FrameStack.from_frames(BINARY, 3, 1, frames)
        est = estimate_g2_zero(s, ObjectRegion(0, A_PIX, B_PIX, N_PIX))
        assert est.signal_fraction_A == pytest.approx((3 - 1) / 3)
        assert est.signal_fraction_B == pytest.approx((2 - 1) / 2)


def brute_force(stack, region, lag):
    """Direct per-frame loop: indicator pairs at zero and at ``lag`` frames."""
    a_set, b_set = set(region.region_a), set(region.region_b)
    na, nb = [], []
    for f in range(stack.n_frames):
        xs, ys = stack.frame(f)
        px = set(zip(xs.tolist(), ys.tolist()))
        na.append(1 if px & a_set else 0)
        nb.append(1 if px & b_set else 0)
    n = len(na)
    both = sum(x * y for x, y in zip(na, nb))
    lagged = sum(na[i] * nb[i + lag] for i in range(n - lag))
    return sum(na), sum(nb), both, lagged, n


@st.composite
def stack_and_region(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    w, h = draw(st.integers(6, 24)), draw(st.integers(3, 12))
    n = draw(st.integers(2, 10_000))
    dens = draw(st.floats(0.005, 0.3))
    counts = rng.binomial(w * h, dens, n)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    flats = [np.sort(rng.choice(w * h, int(c), replace=False)) for c in counts]
    flat = np.concatenate(flats)
    s = FrameStack(BINARY, w, h, offsets, flat % w, flat // w)
    pix = rng.permutation(w * h)
    ka = draw(st.integers(1, max(1, w * h // 3)))
    kb = draw(st.integers(1, max(1, w * h // 3)))
    to_px = [(int(p % w), int(p // w)) for p in pix]
    region = ObjectRegion("r", to_px[:ka], to_px[ka:ka + kb])
    lag = draw(st.integers(1, 5))
    return s, region, lag


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(stack_and_region())
def test_streaming_matches_brute_force(case):
    stack, region, lag = case
    na, nb, both, lagged, n = brute_force(stack, region, lag)
    if na == 0 or nb == 0:
        with pytest.raises(InsufficientCountsError):
            estimate_g2_zero(stack, region, lag)
        return
    est = estimate_g2_zero(stack, region, lag)
    assert (est.n_A, est.n_B, est.n_coincidences, est.n_lagged, est.n_frames) == (
        na, nb, both, lagged, n)
    # same arithmetic on the oracle's counts gives identical floats
    ma, mb = na / n, nb / n
    assert est.g2_raw == (both / n) / (ma * mb)
    if lagged and n > lag:
        base = (lagged / (n - lag)) / (ma * mb)
        assert est.g2_baseline == base
        assert est.g2_normalized == est.g2_raw / base


@pytest.mark.parametrize("chunk", [1, 7, 64, 1000, 5000])
@pytest.mark.parametrize("workers", [1, 3])
def test_streaming_equals_batch(chunk, workers):
    rng = np.random.default_rng(chunk + workers)
    stack = random_stack(rng, width=10, height=6, n_frames=3000, density=0.08)
    regions = [ObjectRegion(0, ((1, 1), (2, 1)), ((6, 1), (7, 1)), ((1, 4), (2, 4))),
               ObjectRegion(1, ((3, 3),), ((8, 3),), ((1, 4),))]
    batch = tally_stack(stack, regions, 2, chunk_frames=stack.n_frames)
    stream = tally_stack(stack, regions, 2, chunk_frames=chunk, workers=workers)
    chunks = tally_stack(stack.iter_chunks(chunk), regions, 2)
    for t in (stream, chunks):
        for name in ("hits", "events", "both", "lagged", "count_hist"):
            assert np.array_equal(getattr(t, name), getattr(batch, name)), name
    for i in range(2):
        assert estimate_from_tally(stream, i) == estimate_from_tally(batch, i)


def test_merge_requires_adjacent():
    a = FrameTally.empty(1, 1, 0)
    b = FrameTally.empty(1, 1, 5)
    with pytest.raises(ParameterError):
        a.merge(b)


def test_drift_shifts_move_regions():
    # object appears at x=1 for 2 frames, then at x=2 for 2 frames
    frames = [[(1, 0), (4, 0)], [(1, 0), (4, 0)], [(2, 0), (5, 0)], [(2, 0), (5, 0)]]
    s = FrameStack.from_frames(BINARY, 7, 1, frames)
    reg = ObjectRegion(0, ((1, 0),), ((4, 0),))
    shifts = np.array([[0, 0], [0, 0], [1, 0], [1, 0]])
    assert estimate_g2_zero(s, reg).n_A == 2
    assert estimate_g2_zero(s, reg, shifts=shifts).n_A == 4
