import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from photocorr.classifier import (CONSISTENT, INCONSISTENT, INDETERMINATE, calibrate_single_refs,
                                  classify, predict_higher_order_verdict, round_half_up)
from photocorr.core_model import g2_m_emitters
from photocorr.errors import CalibrationError, IndeterminateError, ParameterError

NOMINAL_REFS = (1.1, 0.43)


class TestClassify:
    def test_single_emitter(self):
        v = classify(0.74, 0.35, 0.1, (0.74, 0.43))
        assert v.m_hat == 1
        assert v.m_brightness == pytest.approx(1.0)
        assert v.m_correlation == pytest.approx(0.57 / 0.65)
        assert v.flags == CONSISTENT
        assert 0 < v.confidence <= 1

    def test_two_emitters(self):
        assert classify(2.35, 0.65, 0.1, NOMINAL_REFS).m_hat == 2

    def test_four_emitters(self):
        assert classify(4.91, 0.85, 0.1, NOMINAL_REFS).m_hat == 4

    def test_no_antibunching_is_brightness_only(self):
        v = classify(2.2, 1.05, 0.1, NOMINAL_REFS)
        assert v.flags == INDETERMINATE
        assert v.m_correlation is None and v.confidence is None
        assert v.m_hat == 2

    def test_inconsistent_channels_flagged(self):
        v = classify(1.1, 0.8, 0.01, NOMINAL_REFS, B_err=0.5)
        assert v.flags == INCONSISTENT
        assert v.m_hat == 3  # the precise correlation channel dominates

    def test_inverse_variance_weighting(self):
        v = classify(2.2, 0.715, 0.05, NOMINAL_REFS, B_err=0.22)
        w_b = 1 / (0.2**2)
        sig_c = v.m_correlation * 0.05 / (1 - 0.715)
        w_c = 1 / sig_c**2
        combined = (w_b * 2.0 + w_c * v.m_correlation) / (w_b + w_c)
        assert v.m_hat == round_half_up(combined)

    def test_half_rounds_up(self):
        assert round_half_up(2.5) == 3
        assert round_half_up(1.4999) == 1

    def test_bad_refs(self):
        with pytest.raises(ParameterError):
            classify(1.0, 0.4, 0.1, (0.0, 0.43))
        with pytest.raises(ParameterError):
            classify(1.0, 0.4, 0.1, (1.0, 1.0))

    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_model_values_recover_m(self, m):
        g2 = g2_m_emitters(0.43, m)
        v = classify(m * 1.1, g2, 0.01, NOMINAL_REFS, B_err=0.01)
        assert v.m_hat == m and v.flags == CONSISTENT
        assert v.confidence > 0.99

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.05, 20), st.floats(-0.5, 1.5), st.floats(0.001, 0.3),
           st.floats(0.1, 5), st.floats(0.0, 0.9), st.floats(1e-3, 1e3))
    def test_brightness_scale_invariance(self, B, g2, err, b1, g21, scale):
        a = classify(B, g2, err, (b1, g21))
        b = classify(B * scale, g2, err, (b1 * scale, g21))
        assert (a.m_hat, a.flags) == (b.m_hat, b.flags)
        assert a.m_brightness == pytest.approx(b.m_brightness, rel=1e-9)


class TestCalibration:
    def test_single_object(self):
        assert calibrate_single_refs([(0.9, 0.43, 0.1)]) == (0.9, pytest.approx(0.43))

    def test_weighted_mean_of_dim_group(self):
        objs = [(0.8, 0.40, 0.1), (1.0, 0.46, 0.1), (1.1, 0.43, 0.05), (2.3, 0.7, 0.1)]
        b1, g21 = calibrate_single_refs(objs)
        assert b1 == pytest.approx(1.0)
        w = np.array([100, 100, 400])
        assert g21 == pytest.approx((w * [0.40, 0.46, 0.43]).sum() / w.sum())

    def test_empty_dim_group(self):
        with pytest.raises(CalibrationError):
            calibrate_single_refs([(2.0, 0.7, 0.1), (3.0, 0.8, 0.1)])

    def test_simulated_population_recovers_b1(self):
        rng = np.random.default_rng(7)
        b1, g21 = 0.95, 0.4265
        m = rng.integers(1, 5, 50)
        m[:5] = 1
        B = m * b1 * (1 + rng.normal(0, 0.1, m.size))
        g2 = np.array([g2_m_emitters(g21, int(k)) for k in m]) + rng.normal(0, 0.1, m.size)
        est_b1, est_g21 = calibrate_single_refs(list(zip(B, g2, np.full(m.size, 0.1))))
        assert est_b1 == pytest.approx(b1, rel=0.1)
        assert est_g21 == pytest.approx(g21, abs=0.1)


class TestHigherOrderVerdict:
    def test_two_photon_cutoff(self):
        assert predict_higher_order_verdict([(2, 0.5, 0.01), (3, 0.0, 0.01)]) == 2

    def test_three_emitter_cluster(self):
        assert predict_higher_order_verdict(
            [(2, 0.5, 0.01), (3, 2 / 9, 0.02), (4, 0.01, 0.02)]) == 3

    def test_poissonian_has_no_cutoff(self):
        with pytest.raises(IndeterminateError) as err:
            predict_higher_order_verdict([(2, 1.0, 0.01), (3, 1.0, 0.02), (4, 1.0, 0.05)])
        assert err.value.reason == "no-cutoff"

    def test_nothing_significant(self):
        with pytest.raises(IndeterminateError):
            predict_higher_order_verdict([(2, 0.01, 0.1), (3, 0.0, 0.1)])

    def test_orders_must_be_consecutive(self):
        with pytest.raises(ParameterError):
            predict_higher_order_verdict([(2, 0.5, 0.01), (4, 0.0, 0.01)])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(-1, 2), st.floats(0.001, 1)), min_size=1, max_size=8))
    def test_never_exceeds_largest_order(self, vals):
        est = [(n + 2, v, e) for n, (v, e) in enumerate(vals)]
        try:
            m = predict_higher_order_verdict(est)
        except IndeterminateError:
            return
        assert 2 <= m <= est[-1][0]
        assert not math.isnan(m)
