"""Equi-confounding estimators and the closed-form bias bounds."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from panelfuse import (
    LogEquiBoundInputs,
    PositivityError,
    SynthBoundInputs,
    bias_bound_log_equi,
    bias_bound_log_equi_refined,
    bias_bound_synth,
    estimate_linear_equi,
    estimate_log_equi,
)
from panelfuse.panel import UnitAggregates


def _agg(y, f):
    return UnitAggregates(Y_bar=np.asarray(y, float), F_bar=np.asarray(f, float))


class TestLinearEqui:
    def test_direct_formula(self):
        est = estimate_linear_equi(_agg([5, 2], [3, 1]))
        assert est.psi_hat == pytest.approx(1.0)

    def test_identity_cancellation(self):
        y = [4.0, 1.0, 7.0]
        est = estimate_linear_equi(_agg(y, y))
        assert est.psi_hat == pytest.approx(0.0)

    def test_reevaluate_matches(self):
        est = estimate_linear_equi(_agg([5.5, 2.25, 0.5], [3.0, 1.0, 2.0]))
        assert est.reevaluate() == pytest.approx(est.psi_hat, rel=1e-12)

    @given(c=st.floats(-100.0, 100.0))
    def test_location_invariance(self, c):
        y = np.array([5.0, 2.0, 3.0])
        f = np.array([3.0, 1.0, 0.5])
        base = estimate_linear_equi(_agg(y, f)).psi_hat
        assert estimate_linear_equi(_agg(y + c, f)).psi_hat == pytest.approx(base)
        assert estimate_linear_equi(_agg(y, f + c)).psi_hat == pytest.approx(base)

    def test_needs_donor(self):
        with pytest.raises(ValueError):
            estimate_linear_equi(_agg([1.0], [1.0]))


class TestLogEqui:
    def test_direct_formula(self):
        # donor sums: F = 1+3 = 4, Y = 5+7 = 12
        est = estimate_log_equi(_agg([10, 5, 7], [2, 1, 3]))
        assert est.psi_hat == pytest.approx(10 - (2 / 4) * 12)

    def test_proportional_null(self):
        y = np.array([4.0, 2.0, 6.0])
        est = estimate_log_equi(_agg(y, 3.0 * y))
        assert est.psi_hat == pytest.approx(0.0, abs=1e-12)

    @given(k=st.floats(0.01, 1000.0))
    def test_scale_invariance_in_f(self, k):
        y = np.array([10.0, 5.0, 7.0])
        f = np.array([2.0, 1.0, 3.0])
        base = estimate_log_equi(_agg(y, f)).psi_hat
        assert estimate_log_equi(_agg(y, k * f)).psi_hat == pytest.approx(base)

    def test_positivity_error_names_unit(self):
        with pytest.raises(PositivityError, match="unit index 2"):
            estimate_log_equi(_agg([1.0, 1.0, 1.0], [2.0, 1.0, -0.5]))

    def test_reevaluate_matches(self):
        est = estimate_log_equi(_agg([10, 5, 7], [2, 1, 3]))
        assert est.reevaluate() == pytest.approx(est.psi_hat, rel=1e-12)


class TestLogEquiBound:
    def test_hand_value(self):
        inputs = LogEquiBoundInputs(L_y=1, l_y=1, L_f=2, l_f=1,
                                    tau_J=0.0, C_J=0.0, J=100)
        assert bias_bound_log_equi(inputs) == pytest.approx(0.03, abs=1e-9)

    def test_zero_spread_returns_c(self):
        inputs = LogEquiBoundInputs(L_y=3, l_y=1, L_f=2, l_f=2,
                                    tau_J=0.0, C_J=0.7, J=10)
        assert bias_bound_log_equi(inputs) == pytest.approx(0.7, abs=1e-12)

    def test_monotone_in_j(self):
        vals = [bias_bound_log_equi(
            LogEquiBoundInputs(L_y=1, l_y=1, L_f=2, l_f=1,
                               tau_J=0.0, C_J=0.0, J=j))
            for j in (10, 100, 1000)]
        assert vals[0] > vals[1] > vals[2]

    def test_input_validation(self):
        with pytest.raises(ValueError):
            LogEquiBoundInputs(L_y=1, l_y=2, L_f=2, l_f=1,
                               tau_J=0.0, C_J=0.0, J=10)
        with pytest.raises(ValueError):
            LogEquiBoundInputs(L_y=1, l_y=1, L_f=2, l_f=1,
                               tau_J=-0.1, C_J=0.0, J=10)


class TestRefinedBound:
    def test_hand_value(self):
        inputs = LogEquiBoundInputs(L_y=1, l_y=1, L_f=2, l_f=1,
                                    tau_J=0.0, C_J=0.0, J=100, tau1_J=0.0)
        assert bias_bound_log_equi_refined(inputs) == pytest.approx(0.0075, abs=1e-9)

    def test_requires_tau1(self):
        inputs = LogEquiBoundInputs(L_y=1, l_y=1, L_f=2, l_f=1,
                                    tau_J=0.0, C_J=0.0, J=100)
        with pytest.raises(ValueError, match="tau1"):
            bias_bound_log_equi_refined(inputs)

    def test_vanishes_in_large_j_limit(self):
        inputs = LogEquiBoundInputs(L_y=1, l_y=1, L_f=2, l_f=1, tau_J=0.0,
                                    C_J=0.0, J=10**9, tau1_J=0.0)
        assert bias_bound_log_equi_refined(inputs) == pytest.approx(0.0, abs=1e-8)

    def test_refined_below_unrefined_on_grid(self):
        # With l_f = 1 the refined bound is below the unrefined one exactly
        # when tau1 <= d^2/(4 sqrt(J)) + d sqrt(tau)/2 - d (d^2/(4J) + tau).
        for J in (10, 100):
            for tau in (0.0, 0.01, 0.1):
                d, lf = 1.0, 1.0
                tau1 = 0.9 * (d * d / (4 * math.sqrt(J))
                              + d * math.sqrt(tau) / 2
                              - d * (d * d / (4 * J) + tau))
                inputs = LogEquiBoundInputs(L_y=1, l_y=1, L_f=2, l_f=lf,
                                            tau_J=tau, C_J=0.0, J=J,
                                            tau1_J=tau1)
                assert (bias_bound_log_equi_refined(inputs)
                        <= bias_bound_log_equi(inputs) + 1e-12)

    def test_monotone_in_j(self):
        vals = [bias_bound_log_equi_refined(
            LogEquiBoundInputs(L_y=1, l_y=1, L_f=2, l_f=1, tau_J=0.0,
                               C_J=0.0, J=j, tau1_J=0.0))
            for j in (10, 100, 1000)]
        assert vals[0] > vals[1] > vals[2]


class TestSynthBound:
    def test_hand_value(self):
        inputs = SynthBoundInputs(theta_bar=1, theta_tilde_bar=0,
                                  vartheta_bar=1, vartheta_tilde_bar=1,
                                  sigma_bar=1, tau=0.0, xi_lower=1,
                                  T=100, J=8)
        expected = math.sqrt(2.0) * math.sqrt(math.log(16.0) / 100.0)
        assert bias_bound_synth(inputs) == pytest.approx(expected, abs=1e-9)

    def test_quadruple_t_halves(self):
        def at(T):
            return bias_bound_synth(SynthBoundInputs(
                theta_bar=2, theta_tilde_bar=0, vartheta_bar=3,
                vartheta_tilde_bar=1, sigma_bar=1.5, tau=0.0, xi_lower=0.5,
                T=T, J=30))
        assert at(400) == pytest.approx(at(100) / 2.0, rel=1e-12)

    def test_monotone_in_t(self):
        def at(T):
            return bias_bound_synth(SynthBoundInputs(
                theta_bar=1, theta_tilde_bar=0, vartheta_bar=1,
                vartheta_tilde_bar=1, sigma_bar=1, tau=0.0, xi_lower=1,
                T=T, J=30))
        assert at(100) < at(10)

    def test_second_term_off_when_tau_zero(self):
        with_tau = bias_bound_synth(SynthBoundInputs(
            theta_bar=1, theta_tilde_bar=2, vartheta_bar=1,
            vartheta_tilde_bar=1, sigma_bar=1, tau=0.5, xi_lower=1,
            T=100, J=8))
        without = bias_bound_synth(SynthBoundInputs(
            theta_bar=1, theta_tilde_bar=2, vartheta_bar=1,
            vartheta_tilde_bar=1, sigma_bar=1, tau=0.0, xi_lower=1,
            T=100, J=8))
        assert with_tau > without
        tilde_off = bias_bound_synth(SynthBoundInputs(
            theta_bar=1, theta_tilde_bar=0, vartheta_bar=1,
            vartheta_tilde_bar=1, sigma_bar=1, tau=0.5, xi_lower=1,
            T=100, J=8))
        assert tilde_off == pytest.approx(without)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            SynthBoundInputs(theta_bar=0, theta_tilde_bar=0, vartheta_bar=1,
                             vartheta_tilde_bar=1, sigma_bar=1, tau=0.0,
                             xi_lower=1, T=10, J=5)
