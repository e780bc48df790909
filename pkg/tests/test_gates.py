"""Hard-concrete gates: sampling, expected L0, deterministic estimate, initialisation."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ieql import gates
from ieql.gates import GateHyper, deterministic_gate, expected_l0, expected_l0_grad, init_log_alpha, sample_gate

# closed form at log_alpha = 0: sigmoid(beta * log(zeta / -gamma)) = 1 / (1 + 11^(-2/3))
L0_AT_ZERO = 1.0 / (1.0 + 11.0 ** (-2.0 / 3.0))


class TestHyper:
    def test_defaults(self):
        h = GateHyper()
        assert (h.zeta, h.gamma, h.beta) == (1.1, -0.1, 2.0 / 3.0)

    @pytest.mark.parametrize("kwargs", [{"gamma": 0.1}, {"zeta": 0.9}, {"beta": 0.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            GateHyper(**kwargs)


class TestSampleGate:
    def test_midpoint(self):
        z, _ = sample_gate(0.0, 0.5)
        assert z == pytest.approx(0.5, abs=1e-15)

    def test_saturates_high(self):
        z, dz = sample_gate(0.0, 1.0 - 1e-12)
        assert z == 1.0 and dz == 0.0

    def test_saturates_low(self):
        z, dz = sample_gate(0.0, 1e-12)
        assert z == 0.0 and dz == 0.0

    @pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5])
    def test_noise_outside_open_interval(self, u):
        with pytest.raises(ValueError):
            sample_gate(0.0, u)

    def test_matches_explicit_chain(self, rng):
        la = rng.normal(0, 2, 50)
        u = rng.uniform(0.01, 0.99, 50)
        s = 1.0 / (1.0 + np.exp(-(np.log(u / (1 - u)) + la) * 1.5))
        expect = np.clip(s * 1.2 - 0.1, 0, 1)
        np.testing.assert_allclose(sample_gate(la, u)[0], expect, rtol=1e-12, atol=1e-15)

    @given(st.floats(-6, 6), st.floats(0.02, 0.98))
    def test_pathwise_derivative(self, la, u):
        z, dz = sample_gate(la, u)
        h = 1e-6
        zp, _ = sample_gate(la + h, u)
        zm, _ = sample_gate(la - h, u)
        if 1e-4 < z < 1 - 1e-4:
            assert dz == pytest.approx((zp - zm) / (2 * h), rel=1e-5, abs=1e-8)


class TestExpectedL0:
    def test_value_at_zero(self):
        assert expected_l0(0.0) == pytest.approx(L0_AT_ZERO, abs=1e-5)
        assert expected_l0(0.0) == pytest.approx(0.8318222, abs=1e-7)

    def test_limits(self):
        assert expected_l0(-60.0) < 1e-20
        assert expected_l0(60.0) == pytest.approx(1.0)

    def test_cdf_form(self):
        # probability that the stretched sample is positive, from the logistic CDF of the noise
        h = GateHyper()
        la = 0.7
        u_star = 1.0 / (1.0 + math.exp(la - h.beta * math.log(-h.gamma / h.zeta)))
        assert expected_l0(la) == pytest.approx(1.0 - u_star, rel=1e-12)

    @pytest.mark.parametrize("la", [-4.0, -1.0, 0.0, 1.0, 4.0])
    def test_monte_carlo(self, la):
        rng = np.random.default_rng(7)
        n = 200_000
        u = np.clip(rng.random(n), 1e-16, 1 - 1e-16)
        frac = np.mean(sample_gate(np.full(n, la), u)[0] > 0)
        p = expected_l0(la)
        assert abs(frac - p) <= 3 * math.sqrt(p * (1 - p) / n)

    @given(st.floats(-20, 20))
    def test_gradient(self, la):
        h = 1e-5
        fd = (expected_l0(la + h) - expected_l0(la - h)) / (2 * h)
        assert abs(expected_l0_grad(la) - fd) <= 1e-6

    def test_stable_for_large_magnitudes(self):
        v = expected_l0(np.array([-30.0, 30.0, -1e4, 1e4]))
        assert np.all(np.isfinite(v))


class TestDeterministicGate:
    def test_zero(self):
        assert deterministic_gate(0.0) == pytest.approx(0.5)

    def test_pruned(self):
        assert deterministic_gate(-10.0) == 0.0

    def test_saturated(self):
        assert deterministic_gate(10.0) == 1.0

    @given(st.floats(-40, 40), st.floats(0, 10))
    def test_monotone(self, la, step):
        assert deterministic_gate(la + step) >= deterministic_gate(la)


class TestInit:
    def test_half(self):
        assert init_log_alpha(0.5) == 0.0

    def test_low_dropout(self):
        assert init_log_alpha(0.1) == pytest.approx(math.log(9.0), rel=1e-14)

    def test_antisymmetric(self):
        assert init_log_alpha(0.9) == pytest.approx(-init_log_alpha(0.1), rel=1e-14)

    @pytest.mark.parametrize("d", [0.0, 1.0, -0.2])
    def test_invalid(self, d):
        with pytest.raises(ValueError):
            init_log_alpha(d)

    def test_noise_breaks_symmetry(self):
        v = init_log_alpha(0.5, size=1000, noise_std=0.01, rng=np.random.default_rng(0))
        assert v.std() == pytest.approx(0.01, rel=0.1)
        assert abs(v.mean()) < 0.002

    def test_clamp(self):
        np.testing.assert_array_equal(gates.clamp_log_alpha(np.array([-50.0, 3.0, 50.0])), [-30.0, 3.0, 30.0])
