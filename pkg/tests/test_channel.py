import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cvmdi.channel import (
    AttackParams,
    LinkParams,
    distance_from_tau,
    eve_environment_state,
    omega_from_zeta,
    purify,
    tau_from_distance,
    total_excess_noise,
    zeta_from_omega,
)
from cvmdi.gaussian import GaussianState, UnphysicalStateError, partial_trace, von_neumann_entropy

from strategies import random_state


class TestTransmissivity:
    def test_zero_distance(self):
        assert tau_from_distance(0.0) == 1.0

    def test_fifty_km(self):
        assert tau_from_distance(50.0) == pytest.approx(0.1, rel=1e-12)

    def test_five_metres(self):
        assert tau_from_distance(0.005) == pytest.approx(10 ** (-0.0001), rel=1e-12)
        assert tau_from_distance(0.005) == pytest.approx(0.99977, abs=1e-5)

    @given(st.floats(0, 500), st.floats(0, 500))
    def test_strictly_decreasing(self, a, b):
        assume(abs(a - b) > 1e-6)
        lo, hi = sorted((a, b))
        assert tau_from_distance(lo) > tau_from_distance(hi)

    @given(st.floats(0, 300))
    def test_inverse(self, d):
        assert distance_from_tau(tau_from_distance(d)) == pytest.approx(d, abs=1e-9)

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            tau_from_distance(-1.0)


class TestExcessNoise:
    def test_noiseless(self):
        assert total_excess_noise(0.3, 0.0, 0.8, 0.0) == 0.0

    def test_unit_transmission(self):
        assert total_excess_noise(1.0, 0.01, 1.0, 0.01) == pytest.approx(0.01, abs=1e-15)

    def test_asymmetric(self):
        assert total_excess_noise(0.5, 0.02, 1.0, 0.0) == pytest.approx(0.005, abs=1e-15)

    @given(st.floats(1e-6, 1 - 1e-6), st.floats(1.0, 100.0))
    def test_round_trip(self, tau, omega):
        assert omega_from_zeta(tau, zeta_from_omega(tau, omega)) == pytest.approx(omega, rel=1e-12)

    def test_nbar_to_omega(self):
        link = LinkParams.from_distance(10.0, nbar=0.05)
        assert link.omega == pytest.approx(1.1)
        assert link.nbar == pytest.approx(0.05)

    def test_one_noise_spec_only(self):
        with pytest.raises(ValueError):
            LinkParams.from_distance(1.0, zeta=0.01, nbar=0.1)

    def test_detector_folding_keeps_output_noise(self):
        link = LinkParams.from_tau(0.6, omega=1.4)
        eta = 0.9
        folded = link.with_detector_efficiency(eta)
        assert folded.tau == pytest.approx(0.54)
        # output variance for an input variance x must agree
        for x in (1.0, 7.0):
            direct = eta * (link.tau * x + (1 - link.tau) * link.omega) + 1 - eta
            assert folded.tau * x + (1 - folded.tau) * folded.omega == pytest.approx(direct, rel=1e-12)


class TestEveState:
    def test_vacuum_attack(self):
        np.testing.assert_array_equal(eve_environment_state(AttackParams()).cov, np.eye(8))

    def test_injected_thermal_variance(self):
        eve = eve_environment_state(AttackParams(1.5, 1.0))
        np.testing.assert_allclose(partial_trace(eve, [0]).cov, 1.5 * np.eye(2), atol=1e-14)

    @pytest.mark.parametrize("params", [(1.0, 1.0, 0.0, 0.0), (1.5, 2.0, 0.0, 0.0), (2.0, 3.0, 0.8, -0.5), (1.8, 1.8, 0.7, 0.7)])
    def test_pure_and_reproduces_injected(self, params):
        attack = AttackParams(*params)
        eve = eve_environment_state(attack)
        assert von_neumann_entropy(eve.cov) == pytest.approx(0.0, abs=1e-9)
        reduced = partial_trace(eve, [0, 2]).cov
        np.testing.assert_allclose(reduced, attack.injected_cov(), atol=1e-12)

    def test_unphysical_correlations_rejected(self):
        with pytest.raises(UnphysicalStateError):
            AttackParams(1.2, 1.2, 1.0, 1.0)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
@settings(max_examples=30, deadline=None)
def test_purification(seed, n):
    s = random_state(np.random.default_rng(seed), n)
    s = GaussianState(np.zeros(2 * n), s.cov)
    p = purify(s)
    assert von_neumann_entropy(p.cov) == pytest.approx(0.0, abs=1e-7)
    np.testing.assert_allclose(partial_trace(p, range(n)).cov, s.cov, atol=1e-9 * np.abs(s.cov).max())
