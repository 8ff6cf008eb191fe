import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvmdi.gaussian import (
    GaussianState,
    UnphysicalStateError,
    beamsplitter,
    condition_heterodyne,
    condition_homodyne,
    condition_quadratures,
    direct_sum,
    g_entropy,
    gaussian_mutual_information,
    partial_trace,
    symplectic_eigenvalues,
    symplectic_form,
    tmsv,
    von_neumann_entropy,
)

from strategies import gaussian_states, random_state


def _eig_oracle(cov):
    # |eigenvalues of i*Omega*V| come in pairs
    n = cov.shape[0] // 2
    ev = np.sort(np.abs(np.linalg.eigvals(1j * symplectic_form(n) @ cov)))[::-1]
    return ev[::2]


class TestTmsv:
    def test_mu_one_is_two_vacua(self):
        np.testing.assert_array_equal(tmsv(1.0).cov, np.eye(4))

    def test_mu_two_offdiagonal(self):
        cov = tmsv(2.0).cov
        r3 = math.sqrt(3.0)
        np.testing.assert_allclose(cov[0:2, 2:4], np.diag([r3, -r3]), atol=1e-15)
        np.testing.assert_allclose(_eig_oracle(cov), [1.0, 1.0], atol=1e-12)

    @given(st.floats(1.0, 1e6))
    def test_pure(self, mu):
        assert von_neumann_entropy(tmsv(mu).cov) == pytest.approx(0.0, abs=1e-9)

    def test_rejects_mu_below_one(self):
        with pytest.raises(ValueError):
            tmsv(0.5)


class TestBeamsplitter:
    def test_identity_at_unit_transmission(self, rng):
        s = random_state(rng, 3)
        np.testing.assert_allclose(beamsplitter(s, 0, 2, 1.0).cov, s.cov, atol=1e-15)

    @given(st.floats(0.0, 1.0))
    def test_vacuum_invariant(self, tau):
        out = beamsplitter(GaussianState.vacuum(2), 0, 1, tau)
        np.testing.assert_allclose(out.cov, np.eye(4), atol=1e-14)

    @given(st.floats(1.0, 100.0), st.floats(0.0, 1.0))
    def test_transmitted_arm_variance(self, mu, tau):
        s = beamsplitter(direct_sum(tmsv(mu), GaussianState.vacuum()), 1, 2, tau)
        assert s.cov[2, 2] == pytest.approx(tau * mu + (1 - tau), rel=1e-12)
        assert s.cov[3, 3] == pytest.approx(tau * mu + (1 - tau), rel=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            beamsplitter(GaussianState.vacuum(2), 0, 0, 0.5)
        with pytest.raises(ValueError):
            beamsplitter(GaussianState.vacuum(2), 0, 1, 1.5)
        with pytest.raises(IndexError):
            beamsplitter(GaussianState.vacuum(2), 0, 5, 0.5)


class TestPartialTrace:
    def test_keep_all(self, rng):
        s = random_state(rng, 3)
        np.testing.assert_array_equal(partial_trace(s, [0, 1, 2]).cov, s.cov)

    @given(st.floats(1.0, 1e4))
    def test_tmsv_arm_is_thermal(self, mu):
        np.testing.assert_allclose(partial_trace(tmsv(mu), [1]).cov, mu * np.eye(2))

    def test_vacuum_product(self):
        for k in (0, 1):
            np.testing.assert_array_equal(partial_trace(GaussianState.vacuum(2), [k]).cov, np.eye(2))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            partial_trace(GaussianState.vacuum(2), [])


class TestHomodyne:
    def test_product_state_untouched(self, rng):
        a = random_state(rng, 2)
        s = direct_sum(a, GaussianState.thermal(3.0))
        cov, _ = condition_homodyne(s, 2, "q")
        np.testing.assert_allclose(cov, a.cov, atol=1e-12)

    @given(st.floats(1.0, 1e4))
    def test_tmsv_q_homodyne(self, mu):
        cov, _ = condition_homodyne(tmsv(mu), 0, "q")
        # mu - (mu^2 - 1)/mu cancels: absolute error ~ eps * mu
        np.testing.assert_allclose(np.diag(cov), [1.0 / mu, mu], rtol=1e-9, atol=1e-12 * mu)

    def test_outcome_independence(self):
        cov, mean_map = condition_homodyne(tmsv(5.0), 0, "q")
        # covariance has no outcome argument; the mean responds linearly
        np.testing.assert_allclose(mean_map(0.0), [0.0, 0.0])
        g = math.sqrt(24.0) / 5.0
        np.testing.assert_allclose(mean_map(5.0), [5.0 * g, 0.0], rtol=1e-12)
        assert cov.shape == (2, 2)

    def test_bad_quadrature(self):
        with pytest.raises(ValueError):
            condition_quadratures(tmsv(2.0), [(0, "x")])


class TestHeterodyne:
    def test_vacuum_mode_decoupled(self, rng):
        a = random_state(rng, 2)
        cov, _ = condition_heterodyne(direct_sum(a, GaussianState.vacuum()), 2)
        np.testing.assert_allclose(cov, a.cov, atol=1e-12)

    @given(st.floats(1.0, 1e4))
    def test_tmsv_projects_to_coherent(self, mu):
        cov, _ = condition_heterodyne(tmsv(mu), 0)
        np.testing.assert_allclose(cov, np.eye(2), atol=1e-9 * mu)

    def test_uncorrelated_mode_entropy(self, rng):
        a = random_state(rng, 2)
        cov, _ = condition_heterodyne(direct_sum(a, GaussianState.thermal(2.0)), 2)
        assert von_neumann_entropy(cov) == pytest.approx(a.entropy(), abs=1e-10)


class TestSymplecticSpectrum:
    def test_identity(self):
        np.testing.assert_allclose(symplectic_eigenvalues(np.eye(6)), np.ones(3))

    def test_thermal(self):
        np.testing.assert_allclose(symplectic_eigenvalues(4.5 * np.eye(2)), [4.5])

    @given(gaussian_states())
    @settings(max_examples=50, deadline=None)
    def test_matches_eigensolver(self, s):
        np.testing.assert_allclose(symplectic_eigenvalues(s.cov), _eig_oracle(s.cov), rtol=1e-8)


class TestEntropy:
    def test_vacuum(self):
        assert von_neumann_entropy(np.eye(4)) == 0.0

    def test_g_of_five(self):
        assert g_entropy(5.0) == pytest.approx(3 * math.log2(3) - 2, abs=1e-12)
        assert von_neumann_entropy(5.0 * np.eye(2)) == pytest.approx(2.7549, abs=1e-4)

    def test_g_continuity_branch(self):
        assert g_entropy(1.0) == 0.0
        assert g_entropy(1.0 + 1e-13) == 0.0

    @given(st.floats(1.0, 1e6), st.floats(1.0, 1e6))
    def test_g_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert g_entropy(lo) <= g_entropy(hi)

    def test_unphysical_rejected(self):
        with pytest.raises(UnphysicalStateError):
            von_neumann_entropy(0.5 * np.eye(2))
        with pytest.raises(UnphysicalStateError):
            GaussianState(np.zeros(2), 0.5 * np.eye(2))


class TestMutualInformation:
    def test_independent(self):
        assert gaussian_mutual_information(np.diag([1.0, 2.0, 3.0]), 1) == pytest.approx(0.0, abs=1e-15)

    def test_correlated_pair(self):
        c = np.array([[1.0, 0.8], [0.8, 1.0]])
        assert gaussian_mutual_information(c, 1) == pytest.approx(0.5 * math.log2(1 / 0.36), abs=1e-12)
        assert gaussian_mutual_information(c, 1) == pytest.approx(0.7370, abs=1e-4)

    @given(st.floats(-0.99, 0.99), st.floats(0.1, 10), st.floats(0.1, 10))
    def test_symmetric(self, rho, vx, vy):
        c = np.array([[vx, rho * math.sqrt(vx * vy)], [rho * math.sqrt(vx * vy), vy]])
        swapped = c[::-1, ::-1]
        assert gaussian_mutual_information(c, 1) == pytest.approx(gaussian_mutual_information(swapped, 1), rel=1e-12)


# Randomized invariants over physical states


@given(gaussian_states(min_modes=2), st.data())
@settings(max_examples=200, deadline=None)
def test_beamsplitter_preserves_entropy(s, data):
    i, j = data.draw(st.lists(st.integers(0, s.num_modes - 1), min_size=2, max_size=2, unique=True))
    tau = data.draw(st.floats(0.0, 1.0))
    out = beamsplitter(s, i, j, tau)
    assert out.entropy() == pytest.approx(s.entropy(), abs=1e-9)
    assert symplectic_eigenvalues(out.cov)[-1] >= 1 - 1e-9


@given(gaussian_states(min_modes=2), st.data())
@settings(max_examples=200, deadline=None)
def test_conditioning_invariants(s, data):
    mode = data.draw(st.integers(0, s.num_modes - 1))
    kind = data.draw(st.sampled_from(["q", "p", "het"]))
    if kind == "het":
        cov, mean_map = condition_heterodyne(s, mode)
        outcome = np.array([0.3, -1.2])
    else:
        cov, mean_map = condition_homodyne(s, mode, kind)
        outcome = np.array([2.5])
    rest = [m for m in range(s.num_modes) if m != mode]
    # covariance is outcome independent; the mean map is affine
    m0, m1, m2 = mean_map(0 * outcome), mean_map(outcome), mean_map(2 * outcome)
    np.testing.assert_allclose(m2 - m1, m1 - m0, atol=1e-9 * (1 + np.abs(m1).max()))
    assert symplectic_eigenvalues(cov)[-1] >= 1 - 1e-9
    assert von_neumann_entropy(cov) <= partial_trace(s, rest).entropy() + 1e-9
