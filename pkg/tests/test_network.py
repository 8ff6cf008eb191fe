import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvmdi.channel import LinkParams
from cvmdi.gaussian import symplectic_eigenvalues
from cvmdi.network import (
    RelayLayout,
    StarConfig,
    UnsupportedConfigurationError,
    build_star_state,
    cascade_layout,
    conference_rate,
    generalized_bell_condition,
    max_radius,
    optimize_for_max_distance,
    radius_scaling_fit,
    three_user_ensemble,
    three_user_postselected_rate,
    symmetric_links,
)
from cvmdi.protocol import (
    MdiConfig,
    asymptotic_rate,
    build_global_state,
    maximize_over_log_modulation,
    relay_condition,
)


class TestLayout:
    def test_two_users(self):
        assert cascade_layout(2).transmissivities == (0.5,)

    def test_three_users(self):
        assert cascade_layout(3).transmissivities == pytest.approx((1 / 2, 2 / 3))

    def test_five_users_symmetric_final_mode(self):
        lay = cascade_layout(5)
        assert lay.transmissivities == pytest.approx((1 / 2, 2 / 3, 3 / 4, 4 / 5))
        row = lay.matrix()[0, 0::2]
        np.testing.assert_allclose(row, np.full(5, 1 / math.sqrt(5)), atol=1e-15)

    @pytest.mark.parametrize("n", range(2, 11))
    def test_orthogonal(self, n):
        s = cascade_layout(n).matrix()
        np.testing.assert_allclose(s @ s.T, np.eye(2 * n), atol=1e-14)

    def test_rejects_bad(self):
        with pytest.raises(ValueError):
            cascade_layout(1)
        with pytest.raises(ValueError):
            RelayLayout((0.7, 0.5))


class TestConditioning:
    def test_two_user_reduces_to_bell_detection(self):
        cfg = MdiConfig(8.0, LinkParams.from_tau(0.7, omega=1.2), LinkParams.from_tau(0.5, omega=1.1))
        ref = relay_condition(build_global_state(cfg))
        star = StarConfig((cfg.link_a, cfg.link_b), mu=8.0)
        cov, _ = generalized_bell_condition(build_star_state(star), star.layout(), [1, 3])
        # retained (a, b) blocks
        np.testing.assert_allclose(cov[:4, :4], ref.block([0, 1]), atol=1e-12)

    def test_three_ideal_users_pairwise_entangled(self):
        cfg = StarConfig(symmetric_links(3, 0.0), mu=5.0)
        cov, _ = generalized_bell_condition(build_star_state(cfg), cfg.layout(), [1, 3, 5])
        flip = np.diag([1.0, 1.0, 1.0, -1.0])
        for i, j in ((0, 1), (0, 2), (1, 2)):
            idx = np.r_[2 * i:2 * i + 2, 2 * j:2 * j + 2]
            pair = cov[np.ix_(idx, idx)]
            assert symplectic_eigenvalues(flip @ pair @ flip)[-1] < 1.0

    def test_outcome_independent(self):
        cfg = StarConfig(symmetric_links(4, 1.0, 0.02), mu=6.0)
        _, mean_map = generalized_bell_condition(build_star_state(cfg), cfg.layout(), [1, 3, 5, 7])
        x = np.array([0.3, -1.0, 2.0, 0.5])
        np.testing.assert_allclose(mean_map(2 * x) - mean_map(x), mean_map(x) - mean_map(0 * x), atol=1e-10)


class TestConferenceRate:
    @given(st.floats(1.5, 200.0), st.floats(0.01, 10.0), st.floats(0.01, 10.0), st.floats(0.0, 0.05))
    @settings(max_examples=30, deadline=None)
    def test_two_users_match_two_party(self, mu, da, db, nbar):
        la, lb = LinkParams.from_distance(da, nbar=nbar), LinkParams.from_distance(db, nbar=nbar)
        star = conference_rate(StarConfig((la, lb), mu=mu)).rate_bits_per_use
        assert star == pytest.approx(asymptotic_rate(MdiConfig(mu, la, lb)).rate_bits_per_use, abs=1e-9)

    def test_decreasing_in_users(self):
        rates = [conference_rate(StarConfig.symmetric(n, 0.3, mu=20.0)).rate_bits_per_use for n in range(2, 11)]
        assert np.all(np.diff(rates) < 0)

    @given(st.lists(st.floats(0.0, 3.0), min_size=4, max_size=4), st.randoms())
    @settings(max_examples=20, deadline=None)
    def test_permutation_invariance(self, dists, rnd):
        links = [LinkParams.from_distance(d) for d in dists]
        tail = links[1:]
        rnd.shuffle(tail)
        a = conference_rate(StarConfig(tuple(links), mu=10.0)).rate_bits_per_use
        b = conference_rate(StarConfig((links[0], *tail), mu=10.0)).rate_bits_per_use
        assert a == pytest.approx(b, abs=1e-9)

    @given(st.integers(3, 6), st.lists(st.floats(0.0, 2.0), min_size=6, max_size=6), st.floats(2.0, 100.0))
    @settings(max_examples=20, deadline=None)
    def test_bounded_by_nearest_pair(self, n, dists, mu):
        links = tuple(LinkParams.from_distance(d) for d in dists[:n])
        conf = conference_rate(StarConfig(links, mu=mu)).rate_bits_per_use
        nearest = min(links[1:], key=lambda lk: lk.distance_km)
        assert conf <= asymptotic_rate(MdiConfig(mu, links[0], nearest)).rate_bits_per_use + 1e-9


class TestRadius:
    def test_bisection_bracket(self):
        r = max_radius(3, 10.0)
        assert conference_rate(StarConfig.symmetric(3, r - 2e-3, 10.0)).rate_bits_per_use > 0
        assert conference_rate(StarConfig.symmetric(3, r + 2e-3, 10.0)).rate_bits_per_use < 0

    def test_distance_optimized_modulation_trades_short_range_rate(self):
        best = optimize_for_max_distance(4)
        at_short = conference_rate(StarConfig.symmetric(4, 0.1, best.mu)).rate_bits_per_use
        _, rate_opt = maximize_over_log_modulation(
            lambda m: conference_rate(StarConfig.symmetric(4, 0.1, m)).rate_bits_per_use, 1e4
        )
        assert at_short <= rate_opt + 1e-12

    def test_deterministic(self):
        assert optimize_for_max_distance(3) == optimize_for_max_distance(3)

    def test_fit_exact(self):
        c, r2 = radius_scaling_fit({n: 2.0 / n for n in range(2, 11)})
        assert c == pytest.approx(2.0) and r2 == pytest.approx(1.0)


class TestThreeUserPostselection:
    def test_orientations_equivalent(self):
        links = symmetric_links(3, 0.4)
        a, b = three_user_ensemble(links, "reversed"), three_user_ensemble(links, "standard")
        np.testing.assert_allclose(a.coef, b.coef, atol=1e-12)
        np.testing.assert_allclose(a.overlap_form, b.overlap_form, atol=1e-12)

    def test_thermal_rejected(self):
        with pytest.raises(UnsupportedConfigurationError):
            three_user_ensemble(symmetric_links(3, 1.0, nbar=0.05))

    def test_colocated_users(self):
        res = three_user_postselected_rate(symmetric_links(3, 0.0))
        assert 0 < res.rate_bits_per_use <= 1.0

    def test_beats_gaussian_protocol_at_unit_variance(self):
        r = 0.5
        plain = conference_rate(StarConfig.symmetric(3, r, mu=2.0)).rate_bits_per_use
        ps = three_user_postselected_rate(symmetric_links(3, r))
        assert plain < 0
        assert ps.rate_bits_per_use > 0

    def test_independent_seeds_agree(self):
        links = symmetric_links(3, 0.2)
        a = three_user_postselected_rate(links, seed=1)
        b = three_user_postselected_rate(links, seed=2)
        assert abs(a.rate_bits_per_use - b.rate_bits_per_use) <= 3 * math.hypot(a.std_error, b.std_error)

    def test_integrand_nonnegative(self):
        res = three_user_postselected_rate(symmetric_links(3, 3.0))
        assert min(res.diagnostics["replicas"]) >= 0.0
