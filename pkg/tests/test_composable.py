import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvmdi.channel import LinkParams
from cvmdi.composable import (
    EPS_DEFAULT,
    PE_RATIO_GRID,
    EstimatedChannel,
    FiniteSizeParams,
    composable_rate,
    config_from_estimates,
    delta_aep,
    delta_ent,
    epsilon_total,
    expected_channel,
    optimize_pe_and_modulation,
    pe_asymptotic_rate,
    reconciliation_efficiency,
    tail_quantile,
    theta_term,
)
from cvmdi.protocol import MdiConfig, asymptotic_rate, holevo_eve
from cvmdi.simulate import estimate_channel, simulate_rounds

EPS = 2.0**-32
eps_values = st.floats(1e-30, 0.4)


def _params(n_total=10**7, ratio=0.1, **kw):
    return FiniteSizeParams(n_total=n_total, m=int(ratio * n_total), **kw)


def _protocol(ta=0.95, tb=0.7, zeta=0.01, mu=30.0, **kw):
    return MdiConfig(mu, LinkParams.from_tau(ta, zeta=zeta), LinkParams.from_tau(tb, zeta=zeta), **kw)


class TestEpsilon:
    def test_all_equal(self):
        eps = epsilon_total(_params())["epsilon"]
        assert eps == 7 * EPS
        assert eps == pytest.approx(1.63e-9, rel=1e-3)

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            _params(eps_s=0.0)

    @given(eps_values, eps_values)
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        for name in ("eps_s", "eps_h", "eps_cor", "eps_ent", "eps_pe"):
            assert epsilon_total(_params(**{name: lo}))["epsilon"] <= epsilon_total(_params(**{name: hi}))["epsilon"]

    @given(eps_values, eps_values, eps_values, eps_values, eps_values, st.integers(1, 5), st.integers(1, 100))
    def test_sum_formula(self, s, h, cor, ent, pe, n_pe, n_bks):
        p = _params(eps_s=s, eps_h=h, eps_cor=cor, eps_ent=ent, eps_pe=pe, n_pe=n_pe, n_bks=n_bks)
        out = epsilon_total(p)
        assert out["epsilon"] == cor + s + h + ent + n_pe * pe
        assert out["session"] == n_bks * out["epsilon"]


class TestCorrections:
    def test_delta_ent_value(self):
        direct = math.log2(1e6) * math.sqrt(2.0 / 1e6 * math.log(2.0 / EPS))
        assert delta_ent(10**6, EPS) == pytest.approx(direct, abs=1e-12)
        assert delta_ent(10**6, EPS) == pytest.approx(0.1348, abs=1e-4)

    def test_delta_ent_limit(self):
        assert delta_ent(10**10, EPS) < 1e-3

    @given(eps_values, eps_values)
    def test_delta_ent_increasing_as_eps_shrinks(self, a, b):
        lo, hi = sorted((a, b))
        assert delta_ent(10**6, lo) >= delta_ent(10**6, hi)

    def test_delta_aep_value(self):
        direct = 4 * math.log2(130) * math.sqrt(65)
        assert delta_aep(14, EPS) == pytest.approx(direct, abs=1e-12)
        assert delta_aep(14, EPS) == pytest.approx(226.5, abs=0.05)

    def test_delta_aep_monotone(self):
        assert all(delta_aep(d, EPS) < delta_aep(d + 1, EPS) for d in range(1, 20))
        assert delta_aep(14, 1e-20) > delta_aep(14, 1e-10)

    def test_theta_value(self):
        assert theta_term(EPS, EPS) == -95.0
        assert theta_term(1.0, 1.0) == 1.0

    @given(eps_values, eps_values)
    def test_theta_negative(self, h, cor):
        assert theta_term(h, cor) < 0


class TestEstimators:
    def test_median_quantile(self):
        assert tail_quantile(0.5) == 0.0
        ch = expected_channel(_protocol(), 10**5, 0.5)
        assert (ch.tau_a_wc, ch.tau_b_wc, ch.xi_noise_wc) == (ch.tau_a_hat, ch.tau_b_hat, ch.xi_noise_hat)

    @given(st.floats(1e-12, 0.49))
    @settings(max_examples=30)
    def test_worst_case_direction(self, eps_pe):
        ch = expected_channel(_protocol(), 10**5, eps_pe)
        assert ch.tau_a_wc < ch.tau_a_hat and ch.tau_b_wc < ch.tau_b_hat
        assert ch.xi_noise_wc > ch.xi_noise_hat

    def test_expected_values(self):
        cfg = _protocol()
        ch = expected_channel(cfg, 10**6, 0.5)
        assert ch.tau_a_hat == pytest.approx(0.95, rel=1e-12)
        assert ch.tau_b_hat == pytest.approx(0.7, rel=1e-12)
        assert ch.xi_noise_hat == pytest.approx(0.5 * (0.95 + 0.7) * 0.01, rel=1e-9)

    def test_simulated_half_transmission(self):
        cfg = MdiConfig(11.0, LinkParams.from_tau(0.5), LinkParams.from_tau(0.5))
        ch = estimate_channel(simulate_rounds(cfg, 10**5, seed=4))
        assert abs(ch.tau_a_hat - 0.5) < 4 * ch.std_errors["tau_a"]
        assert abs(ch.tau_b_hat - 0.5) < 4 * ch.std_errors["tau_b"]

    def test_estimates_validated(self):
        with pytest.raises(ValueError):
            EstimatedChannel(0.5, 0.5, 0.0, 0.6, 0.4, 0.1)


class TestReconciliation:
    def test_unit_boundary(self):
        assert reconciliation_efficiency(4.0, 10**6 * (4.0 - 2.6), 10**6, 2.6) == pytest.approx(1.0)

    def test_value(self):
        assert reconciliation_efficiency(4.0, 1.5e6, 10**6, 2.6) == pytest.approx(0.9615, abs=1e-4)

    @given(st.floats(0, 1e6), st.floats(0, 1e6))
    def test_decreasing_in_leak(self, a, b):
        lo, hi = sorted((a, b))
        assert reconciliation_efficiency(4.0, lo, 10**6, 2.6) >= reconciliation_efficiency(4.0, hi, 10**6, 2.6)

    def test_leak_drives_rate(self):
        base = _params(leak_ec=1.5 * 9 * 10**6, h_key_hat=4.0)
        res = pe_asymptotic_rate(base, expected_channel(_protocol(), base.m_total, EPS), _protocol())
        assert res["xi_hat"] == pytest.approx((4.0 - 1.5) / res["i_ab"], rel=1e-12)


class TestComposableRate:
    def test_large_block_limit(self):
        cfg = _protocol()
        p = FiniteSizeParams(n_total=round(1e10 / 0.9), m=round(1e10 / 9), xi_hat=0.98, p_ec=0.95)
        assert p.n == pytest.approx(1e10, rel=1e-9)
        r = composable_rate(p, None, cfg).rate_bits_per_use
        a = asymptotic_rate(cfg)
        expected = 0.95 * (p.n / p.n_total) * (0.98 * a.i_ab - a.i_eve)
        assert r == pytest.approx(expected, abs=1e-3)

    def test_clamped(self):
        res = composable_rate(_params(n_total=10**5), None, _protocol(tb=0.05))
        assert res.rate_bits_per_use == 0.0 and res.diagnostics["unclamped"] < 0

    @given(st.floats(0.3, 0.999), st.floats(0.05, 0.999), st.floats(0.0, 0.05), st.floats(2.0, 1e3), st.sampled_from([1e5, 1e6, 1e8]))
    @settings(max_examples=40, deadline=None)
    def test_bounded_by_pe_rate(self, ta, tb, zeta, mu, n_total):
        cfg = _protocol(ta, tb, zeta, mu)
        p = _params(int(n_total), xi_hat=0.97, p_ec=0.9)
        res = composable_rate(p, None, cfg)
        ch = expected_channel(cfg, p.m_total, p.eps_pe)
        bound = p.p_ec * p.n / p.n_total * pe_asymptotic_rate(p, ch, cfg)["rate"]
        assert res.diagnostics["unclamped"] <= bound + 1e-12

    def test_monotone_in_block_size(self):
        cfg = _protocol()
        rates = [composable_rate(_params(int(n), xi_hat=0.98), None, cfg).diagnostics["unclamped"] for n in np.logspace(5, 11, 13)]
        assert np.all(np.diff(rates) >= 0)

    @given(st.floats(0.3, 0.999), st.floats(0.05, 0.999), st.floats(0.0, 0.05), st.floats(2.0, 1e3), st.floats(1e-12, 0.4))
    @settings(max_examples=40, deadline=None)
    def test_worst_case_holevo_not_smaller(self, ta, tb, zeta, mu, eps_pe):
        cfg = _protocol(ta, tb, zeta, mu)
        ch = expected_channel(cfg, 10**5, eps_pe)
        hat = holevo_eve(config_from_estimates(cfg, ch.tau_a_hat, ch.tau_b_hat, ch.xi_noise_hat))
        wc = pe_asymptotic_rate(_params(), ch, cfg)["i_e_wc"]
        assert wc >= hat - 1e-9

    def test_effective_channel_matches_protocol(self):
        # the rebuilt effective channel gives the same asymptotic quantities
        cfg = _protocol(eta_eff=1.0, u_el=0.0)
        ch = expected_channel(cfg, 10**6, 0.5)
        rebuilt = config_from_estimates(cfg, ch.tau_a_hat, ch.tau_b_hat, ch.xi_noise_hat)
        assert holevo_eve(rebuilt) == pytest.approx(holevo_eve(cfg.with_mu(30.0)), abs=0.05)


class TestOptimization:
    def test_beats_every_grid_choice(self):
        cfg = _protocol()
        p = _params(10**7, xi_hat=0.98)
        best = optimize_pe_and_modulation(p, cfg, mu_max=1e3).diagnostics["unclamped"]
        for ratio in PE_RATIO_GRID[::3]:
            for mu in (3.0, 30.0, 300.0):
                fixed = composable_rate(p.with_pe_ratio(ratio), None, cfg.with_mu(mu)).diagnostics["unclamped"]
                assert best >= fixed - 1e-12

    def test_pe_fraction_shrinks_with_block(self):
        cfg = _protocol(tb=0.6)
        ratios = [
            optimize_pe_and_modulation(_params(int(n), xi_hat=0.98), cfg, mu_max=1e3).diagnostics["pe_ratio"]
            for n in (10**6, 10**8, 10**10)
        ]
        assert ratios[0] >= ratios[1] >= ratios[2] and ratios[0] > ratios[2]

    def test_deterministic(self):
        p = _params(10**7, xi_hat=0.98)
        a = optimize_pe_and_modulation(p, _protocol(), mu_max=1e3)
        b = optimize_pe_and_modulation(p, _protocol(), mu_max=1e3)
        assert a == b

    def test_default_epsilon(self):
        assert EPS_DEFAULT == EPS
