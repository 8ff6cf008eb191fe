"""Composable finite-size key rate.

The asymptotic rate computed from parameter estimation (PE) is corrected
for entropy estimation, the asymptotic equipartition property and privacy
amplification, then scaled by the fraction of key-generating points and
the error-correction success probability.

Parameter estimation sees the *effective* channel: detector efficiency is
absorbed into the transmissivities and electronic noise into the excess
noise. Eve is credited with all of the estimated noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erfinv

from .channel import LinkParams
from .protocol import (
    DEFAULT_MU_MAX,
    MdiConfig,
    RateResult,
    holevo_eve,
    maximize_over_log_modulation,
    mutual_information_ab,
)

EPS_DEFAULT = 2.0**-32
PE_RATIO_GRID = tuple(np.round(np.concatenate([np.arange(0.01, 0.1, 0.01), np.arange(0.1, 0.51, 0.05)]), 4))


@dataclass(frozen=True)
class FiniteSizeParams:
    """Block structure, digitization and failure probabilities.

    ``m`` points of each ``n_total``-point block are used for PE. Set either
    ``xi_hat`` directly or ``leak_ec`` with ``h_key_hat`` to derive it.
    """

    n_total: int
    m: int
    n_bks: int = 1
    d_bits: int = 14
    eps_s: float = EPS_DEFAULT
    eps_h: float = EPS_DEFAULT
    eps_cor: float = EPS_DEFAULT
    eps_ent: float = EPS_DEFAULT
    eps_pe: float = EPS_DEFAULT
    p_ec: float = 1.0
    n_pe: int = 3
    xi_hat: float | None = None
    leak_ec: float | None = None
    h_key_hat: float | None = None

    def __post_init__(self):
        if self.n_total < 1 or self.n_bks < 1 or self.d_bits < 1 or self.n_pe < 1:
            raise ValueError("block sizes, d_bits and n_pe must be positive")
        if not 0 <= self.m <= self.n_total:
            raise ValueError(f"m must lie in [0, {self.n_total}], got {self.m}")
        for name in ("eps_s", "eps_h", "eps_cor", "eps_ent", "eps_pe"):
            eps = getattr(self, name)
            if not 0.0 < eps < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {eps!r}")
        if not 0.0 < self.p_ec <= 1.0:
            raise ValueError(f"p_ec must lie in (0, 1], got {self.p_ec!r}")
        if self.leak_ec is not None and self.leak_ec < 0:
            raise ValueError("leak_ec must be non-negative")

    @property
    def n(self) -> int:
        return self.n_total - self.m

    @property
    def m_total(self) -> int:
        """PE points pooled over all blocks."""
        return self.n_bks * self.m

    def with_pe_ratio(self, ratio: float) -> "FiniteSizeParams":
        return replace(self, m=int(round(ratio * self.n_total)))


@dataclass(frozen=True)
class EstimatedChannel:
    """Point and worst-case estimates of the effective channel."""

    tau_a_hat: float
    tau_b_hat: float
    xi_noise_hat: float
    tau_a_wc: float
    tau_b_wc: float
    xi_noise_wc: float
    h_key_hat: float | None = None
    std_errors: dict = field(default_factory=dict)

    def __post_init__(self):
        for t in (self.tau_a_hat, self.tau_b_hat, self.tau_a_wc, self.tau_b_wc):
            if not 0.0 < t <= 1.0:
                raise ValueError(f"transmissivity estimate {t!r} outside (0, 1]")
        if self.tau_a_wc > self.tau_a_hat or self.tau_b_wc > self.tau_b_hat:
            raise ValueError("worst-case transmissivity exceeds its estimate")
        if self.xi_noise_wc < self.xi_noise_hat:
            raise ValueError("worst-case excess noise below its estimate")


def epsilon_total(params: FiniteSizeParams) -> dict:
    """Per-block security parameter and its value over the whole session."""
    eps = params.eps_cor + params.eps_s + params.eps_h + params.eps_ent + params.n_pe * params.eps_pe
    return {"epsilon": eps, "session": params.n_bks * eps}


def delta_ent(n: int, eps_ent: float) -> float:
    if n < 2:
        raise ValueError("entropy-estimation correction needs n >= 2")
    return math.log2(n) * math.sqrt(2.0 / n * math.log(2.0 / eps_ent))


def delta_aep(d_bits: int, eps_s: float) -> float:
    return 4.0 * math.log2(2.0 ** (d_bits / 2.0) + 2.0) * math.sqrt(math.log2(2.0 / eps_s**2))


def theta_term(eps_h: float, eps_cor: float) -> float:
    return math.log2(2.0 * eps_h**2 * eps_cor)


def tail_quantile(eps_pe: float) -> float:
    """Number of standard errors ``w`` with one-sided Gaussian tail ``eps_pe``."""
    return math.sqrt(2.0) * float(erfinv(1.0 - 2.0 * eps_pe))


def reconciliation_efficiency(h_key_hat: float, leak_ec: float, n: int, i_ab_hat: float) -> float:
    if i_ab_hat <= 0.0:
        raise ValueError("mutual information estimate must be positive")
    return (h_key_hat - leak_ec / n) / i_ab_hat


def _worst_case(tau_a, tau_b, xi_noise, s_tau_a, s_tau_b, s_xi, eps_pe, h_key=None):
    w = tail_quantile(eps_pe)
    tau_a_wc = max(tau_a - w * s_tau_a, 1e-300)
    tau_b_wc = max(tau_b - w * s_tau_b, 1e-300)
    return EstimatedChannel(
        tau_a, tau_b, xi_noise, tau_a_wc, tau_b_wc, xi_noise + w * s_xi, h_key,
        {"tau_a": s_tau_a, "tau_b": s_tau_b, "xi": s_xi, "w": w},
    )


def worst_case_estimators(stats: dict, eps_pe: float) -> EstimatedChannel:
    """Worst-case channel from PE sufficient statistics.

    ``stats`` holds ``sigma2`` (modulation variance per quadrature),
    ``cov_a`` and ``cov_b`` (empirical covariances of each user's
    displacement with the relay outcome, sign-corrected so they are
    positive), ``var_gamma`` (relay outcome variance), ``m`` (number of
    pooled samples) and optionally ``resid_var``, the least-squares residual
    variance of the outcome. Without it the residual is formed from the
    known modulation variance. The relay outcome is modelled as
    ``gamma = (sqrt(tau_a) x_a -/+ sqrt(tau_b) x_b)/sqrt2 + noise`` with
    noise variance ``1 + Xi``.
    """
    m = int(stats["m"])
    if m < 2:
        raise ValueError("need at least two PE samples")
    s2 = float(stats["sigma2"])
    ca, cb, vg = float(stats["cov_a"]), float(stats["cov_b"]), float(stats["var_gamma"])
    resid = float(stats.get("resid_var", vg - (ca**2 + cb**2) / s2))
    if resid <= 0.0 or vg <= 0.0:
        raise ValueError("negative variance estimate")
    tau_a = min(2.0 * ca**2 / s2**2, 1.0)
    tau_b = min(2.0 * cb**2 / s2**2, 1.0)
    s_ca = math.sqrt((s2 * vg + ca**2) / m)
    s_cb = math.sqrt((s2 * vg + cb**2) / m)
    s_tau_a = 4.0 * abs(ca) * s_ca / s2**2
    s_tau_b = 4.0 * abs(cb) * s_cb / s2**2
    s_xi = resid * math.sqrt(2.0 / m)
    return _worst_case(tau_a, tau_b, resid - 1.0, s_tau_a, s_tau_b, s_xi, eps_pe, stats.get("h_key"))


def expected_channel(config: MdiConfig, m_total: int, eps_pe: float) -> EstimatedChannel:
    """Estimates at their expected values, with the standard errors of ``m_total`` PE rounds.

    Both quadratures contribute a sample per round.
    """
    la, lb = config.effective_links()
    s2 = config.mu - 1.0
    xi_noise = 0.5 * (la.tau * la.zeta + lb.tau * lb.zeta) + config.u_el
    ca = math.sqrt(la.tau / 2.0) * s2
    cb = math.sqrt(lb.tau / 2.0) * s2
    vg = 0.5 * (la.tau + lb.tau) * s2 + 1.0 + xi_noise
    stats = {"m": 2 * m_total, "sigma2": s2, "cov_a": ca, "cov_b": cb, "var_gamma": vg}
    return worst_case_estimators(stats, eps_pe)


def config_from_estimates(template: MdiConfig, tau_a: float, tau_b: float, xi_noise: float) -> MdiConfig:
    """Protocol with the effective channel: ideal detector, noise split as equal ``zeta``."""
    # a lossless link cannot carry noise; the other link then takes all of it
    lossy = [t for t in (tau_a, tau_b) if t < 1.0]
    zeta = 2.0 * max(xi_noise, 0.0) / sum(lossy) if lossy else 0.0
    la = LinkParams.from_tau(tau_a, zeta=zeta) if tau_a < 1.0 else LinkParams.from_tau(1.0)
    lb = LinkParams.from_tau(tau_b, zeta=zeta) if tau_b < 1.0 else LinkParams.from_tau(1.0)
    return MdiConfig(template.mu, la, lb, eta_eff=1.0, u_el=0.0, xi=template.xi, encoder=template.encoder)


def _interval(hat: float, wc: float) -> tuple[float, float]:
    return wc, min(2.0 * hat - wc, 1.0)


def pe_asymptotic_rate(params: FiniteSizeParams, channel: EstimatedChannel, protocol: MdiConfig) -> dict:
    """``xi_hat * I_AB(estimates) - I_E(worst case)``.

    Eve's information is not monotone in the transmissivities, so the worst
    case is the largest Holevo bound over the corners of the confidence box
    ``tau_hat +/- (tau_hat - tau_wc)`` at the worst-case excess noise.
    """
    hat = config_from_estimates(protocol, channel.tau_a_hat, channel.tau_b_hat, channel.xi_noise_hat)
    i_ab = mutual_information_ab(hat)
    i_e = max(
        holevo_eve(config_from_estimates(protocol, ta, tb, channel.xi_noise_wc))
        for ta in _interval(channel.tau_a_hat, channel.tau_a_wc)
        for tb in _interval(channel.tau_b_hat, channel.tau_b_wc)
    )
    if params.xi_hat is not None:
        xi = params.xi_hat
    elif params.leak_ec is not None and (params.h_key_hat or channel.h_key_hat) is not None:
        h_key = params.h_key_hat if params.h_key_hat is not None else channel.h_key_hat
        xi = reconciliation_efficiency(h_key, params.leak_ec, params.n, i_ab)
    else:
        xi = protocol.xi
    return {"rate": xi * i_ab - i_e, "i_ab": i_ab, "i_e_wc": i_e, "xi_hat": xi}


def composable_rate(
    params: FiniteSizeParams, channel: EstimatedChannel | None, protocol: MdiConfig
) -> RateResult:
    """Composable key rate in bits per relay use, clamped at zero.

    ``channel=None`` uses :func:`expected_channel` for ``params.m_total``
    PE rounds.
    """
    if params.m_total < 2 and channel is None:
        raise ValueError("parameter estimation needs m >= 2 points")
    if channel is None:
        channel = expected_channel(protocol, params.m_total, params.eps_pe)
    pe = pe_asymptotic_rate(params, channel, protocol)
    n = params.n
    d_ent = delta_ent(n, params.eps_ent)
    d_aep = delta_aep(params.d_bits, params.eps_s)
    theta = theta_term(params.eps_h, params.eps_cor)
    raw = params.p_ec * (n * pe["rate"] - n * d_ent - math.sqrt(n) * d_aep + theta) / params.n_total
    diag = {
        "r_pe": pe["rate"],
        "xi_hat": pe["xi_hat"],
        "delta_ent": d_ent,
        "delta_aep": d_aep,
        "theta": theta,
        "unclamped": raw,
        "pe_ratio": params.m / params.n_total,
        "mu": protocol.mu,
        "tau_a_wc": channel.tau_a_wc,
        "tau_b_wc": channel.tau_b_wc,
        "xi_noise_wc": channel.xi_noise_wc,
        "epsilon": epsilon_total(params)["epsilon"],
    }
    return RateResult(max(raw, 0.0), pe["i_ab"], pe["i_e_wc"], diag)


def optimize_pe_and_modulation(
    params: FiniteSizeParams,
    protocol: MdiConfig,
    pe_ratios=PE_RATIO_GRID,
    mu_max: float = DEFAULT_MU_MAX,
    grid_points: int = 20,
) -> RateResult:
    """Best composable rate over the PE-ratio grid and the modulation."""
    best = None
    for ratio in pe_ratios:
        p = params.with_pe_ratio(ratio)
        if p.m_total < 2 or p.n < 2:
            continue

        def objective(mu, p=p):
            return composable_rate(p, None, protocol.with_mu(mu)).diagnostics["unclamped"]

        mu, _ = maximize_over_log_modulation(objective, mu_max, grid_points)
        res = composable_rate(p, None, protocol.with_mu(mu))
        if best is None or res.diagnostics["unclamped"] > best.diagnostics["unclamped"]:
            best = res
    if best is None:
        raise ValueError("no admissible PE ratio")
    return best


def composable_sweep(params: FiniteSizeParams, make_protocol, distances_km) -> list[RateResult]:
    """Optimized composable rate for each distance; ``make_protocol(d)`` builds the config."""
    return [optimize_pe_and_modulation(params, make_protocol(d)) for d in distances_km]


def crossover_distance(params: FiniteSizeParams, make_protocol, lo_km: float, hi_km: float, tol_km: float = 0.05) -> float:
    """Distance where the optimized (unclamped) composable rate reaches zero, by bisection."""

    def value(d):
        return optimize_pe_and_modulation(params, make_protocol(d)).diagnostics["unclamped"]

    if value(lo_km) <= 0.0:
        return lo_km
    if value(hi_km) > 0.0:
        return float("inf")
    a, b = lo_km, hi_km
    while b - a > tol_km:
        mid = 0.5 * (a + b)
        a, b = (mid, b) if value(mid) > 0.0 else (a, mid)
    return 0.5 * (a + b)
