"""N-user star network with a beamsplitter-cascade relay.

Users' signals meet at a cascade of ``N - 1`` beamsplitters. The running
mode ends as the equal-weight combination of all inputs; the side outputs
are homodyned in one quadrature and the final mode in the other. For
``N = 2`` the cascade is the two-party Bell relay.

Global mode order for the conference rate is
``(a_1, A_1', ..., a_N, A_N', E_1', e_1, ..., E_N', e_N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy.stats import norm, qmc

from . import kernels
from .channel import LinkParams
from .gaussian import (
    GaussianState,
    apply_symplectic,
    beamsplitter,
    condition_heterodyne,
    condition_quadratures,
    direct_sum,
    gaussian_mutual_information,
    tmsv,
    von_neumann_entropy,
)
from .postselect import DEFAULT_TRUNCATION, EnsembleConstants, relay_ensemble
from .protocol import RateResult, golden_section_max

Orientation = Literal["standard", "reversed"]


class UnsupportedConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RelayLayout:
    """Cascade transmissivities and the homodyne pattern.

    ``side_quadrature`` is measured on the ``N - 1`` side outputs and the
    other quadrature on the final (symmetric) mode.
    """

    transmissivities: tuple[float, ...]
    side_quadrature: str = "q"

    def __post_init__(self):
        t = self.transmissivities
        if not t:
            raise ValueError("a relay needs at least one beamsplitter")
        if any(not 0.0 < x < 1.0 for x in t):
            raise ValueError("cascade transmissivities must lie in (0, 1)")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("cascade transmissivities must be strictly increasing")
        if self.side_quadrature not in ("q", "p"):
            raise ValueError("side_quadrature must be 'q' or 'p'")

    @property
    def num_users(self) -> int:
        return len(self.transmissivities) + 1

    @property
    def final_quadrature(self) -> str:
        return "p" if self.side_quadrature == "q" else "q"

    def matrix(self) -> np.ndarray:
        """Symplectic on the ``N`` travelling modes; mode 0 ends as the final mode."""
        n = self.num_users
        s = np.eye(2 * n)
        for k, t in enumerate(self.transmissivities, start=1):
            step = np.eye(2 * n)
            a, b = math.sqrt(t), math.sqrt(1.0 - t)
            for c in range(2):
                i, j = c, 2 * k + c
                step[i, i], step[i, j] = a, b
                step[j, i], step[j, j] = b, -a
            s = step @ s
        return s

    def measurements(self, modes: Sequence[int] | None = None) -> list[tuple[int, str]]:
        """Side homodynes first, final-mode homodyne last."""
        modes = list(range(self.num_users)) if modes is None else list(modes)
        return [(m, self.side_quadrature) for m in modes[1:]] + [(modes[0], self.final_quadrature)]


def cascade_layout(num_users: int, orientation: Orientation = "standard") -> RelayLayout:
    """``T_k = k / (k + 1)``; the standard orientation q-homodynes the side outputs."""
    if num_users < 2:
        raise ValueError("a star network needs at least two users")
    t = tuple(k / (k + 1.0) for k in range(1, num_users))
    return RelayLayout(t, "q" if orientation == "standard" else "p")


@dataclass(frozen=True)
class StarConfig:
    """Symmetric or asymmetric star network.

    ``mu`` is the TMSV variance of every user (modulation ``mu - 1``).
    """

    links: tuple[LinkParams, ...]
    mu: float = 10.0
    u_el: float = 0.0
    orientation: Orientation = "standard"

    def __post_init__(self):
        if len(self.links) < 2:
            raise ValueError("a star network needs at least two users")
        if self.mu < 1.0:
            raise ValueError("mu must be >= 1")
        if self.u_el < 0.0:
            raise ValueError("electronic noise must be non-negative")

    @property
    def num_users(self) -> int:
        return len(self.links)

    @classmethod
    def symmetric(cls, num_users: int, radius_km: float, mu: float = 10.0, nbar: float = 0.0, **kw) -> "StarConfig":
        link = LinkParams.from_distance(radius_km, nbar=nbar)
        return cls(tuple([link] * num_users), mu, **kw)

    def with_mu(self, mu: float) -> "StarConfig":
        return replace(self, mu=mu)

    def layout(self) -> RelayLayout:
        return cascade_layout(self.num_users, self.orientation)


def build_star_state(config: StarConfig) -> GaussianState:
    """TMSV per user, one entangling cloner per link, links applied."""
    n = config.num_users
    parts = [tmsv(config.mu) for _ in range(n)]
    parts += [tmsv(lk.omega) if lk.omega > 1.0 else GaussianState.vacuum(2) for lk in config.links]
    state = direct_sum(*parts)
    for i, lk in enumerate(config.links):
        state = beamsplitter(state, 2 * i + 1, 2 * n + 2 * i, lk.tau)
    return state


def generalized_bell_condition(state: GaussianState, layout: RelayLayout, travelling: Sequence[int], u_el: float = 0.0):
    """Apply the cascade to ``travelling`` modes and homodyne all of them.

    Returns ``(cov, mean_map)`` of the remaining modes, in their original order.
    """
    n = layout.num_users
    if len(travelling) != n:
        raise ValueError("one travelling mode per user")
    big = np.eye(2 * state.num_modes)
    rows = np.array([r for m in travelling for r in (2 * m, 2 * m + 1)])
    big[np.ix_(rows, rows)] = layout.matrix()
    mixed = apply_symplectic(state, big)
    return condition_quadratures(mixed, layout.measurements(travelling), extra_noise=u_el)


def _retained_cov(config: StarConfig) -> np.ndarray:
    n = config.num_users
    state = build_star_state(config)
    cov, _ = generalized_bell_condition(state, config.layout(), [2 * i + 1 for i in range(n)], config.u_el)
    # remaining modes: a_1..a_N then Eve
    return cov[: 2 * n, : 2 * n]


def conference_rate(config: StarConfig) -> RateResult:
    """``min_j I(x_1 : x_j) - chi(E : x_1)`` given the relay outcomes.

    ``x_i`` are the users' heterodyne (prepare-and-measure) variables and
    user 1 is the reference encoder. Negative values are reported.
    """
    n = config.num_users
    v = _retained_cov(config)
    het = v + np.eye(2 * n)
    mis = []
    for j in range(1, n):
        idx = np.r_[0:2, 2 * j:2 * j + 2]
        mis.append(gaussian_mutual_information(het[np.ix_(idx, idx)], 2))
    s_e = von_neumann_entropy(v)
    after, _ = condition_heterodyne(GaussianState(np.zeros(2 * n), v), 0)
    chi = s_e - von_neumann_entropy(after)
    i_min = min(mis)
    return RateResult(i_min - chi, i_min, chi, {"mu": config.mu, "num_users": n, "pairwise_mi": tuple(mis)})


def _positive(config: StarConfig) -> bool:
    return conference_rate(config).rate_bits_per_use > 0.0


def max_radius(num_users: int, mu: float, nbar: float = 0.0, r_hi: float = 20.0, tol_km: float = 1e-3) -> float:
    """Radius (km) where the symmetric conference rate crosses zero, or 0 if never positive."""
    f = lambda r: _positive(StarConfig.symmetric(num_users, r, mu, nbar))
    r_lo = 1e-4
    if not f(r_lo):
        return 0.0
    if f(r_hi):
        return r_hi
    a, b = r_lo, r_hi
    while b - a > tol_km:
        m = 0.5 * (a + b)
        a, b = (m, b) if f(m) else (a, m)
    return 0.5 * (a + b)


@dataclass(frozen=True)
class RadiusResult:
    mu: float
    radius_km: float
    served: bool
    scan: tuple = field(default_factory=tuple)


def optimize_for_max_distance(
    num_users: int, nbar: float = 0.0, mu_grid: Sequence[float] | None = None, refine: bool = True
) -> RadiusResult:
    """Modulation maximizing the zero-rate radius of a symmetric star."""
    grid = np.logspace(0.0, 4.0, 17) + 1.0 if mu_grid is None else np.asarray(mu_grid, dtype=float)
    radii = [max_radius(num_users, mu, nbar) for mu in grid]
    k = int(np.argmax(radii))
    if radii[k] <= 0.0:
        return RadiusResult(float("nan"), 0.0, False, tuple(zip(grid, radii)))
    mu, r = float(grid[k]), float(radii[k])
    if refine and 0 < k < len(grid) - 1:
        lo, hi = math.log(grid[k - 1] - 1.0), math.log(grid[k + 1] - 1.0)
        t, rt = golden_section_max(lambda x: max_radius(num_users, 1.0 + math.exp(x), nbar), lo, hi, tol=1e-3)
        if rt > r:
            mu, r = 1.0 + math.exp(t), rt
    return RadiusResult(mu, r, True, tuple(zip(grid, radii)))


def radius_scaling_fit(radii: dict[int, float]) -> tuple[float, float]:
    """Least-squares fit ``r(N) = c / N``; returns ``(c, R^2)``."""
    ns = np.array(sorted(radii), dtype=float)
    r = np.array([radii[int(k)] for k in ns])
    x = 1.0 / ns
    c = float(x @ r / (x @ x))
    ss_res = float(np.sum((r - c * x) ** 2))
    ss_tot = float(np.sum((r - r.mean()) ** 2))
    return c, 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


# --------------------------------------------------------------------------
# three-user post-selection


def three_user_ensemble(links: Sequence[LinkParams], orientation: Orientation = "reversed") -> EnsembleConstants:
    """Sign ensemble of the 3-user relay; the key quadrature is read on the final mode."""
    if len(links) != 3:
        raise UnsupportedConfigurationError("three-user post-selection needs exactly three links")
    if any(lk.omega != 1.0 for lk in links):
        raise UnsupportedConfigurationError("three-user post-selection supports pure-loss links only")
    layout = cascade_layout(3, "standard" if orientation == "standard" else "reversed")
    measured = layout.measurements()
    return relay_ensemble(links, layout.matrix(), measured, len(measured) - 1, layout.final_quadrature)


@dataclass(frozen=True)
class QmcResult:
    rate_bits_per_use: float
    std_error: float
    points: int
    diagnostics: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {"rate_bits_per_use": self.rate_bits_per_use, "std_error": self.std_error, "points": self.points}


def _qmc_estimate(ens: EnsembleConstants, sigma2: float, u: np.ndarray, k: float) -> float:
    """One scrambled-net estimate of the positive-part integral."""
    sigma = math.sqrt(sigma2)
    mass = 2.0 * norm.cdf(k) - 1.0
    q = sigma * norm.ppf(0.5 + 0.5 * mass * u[:, :3])
    sigma_g = math.sqrt(ens.lam + float(np.sum(ens.coef**2)) * sigma2)
    g_max = k * sigma_g
    gamma = g_max * u[:, 3]
    signs = kernels.sign_table(3)
    means = (q * ens.coef[None, :]) @ signs.T
    dens_g = np.exp(-((gamma[:, None] - means) ** 2) / (2 * ens.lam)).mean(axis=1)
    dens_g /= math.sqrt(2 * math.pi * ens.lam)
    mi, chi = kernels.single_point_terms(q, gamma, ens.coef, ens.lam, ens.overlap_form)
    vals = mass**3 * 2.0 * g_max * dens_g * np.clip(mi - chi, 0.0, None)
    return math.fsum(vals) / len(vals)


def three_user_postselected_rate(
    links: Sequence[LinkParams],
    sigma2: float = 1.0,
    points: int = 2**18,
    replicas: int = 8,
    seed: int = 0,
    k: float = DEFAULT_TRUNCATION,
) -> QmcResult:
    """Post-selected 3-user conference rate by randomized quasi-Monte Carlo.

    Magnitudes are sampled through the truncated half-normal quantile and
    the relay outcome uniformly on ``[0, k sigma_gamma]`` (the integrand is
    even in the outcome). ``replicas`` independent Owen scrambles of a
    Sobol sequence give the standard error. Both detector orientations are
    evaluated and must agree; they enter with equal weight.
    """
    if points < 2e5:
        raise ValueError("use at least 2e5 QMC points")
    ens_r = three_user_ensemble(links, "reversed")
    ens_s = three_user_ensemble(links, "standard")
    if not (np.allclose(ens_r.coef, ens_s.coef, atol=1e-12) and np.allclose(ens_r.overlap_form, ens_s.overlap_form, atol=1e-12)):
        raise AssertionError("detector orientations are not equivalent for this configuration")
    per = max(points // replicas, 1)
    m = int(math.ceil(math.log2(per)))
    seeds = np.random.SeedSequence(seed).spawn(replicas)
    est = []
    for ss in seeds:
        u = qmc.Sobol(d=4, scramble=True, seed=np.random.default_rng(ss)).random_base2(m)
        est.append(_qmc_estimate(ens_r, sigma2, u, k))
    est = np.array(est)
    return QmcResult(
        float(est.mean()),
        float(est.std(ddof=1) / math.sqrt(replicas)),
        replicas * 2**m,
        {"replicas": tuple(est), "sigma2": sigma2},
    )


def symmetric_links(num_users: int, radius_km: float, nbar: float = 0.0) -> tuple[LinkParams, ...]:
    return tuple([LinkParams.from_distance(radius_km, nbar=nbar)] * num_users)
