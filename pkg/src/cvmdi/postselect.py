"""Post-selected two-party CV-MDI-QKD with sign encoding.

Each user draws Gaussian quadrature displacements of variance ``sigma2``,
announces their magnitudes and keeps the signs as raw key. Given the
magnitudes and the relay outcome, the single-point rate is the discrete
mutual information between the signs minus Eve's Holevo information on
the encoder's sign. The post-selected rate integrates the positive part of
the single-point rate over the announced parameter space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import kernels
from .channel import AttackParams, LinkParams, eve_environment_state
from .gaussian import (
    GaussianState,
    apply_symplectic,
    beamsplitter_matrix,
    condition_quadratures,
    direct_sum,
    g_entropy,
    symplectic_form,
    von_neumann_entropy,
)
from .protocol import bell_matrix, golden_section_max

Branch = Literal["q", "p"]

DEFAULT_TRUNCATION = 6.0
DEFAULT_NODES = 48
DEFAULT_PANELS = 2
RATE_FLOOR = 1e-6
PURE_TOL = 1e-9


class IntegrationError(RuntimeError):
    """Grid refinement changed the integral by more than the tolerance."""

    def __init__(self, message: str, estimate: float, error_bound: float):
        super().__init__(f"{message} (estimate {estimate:.6g}, error bound {error_bound:.3g})")
        self.estimate = estimate
        self.error_bound = error_bound


@dataclass(frozen=True)
class PsConfig:
    """Sign-encoding protocol: displacement variance and the two links."""

    sigma2: float
    link_a: LinkParams
    link_b: LinkParams
    attack: AttackParams | None = None
    u_el: float = 0.0

    def __post_init__(self):
        if not self.sigma2 > 0.0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")
        if self.u_el < 0.0:
            raise ValueError("electronic noise must be non-negative")
        attack = self.attack or AttackParams.from_links(self.link_a, self.link_b)
        if attack.correlated:
            raise ValueError("post-selection is only supported for uncorrelated attacks")
        if not (
            math.isclose(attack.omega_a, self.link_a.omega)
            and math.isclose(attack.omega_b, self.link_b.omega)
        ):
            raise ValueError("attack variances must match the link noise")

    def with_sigma2(self, sigma2: float) -> "PsConfig":
        return PsConfig(sigma2, self.link_a, self.link_b, self.attack, self.u_el)

    @property
    def links(self) -> tuple[LinkParams, LinkParams]:
        return (self.link_a, self.link_b)


@dataclass(frozen=True)
class AnnouncedPoint:
    """Announced magnitudes and relay outcome of one round.

    ``p_a``, ``p_b`` and ``gamma_p`` belong to the other quadrature; under
    phase-insensitive attacks they do not affect the q-branch quantities.
    """

    q_a: float
    q_b: float
    gamma_q: float
    p_a: float = 0.0
    p_b: float = 0.0
    gamma_p: float = 0.0

    def __post_init__(self):
        if min(self.q_a, self.q_b, self.p_a, self.p_b) < 0.0:
            raise ValueError("announced magnitudes must be non-negative")


@dataclass(frozen=True)
class EnsembleConstants:
    """Everything the single-point kernel needs, independent of the point.

    ``E[gamma | signs] = sum_i coef[i] * s_i * Q_i`` with variance ``lam``.
    Eve's relay-conditioned state for sign vector ``s`` is a displaced
    Gaussian with covariance ``eve_cov`` and mean ``eve_gain @ (s * Q)`` plus
    a sign-independent offset.
    """

    coef: np.ndarray
    lam: float
    eve_cov: np.ndarray
    eve_gain: np.ndarray

    @property
    def overlap_form(self) -> np.ndarray:
        """``M`` with overlaps ``exp(-d^T M d / 8)`` between purified components."""
        om = symplectic_form(self.eve_cov.shape[0] // 2)
        m = self.eve_gain.T @ om.T @ self.eve_cov @ om @ self.eve_gain
        return 0.5 * (m + m.T)

    @property
    def eve_is_pure(self) -> bool:
        return abs(np.linalg.det(self.eve_cov) - 1.0) < PURE_TOL * max(1.0, np.abs(self.eve_cov).max())

    @property
    def eve_entropy(self) -> float:
        return 0.0 if self.eve_is_pure else von_neumann_entropy(self.eve_cov)


def relay_ensemble(
    links: Sequence[LinkParams],
    relay: np.ndarray,
    measured: Sequence[tuple[int, str]],
    key_outcome: int,
    key_quadrature: str = "q",
    u_el: float = 0.0,
) -> EnsembleConstants:
    """Prepare-and-measure ensemble for ``n`` users behind a linear relay.

    Users occupy modes ``0..n-1`` (coherent states, vacuum covariance),
    followed by one entangling-cloner pair ``(E_i, e_i)`` per link. The
    relay applies the ``2n x 2n`` symplectic ``relay`` to the user modes and
    homodynes ``measured``; ``key_outcome`` indexes the outcome that carries
    the key quadrature.
    """
    n = len(links)
    if relay.shape != (2 * n, 2 * n):
        raise ValueError("relay matrix must act on the user modes")
    env = [eve_environment_state(AttackParams(lk.omega, 1.0)) for lk in links]
    env = [GaussianState(s.mean[:4], s.cov[:4, :4]) for s in env]
    state = direct_sum(GaussianState.vacuum(n), *env)
    total = state.num_modes
    s = np.eye(2 * total)
    for i, lk in enumerate(links):
        s = beamsplitter_matrix(total, i, n + 2 * i, lk.tau) @ s
    big = np.eye(2 * total)
    big[: 2 * n, : 2 * n] = relay
    s = big @ s
    state = apply_symplectic(state, s)
    cov, mean_map = condition_quadratures(state, measured, extra_noise=u_el)

    col = 0 if key_quadrature == "q" else 1
    inputs = [2 * i + col for i in range(n)]
    rows = np.array([2 * m + (qd == "p") for m, qd in measured])
    response = s[np.ix_(rows, inputs)]
    coef = response[key_outcome]
    others = np.delete(np.arange(len(measured)), key_outcome)
    meas_cov = state.cov[np.ix_(rows, rows)] + u_el * np.eye(len(rows))
    if np.any(np.abs(response[others]) > 1e-12) or np.any(
        np.abs(meas_cov[key_outcome, others]) > 1e-12
    ):
        raise ValueError("non-key outcomes must be independent of the key quadrature")
    lam = float(meas_cov[key_outcome, key_outcome])
    eve_rows = np.arange(2 * n, 2 * total)
    gain = s[np.ix_(eve_rows, inputs)] - mean_map.gain @ response
    return EnsembleConstants(coef, lam, cov, gain)


def two_party_ensemble(config: PsConfig, branch: Branch = "q") -> EnsembleConstants:
    """Bell relay: q-homodyne on the difference port, p-homodyne on the sum port."""
    relay = bell_matrix(2, 0, 1)
    measured = [(1, "q"), (0, "p")]
    return relay_ensemble(
        config.links, relay, measured, 0 if branch == "q" else 1, branch, config.u_el
    )


def gamma_q_density(point: AnnouncedPoint, kappa_a: int, kappa_b: int, config: PsConfig) -> float:
    """Density of the relay q outcome given the signs and magnitudes."""
    ens = two_party_ensemble(config)
    mean = ens.coef[0] * kappa_a * point.q_a + ens.coef[1] * kappa_b * point.q_b
    return float(np.exp(-((point.gamma_q - mean) ** 2) / (2 * ens.lam)) / math.sqrt(2 * math.pi * ens.lam))


def sign_posteriors(point: AnnouncedPoint, config: PsConfig) -> dict:
    """Posterior over ``(kappa_a, kappa_b)`` with uniform priors.

    ``joint[i, j]`` is the probability of ``kappa_a = (+1, -1)[i]`` and
    ``kappa_b = (+1, -1)[j]``.
    """
    ens = two_party_ensemble(config)
    w = kernels.posteriors(
        np.array([[point.q_a, point.q_b]]), np.array([point.gamma_q]), ens.coef, ens.lam
    )[0]
    joint = w.reshape(2, 2)
    return {"joint": joint, "kappa_a": joint.sum(axis=1), "kappa_b": joint.sum(axis=0)}


def _terms(q: np.ndarray, gamma: np.ndarray, ens: EnsembleConstants) -> tuple[np.ndarray, np.ndarray]:
    mi, chi = kernels.single_point_terms(q, gamma, ens.coef, ens.lam, ens.overlap_form)
    if not ens.eve_is_pure:
        chi = np.minimum(chi, _moment_matched_holevo(q, gamma, ens))
    return mi, chi


def _moment_matched_holevo(q, gamma, ens: EnsembleConstants) -> np.ndarray:
    """``S_G(V_E + L C L^T) - S(V_E)``, an upper bound on Eve's information."""
    w = kernels.posteriors(q, gamma, ens.coef, ens.lam)
    signs = kernels.sign_table(q.shape[1])
    x = signs[None, :, :] * q[:, None, :]
    m1 = np.einsum("pk,pki->pi", w, x)
    m2 = np.einsum("pk,pki,pkj->pij", w, x, x) - m1[:, :, None] * m1[:, None, :]
    covs = ens.eve_cov[None] + np.einsum("ai,pij,bj->pab", ens.eve_gain, m2, ens.eve_gain)
    om = symplectic_form(ens.eve_cov.shape[0] // 2)
    ev = np.abs(np.linalg.eigvals(1j * om[None] @ covs))
    nu = np.sort(ev, axis=1)[:, ::2]
    return g_entropy(nu).sum(axis=1) - ens.eve_entropy


def _point_array(point: AnnouncedPoint, branch: Branch):
    if branch == "q":
        return np.array([[point.q_a, point.q_b]]), np.array([point.gamma_q])
    return np.array([[point.p_a, point.p_b]]), np.array([point.gamma_p])


def single_point_mi(point: AnnouncedPoint, config: PsConfig, branch: Branch = "q") -> float:
    ens = two_party_ensemble(config, branch)
    q, g = _point_array(point, branch)
    return float(_terms(q, g, ens)[0][0])


def single_point_holevo(point: AnnouncedPoint, config: PsConfig, branch: Branch = "q") -> float:
    ens = two_party_ensemble(config, branch)
    q, g = _point_array(point, branch)
    return float(_terms(q, g, ens)[1][0])


def single_point_rate(point: AnnouncedPoint, config: PsConfig, branch: Branch = "q") -> float:
    ens = two_party_ensemble(config, branch)
    q, g = _point_array(point, branch)
    mi, chi = _terms(q, g, ens)
    return float(mi[0] - chi[0])


@dataclass(frozen=True)
class PsResult:
    rate_bits_per_use: float
    sigma2: float
    error_bound: float
    diagnostics: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {
            "rate_bits_per_use": self.rate_bits_per_use,
            "sigma2": self.sigma2,
            "error_bound": self.error_bound,
        }
        row.update({k: v for k, v in self.diagnostics.items() if np.isscalar(v)})
        return row


def _gl_panels(lo: float, hi: float, nodes: int, panels: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def integrate_positive_rate(
    ens: EnsembleConstants,
    sigma2: float,
    nodes: int = DEFAULT_NODES,
    panels: int = 1,
    k: float = DEFAULT_TRUNCATION,
) -> tuple[float, dict]:
    """Integral of ``p(Q_A, Q_B, gamma) max(R~, 0)`` on a Gauss-Legendre tensor grid.

    The integrand is even in ``gamma`` (global sign flip), so only
    ``gamma >= 0`` is sampled and doubled.
    """
    sigma = math.sqrt(sigma2)
    qn, qw = _gl_panels(0.0, k * sigma, nodes, panels)
    sigma_g = math.sqrt(ens.lam + float(np.sum(ens.coef**2)) * sigma2)
    gn, gw = _gl_panels(0.0, k * sigma_g, nodes, panels)

    qa, qb, g = np.meshgrid(qn, qn, gn, indexing="ij")
    wa, wb, wg = np.meshgrid(qw, qw, gw, indexing="ij")
    q = np.stack([qa.ravel(), qb.ravel()], axis=1)
    gamma = g.ravel()

    half_normal = lambda x: 2.0 * np.exp(-(x**2) / (2 * sigma2)) / math.sqrt(2 * math.pi * sigma2)
    signs = kernels.sign_table(2)
    means = (q * ens.coef[None, :]) @ signs.T
    dens_g = np.exp(-((gamma[:, None] - means) ** 2) / (2 * ens.lam)).mean(axis=1)
    dens_g /= math.sqrt(2 * math.pi * ens.lam)
    density = half_normal(q[:, 0]) * half_normal(q[:, 1]) * dens_g
    weight = 2.0 * (wa * wb * wg).ravel() * density

    mi, chi = _terms(q, gamma, ens)
    rate = mi - chi
    contrib = weight * np.clip(rate, 0.0, None)
    total = math.fsum(contrib)
    diag = {
        "mass": math.fsum(weight),
        "kept_fraction": math.fsum(weight[rate > 0.0]),
        "points": len(gamma),
    }
    return total, diag


def postselected_rate(
    config: PsConfig,
    *,
    branch: Branch = "q",
    nodes: int = DEFAULT_NODES,
    panels: int = DEFAULT_PANELS,
    k: float = DEFAULT_TRUNCATION,
    check: bool = True,
    rtol: float = 0.01,
    atol: float = 1e-9,
) -> PsResult:
    """Post-selected key rate (bits per relay use) at ``config.sigma2``.

    With ``check`` the grid is refined (panels doubled) and an
    :class:`IntegrationError` is raised if the estimate moves by more than
    ``max(rtol * R, atol)``.
    """
    ens = two_party_ensemble(config, branch)
    rate, diag = integrate_positive_rate(ens, config.sigma2, nodes, panels, k)
    err = float("nan")
    if check:
        fine, _ = integrate_positive_rate(ens, config.sigma2, nodes, 2 * panels, k)
        err = abs(fine - rate)
        if err > max(rtol * abs(fine), atol):
            raise IntegrationError("post-selection integral did not converge", fine, err)
        rate = fine
    diag = dict(diag, lam=ens.lam)
    return PsResult(rate, config.sigma2, err, diag)


def optimize_sigma2(
    config: PsConfig,
    lo: float = 0.05,
    hi: float = 50.0,
    grid_points: int = 12,
    nodes: int = 32,
    **kw,
) -> PsResult:
    """Maximize the post-selected rate over ``sigma2`` (log grid, then golden section).

    The search uses a cheaper grid; the final value is recomputed with the
    default (checked) integration.
    """
    ens_cache = {}

    def rate_at(log_s2: float) -> float:
        s2 = math.exp(log_s2)
        ens = ens_cache.setdefault("ens", two_party_ensemble(config))
        return integrate_positive_rate(ens, s2, nodes=nodes)[0]

    grid = np.linspace(math.log(lo), math.log(hi), grid_points)
    vals = [rate_at(t) for t in grid]
    j = int(np.argmax(vals))
    if vals[j] <= 0.0:
        return PsResult(0.0, math.exp(grid[j]), 0.0, {"optimized": True})
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, grid_points - 1)]
    t, _ = golden_section_max(rate_at, a, b, tol=1e-3)
    best = postselected_rate(config.with_sigma2(math.exp(t)), **kw)
    return PsResult(best.rate_bits_per_use, best.sigma2, best.error_bound, dict(best.diagnostics, optimized=True))


def symmetric_ps_config(per_link_km: float, sigma2: float = 1.0, nbar: float = 0.0, u_el: float = 0.0) -> PsConfig:
    link = LinkParams.from_distance(per_link_km, nbar=nbar)
    return PsConfig(sigma2, link, link, u_el=u_el)


def postselect_crossover(
    lo_km: float = 2.0,
    hi_km: float = 10.0,
    floor: float = RATE_FLOOR,
    nbar: float = 0.0,
    tol_km: float = 0.02,
) -> float:
    """Per-link distance where the optimized symmetric rate falls to ``floor``.

    The post-selected rate decays smoothly rather than crossing zero, so the
    reach is defined by a rate floor. Bisection on the distance.
    """

    def above(d: float) -> bool:
        cfg = symmetric_ps_config(d, nbar=nbar)
        return optimize_sigma2(cfg, check=False, panels=1).rate_bits_per_use >= floor

    if not above(lo_km):
        raise ValueError(f"rate already below the floor at {lo_km} km")
    if above(hi_km):
        return float("inf")
    a, b = lo_km, hi_km
    while b - a > tol_km:
        m = 0.5 * (a + b)
        a, b = (m, b) if above(m) else (a, m)
    return 0.5 * (a + b)
