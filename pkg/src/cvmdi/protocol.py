"""Asymptotic two-party CV-MDI-QKD rate engine.

Entanglement-based picture: Alice and Bob each hold a TMSV, send one arm
through an entangling-cloner link to the relay, which performs a CV Bell
detection (balanced beamsplitter, q-homodyne on the difference port,
p-homodyne on the sum port). Mode order of the global state is
``(a, A', b, B', E1', e1, E2', e2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .channel import AttackParams, LinkParams, eve_environment_state
from .gaussian import (
    AffineMeanMap,
    GaussianState,
    apply_symplectic,
    beamsplitter,
    condition_heterodyne,
    condition_quadratures,
    direct_sum,
    g_entropy,
    gaussian_mutual_information,
    tmsv,
    von_neumann_entropy,
)

Encoder = Literal["alice", "bob"]

MODE_A, MODE_A_OUT, MODE_B, MODE_B_OUT = 0, 1, 2, 3
EVE_MODES = (4, 5, 6, 7)
DEFAULT_MU_MAX = 1e6
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MdiConfig:
    """Two-party protocol parameters.

    ``mu`` is the TMSV variance (prepare-and-measure modulation ``mu - 1``).
    When ``attack`` is omitted it is built from the link noise with no
    cross-correlations.
    """

    mu: float
    link_a: LinkParams
    link_b: LinkParams
    attack: AttackParams | None = None
    eta_eff: float = 1.0
    u_el: float = 0.0
    xi: float = 1.0
    encoder: Encoder = "alice"

    def __post_init__(self):
        if self.mu < 1.0:
            raise ValueError(f"unphysical TMSV variance mu={self.mu!r} < 1")
        if not 0.0 < self.eta_eff <= 1.0:
            raise ValueError(f"eta_eff must lie in (0, 1], got {self.eta_eff!r}")
        if self.u_el < 0.0:
            raise ValueError(f"electronic noise must be non-negative, got {self.u_el!r}")
        if not 0.0 < self.xi <= 1.0:
            raise ValueError(f"reconciliation efficiency must lie in (0, 1], got {self.xi!r}")
        if self.encoder not in ("alice", "bob"):
            raise ValueError(f"encoder must be 'alice' or 'bob', got {self.encoder!r}")
        if self.attack is None:
            object.__setattr__(self, "attack", AttackParams.from_links(self.link_a, self.link_b))
        elif not (
            math.isclose(self.attack.omega_a, self.link_a.omega, rel_tol=1e-12)
            and math.isclose(self.attack.omega_b, self.link_b.omega, rel_tol=1e-12)
        ):
            raise ValueError("attack thermal variances disagree with the link parameters")
        if self.attack.correlated and self.eta_eff != 1.0:
            raise ValueError("detector inefficiency cannot be folded into a correlated attack")

    def with_mu(self, mu: float) -> "MdiConfig":
        return replace(self, mu=mu)

    def swapped(self) -> "MdiConfig":
        """Relabel Alice <-> Bob (links and encoder role)."""
        a = self.attack
        return replace(
            self,
            link_a=self.link_b,
            link_b=self.link_a,
            attack=AttackParams(a.omega_b, a.omega_a, a.g, a.g_prime),
            encoder="bob" if self.encoder == "alice" else "alice",
        )

    def effective_links(self) -> tuple[LinkParams, LinkParams]:
        return (
            self.link_a.with_detector_efficiency(self.eta_eff),
            self.link_b.with_detector_efficiency(self.eta_eff),
        )


@dataclass(frozen=True)
class RateResult:
    rate_bits_per_use: float
    i_ab: float
    i_eve: float
    diagnostics: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {
            "rate_bits_per_use": self.rate_bits_per_use,
            "i_ab": self.i_ab,
            "i_eve": self.i_eve,
        }
        for k, v in self.diagnostics.items():
            if np.isscalar(v):
                row[k] = v
        return row


@dataclass(frozen=True)
class RelayConditioned:
    """Outcome-independent covariance of ``(a, b, E1', e1, E2', e2)`` after Bell detection.

    ``mean_map`` maps the outcome ``(q_minus, p_plus)`` to the conditional mean.
    """

    cov: np.ndarray
    mean_map: AffineMeanMap

    def block(self, modes) -> np.ndarray:
        rows = np.array([r for m in modes for r in (2 * m, 2 * m + 1)])
        return self.cov[np.ix_(rows, rows)]


def build_global_state(config: MdiConfig) -> GaussianState:
    """Pure 8-mode state just before the relay."""
    link_a, link_b = config.effective_links()
    attack = config.attack
    if config.eta_eff != 1.0:
        attack = AttackParams(link_a.omega, link_b.omega)
    eve = eve_environment_state(attack)
    src = tmsv(config.mu)
    state = direct_sum(src, src, eve)
    # modes: a=0, A=1, b=2, B=3, E1=4, e1=5, E2=6, e2=7
    state = beamsplitter(state, MODE_A_OUT, 4, link_a.tau)
    state = beamsplitter(state, MODE_B_OUT, 6, link_b.tau)
    return state


def bell_matrix(num_modes: int, mode_x: int, mode_y: int) -> np.ndarray:
    """Balanced mixing: ``x -> (x + y)/sqrt2`` (sum port), ``y -> (x - y)/sqrt2`` (difference port)."""
    c = 1.0 / math.sqrt(2.0)
    s = np.eye(2 * num_modes)
    i, j = 2 * mode_x, 2 * mode_y
    for k in range(2):
        s[i + k, i + k] = c
        s[i + k, j + k] = c
        s[j + k, i + k] = c
        s[j + k, j + k] = -c
    return s


def relay_condition(state: GaussianState, u_el: float = 0.0) -> RelayConditioned:
    """CV Bell detection of ``A'`` and ``B'`` with electronic noise ``u_el``.

    The difference port is q-homodyned (outcome ``q_minus``) and the sum
    port p-homodyned (``p_plus``).
    """
    if state.num_modes != 8:
        raise ValueError("relay_condition expects the 8-mode global state")
    mixed = apply_symplectic(state, bell_matrix(8, MODE_A_OUT, MODE_B_OUT))
    cov, mean_map = condition_quadratures(
        mixed, [(MODE_B_OUT, "q"), (MODE_A_OUT, "p")], extra_noise=u_el
    )
    return RelayConditioned(cov, mean_map)


def _conditioned(config: MdiConfig) -> RelayConditioned:
    return relay_condition(build_global_state(config), config.u_el)


# indices inside the conditioned state (a, b, E1', e1, E2', e2)
_A, _B = 0, 1
_EVE = (2, 3, 4, 5)


@dataclass(frozen=True)
class AbSectors:
    """Relay-conditioned covariance of the retained modes ``(a, b)``, split by quadrature.

    The q and p sectors never mix in this protocol, so the 4x4 covariance is
    ``q ⊕ p`` with 2x2 blocks over ``(a, b)``. Determinants are carried
    separately because forming them from the entries cancels catastrophically
    at large modulation.
    """

    q: np.ndarray
    p: np.ndarray
    det_q: float
    det_p: float

    def cov(self) -> np.ndarray:
        v = np.zeros((4, 4))
        v[np.ix_([0, 2], [0, 2])] = self.q
        v[np.ix_([1, 3], [1, 3])] = self.p
        return v


def conditional_ab_sectors(config: MdiConfig) -> AbSectors:
    """Closed-form ``(a, b)`` covariance after Bell detection.

    Gaussian conditioning of the two TMSV arms on ``q_minus`` and ``p_plus``
    written out with the quartic terms of the determinant cancelled
    analytically; valid for any ``mu`` representable in double precision.
    """
    link_a, link_b = config.effective_links()
    ta, tb = link_a.tau, link_b.tau
    wa, wb = link_a.omega, link_b.omega
    mu = config.mu
    s2 = (mu - 1.0) * (mu + 1.0)
    leak = math.sqrt((1.0 - ta) * (1.0 - tb))
    noise = (1.0 - ta) * wa + (1.0 - tb) * wb + 2.0 * config.u_el
    sectors = []
    for cross, sign in ((config.attack.g, -1.0), (config.attack.g_prime, 1.0)):
        n = noise + sign * 2.0 * leak * cross
        two_v = (ta + tb) * mu + n
        if two_v <= 0.0:
            raise np.linalg.LinAlgError("relay homodyne has zero variance")
        k = s2 / two_v
        aa = mu - ta * k
        bb = mu - tb * k
        ab = -sign * math.sqrt(ta * tb) * k
        det = mu * (mu * n + ta + tb) / two_v
        sectors.append((np.array([[aa, ab], [ab, bb]]), det))
    (q, det_q), (p, det_p) = sectors
    return AbSectors(q, p, det_q, det_p)


def _two_mode_nu(sec: AbSectors) -> tuple[float, float]:
    # nu^2 are the eigenvalues of Q P; the discriminant is taken from entry
    # differences because trace^2 - 4 det cancels when nu_1 ~ nu_2
    m = sec.q @ sec.p
    trace = m[0, 0] + m[1, 1]
    det = sec.det_q * sec.det_p
    disc = max((m[0, 0] - m[1, 1]) ** 2 + 4.0 * m[0, 1] * m[1, 0], 0.0)
    big = 0.5 * (trace + math.sqrt(disc))
    small = det / big
    return math.sqrt(big), math.sqrt(small)


def _single_mode_nu_after_heterodyne(sec: AbSectors, measured: int) -> float:
    other = 1 - measured
    q = (sec.det_q + sec.q[other, other]) / (sec.q[measured, measured] + 1.0)
    p = (sec.det_p + sec.p[other, other]) / (sec.p[measured, measured] + 1.0)
    return math.sqrt(q * p)


def _mi_from_sectors(sec: AbSectors) -> float:
    total = 0.0
    for m, det in ((sec.q, sec.det_q), (sec.p, sec.det_p)):
        det_plus = det + m[0, 0] + m[1, 1] + 1.0
        if det_plus <= 0.0:
            raise np.linalg.LinAlgError("singular a-b heterodyne covariance")
        total += 0.5 * math.log2((m[0, 0] + 1.0) * (m[1, 1] + 1.0) / det_plus)
    return total


def _heterodyne_cov(cov: np.ndarray, mode: int) -> np.ndarray:
    st = GaussianState(np.zeros(cov.shape[0]), cov)
    c, _ = condition_heterodyne(st, mode)
    return c


def mutual_information_ab(config: MdiConfig) -> float:
    """``I(alpha:beta|gamma)`` in bits, summed over both quadratures.

    Heterodyne outcomes of the retained modes have covariance ``V_ab + I``.
    """
    return _mi_from_sectors(conditional_ab_sectors(config))


def mutual_information_ab_full(config: MdiConfig) -> float:
    """Same quantity through the generic 8-mode covariance path (moderate ``mu`` only)."""
    rc = _conditioned(config)
    return gaussian_mutual_information(rc.block([_A, _B]) + np.eye(4), 2)


def _encoder_index(config: MdiConfig) -> int:
    return 0 if config.encoder == "alice" else 1


def _holevo_from_sectors(config: MdiConfig, sec: AbSectors) -> tuple[float, tuple[float, float, float]]:
    nu1, nu2 = _two_mode_nu(sec)
    nu3 = _single_mode_nu_after_heterodyne(sec, _encoder_index(config))
    chi = float(g_entropy(nu1) + g_entropy(nu2) - g_entropy(nu3))
    return chi, (nu1, nu2, nu3)


def holevo_eve(config: MdiConfig) -> float:
    """Eve's Holevo bound on the encoder's variable (purity shortcut).

    The conditioned global state is pure, so Eve's entropy equals that of
    ``(a, b)``; after the encoder's heterodyne it equals the decoder-mode
    entropy.
    """
    chi, _ = _holevo_from_sectors(config, conditional_ab_sectors(config))
    return chi


def holevo_eve_explicit(config: MdiConfig) -> float:
    """Holevo bound from Eve's four conditional modes, without the purity shortcut.

    Runs on the full 8-mode covariance, so it is only accurate for moderate
    ``mu``; agrees with :func:`holevo_eve` whenever ``u_el == 0``.
    """
    rc = _conditioned(config)
    eve_rows = np.array([r for m in _EVE for r in (2 * m, 2 * m + 1)])
    s_e = von_neumann_entropy(rc.cov[np.ix_(eve_rows, eve_rows)])
    after = _heterodyne_cov(rc.cov, _encoder_index(config))
    return s_e - von_neumann_entropy(after[2:, 2:])


def asymptotic_rate(config: MdiConfig) -> RateResult:
    """``R = xi * I_AB - chi``; negative values are reported as is."""
    sec = conditional_ab_sectors(config)
    i_ab = _mi_from_sectors(sec)
    chi, (nu1, nu2, nu3) = _holevo_from_sectors(config, sec)
    diag = {"mu": config.mu, "nu_ab_1": nu1, "nu_ab_2": nu2, "nu_decoder": nu3}
    return RateResult(config.xi * i_ab - chi, i_ab, chi, diag)


def _log_grid(mu_max: float, points: int) -> np.ndarray:
    return 1.0 + np.logspace(-3.0, math.log10(mu_max - 1.0), points)


def golden_section_max(f, lo: float, hi: float, tol: float = 1e-4, max_iter: int = 200):
    """Maximize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def maximize_over_log_modulation(objective, mu_max: float, grid_points: int = 25):
    """Coarse log grid in ``mu - 1`` refined by golden section; returns ``(mu, value)``.

    ``objective`` maps ``mu`` to a float. The search never leaves ``(1, mu_max]``.
    """
    grid = _log_grid(mu_max, grid_points)
    vals = np.array([objective(m) for m in grid])
    k = int(np.argmax(vals))
    if k == len(grid) - 1:
        return float(grid[k]), float(vals[k])
    lo = math.log(grid[max(k - 1, 0)] - 1.0)
    hi = math.log(grid[min(k + 1, len(grid) - 1)] - 1.0)
    x, fx = golden_section_max(lambda t: objective(1.0 + math.exp(t)), lo, hi, tol=1e-6)
    mu = 1.0 + math.exp(x)
    if fx < vals[k]:
        return float(grid[k]), float(vals[k])
    return mu, float(fx)


def optimize_modulation(config: MdiConfig, mu_max: float = DEFAULT_MU_MAX, grid_points: int = 25) -> RateResult:
    """Maximize the asymptotic rate over ``mu`` in ``(1, mu_max]``."""
    if mu_max <= 1.0:
        raise ValueError("mu_max must exceed 1")
    mu, _ = maximize_over_log_modulation(
        lambda m: asymptotic_rate(config.with_mu(m)).rate_bits_per_use, mu_max, grid_points
    )
    best = asymptotic_rate(config.with_mu(mu))
    diag = dict(best.diagnostics, mu_opt=mu)
    return RateResult(best.rate_bits_per_use, best.i_ab, best.i_eve, diag)


def symmetric_config(total_km: float, mu: float = DEFAULT_MU_MAX, nbar: float = 0.0, **kw) -> MdiConfig:
    """Both users at ``total_km / 2`` from the relay."""
    link = LinkParams.from_distance(total_km / 2.0, nbar=nbar)
    return MdiConfig(mu, link, link, **kw)
