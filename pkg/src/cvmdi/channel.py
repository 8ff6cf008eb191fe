"""Thermal-loss links and the entangling-cloner attack.

Each link is a beamsplitter of transmissivity ``tau`` mixing the signal
with one arm of an eavesdropper TMSV of variance ``omega``. Eve's two
injected modes may be correlated (``g``, ``g_prime``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .gaussian import GaussianState, UnphysicalStateError, direct_sum, symplectic_eigenvalues, symplectic_form, tmsv

DEFAULT_LOSS_DB_PER_KM = 0.2


def tau_from_distance(d_km: float, loss_db_per_km: float = DEFAULT_LOSS_DB_PER_KM) -> float:
    """Fibre transmissivity ``10**(-loss*d/10)``."""
    if d_km < 0:
        raise ValueError(f"distance must be non-negative, got {d_km!r}")
    if loss_db_per_km <= 0:
        raise ValueError(f"loss must be positive, got {loss_db_per_km!r}")
    return 10.0 ** (-loss_db_per_km * d_km / 10.0)


def distance_from_tau(tau: float, loss_db_per_km: float = DEFAULT_LOSS_DB_PER_KM) -> float:
    return -10.0 * math.log10(tau) / loss_db_per_km


def zeta_from_omega(tau: float, omega: float) -> float:
    """Input-referred excess noise of a thermal-loss link."""
    return (1.0 - tau) * (omega - 1.0) / tau


def omega_from_zeta(tau: float, zeta: float) -> float:
    if tau >= 1.0:
        if zeta != 0.0:
            raise ValueError("a lossless link cannot carry excess noise")
        return 1.0
    return 1.0 + tau * zeta / (1.0 - tau)


def total_excess_noise(tau_a: float, zeta_a: float, tau_b: float, zeta_b: float) -> float:
    """Protocol-level excess noise ``(tau_a*zeta_a + tau_b*zeta_b) / 2``."""
    return 0.5 * (tau_a * zeta_a + tau_b * zeta_b)


@dataclass(frozen=True)
class LinkParams:
    """One user-relay link.

    Build with :meth:`from_distance` or :meth:`from_tau`; ``distance_km`` is
    ``None`` when the link was specified by transmissivity alone.
    """

    tau: float
    omega: float = 1.0
    distance_km: float | None = None
    loss_db_per_km: float = DEFAULT_LOSS_DB_PER_KM

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau!r}")
        if self.omega < 1.0:
            raise ValueError(f"thermal variance omega must be >= 1, got {self.omega!r}")
        if self.tau == 1.0 and self.omega != 1.0:
            raise ValueError("thermal noise on a lossless link is undefined")

    @classmethod
    def from_distance(
        cls,
        d_km: float,
        *,
        omega: float | None = None,
        zeta: float | None = None,
        nbar: float | None = None,
        loss_db_per_km: float = DEFAULT_LOSS_DB_PER_KM,
    ) -> "LinkParams":
        """Link of ``d_km`` fibre; noise given as ``omega``, ``zeta`` or ``nbar`` (at most one)."""
        tau = tau_from_distance(d_km, loss_db_per_km)
        return cls(tau, _resolve_omega(tau, omega, zeta, nbar), d_km, loss_db_per_km)

    @classmethod
    def from_tau(cls, tau: float, *, omega=None, zeta=None, nbar=None) -> "LinkParams":
        return cls(tau, _resolve_omega(tau, omega, zeta, nbar))

    @property
    def zeta(self) -> float:
        return zeta_from_omega(self.tau, self.omega)

    @property
    def nbar(self) -> float:
        return (self.omega - 1.0) / 2.0

    def with_detector_efficiency(self, eta: float) -> "LinkParams":
        """Fold a (untrusted) detector efficiency into the link.

        The cascade of this thermal-loss link and a pure loss ``eta`` is a
        thermal-loss channel with transmissivity ``eta*tau`` and the same
        output noise.
        """
        if not 0.0 < eta <= 1.0:
            raise ValueError(f"detector efficiency must lie in (0, 1], got {eta!r}")
        if eta == 1.0:
            return self
        tau = eta * self.tau
        omega = (eta * (1.0 - self.tau) * self.omega + 1.0 - eta) / (1.0 - tau)
        return replace(self, tau=tau, omega=omega)


def _resolve_omega(tau, omega, zeta, nbar) -> float:
    given = [x is not None for x in (omega, zeta, nbar)]
    if sum(given) > 1:
        raise ValueError("specify at most one of omega, zeta, nbar")
    if zeta is not None:
        return omega_from_zeta(tau, zeta)
    if nbar is not None:
        return 1.0 + 2.0 * nbar
    return 1.0 if omega is None else float(omega)


@dataclass(frozen=True)
class AttackParams:
    """Eve's injected thermal state: variances and cross-correlations ``G = diag(g, g')``."""

    omega_a: float = 1.0
    omega_b: float = 1.0
    g: float = 0.0
    g_prime: float = 0.0

    def __post_init__(self):
        nu = symplectic_eigenvalues(self.injected_cov())
        if min(self.omega_a, self.omega_b) < 1.0 or nu[-1] < 1.0 - 1e-9:
            raise UnphysicalStateError(
                f"attack covariance is unphysical (symplectic eigenvalues {nu})"
            )

    @classmethod
    def from_links(cls, link_a: LinkParams, link_b: LinkParams, g=0.0, g_prime=0.0):
        return cls(link_a.omega, link_b.omega, g, g_prime)

    @property
    def correlated(self) -> bool:
        return self.g != 0.0 or self.g_prime != 0.0

    def injected_cov(self) -> np.ndarray:
        """Covariance of the injected modes (E1, E2)."""
        gm = np.diag([self.g, self.g_prime])
        return np.block([[self.omega_a * np.eye(2), gm], [gm, self.omega_b * np.eye(2)]])


def williamson(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Williamson decomposition ``cov = S diag(nu_1, nu_1, ..., nu_n, nu_n) S^T``.

    Returns ``(S, nu)`` with ``S`` symplectic.
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0] // 2
    omega = symplectic_form(n)
    w, u = np.linalg.eigh(cov)
    if w[0] <= 0:
        raise UnphysicalStateError("Williamson decomposition needs a positive definite matrix")
    root = (u * np.sqrt(w)) @ u.T
    inv_root = (u / np.sqrt(w)) @ u.T
    m = inv_root @ omega @ inv_root
    t, o = scipy.linalg.schur(m, output="real")
    # reorder each 2x2 block so the upper off-diagonal entry is positive
    nu = np.empty(n)
    perm = np.eye(2 * n)
    for k in range(n):
        i = 2 * k
        if t[i, i + 1] < 0:
            perm[:, [i, i + 1]] = perm[:, [i + 1, i]]
        nu[k] = 1.0 / abs(t[i, i + 1])
    o = o @ perm
    s = root @ o @ np.diag(np.repeat(1.0 / np.sqrt(nu), 2))
    return s, nu


def purify(state: GaussianState) -> GaussianState:
    """Pure state on ``2n`` modes whose first ``n`` modes reduce to ``state``."""
    n = state.num_modes
    s, nu = williamson(state.cov)
    base = direct_sum(*(tmsv(max(v, 1.0)) for v in nu))
    # base ordering is (x1, y1, x2, y2, ...); bring to (x1..xn, y1..yn)
    order = [2 * k for k in range(n)] + [2 * k + 1 for k in range(n)]
    rows = np.array([r for m in order for r in (2 * m, 2 * m + 1)])
    cov = base.cov[np.ix_(rows, rows)]
    big = np.eye(4 * n)
    big[: 2 * n, : 2 * n] = s
    mean = np.concatenate([state.mean, np.zeros(2 * n)])
    return GaussianState(mean, big @ cov @ big.T)


def eve_environment_state(attack: AttackParams) -> GaussianState:
    """Pure 4-mode state of Eve's ancillas ordered ``(E1, e1, E2, e2)``.

    Uncorrelated attacks give two independent TMSVs (two entangling
    cloners); correlated ones use a Williamson purification of the injected
    ``(E1, E2)`` state with the purifying modes placed at ``e1``, ``e2``.
    """
    if not attack.correlated:
        return direct_sum(tmsv(attack.omega_a), tmsv(attack.omega_b))
    pure = purify(GaussianState(np.zeros(4), attack.injected_cov()))
    # purify returns (E1, E2, f1, f2)
    rows = np.array([r for m in (0, 2, 1, 3) for r in (2 * m, 2 * m + 1)])
    return GaussianState(pure.mean[rows], pure.cov[np.ix_(rows, rows)])
