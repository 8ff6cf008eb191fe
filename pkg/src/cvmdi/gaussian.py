"""Covariance-matrix calculus for multimode Gaussian states.

Conventions: shot-noise units (vacuum quadrature variance 1) and the
interleaved quadrature ordering ``(q1, p1, q2, p2, ...)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SYMMETRY_RTOL = 1e-12
PHYSICALITY_TOL = 1e-9
PINV_RCOND = 1e-12
G_CUTOFF = 1e-12


class UnphysicalStateError(ValueError):
    """Raised when a covariance matrix violates the uncertainty principle."""


class DegenerateMeasurementWarning(UserWarning):
    """Emitted when a homodyne measures a quadrature with zero variance."""


def physicality_tolerance(cov: np.ndarray) -> float:
    """Allowed shortfall of the smallest symplectic eigenvalue below 1.

    Rounding the entries of ``cov`` perturbs its symplectic spectrum by up to
    ~``eps * |cov|^2``, so strongly squeezed states get a wider floor.
    """
    norm = float(np.max(np.abs(cov))) if cov.size else 0.0
    return max(PHYSICALITY_TOL, 64.0 * np.finfo(float).eps * norm * norm)


def symplectic_form(num_modes: int) -> np.ndarray:
    """Block-diagonal symplectic form with blocks ``[[0, 1], [-1, 0]]``."""
    return np.kron(np.eye(num_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def _check_symmetric(cov: np.ndarray) -> None:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or cov.shape[0] % 2:
        raise ValueError(f"covariance must be square with even dimension, got {cov.shape}")
    scale = max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - cov.T)) > SYMMETRY_RTOL * scale:
        raise ValueError("covariance matrix is not symmetric")


@dataclass(frozen=True)
class GaussianState:
    """Mean vector and covariance matrix of an ``n``-mode Gaussian state.

    Construction validates shapes, symmetry and physicality; the arrays are
    copied and made read-only so instances can be shared freely.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float)
        mean = np.array(self.mean, dtype=float).reshape(-1)
        _check_symmetric(cov)
        if mean.shape[0] != cov.shape[0]:
            raise ValueError(
                f"mean has length {mean.shape[0]} but covariance is {cov.shape}"
            )
        cov = 0.5 * (cov + cov.T)
        nu = symplectic_eigenvalues(cov)
        if nu[-1] < 1.0 - physicality_tolerance(cov):
            raise UnphysicalStateError(
                f"smallest symplectic eigenvalue {nu[-1]:.12g} < 1"
            )
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def num_modes(self) -> int:
        return self.cov.shape[0] // 2

    @classmethod
    def vacuum(cls, num_modes: int = 1) -> "GaussianState":
        return cls(np.zeros(2 * num_modes), np.eye(2 * num_modes))

    @classmethod
    def thermal(cls, variance: float) -> "GaussianState":
        return cls(np.zeros(2), variance * np.eye(2))

    def entropy(self) -> float:
        return von_neumann_entropy(self.cov)


def tmsv(mu: float) -> GaussianState:
    """Two-mode squeezed vacuum with quadrature variance ``mu``.

    Raises
    ------
    ValueError
        If ``mu < 1`` (unphysical TMSV variance).
    """
    if mu < 1.0:
        raise ValueError(f"unphysical TMSV variance mu={mu!r} < 1")
    c = np.sqrt(mu * mu - 1.0)
    z = np.diag([1.0, -1.0])
    cov = np.block([[mu * np.eye(2), c * z], [c * z, mu * np.eye(2)]])
    return GaussianState(np.zeros(4), cov)


def direct_sum(*states: GaussianState) -> GaussianState:
    """Product state of the arguments, modes concatenated in order."""
    dim = sum(s.cov.shape[0] for s in states)
    cov = np.zeros((dim, dim))
    k = 0
    for s in states:
        d = s.cov.shape[0]
        cov[k:k + d, k:k + d] = s.cov
        k += d
    return GaussianState(np.concatenate([s.mean for s in states]), cov)


def _mode_rows(modes: Iterable[int]) -> np.ndarray:
    return np.array([r for m in modes for r in (2 * m, 2 * m + 1)], dtype=int)


def _check_mode(state: GaussianState, mode: int) -> None:
    if not 0 <= mode < state.num_modes:
        raise IndexError(f"mode {mode} out of range for {state.num_modes}-mode state")


def beamsplitter_matrix(num_modes: int, mode_i: int, mode_j: int, tau: float) -> np.ndarray:
    """Symplectic matrix of a beamsplitter of transmissivity ``tau`` acting on modes i, j."""
    t, r = np.sqrt(tau), np.sqrt(1.0 - tau)
    s = np.eye(2 * num_modes)
    i, j = 2 * mode_i, 2 * mode_j
    for k in range(2):
        s[i + k, i + k] = t
        s[i + k, j + k] = r
        s[j + k, i + k] = -r
        s[j + k, j + k] = t
    return s


def apply_symplectic(state: GaussianState, s: np.ndarray) -> GaussianState:
    return GaussianState(s @ state.mean, s @ state.cov @ s.T)


def beamsplitter(state: GaussianState, mode_i: int, mode_j: int, tau: float) -> GaussianState:
    """Mix modes ``i`` and ``j`` on a beamsplitter of transmissivity ``tau``.

    Mode ``i`` exits as ``sqrt(tau)*i + sqrt(1-tau)*j`` and mode ``j`` as
    ``-sqrt(1-tau)*i + sqrt(tau)*j``.
    """
    _check_mode(state, mode_i)
    _check_mode(state, mode_j)
    if mode_i == mode_j:
        raise ValueError("beamsplitter needs two distinct modes")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"transmissivity must lie in [0, 1], got {tau!r}")
    return apply_symplectic(state, beamsplitter_matrix(state.num_modes, mode_i, mode_j, tau))


def partial_trace(state: GaussianState, keep: Sequence[int]) -> GaussianState:
    """Reduced state on the modes in ``keep`` (returned in ascending order)."""
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("partial_trace needs a nonempty set of modes to keep")
    for k in keep:
        _check_mode(state, k)
    rows = _mode_rows(keep)
    return GaussianState(state.mean[rows], state.cov[np.ix_(rows, rows)])


@dataclass(frozen=True)
class AffineMeanMap:
    """Conditional mean of the unmeasured modes as an affine function of the outcome.

    ``mean(x) = offset + gain @ (x - measured_mean)``
    """

    offset: np.ndarray
    gain: np.ndarray
    measured_mean: np.ndarray

    def __call__(self, outcome) -> np.ndarray:
        x = np.atleast_1d(np.asarray(outcome, dtype=float))
        return self.offset + self.gain @ (x - self.measured_mean)


def condition_quadratures(
    state: GaussianState,
    measured: Sequence[tuple[int, str]],
    extra_noise: float | np.ndarray = 0.0,
) -> tuple[np.ndarray, AffineMeanMap]:
    """Condition on a set of quadrature measurements.

    ``measured`` is a list of ``(mode, quadrature)`` with quadrature ``"q"``
    or ``"p"``; a mode may appear with both quadratures only if
    ``extra_noise`` makes the joint measurement physical (heterodyne).
    ``extra_noise`` is added to the measured block (scalar, vector of
    per-quadrature variances or full matrix).

    Returns the conditional covariance of the modes not touched by any
    measurement, and the affine mean map from outcomes to their mean.
    """
    if not measured:
        raise ValueError("nothing to measure")
    idx = []
    for mode, quad in measured:
        _check_mode(state, mode)
        if quad not in ("q", "p"):
            raise ValueError(f"quadrature must be 'q' or 'p', got {quad!r}")
        idx.append(2 * mode + (quad == "p"))
    idx = np.array(idx)
    measured_modes = {m for m, _ in measured}
    rest = _mode_rows([m for m in range(state.num_modes) if m not in measured_modes])

    v = state.cov
    b = v[np.ix_(idx, idx)]
    noise = np.asarray(extra_noise, dtype=float)
    b = b + (noise if noise.ndim == 2 else np.diag(np.broadcast_to(noise, (len(idx),))))
    c = v[np.ix_(rest, idx)]
    a = v[np.ix_(rest, rest)]

    sv = np.linalg.svd(b, compute_uv=False)
    if sv[-1] <= PINV_RCOND * max(sv[0], 1e-300):
        warnings.warn(
            "measured quadrature has (near) zero variance; using pseudo-inverse",
            DegenerateMeasurementWarning,
            stacklevel=2,
        )
    b_inv = np.linalg.pinv(b, rcond=PINV_RCOND, hermitian=True)
    gain = c @ b_inv
    cond = a - gain @ c.T
    cond = 0.5 * (cond + cond.T)
    return cond, AffineMeanMap(state.mean[rest].copy(), gain, state.mean[idx].copy())


def condition_homodyne(state: GaussianState, mode: int, quadrature: str = "q"):
    """Homodyne ``quadrature`` of ``mode``; returns ``(conditional_cov, mean_map)``."""
    return condition_quadratures(state, [(mode, quadrature)])


def condition_heterodyne(state: GaussianState, mode: int):
    """Heterodyne ``mode``: the update ``A - C (B + I)^-1 C^T``."""
    return condition_quadratures(state, [(mode, "q"), (mode, "p")], extra_noise=1.0)


def symplectic_eigenvalues(cov) -> np.ndarray:
    """Symplectic spectrum of ``cov`` in descending order.

    Uses the Hermitian form ``V^1/2 (i Omega) V^1/2`` when ``cov`` is
    positive definite and falls back to the eigenvalues of ``i Omega V``.
    """
    cov = np.asarray(cov, dtype=float)
    _check_symmetric(cov)
    n = cov.shape[0] // 2
    omega = symplectic_form(n)
    w, u = np.linalg.eigh(0.5 * (cov + cov.T))
    if w[0] > 0:
        root = (u * np.sqrt(w)) @ u.T
        ev = np.linalg.eigvalsh(root @ (1j * omega) @ root)
        nu = np.sort(np.abs(ev))[::-1]
    else:
        nu = np.sort(np.abs(np.linalg.eigvals(1j * omega @ cov)))[::-1]
    return nu[::2].copy()


def g_entropy(nu) -> np.ndarray | float:
    """Bosonic entropy function ``g(nu)`` in bits; ``g(1) = 0``."""
    nu = np.asarray(nu, dtype=float)
    out = np.zeros_like(nu)
    big = nu > 1.0 + G_CUTOFF
    x = nu[big]
    out[big] = (x + 1) / 2 * np.log2((x + 1) / 2) - (x - 1) / 2 * np.log2((x - 1) / 2)
    return out if out.ndim else float(out)


def von_neumann_entropy(cov) -> float:
    """Von Neumann entropy (bits) of the Gaussian state with covariance ``cov``."""
    cov = np.asarray(cov, dtype=float)
    nu = symplectic_eigenvalues(cov)
    if nu[-1] < 1.0 - physicality_tolerance(cov):
        raise UnphysicalStateError(f"symplectic eigenvalue {nu[-1]:.12g} < 1")
    # eigenvalues within the rounding floor of 1 are pure modes
    floor = 64.0 * np.finfo(float).eps * float(np.max(np.abs(cov))) ** 2
    nu = np.where(nu <= 1.0 + floor, 1.0, nu)
    return float(np.sum(g_entropy(nu)))


def gaussian_mutual_information(joint_cov, split: int | Sequence[int]) -> float:
    """Mutual information (bits) between two blocks of jointly Gaussian variables.

    ``split`` is either the number of leading variables forming X, or the
    explicit index list of X; the remaining variables form Y.
    """
    sigma = np.asarray(joint_cov, dtype=float)
    dim = sigma.shape[0]
    x = list(range(split)) if isinstance(split, (int, np.integer)) else list(split)
    y = [k for k in range(dim) if k not in x]
    if not x or not y:
        raise ValueError("both sides of the partition must be nonempty")
    sign_xy, logdet_xy = np.linalg.slogdet(sigma)
    sign_x, logdet_x = np.linalg.slogdet(sigma[np.ix_(x, x)])
    sign_y, logdet_y = np.linalg.slogdet(sigma[np.ix_(y, y)])
    if min(sign_xy, sign_x, sign_y) <= 0:
        raise np.linalg.LinAlgError("joint covariance is singular or not positive definite")
    return float(0.5 * (logdet_x + logdet_y - logdet_xy) / np.log(2.0))
