"""Vectorised numpy implementation of the post-selection single-point kernel.

Reference backend; ``_kernels.pyx`` mirrors it point by point.
"""

from __future__ import annotations

import numpy as np

GRAM_NEG_TOL = 1e-9


class GramError(ArithmeticError):
    """Gram matrix of Eve's ensemble is not positive semidefinite."""


def sign_table(n_users: int) -> np.ndarray:
    """All sign vectors, user 0 as the most significant bit (``+1`` first)."""
    k = np.arange(2 ** n_users)
    bits = (k[:, None] >> np.arange(n_users - 1, -1, -1)[None, :]) & 1
    return 1.0 - 2.0 * bits


def _entropy_of_eigs(lam: np.ndarray) -> np.ndarray:
    if np.any(lam < -GRAM_NEG_TOL):
        raise GramError(f"Gram matrix has eigenvalue {lam.min():.3e} < 0")
    lam = np.clip(lam, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > 0.0, -lam * np.log2(lam), 0.0)
    return terms.sum(axis=-1)


def _binary_entropy_cols(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0.0, -p * np.log2(p), 0.0)
    return t.sum(axis=-1)


def posteriors(q, gamma, coef, lam):
    """Posterior over sign vectors, shape ``(npts, 2**n)``."""
    signs = sign_table(len(coef))
    means = (q * coef[None, :]) @ signs.T
    logits = -((gamma[:, None] - means) ** 2) / (2.0 * lam)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


CHUNK = 16384


def single_point_terms(q, gamma, coef, lam, overlap_form):
    """Single-point mutual information and Holevo bound for a batch of points.

    Parameters
    ----------
    q : (npts, n) array
        Announced magnitudes.
    gamma : (npts,) array
        Relay outcome in the reconciled quadrature.
    coef : (n,) array
        ``E[gamma] = sum_i coef[i] * sign[i] * q[i]``.
    lam : float
        Variance of ``gamma`` given the signs.
    overlap_form : (n, n) array
        Eve's component overlaps are ``exp(-d^T M d / 8)`` with
        ``d_i = q_i (s_i - s'_i)``.

    Returns
    -------
    mi, chi : (npts,) arrays
        ``min_j I(s_0 : s_j | point)`` and ``chi(E : s_0 | point)`` in bits.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    coef = np.asarray(coef, dtype=float)
    m = np.asarray(overlap_form, dtype=float)
    if len(gamma) > CHUNK:
        parts = [
            _terms(q[i:i + CHUNK], gamma[i:i + CHUNK], coef, lam, m)
            for i in range(0, len(gamma), CHUNK)
        ]
        return np.concatenate([a for a, _ in parts]), np.concatenate([b for _, b in parts])
    return _terms(q, gamma, coef, lam, m)


def _terms(q, gamma, coef, lam, m):
    n = len(coef)
    signs = sign_table(n)
    k = len(signs)
    w = posteriors(q, gamma, coef, lam)

    # pairwise mutual information between user 0 and each other user
    mi = np.full(len(gamma), np.inf)
    for j in range(1, n):
        joint = np.zeros((len(gamma), 4))
        for s0 in range(2):
            for sj in range(2):
                mask = (signs[:, 0] == 1 - 2 * s0) & (signs[:, j] == 1 - 2 * sj)
                joint[:, 2 * s0 + sj] = w[:, mask].sum(axis=1)
        p0 = joint[:, 0:2].sum(axis=1)
        pj = joint[:, [0, 2]].sum(axis=1)
        i_pair = (
            _binary_entropy_cols(np.stack([p0, 1 - p0], axis=1))
            + _binary_entropy_cols(np.stack([pj, 1 - pj], axis=1))
            - _binary_entropy_cols(joint)
        )
        mi = np.minimum(mi, i_pair)
    mi = np.clip(mi, 0.0, None)

    diff = signs[:, None, :] - signs[None, :, :]
    x = q[:, None, None, :] * diff[None]
    expo = np.einsum("pabi,ij,pabj->pab", x, m, x) / 8.0
    gram = np.sqrt(w[:, :, None] * w[:, None, :]) * np.exp(-expo)
    s_total = _entropy_of_eigs(np.linalg.eigvalsh(gram))

    half = k // 2
    s_cond = np.zeros(len(gamma))
    for lo in (0, half):
        sub = gram[:, lo:lo + half, lo:lo + half]
        p_half = w[:, lo:lo + half].sum(axis=1)
        lam_sub = np.linalg.eigvalsh(sub)
        safe = np.where(p_half > 0.0, p_half, 1.0)
        s_cond += p_half * _entropy_of_eigs(lam_sub / safe[:, None])
    chi = np.clip(s_total - s_cond, 0.0, None)
    return mi, chi
