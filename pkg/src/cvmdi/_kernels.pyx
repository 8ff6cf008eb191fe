# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled single-point post-selection kernel (mirrors ``_kernels_py``)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log2, sqrt, fabs

cnp.import_array()

from cvmdi._kernels_py import GramError

cdef enum:
    MAXK = 8
    MAXN = 3

cdef double GRAM_NEG_TOL = 1e-9


cdef int jacobi_eigvals(double* a, int n, double* out) nogil:
    """Cyclic Jacobi on a symmetric ``n x n`` row-major matrix (destroyed)."""
    cdef int sweep, p, q, k
    cdef double off, theta, t, c, s, tau, app, aqq, apq, akp, akq
    for sweep in range(100):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p * n + q] * a[p * n + q]
        if off < 1e-30:
            break
        for p in range(n):
            for q in range(p + 1, n):
                apq = a[p * n + q]
                if fabs(apq) < 1e-300:
                    continue
                app = a[p * n + p]
                aqq = a[q * n + q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                tau = s / (1.0 + c)
                a[p * n + p] = app - t * apq
                a[q * n + q] = aqq + t * apq
                a[p * n + q] = 0.0
                a[q * n + p] = 0.0
                for k in range(n):
                    if k != p and k != q:
                        akp = a[k * n + p]
                        akq = a[k * n + q]
                        a[k * n + p] = akp - s * (akq + tau * akp)
                        a[p * n + k] = a[k * n + p]
                        a[k * n + q] = akq + s * (akp - tau * akq)
                        a[q * n + k] = a[k * n + q]
    for k in range(n):
        out[k] = a[k * n + k]
    return 0


cdef double eig_entropy(double* lam, int n, double scale, int* bad) nogil:
    cdef double h = 0.0, x
    cdef int k
    for k in range(n):
        x = lam[k] / scale
        if x < -GRAM_NEG_TOL:
            bad[0] = 1
        if x > 0.0:
            h -= x * log2(x)
    return h


cdef double h_list(double* p, int n) nogil:
    cdef double h = 0.0
    cdef int k
    for k in range(n):
        if p[k] > 0.0:
            h -= p[k] * log2(p[k])
    return h


def single_point_terms(q, gamma, coef, double lam, overlap_form):
    q = np.ascontiguousarray(np.atleast_2d(q), dtype=np.float64)
    gamma = np.ascontiguousarray(gamma, dtype=np.float64).reshape(-1)
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    overlap_form = np.ascontiguousarray(overlap_form, dtype=np.float64)
    cdef double[:, ::1] qv = q
    cdef double[::1] gv = gamma
    cdef double[::1] cv = coef
    cdef double[:, ::1] mv = overlap_form
    cdef int n = cv.shape[0]
    cdef int npts = gv.shape[0]
    if n < 2 or n > MAXN:
        raise ValueError("kernel supports 2 or 3 users")
    cdef int K = 1 << n
    cdef int half = K // 2
    mi_out = np.empty(npts)
    chi_out = np.empty(npts)
    cdef double[::1] mio = mi_out
    cdef double[::1] chio = chi_out

    cdef double signs[MAXK][MAXN]
    cdef int a, b, h, i, j, pt, lo, s0, sj
    for a in range(K):
        for i in range(n):
            signs[a][i] = -1.0 if (a >> (n - 1 - i)) & 1 else 1.0

    cdef double w[MAXK]
    cdef double gram[MAXK * MAXK]
    cdef double sub[MAXK * MAXK]
    cdef double lamv[MAXK]
    cdef double joint[4]
    cdef double marg[2]
    cdef double d[MAXN]
    cdef double mean, z, zmax, tot, expo, ph, best, ipair, s_total, s_cond
    cdef int bad = 0

    with nogil:
        for pt in range(npts):
            zmax = -1e300
            for a in range(K):
                mean = 0.0
                for i in range(n):
                    mean += cv[i] * signs[a][i] * qv[pt, i]
                z = -(gv[pt] - mean) * (gv[pt] - mean) / (2.0 * lam)
                w[a] = z
                if z > zmax:
                    zmax = z
            tot = 0.0
            for a in range(K):
                w[a] = exp(w[a] - zmax)
                tot += w[a]
            for a in range(K):
                w[a] /= tot

            best = 1e300
            for j in range(1, n):
                joint[0] = 0.0
                joint[1] = 0.0
                joint[2] = 0.0
                joint[3] = 0.0
                for a in range(K):
                    s0 = 0 if signs[a][0] > 0 else 1
                    sj = 0 if signs[a][j] > 0 else 1
                    joint[2 * s0 + sj] += w[a]
                ipair = -h_list(joint, 4)
                marg[0] = joint[0] + joint[1]
                marg[1] = joint[2] + joint[3]
                ipair += h_list(marg, 2)
                marg[0] = joint[0] + joint[2]
                marg[1] = joint[1] + joint[3]
                ipair += h_list(marg, 2)
                if ipair < best:
                    best = ipair
            mio[pt] = best if best > 0.0 else 0.0

            for a in range(K):
                for b in range(K):
                    expo = 0.0
                    for i in range(n):
                        d[i] = qv[pt, i] * (signs[a][i] - signs[b][i])
                    for i in range(n):
                        for j in range(n):
                            expo += mv[i, j] * d[i] * d[j]
                    gram[a * K + b] = sqrt(w[a] * w[b]) * exp(-expo / 8.0)
            for a in range(K * K):
                sub[a] = gram[a]
            jacobi_eigvals(sub, K, lamv)
            s_total = eig_entropy(lamv, K, 1.0, &bad)

            s_cond = 0.0
            for h in range(2):
                lo = h * half
                ph = 0.0
                for a in range(half):
                    ph += w[lo + a]
                    for b in range(half):
                        sub[a * half + b] = gram[(lo + a) * K + lo + b]
                if ph > 0.0:
                    jacobi_eigvals(sub, half, lamv)
                    s_cond += ph * eig_entropy(lamv, half, ph, &bad)
            z = s_total - s_cond
            chio[pt] = z if z > 0.0 else 0.0
    if bad:
        raise GramError("Gram matrix of Eve's ensemble is not positive semidefinite")
    return mi_out, chi_out
