# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-model Gram reduction.

Same contract and singularity rule as the pure-numpy reference in
``_pyref.py``; small dense linear algebra is hand-rolled because the blocks
are tiny (a handful of covariates) and the loop runs once per interval per
candidate model.
"""

from libc.math cimport isfinite, sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


cdef int _chol_inverse(const double[:, ::1] g, double[:, ::1] lf, double[:, ::1] inv_l,
                       double[:, ::1] inv_g, Py_ssize_t k, double rcond_tol) nogil:
    # Cholesky with the shared pivot rule, then invert via the factor.
    cdef Py_ssize_t a, b, m
    cdef double maxd = 0.0, s
    for a in range(k):
        if g[a, a] > maxd:
            maxd = g[a, a]
    if not isfinite(maxd):
        return 0
    for a in range(k):
        s = g[a, a]
        for m in range(a):
            s -= lf[a, m] * lf[a, m]
        if not (s > rcond_tol * maxd):
            return 0
        lf[a, a] = sqrt(s)
        for b in range(a + 1, k):
            s = g[b, a]
            for m in range(a):
                s -= lf[b, m] * lf[a, m]
            lf[b, a] = s / lf[a, a]
    for a in range(k):
        inv_l[a, a] = 1.0 / lf[a, a]
        for b in range(a + 1, k):
            s = 0.0
            for m in range(a, b):
                s += lf[b, m] * inv_l[m, a]
            inv_l[b, a] = -s / lf[b, b]
    for a in range(k):
        for b in range(a, k):
            s = 0.0
            for m in range(b, k):
                s += inv_l[m, a] * inv_l[m, b]
            inv_g[a, b] = s
            inv_g[b, a] = s
    return 1


def model_profile(const double[:, :, ::1] gram,
                  const double[::1] lengths,
                  const cnp.int64_t[::1] risk_counts,
                  const cnp.int64_t[::1] ev_interval,
                  const double[:, ::1] ev_x,
                  const cnp.int64_t[::1] idx_i,
                  const cnp.int64_t[::1] idx_j,
                  bint need_all,
                  double rcond_tol):
    """See ``_pyref.model_profile`` for the contract."""
    cdef Py_ssize_t L = gram.shape[0]
    cdef Py_ssize_t E = ev_x.shape[0]
    cdef Py_ssize_t ki = idx_i.shape[0]
    cdef Py_ssize_t kj = idx_j.shape[0]

    U = np.zeros((E, ki))
    Z = np.zeros((E, kj))
    D = np.zeros((kj, kj))
    P = np.zeros((L, ki, kj))

    if ki == 0:
        if kj > 0:
            idxj = np.asarray(idx_j)
            gram_np = np.asarray(gram)
            gj = gram_np[:, idxj][:, :, idxj]
            active = np.asarray(risk_counts) > 0
            D[:] = np.einsum("k,kab->ab", np.asarray(lengths) * active, gj)
            Z[:] = np.asarray(ev_x)[:, idxj]
        return U, Z, D, P, -1

    cdef double[:, ::1] u_v = U
    cdef double[:, ::1] z_v = Z
    cdef double[:, ::1] d_v = D
    cdef double[:, :, ::1] p_v = P
    cdef double[:, ::1] gi = np.empty((ki, ki))
    cdef double[:, ::1] lf = np.zeros((ki, ki))
    cdef double[:, ::1] inv_l = np.zeros((ki, ki))
    cdef double[:, ::1] inv_g = np.empty((ki, ki))
    cdef double[:, ::1] c = np.empty((ki, max(kj, 1)))

    cdef Py_ssize_t l, a, b, m
    cdef Py_ssize_t e0 = 0
    cdef bint has_events
    cdef double dl, s

    for l in range(L):
        if risk_counts[l] <= 0:
            while e0 < E and ev_interval[e0] == l:
                e0 += 1
            continue
        has_events = e0 < E and ev_interval[e0] == l
        if not (need_all or has_events):
            continue
        for a in range(ki):
            for b in range(ki):
                gi[a, b] = gram[l, idx_i[a], idx_i[b]]
        if not _chol_inverse(gi, lf, inv_l, inv_g, ki, rcond_tol):
            return U, Z, D, P, int(l)
        if kj > 0:
            for a in range(ki):
                for b in range(kj):
                    c[a, b] = gram[l, idx_i[a], idx_j[b]]
            for a in range(ki):
                for b in range(kj):
                    s = 0.0
                    for m in range(ki):
                        s += inv_g[a, m] * c[m, b]
                    p_v[l, a, b] = s
            dl = lengths[l]
            for a in range(kj):
                for b in range(kj):
                    s = gram[l, idx_j[a], idx_j[b]]
                    for m in range(ki):
                        s -= c[m, a] * p_v[l, m, b]
                    d_v[a, b] += dl * s
        while e0 < E and ev_interval[e0] == l:
            for a in range(ki):
                s = 0.0
                for m in range(ki):
                    s += inv_g[a, m] * ev_x[e0, idx_i[m]]
                u_v[e0, a] = s
            for b in range(kj):
                s = ev_x[e0, idx_j[b]]
                for m in range(ki):
                    s -= p_v[l, m, b] * ev_x[e0, idx_i[m]]
                z_v[e0, b] = s
            e0 += 1
    return U, Z, D, P, -1
