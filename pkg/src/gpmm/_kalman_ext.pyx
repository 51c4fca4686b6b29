# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Kalman kernels; same contract as ``_kalman_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef int _solve(double *a, double *b, int r, int m) noexcept nogil:
    """Solve a X = b in place (a is r x r, b is r x m, row major).

    Gaussian elimination with partial pivoting; returns -1 on a zero pivot.
    """
    cdef int i, j, k, piv
    cdef double best, tmp, f
    for k in range(r):
        piv = k
        best = fabs(a[k * r + k])
        for i in range(k + 1, r):
            if fabs(a[i * r + k]) > best:
                best = fabs(a[i * r + k])
                piv = i
        if best == 0.0:
            return -1
        if piv != k:
            for j in range(r):
                tmp = a[k * r + j]; a[k * r + j] = a[piv * r + j]; a[piv * r + j] = tmp
            for j in range(m):
                tmp = b[k * m + j]; b[k * m + j] = b[piv * m + j]; b[piv * m + j] = tmp
        for i in range(k + 1, r):
            f = a[i * r + k] / a[k * r + k]
            if f != 0.0:
                for j in range(k, r):
                    a[i * r + j] -= f * a[k * r + j]
                for j in range(m):
                    b[i * m + j] -= f * b[k * m + j]
    for k in range(r - 1, -1, -1):
        for j in range(m):
            tmp = b[k * m + j]
            for i in range(k + 1, r):
                tmp -= a[k * r + i] * b[i * m + j]
            b[k * m + j] = tmp / a[k * r + k]
    return 0


cdef inline void _symmetrize(double[:, ::1] a, int r) noexcept nogil:
    cdef int i, j
    cdef double v
    for i in range(r):
        for j in range(i + 1, r):
            v = 0.5 * (a[i, j] + a[j, i])
            a[i, j] = v
            a[j, i] = v


def covariance_pass(c_mat, w, lam_eps, Py_ssize_t n_steps):
    cdef const double[:, ::1] c = np.ascontiguousarray(c_mat, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] le = np.ascontiguousarray(lam_eps, dtype=np.float64)
    cdef int r = wv.shape[0]
    pred_a = np.empty((n_steps, r, r))
    filt_a = np.empty((n_steps, r, r))
    smooth_a = np.empty((n_steps, r, r))
    gain_a = np.empty((max(n_steps - 1, 0), r, r))
    cdef double[:, :, ::1] pred = pred_a
    cdef double[:, :, ::1] filt = filt_a
    cdef double[:, :, ::1] smooth = smooth_a
    cdef double[:, :, ::1] gain = gain_a
    cdef double *a = <double *> malloc(r * r * sizeof(double))
    cdef double *b = <double *> malloc(r * r * sizeof(double))
    cdef double *tmp = <double *> malloc(r * r * sizeof(double))
    cdef Py_ssize_t t
    cdef int i, j, k, status = 0
    cdef double acc
    if a == NULL or b == NULL or tmp == NULL:
        free(a); free(b); free(tmp)
        raise MemoryError()
    try:
        with nogil:
            if n_steps > 0:
                for i in range(r):
                    for j in range(r):
                        pred[0, i, j] = 0.0
                    pred[0, i, i] = wv[i] * wv[i] + le[i]
            for t in range(n_steps):
                # Y = (I + P C)^{-1} P
                for i in range(r):
                    for j in range(r):
                        acc = 0.0
                        for k in range(r):
                            acc = acc + pred[t, i, k] * c[k, j]
                        a[i * r + j] = acc + (1.0 if i == j else 0.0)
                        b[i * r + j] = pred[t, i, j]
                status = _solve(a, b, r, r)
                if status != 0:
                    break
                for i in range(r):
                    for j in range(r):
                        filt[t, i, j] = b[i * r + j]
                _symmetrize(filt[t], r)
                if t + 1 < n_steps:
                    for i in range(r):
                        for j in range(r):
                            pred[t + 1, i, j] = wv[i] * filt[t, i, j] * wv[j]
                        pred[t + 1, i, i] += le[i]
                    _symmetrize(pred[t + 1], r)
            if status == 0 and n_steps > 0:
                smooth[n_steps - 1, :, :] = filt[n_steps - 1, :, :]
                for t in range(n_steps - 2, -1, -1):
                    # J^T = P^{-1} (Y W)^T = P^{-1} W Y
                    for i in range(r):
                        for j in range(r):
                            a[i * r + j] = pred[t + 1, i, j]
                            b[i * r + j] = wv[i] * filt[t, i, j]
                    status = _solve(a, b, r, r)
                    if status != 0:
                        break
                    for i in range(r):
                        for j in range(r):
                            gain[t, i, j] = b[j * r + i]
                    # tmp = J (Ŷ_{t+1} - P_{t+1})
                    for i in range(r):
                        for j in range(r):
                            acc = 0.0
                            for k in range(r):
                                acc = acc + gain[t, i, k] * (smooth[t + 1, k, j] - pred[t + 1, k, j])
                            tmp[i * r + j] = acc
                    for i in range(r):
                        for j in range(r):
                            acc = 0.0
                            for k in range(r):
                                acc = acc + tmp[i * r + k] * gain[t, j, k]
                            smooth[t, i, j] = filt[t, i, j] + acc
                    _symmetrize(smooth[t], r)
    finally:
        free(a); free(b); free(tmp)
    if status != 0:
        raise np.linalg.LinAlgError("singular matrix in Kalman covariance pass")
    return pred_a, filt_a, smooth_a, gain_a


def mean_pass(a_mats, b_vecs, d_mats, j_mats):
    cdef const double[:, :, ::1] am = np.ascontiguousarray(a_mats, dtype=np.float64)
    cdef const double[:, :, ::1] bv = np.ascontiguousarray(b_vecs, dtype=np.float64)
    cdef const double[:, :, ::1] dm = np.ascontiguousarray(d_mats, dtype=np.float64)
    cdef const double[:, :, ::1] jm = np.ascontiguousarray(j_mats, dtype=np.float64)
    cdef Py_ssize_t n = bv.shape[0], n_steps = bv.shape[1]
    cdef int r = bv.shape[2]
    mu_a = np.empty((n, n_steps, r))
    mu_hat_a = np.empty((n, n_steps, r))
    cdef double[:, :, ::1] mu = mu_a
    cdef double[:, :, ::1] mu_hat = mu_hat_a
    cdef Py_ssize_t s, t
    cdef int i, k
    cdef double acc
    with nogil:
        for s in range(n):
            for t in range(n_steps):
                for i in range(r):
                    acc = bv[s, t, i]
                    if t > 0:
                        for k in range(r):
                            acc = acc + am[t, i, k] * mu[s, t - 1, k]
                    mu[s, t, i] = acc
            if n_steps > 0:
                for i in range(r):
                    mu_hat[s, n_steps - 1, i] = mu[s, n_steps - 1, i]
            for t in range(n_steps - 2, -1, -1):
                for i in range(r):
                    acc = 0.0
                    for k in range(r):
                        acc = acc + dm[t, i, k] * mu[s, t, k] + jm[t, i, k] * mu_hat[s, t + 1, k]
                    mu_hat[s, t, i] = acc
    return mu_a, mu_hat_a
