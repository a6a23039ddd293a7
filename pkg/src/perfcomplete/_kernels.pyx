# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled likelihood kernel: one pass over the observed cells."""
import numpy as np

cimport numpy as cnp
from libc.stdint cimport int64_t

cnp.import_array()


def loglik_terms(const double[:, ::1] Up, const double[:, ::1] Vp,
                 const double[::1] w, const double[::1] b,
                 const int64_t[::1] mi, const int64_t[::1] ni, const int64_t[::1] si,
                 const double[::1] y):
    cdef Py_ssize_t M = Up.shape[0], N = Vp.shape[0], D = Up.shape[1]
    cdef Py_ssize_t S = w.shape[0], n_obs = y.shape[0]
    gUp_arr = np.zeros((M, D))
    gVp_arr = np.zeros((N, D))
    gw_arr = np.zeros(S)
    gb_arr = np.zeros(S)
    cdef double[:, ::1] gUp = gUp_arr
    cdef double[:, ::1] gVp = gVp_arr
    cdef double[::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t k, d, m, n, s
    cdef double dot, r, e, sse = 0.0
    for k in range(n_obs):
        m = mi[k]
        n = ni[k]
        s = si[k]
        dot = 0.0
        for d in range(D):
            dot += Up[m, d] * Vp[n, d]
        r = y[k] - (dot * w[s] + b[s])
        sse += r * r
        gw[s] += r * dot
        gb[s] += r
        e = r * w[s]
        for d in range(D):
            gUp[m, d] += e * Vp[n, d]
            gVp[n, d] += e * Up[m, d]
    return sse, gUp_arr, gVp_arr, gw_arr, gb_arr
