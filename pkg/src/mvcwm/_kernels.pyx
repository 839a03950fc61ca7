# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Same signatures and semantics as ``_pykernels``; see that module for the
array conventions.  The loops are written for the small matrices of this
model (dimensions up to ~20), where per-call numpy overhead dominates.
"""
import numpy as np
from libc.math cimport log, sqrt

BACKEND = "cython"


cdef int _cholesky(const double[:, ::1] S, double[:, ::1] L, double tol) noexcept nogil:
    cdef Py_ssize_t n = S.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(n):
        s = S[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > tol):
            return -1
        L[j, j] = sqrt(s)
        for i in range(j + 1, n):
            s = S[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return 0


def chol_inv_logdet(S, double rtol=1e-14):
    cdef const double[:, ::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef Py_ssize_t n = Sv.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double scale = -1.0
    cdef double s, logdet = 0.0
    for i in range(n):
        if Sv[i, i] > scale:
            scale = Sv[i, i]
    if not (scale > 0.0) or scale == np.inf:
        return None
    L_arr = np.zeros((n, n))
    Li_arr = np.zeros((n, n))
    inv_arr = np.empty((n, n))
    cdef double[:, ::1] L = L_arr
    cdef double[:, ::1] Li = Li_arr
    cdef double[:, ::1] inv = inv_arr
    if _cholesky(Sv, L, rtol * scale) != 0:
        return None
    with nogil:
        for i in range(n):
            logdet += 2.0 * log(L[i, i])
            Li[i, i] = 1.0 / L[i, i]
            for j in range(i):
                s = 0.0
                for k in range(j, i):
                    s -= L[i, k] * Li[k, j]
                Li[i, j] = s / L[i, i]
        for i in range(n):
            for j in range(i + 1):
                s = 0.0
                for k in range(i, n):
                    s += Li[k, i] * Li[k, j]
                inv[i, j] = s
                inv[j, i] = s
    return inv_arr, logdet


def quad_trace(R, A, B):
    cdef const double[:, :, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef Py_ssize_t n = Rv.shape[0], a = Rv.shape[1], b = Rv.shape[2]
    cdef Py_ssize_t i, j, k, s
    cdef double acc, t, u
    out_arr = np.empty(n)
    T_arr = np.empty((a, b))
    cdef double[::1] out = out_arr
    cdef double[:, ::1] T = T_arr
    with nogil:
        for i in range(n):
            # T = R_i B
            for j in range(a):
                for k in range(b):
                    t = 0.0
                    for s in range(b):
                        t += Rv[i, j, s] * Bv[s, k]
                    T[j, k] = t
            acc = 0.0
            # sum_{jk} (A R_i)_{jk} T_{jk}
            for j in range(a):
                for k in range(b):
                    u = 0.0
                    for s in range(a):
                        u += Av[j, s] * Rv[i, s, k]
                    acc += u * T[j, k]
            out[i] = acc
    return out_arr


def row_scatter(w, R, B):
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, :, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[:, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef Py_ssize_t n = Rv.shape[0], a = Rv.shape[1], b = Rv.shape[2]
    cdef Py_ssize_t i, j, k, s
    cdef double t, wi
    out_arr = np.zeros((a, a))
    T_arr = np.empty((a, b))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] T = T_arr
    with nogil:
        for i in range(n):
            wi = wv[i]
            if wi == 0.0:
                continue
            for j in range(a):
                for k in range(b):
                    t = 0.0
                    for s in range(b):
                        t += Rv[i, j, s] * Bv[s, k]
                    T[j, k] = wi * t
            for j in range(a):
                for k in range(j + 1):
                    t = 0.0
                    for s in range(b):
                        t += T[j, s] * Rv[i, k, s]
                    out[j, k] += t
        for j in range(a):
            for k in range(j):
                out[k, j] = out[j, k]
    return out_arr


def col_scatter(w, R, A):
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, :, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef Py_ssize_t n = Rv.shape[0], a = Rv.shape[1], b = Rv.shape[2]
    cdef Py_ssize_t i, j, k, s
    cdef double t, wi
    out_arr = np.zeros((b, b))
    T_arr = np.empty((a, b))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] T = T_arr
    with nogil:
        for i in range(n):
            wi = wv[i]
            if wi == 0.0:
                continue
            # T = w_i A R_i
            for j in range(a):
                for k in range(b):
                    t = 0.0
                    for s in range(a):
                        t += Av[j, s] * Rv[i, s, k]
                    T[j, k] = wi * t
            for j in range(b):
                for k in range(j + 1):
                    t = 0.0
                    for s in range(a):
                        t += Rv[i, s, j] * T[s, k]
                    out[j, k] += t
        for j in range(b):
            for k in range(j):
                out[k, j] = out[j, k]
    return out_arr


def cross_moments(w, Y, Xs, P):
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, :, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const double[:, :, ::1] Xv = np.ascontiguousarray(Xs, dtype=np.float64)
    cdef const double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef Py_ssize_t n = Yv.shape[0], p = Yv.shape[1], r = Yv.shape[2], m = Xv.shape[1]
    cdef Py_ssize_t i, j, k, s
    cdef double t, wi
    num_arr = np.zeros((p, m))
    gram_arr = np.zeros((m, m))
    T_arr = np.empty((m, r))
    cdef double[:, ::1] num = num_arr
    cdef double[:, ::1] gram = gram_arr
    cdef double[:, ::1] T = T_arr
    with nogil:
        for i in range(n):
            wi = wv[i]
            if wi == 0.0:
                continue
            # T = w_i Xs_i P
            for j in range(m):
                for k in range(r):
                    t = 0.0
                    for s in range(r):
                        t += Xv[i, j, s] * Pv[s, k]
                    T[j, k] = wi * t
            for j in range(p):
                for k in range(m):
                    t = 0.0
                    for s in range(r):
                        t += Yv[i, j, s] * T[k, s]
                    num[j, k] += t
            for j in range(m):
                for k in range(j + 1):
                    t = 0.0
                    for s in range(r):
                        t += Xv[i, j, s] * T[k, s]
                    gram[j, k] += t
        for j in range(m):
            for k in range(j):
                gram[k, j] = gram[j, k]
    return num_arr, gram_arr
