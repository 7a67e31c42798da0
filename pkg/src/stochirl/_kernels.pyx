# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Euler-Maruyama kernels.

Drop-in replacement for :mod:`stochirl._kernels_py`; see that module for
the array layouts.  Paths are processed one at a time so the working set
is a handful of length-n buffers.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()

NAME = "cython"


cdef inline int _step(const double[:, ::1] A, const double[:, ::1] B,
                      const double[:, ::1] C, const double[:, ::1] D,
                      double* x, double* xn, const double* u,
                      double h, double dw, int n, int m, double g2) noexcept nogil:
    cdef int i, j
    cdef double drift, diff, nrm = 0.0
    for i in range(n):
        drift = 0.0
        diff = 0.0
        for j in range(n):
            drift += A[i, j] * x[j]
            diff += C[i, j] * x[j]
        for j in range(m):
            drift += B[i, j] * u[j]
            diff += D[i, j] * u[j]
        xn[i] = x[i] + drift * h + diff * dw
        nrm += xn[i] * xn[i]
    for i in range(n):
        x[i] = xn[i]
    if not (nrm <= g2):
        return 1
    return 0


cdef inline void _control(const double[:, ::1] K, const double[:, ::1] E, int k,
                          const double* x, double* u, int n, int m) noexcept nogil:
    cdef int i, j
    cdef double s
    for i in range(m):
        s = E[k, i]
        for j in range(n):
            s += K[i, j] * x[j]
        u[i] = s


def window_functionals(const double[:, ::1] A, const double[:, ::1] B, const double[:, ::1] C,
                       const double[:, ::1] D, const double[:, ::1] K, const double[:, ::1] E,
                       const double[::1] x0, const double[:, ::1] dW, double h,
                       int steps_per_window, int windows, double guard):
    cdef int M = dW.shape[0]
    cdef int n = A.shape[0]
    cdef int m = B.shape[1]
    cdef int nq = n * (n + 1) // 2
    cdef int mq = m * (m + 1) // 2
    dxx_a = np.zeros((M, windows, nq))
    duu_a = np.zeros((M, windows, mq))
    ixx_a = np.zeros((M, windows, n * n))
    ixu_a = np.zeros((M, windows, n * m))
    cdef double[:, :, ::1] dxx = dxx_a
    cdef double[:, :, ::1] duu = duu_a
    cdef double[:, :, ::1] ixx = ixx_a
    cdef double[:, :, ::1] ixu = ixu_a
    cdef double* x = <double*> malloc(n * sizeof(double))
    cdef double* xn = <double*> malloc(n * sizeof(double))
    cdef double* u = <double*> malloc(m * sizeof(double))
    cdef double* sxx = <double*> malloc(n * n * sizeof(double))
    cdef double* sxu = <double*> malloc(n * m * sizeof(double))
    cdef double* suu = <double*> malloc(mq * sizeof(double))
    cdef int p, j, s, k, i, c, q
    cdef int fail = -1
    cdef double g2 = guard * guard
    try:
        with nogil:
            for p in range(M):
                for i in range(n):
                    x[i] = x0[i]
                k = 0
                for j in range(windows):
                    c = 0
                    for i in range(n):
                        for q in range(i, n):
                            dxx[p, j, c] = -x[i] * x[q]
                            c += 1
                    for i in range(n * n):
                        sxx[i] = 0.0
                    for i in range(n * m):
                        sxu[i] = 0.0
                    for i in range(mq):
                        suu[i] = 0.0
                    for s in range(steps_per_window):
                        _control(K, E, k, x, u, n, m)
                        for i in range(n):
                            for q in range(n):
                                sxx[i * n + q] += x[i] * x[q]
                            for q in range(m):
                                sxu[i * m + q] += x[i] * u[q]
                        c = 0
                        for i in range(m):
                            for q in range(i, m):
                                suu[c] += u[i] * u[q]
                                c += 1
                        if _step(A, B, C, D, x, xn, u, h, dW[p, k], n, m, g2):
                            fail = k + 1
                            break
                        k += 1
                    if fail >= 0:
                        break
                    c = 0
                    for i in range(n):
                        for q in range(i, n):
                            dxx[p, j, c] += x[i] * x[q]
                            c += 1
                    for i in range(n * n):
                        ixx[p, j, i] = h * sxx[i]
                    for i in range(n * m):
                        ixu[p, j, i] = h * sxu[i]
                    for i in range(mq):
                        duu[p, j, i] = h * suu[i]
                if fail >= 0:
                    break
    finally:
        free(x)
        free(xn)
        free(u)
        free(sxx)
        free(sxu)
        free(suu)
    return dxx_a, duu_a, ixx_a, ixu_a, fail


def paths(const double[:, ::1] A, const double[:, ::1] B, const double[:, ::1] C,
          const double[:, ::1] D, const double[:, ::1] K, const double[:, ::1] E,
          const double[::1] x0, const double[:, ::1] dW, double h, double guard):
    cdef int M = dW.shape[0]
    cdef int N = dW.shape[1]
    cdef int n = A.shape[0]
    cdef int m = B.shape[1]
    Xs_a = np.empty((M, N + 1, n))
    Us_a = np.empty((M, N + 1, m))
    cdef double[:, :, ::1] Xs = Xs_a
    cdef double[:, :, ::1] Us = Us_a
    cdef double* x = <double*> malloc(n * sizeof(double))
    cdef double* xn = <double*> malloc(n * sizeof(double))
    cdef double* u = <double*> malloc(m * sizeof(double))
    cdef int p, k, i
    cdef int fail = -1
    cdef double g2 = guard * guard
    try:
        with nogil:
            for p in range(M):
                for i in range(n):
                    x[i] = x0[i]
                for k in range(N):
                    _control(K, E, k, x, u, n, m)
                    for i in range(n):
                        Xs[p, k, i] = x[i]
                    for i in range(m):
                        Us[p, k, i] = u[i]
                    if _step(A, B, C, D, x, xn, u, h, dW[p, k], n, m, g2):
                        fail = k + 1
                        break
                if fail >= 0:
                    break
                _control(K, E, N, x, u, n, m)
                for i in range(n):
                    Xs[p, N, i] = x[i]
                for i in range(m):
                    Us[p, N, i] = u[i]
    finally:
        free(x)
        free(xn)
        free(u)
    return Xs_a, Us_a, fail
