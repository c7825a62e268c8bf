# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled time-stepping loops. Mirrors ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def lti_sim(const double[:, ::1] Phi, const double[:, ::1] Gam, const double[:, ::1] C,
            const double[:, ::1] D, const double[::1] x0, const double[:, ::1] u):
    """Discrete recurrence x[k+1] = Phi x[k] + Gam u[k], y[k] = C x[k] + D u[k]."""
    cdef Py_ssize_t T = u.shape[0], m = u.shape[1]
    cdef Py_ssize_t n = Phi.shape[0], p = C.shape[0]
    cdef Py_ssize_t k, i, j
    cdef double acc
    X_arr = np.empty((T, n))
    Y_arr = np.empty((T, p))
    cdef double[:, ::1] X = X_arr
    cdef double[:, ::1] Y = Y_arr
    for i in range(n):
        X[0, i] = x0[i]
    for k in range(T):
        for i in range(p):
            acc = 0.0
            for j in range(n):
                acc += C[i, j] * X[k, j]
            for j in range(m):
                acc += D[i, j] * u[k, j]
            Y[k, i] = acc
        if k + 1 < T:
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += Phi[i, j] * X[k, j]
                for j in range(m):
                    acc += Gam[i, j] * u[k, j]
                X[k + 1, i] = acc
    return X_arr, Y_arr


cdef inline void _ex1_rhs(double x1, double x2, double u, double* d1, double* d2) nogil:
    d1[0] = -x1 * x1 + x2
    d2[0] = -x1 - x2 + (0.5 * x1 + 1.0) * u


def rk4_example1(const double[::1] x0, const double[::1] u, double dt):
    """Classical RK4 for the built-in two-state example, ZOH input."""
    cdef Py_ssize_t T = u.shape[0], k
    cdef double x1, x2, uk, h2 = 0.5 * dt
    cdef double a1, a2, b1, b2, c1, c2, e1, e2
    X_arr = np.empty((T, 2))
    cdef double[:, ::1] X = X_arr
    x1 = x0[0]
    x2 = x0[1]
    X[0, 0] = x1
    X[0, 1] = x2
    for k in range(T - 1):
        uk = u[k]
        _ex1_rhs(x1, x2, uk, &a1, &a2)
        _ex1_rhs(x1 + h2 * a1, x2 + h2 * a2, uk, &b1, &b2)
        _ex1_rhs(x1 + h2 * b1, x2 + h2 * b2, uk, &c1, &c2)
        _ex1_rhs(x1 + dt * c1, x2 + dt * c2, uk, &e1, &e2)
        x1 = x1 + dt / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + e1)
        x2 = x2 + dt / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + e2)
        X[k + 1, 0] = x1
        X[k + 1, 1] = x2
    return X_arr
