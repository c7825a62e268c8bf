"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def lti_sim(Phi, Gam, C, D, x0, u):
    T = u.shape[0]
    n = Phi.shape[0]
    X = np.empty((T, n))
    X[0] = x0
    # state recursion is sequential; outputs are vectorized afterwards
    Gu = u @ Gam.T
    x = np.array(x0, dtype=float)
    for k in range(T - 1):
        x = Phi @ x + Gu[k]
        X[k + 1] = x
    Y = X @ C.T + u @ D.T
    return X, Y


def _ex1_rhs(x1, x2, u):
    return -x1 * x1 + x2, -x1 - x2 + (0.5 * x1 + 1.0) * u


def rk4_example1(x0, u, dt):
    T = u.shape[0]
    X = np.empty((T, 2))
    x1, x2 = float(x0[0]), float(x0[1])
    X[0] = x1, x2
    h2 = 0.5 * dt
    for k in range(T - 1):
        uk = float(u[k])
        a1, a2 = _ex1_rhs(x1, x2, uk)
        b1, b2 = _ex1_rhs(x1 + h2 * a1, x2 + h2 * a2, uk)
        c1, c2 = _ex1_rhs(x1 + h2 * b1, x2 + h2 * b2, uk)
        e1, e2 = _ex1_rhs(x1 + dt * c1, x2 + dt * c2, uk)
        x1 = x1 + dt / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + e1)
        x2 = x2 + dt / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + e2)
        X[k + 1] = x1, x2
    return X
