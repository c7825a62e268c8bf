"""Backend selection for the time-stepping kernels.

The compiled extension is used when it imports; set ``QSRID_PURE_PYTHON=1``
to force the pure-Python fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("QSRID_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def lti_sim(Phi, Gam, C, D, x0, u, backend=None):
    impl = _pick(backend)
    return impl.lti_sim(_c(Phi), _c(Gam), _c(C), _c(D), _c(x0).ravel(), _c(u))


def rk4_example1(x0, u, dt, backend=None):
    impl = _pick(backend)
    return impl.rk4_example1(_c(x0).ravel(), _c(u).ravel(), float(dt))


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {backend!r}")
