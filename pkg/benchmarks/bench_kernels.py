"""Compare the compiled and pure-Python time-stepping kernels.

Usage: python benchmarks/bench_kernels.py [--samples N] [--repeat R]

Prints the best-of-R wall time per backend, the speedup, and the largest
output difference between backends.
"""

import argparse
import time

import numpy as np

from qsrid import kernels
from qsrid.model import StateSpaceModel
from qsrid.simulate import discretize


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--samples", type=int, default=20001)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    try:
        kernels._pick("cython")
    except ImportError:
        print("compiled extension not built; only the Python backend is available")
        return 1

    T = args.samples
    dt = 1e-3
    t = dt * np.arange(T)
    u = 0.1 * np.sin(2 * np.pi * 0.5 * t)[:, None]
    model = StateSpaceModel([[0.0, 1.0], [-2.0, -0.7]], [[0.0], [1.0]], [[1.0, 0.5]], [[0.2]])
    Phi, Gam = discretize(model, dt)
    x0 = np.zeros(2)

    cases = {
        "lti_sim": lambda b: kernels.lti_sim(Phi, Gam, model.C, model.D, x0, u, backend=b)[1],
        "rk4_example1": lambda b: kernels.rk4_example1(x0, u[:, 0], dt, backend=b),
    }
    print(f"samples={T} repeat={args.repeat}")
    print(f"{'kernel':<14}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max |diff|':>12}")
    for name, fn in cases.items():
        tp, yp = best_of(lambda: fn("python"), args.repeat)
        tc, yc = best_of(lambda: fn("cython"), args.repeat)
        diff = float(np.max(np.abs(yp - yc)))
        print(f"{name:<14}{tp:>12.4f}{tc:>12.5f}{tp / tc:>10.1f}{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
