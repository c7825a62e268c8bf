"""Trajectory generation for nonlinear systems and LTI models."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.linalg import expm

from . import kernels
from .model import StateSpaceModel, SupplyRate, Trajectory


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NonlinearSystem:
    """``x' = f(x, u)``, ``y = g(x, u)`` with an equilibrium at the origin.

    ``f`` and ``g`` are assumed Lipschitz; this is not checked. ``kernel``
    names a compiled integrator in :mod:`qsrid.kernels` that reproduces
    ``f`` exactly, if one exists.
    """

    n: int
    m: int
    p: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "custom"
    kernel: Optional[str] = None

    def __post_init__(self):
        f0 = np.asarray(self.f(np.zeros(self.n), np.zeros(self.m)), dtype=float)
        if f0.shape != (self.n,):
            raise ValueError(f"f must return shape ({self.n},), got {f0.shape}")
        if not np.linalg.norm(f0) < 1e-12:
            raise ValueError(f"origin is not an equilibrium: |f(0,0)| = {np.linalg.norm(f0):g}")

    @classmethod
    def from_linear(cls, model: StateSpaceModel, name: str = "linear") -> "NonlinearSystem":
        A, B, C, D = model.A, model.B, model.C, model.D
        return cls(model.n, model.m, model.p,
                   lambda x, u: A @ x + B @ u,
                   lambda x, u: C @ x + D @ u,
                   name=name)


def _ex1_f(x, u):
    x1, x2 = x
    return np.array([-x1 * x1 + x2, -x1 - x2 + (0.5 * x1 + 1.0) * u[0]])


def _ex1_g(x, u):
    x1, x2 = x
    return np.array([x1 + x2 + (0.5 * x1 + 1.0) * u[0]])


def example1_system() -> NonlinearSystem:
    """Two-state benchmark with quadratic drift and bilinear input coupling.

    x1' = -x1^2 + x2
    x2' = -x1 - x2 + (0.5 x1 + 1) u
    y   = x1 + x2 + (0.5 x1 + 1) u
    """
    return NonlinearSystem(2, 1, 1, _ex1_f, _ex1_g, name="example1", kernel="example1")


# 16-bit Fibonacci LFSR, polynomial x^16 + x^14 + x^13 + x^11 + 1 (period 65535)
_LFSR_TAPS = (0, 2, 3, 5)


def lfsr_bits(count: int, seed: int) -> np.ndarray:
    state = (int(seed) % 0xFFFF) + 1
    out = np.empty(count, dtype=np.int8)
    for k in range(count):
        out[k] = state & 1
        bit = 0
        for tap in _LFSR_TAPS:
            bit ^= (state >> tap) & 1
        state = (state >> 1) | (bit << 15)
    return out


@dataclass(frozen=True)
class InputSignal:
    """Deterministic excitation sampled on ``t_k = k dt``, ``k = 0..N``.

    ``N = round(duration / dt)``. Frequencies are in Hz. Multisine phases
    default to uniform draws from ``numpy.random.default_rng(seed)``.
    """

    kind: str
    duration: float
    dt: float
    level: float = 0.0
    amplitudes: tuple = ()
    frequencies: tuple = ()
    phases: Optional[tuple] = None
    amplitude: float = 1.0
    seed: int = 0
    hold_samples: int = 1
    channels: int = 1

    KINDS = ("step", "multisine", "prbs", "zero")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if not (self.dt > 0 and self.duration > 0):
            raise ValueError("duration and dt must be positive")
        if self.kind == "multisine" and len(self.amplitudes) != len(self.frequencies):
            raise ValueError("multisine needs one amplitude per frequency")
        if self.hold_samples < 1 or self.channels < 1:
            raise ValueError("hold_samples and channels must be >= 1")

    @classmethod
    def step(cls, level, duration, dt, channels=1):
        return cls("step", duration, dt, level=float(level), channels=channels)

    @classmethod
    def zero(cls, duration, dt, channels=1):
        return cls("zero", duration, dt, channels=channels)

    @classmethod
    def multisine(cls, amplitudes, frequencies, duration, dt, phases=None, seed=0, channels=1):
        return cls("multisine", duration, dt, amplitudes=tuple(map(float, amplitudes)),
                   frequencies=tuple(map(float, frequencies)),
                   phases=None if phases is None else tuple(np.ravel(phases).tolist()),
                   seed=int(seed), channels=channels)

    @classmethod
    def prbs(cls, amplitude, duration, dt, seed=0, hold_samples=1, channels=1):
        return cls("prbs", duration, dt, amplitude=float(amplitude), seed=int(seed),
                   hold_samples=int(hold_samples), channels=channels)

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt)) + 1

    def samples(self) -> np.ndarray:
        T, m = self.n_samples, self.channels
        t = self.dt * np.arange(T)
        if self.kind == "zero":
            return np.zeros((T, m))
        if self.kind == "step":
            return np.full((T, m), self.level)
        if self.kind == "prbs":
            out = np.empty((T, m))
            nbits = -(-T // self.hold_samples)
            for ch in range(m):
                bits = lfsr_bits(nbits, self.seed + ch)
                out[:, ch] = np.repeat(np.where(bits == 1, 1.0, -1.0), self.hold_samples)[:T]
            return self.amplitude * out
        amps = np.asarray(self.amplitudes)
        freqs = np.asarray(self.frequencies)
        K = amps.size
        if self.phases is None:
            phases = np.random.default_rng(self.seed).uniform(0.0, 2.0 * np.pi, size=(m, K))
        else:
            phases = np.asarray(self.phases, dtype=float).reshape(m, K)
        out = np.empty((T, m))
        for ch in range(m):
            out[:, ch] = np.sin(2.0 * np.pi * np.outer(t, freqs) + phases[ch]) @ amps
        return out


InputLike = Union[InputSignal, np.ndarray]


def _resolve_input(u: InputLike, dt: Optional[float], m: int):
    if isinstance(u, InputSignal):
        samples, dt = u.samples(), u.dt
    else:
        if dt is None:
            raise ValueError("dt is required when u is given as an array")
        samples = np.asarray(u, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
    if samples.shape[1] != m:
        raise ValueError(f"input has {samples.shape[1]} channels, system expects {m}")
    if samples.shape[0] < 2:
        raise ValueError("need at least 2 input samples")
    return np.ascontiguousarray(samples), float(dt)


def _check_finite(X: np.ndarray, what: str) -> None:
    bad = ~np.all(np.isfinite(X), axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise SimulationError(f"{what} diverged: non-finite state at sample index {k}")


def simulate_nonlinear(sys: NonlinearSystem, x0, u: InputLike, dt: Optional[float] = None,
                       backend: Optional[str] = None) -> Trajectory:
    """Fixed-step classical RK4 with zero-order-hold input.

    ``dt`` must be small enough for RK4 to be stable on ``sys``; this is
    the caller's responsibility.
    """
    U, dt = _resolve_input(u, dt, sys.m)
    x0 = np.asarray(x0, dtype=float).reshape(sys.n)
    T = U.shape[0]
    if sys.kernel == "example1":
        with np.errstate(over="ignore", invalid="ignore"):
            X = kernels.rk4_example1(x0, U[:, 0], dt, backend=backend)
    else:
        X = np.empty((T, sys.n))
        X[0] = x0
        x = x0.copy()
        f = sys.f
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(T - 1):
                uk = U[k]
                k1 = f(x, uk)
                k2 = f(x + 0.5 * dt * k1, uk)
                k3 = f(x + 0.5 * dt * k2, uk)
                k4 = f(x + dt * k3, uk)
                x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                X[k + 1] = x
                if not np.all(np.isfinite(x)):
                    X[k + 2:] = np.nan
                    break
    _check_finite(X, sys.name)
    Y = np.array([sys.g(X[k], U[k]) for k in range(T)]).reshape(T, sys.p)
    return Trajectory(dt=dt, u=U, y=Y, x=X)


def discretize(model: StateSpaceModel, dt: float):
    """Exact zero-order-hold discretization ``(Phi, Gamma)``."""
    n, m = model.n, model.m
    M = np.zeros((n + m, n + m))
    M[:n, :n] = model.A
    M[:n, n:] = model.B
    E = expm(M * dt)
    return E[:n, :n], E[:n, n:]


def simulate_linear(model: StateSpaceModel, x0, u: InputLike, dt: Optional[float] = None,
                    backend: Optional[str] = None) -> Trajectory:
    """Sample-exact simulation of an LTI model under zero-order-hold input."""
    U, dt = _resolve_input(u, dt, model.m)
    x0 = np.asarray(x0, dtype=float).reshape(model.n)
    Phi, Gam = discretize(model, dt)
    with np.errstate(over="ignore", invalid="ignore"):
        X, Y = kernels.lti_sim(Phi, Gam, model.C, model.D, x0, U, backend=backend)
    _check_finite(X, "linear model")
    return Trajectory(dt=dt, u=U, y=Y, x=X)


class SupplyCheck(NamedTuple):
    min_slack: float
    violating_index: Optional[int]


def empirical_supply_check(traj: Trajectory, sr: SupplyRate, rho: float = 0.0,
                           nu: float = 0.0) -> SupplyCheck:
    """Pointwise slack ``s(k) = w(y, u) - rho |x|^2 - nu |u|^2`` along a record."""
    if (traj.p, traj.m) != (sr.p, sr.m):
        raise ValueError("supply rate dimensions do not match the trajectory")
    s = sr.evaluate(traj.y, traj.u) - nu * np.sum(traj.u ** 2, axis=1)
    if rho != 0.0:
        if traj.x is None:
            raise ValueError("state samples are required to check the rho term")
        s = s - rho * np.sum(traj.x ** 2, axis=1)
    neg = np.flatnonzero(s < 0.0)
    return SupplyCheck(float(s.min()), int(neg[0]) if neg.size else None)
