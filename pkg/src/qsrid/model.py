"""Core value types: state-space models, QSR supply rates, data containers.

All matrices are stored as read-only float64 arrays. Matrices that are
declared symmetric are symmetrized on construction, so downstream code may
rely on exact symmetry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def _as_matrix(name: str, value, shape: Optional[tuple] = None) -> np.ndarray:
    arr = np.array(value, dtype=float, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def symmetrize(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return 0.5 * (X + X.T)


def spectral_norm(M) -> float:
    """Largest singular value of ``M``.

    Computed from the symmetric eigenproblem of ``M^T M`` (or ``M M^T``,
    whichever is smaller), which is deterministic and accurate to about
    1e-10 relative for the well-scaled matrices used here.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ValueError("spectral_norm: non-finite input")
    if M.size == 0:
        return 0.0
    G = M.T @ M if M.shape[1] <= M.shape[0] else M @ M.T
    lam = np.linalg.eigvalsh(symmetrize(G))[-1]
    # eigvalsh loses relative accuracy on tiny norms; fall back to the SVD there
    if lam < 1e-20:
        return float(np.linalg.svd(M, compute_uv=False)[0])
    return math.sqrt(max(lam, 0.0))


@dataclass(frozen=True)
class StateSpaceModel:
    """Continuous-time LTI model ``x' = Ax + Bu``, ``y = Cx + Du``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = _as_matrix("A", self.A)
        n = A.shape[0]
        if A.shape != (n, n) or n < 1:
            raise ValueError(f"A must be square with n >= 1, got {A.shape}")
        B = _as_matrix("B", self.B)
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        m = B.shape[1]
        C = _as_matrix("C", self.C)
        if C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {C.shape}")
        p = C.shape[0]
        D = _as_matrix("D", self.D, (p, m))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def with_output_matrix(self, C) -> "StateSpaceModel":
        return StateSpaceModel(self.A, self.B, C, self.D)

    def transfer(self, s: complex) -> np.ndarray:
        """Evaluate ``G(s) = C (sI - A)^{-1} B + D``."""
        X = np.linalg.solve(s * np.eye(self.n) - self.A, self.B)
        return self.C @ X + self.D

    def markov_parameters(self, k: int) -> np.ndarray:
        """First ``k`` coefficients ``C A^i B``, stacked as ``(k, p, m)``."""
        out = np.empty((k, self.p, self.m))
        AiB = self.B.copy()
        for i in range(k):
            out[i] = self.C @ AiB
            AiB = self.A @ AiB
        return out

    def is_hurwitz(self) -> bool:
        return bool(np.max(np.linalg.eigvals(self.A).real) < 0.0)

    def __eq__(self, other):
        if not isinstance(other, StateSpaceModel):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in "ABCD"
        )

    __hash__ = None


@dataclass(frozen=True)
class SupplyRate:
    """Quadratic supply rate ``y'Qy + 2y'Su + u'Ru``."""

    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = _as_matrix("Q", self.Q)
        R = _as_matrix("R", self.R)
        if Q.shape[0] != Q.shape[1] or R.shape[0] != R.shape[1]:
            raise ValueError("Q and R must be square")
        S = _as_matrix("S", self.S, (Q.shape[0], R.shape[0]))
        Q = symmetrize(Q)
        R = symmetrize(R)
        Q.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "R", R)

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def check_model(self, model: StateSpaceModel) -> None:
        if (model.p, model.m) != (self.p, self.m):
            raise ValueError(
                f"supply rate is for (p, m) = ({self.p}, {self.m}) but model "
                f"has (p, m) = ({model.p}, {model.m})"
            )

    def evaluate(self, y: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Pointwise supply for sample rows ``y`` (T, p) and ``u`` (T, m)."""
        y = np.atleast_2d(y)
        u = np.atleast_2d(u)
        return (
            np.einsum("ti,ij,tj->t", y, self.Q, y)
            + 2.0 * np.einsum("ti,ij,tj->t", y, self.S, u)
            + np.einsum("ti,ij,tj->t", u, self.R, u)
        )


PRESETS = ("passivity", "strict_passivity", "l2_gain", "conic", "sector")


def make_supply_rate(preset: str, p: int, m: int, **params) -> SupplyRate:
    """Build one of the standard QSR presets.

    ``strict_passivity`` takes ``a, b > 0``; ``l2_gain`` takes ``gain > 0``;
    ``conic`` takes ``c`` and ``r > 0``; ``sector`` takes ``a, b``.
    All presets couple ``y`` and ``u`` through identities, so ``p == m`` is
    required.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    if p != m:
        raise ValueError(f"preset {preset!r} needs p == m, got p={p}, m={m}")
    if p < 1:
        raise ValueError("p must be positive")
    Ip = np.eye(p)

    def need(*names):
        missing = [k for k in names if k not in params]
        if missing:
            raise ValueError(f"preset {preset!r} needs parameters {missing}")
        return [float(params[k]) for k in names]

    if preset == "passivity":
        return SupplyRate(0.0 * Ip, 0.5 * Ip, 0.0 * Ip)
    if preset == "strict_passivity":
        a, b = need("a", "b")
        if a <= 0 or b <= 0:
            raise ValueError("strict_passivity needs a > 0 and b > 0")
        return SupplyRate(-a * Ip, 0.5 * Ip, -b * Ip)
    if preset == "l2_gain":
        (g,) = need("gain")
        if g <= 0:
            raise ValueError("l2_gain needs gain > 0")
        return SupplyRate(-(1.0 / g) * Ip, 0.0 * Ip, g * Ip)
    if preset == "conic":
        c, r = need("c", "r")
        if r <= 0:
            raise ValueError("conic needs r > 0")
        return SupplyRate(-Ip, c * Ip, (r * r - c * c) * Ip)
    a, b = need("a", "b")
    return SupplyRate(-Ip, (a + b) * Ip, -a * b * Ip)


@dataclass(frozen=True)
class CompositeMatrices:
    S_hat: np.ndarray
    R_hat: np.ndarray


def composite_matrices(model: StateSpaceModel, sr: SupplyRate) -> CompositeMatrices:
    """``S_hat = C'S + C'QD`` and ``R_hat = R + D'S + S'D + D'QD``."""
    sr.check_model(model)
    C, D = model.C, model.D
    Q, S, R = sr.Q, sr.S, sr.R
    S_hat = C.T @ S + C.T @ Q @ D
    R_hat = symmetrize(R + D.T @ S + S.T @ D + D.T @ Q @ D)
    S_hat.setflags(write=False)
    R_hat.setflags(write=False)
    return CompositeMatrices(S_hat, R_hat)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled record; rows of ``u``/``y``/``x`` are samples."""

    dt: float
    u: np.ndarray
    y: np.ndarray
    t0: float = 0.0
    x: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        u = _as_samples("u", self.u)
        y = _as_samples("y", self.y)
        if u.shape[0] != y.shape[0]:
            raise ValueError(f"u has {u.shape[0]} samples but y has {y.shape[0]}")
        if u.shape[0] < 2:
            raise ValueError("a trajectory needs at least 2 samples")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))
        if self.x is not None:
            x = _as_samples("x", self.x)
            if x.shape[0] != u.shape[0]:
                raise ValueError("x must have as many samples as u")
            object.__setattr__(self, "x", x)

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.T)


def _as_samples(name, value) -> np.ndarray:
    arr = np.array(value, dtype=float, copy=True)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite samples")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    trajectories: tuple

    def __init__(self, trajectories: Sequence[Trajectory]):
        trajs = tuple(trajectories)
        if not trajs:
            raise ValueError("a dataset needs at least one trajectory")
        first = trajs[0]
        for k, tr in enumerate(trajs[1:], start=1):
            if (tr.m, tr.p) != (first.m, first.p):
                raise ValueError(f"trajectory {k} has (m, p) = ({tr.m}, {tr.p}), "
                                 f"expected ({first.m}, {first.p})")
            if not math.isclose(tr.dt, first.dt, rel_tol=1e-12):
                raise ValueError(f"trajectory {k} has dt={tr.dt}, expected {first.dt}")
        object.__setattr__(self, "trajectories", trajs)

    def __iter__(self):
        return iter(self.trajectories)

    def __len__(self):
        return len(self.trajectories)

    def __getitem__(self, k):
        return self.trajectories[k]

    @property
    def dt(self) -> float:
        return self.trajectories[0].dt

    @property
    def m(self) -> int:
        return self.trajectories[0].m

    @property
    def p(self) -> int:
        return self.trajectories[0].p

    @property
    def n_samples(self) -> int:
        return sum(tr.T for tr in self.trajectories)


@dataclass(frozen=True)
class DissipativityCertificate:
    """Witness ``(P, rho, nu)`` for the strict-dissipativity LMI.

    ``margin`` is the largest eigenvalue of the assembled LMI block at the
    witness; it is negative for a strictly feasible certificate.
    """

    P: np.ndarray
    rho: float
    nu: float
    margin: float
    iterations: int = 0

    feasible = True

    def __post_init__(self):
        P = symmetrize(_as_matrix("P", self.P))
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "nu", float(self.nu))
        object.__setattr__(self, "margin", float(self.margin))


@dataclass(frozen=True)
class PerturbationReport:
    """Outcome of the output-matrix perturbation procedure."""

    gamma: float
    delta_C: np.ndarray
    alpha: float
    model: StateSpaceModel
    certificate: DissipativityCertificate
    lipschitz: float
    eps_g: float
    epsilon: float
    beta: float
    baseline_error: float
    rho_hat: float
    nu_hat: float
    l1_satisfied: bool
    l2_satisfied: bool
    iterations: tuple = field(default_factory=tuple)
    non_monotone: bool = False

    @property
    def delta_y_tilde(self) -> float:
        return (1.0 + self.beta) * self.baseline_error
