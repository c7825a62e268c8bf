"""Strict-dissipativity LMI: assembly, feasibility search, verification.

The feasibility problem

    M(P, rho, nu) = [[A'P + PA - C'QC + rho I,  PB - S_hat],
                     [B'P - S_hat',            -R_hat + nu I]]  <  0,
    P > 0,  rho > 0,  nu > 0

is solved by maximizing a margin ``t`` with ``M <= -t I`` through a
log-determinant barrier method. Everything is dense; problems are expected
to have ``n + m`` in the tens at most.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from .model import (
    DissipativityCertificate,
    StateSpaceModel,
    SupplyRate,
    composite_matrices,
    spectral_norm,
    symmetrize,
)


def assemble_lmi(model: StateSpaceModel, sr: SupplyRate, P, rho: float, nu: float) -> np.ndarray:
    """The symmetric ``(n+m) x (n+m)`` block at a given ``(P, rho, nu)``."""
    sr.check_model(model)
    n, m = model.n, model.m
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape != (n, n):
        raise ValueError(f"P must be {n}x{n}, got {P.shape}")
    P = symmetrize(P)
    cm = composite_matrices(model, sr)
    A, B, C = model.A, model.B, model.C
    top_left = A.T @ P + P @ A - C.T @ sr.Q @ C + rho * np.eye(n)
    top_right = P @ B - cm.S_hat
    bottom = -cm.R_hat + nu * np.eye(m)
    return symmetrize(np.block([[top_left, top_right], [top_right.T, bottom]]))


@dataclass(frozen=True)
class FeasTolerances:
    """Tolerances for :func:`solve_feasibility`.

    A certificate is accepted when the block's largest eigenvalue is at
    most ``-lmi_tol`` and ``P``'s smallest eigenvalue is at least
    ``p_tol``. ``max_iter`` caps the total number of Newton steps.
    """

    lmi_tol: float = 1e-7
    p_tol: float = 1e-7
    newton_tol: float = 1e-9
    gap_tol: float = 1e-9
    max_iter: int = 200
    p_max: float = 1e6


@dataclass(frozen=True)
class LmiProblem:
    model: StateSpaceModel
    sr: SupplyRate
    margin: float = 0.0
    rho_min: float = 0.0
    nu_min: float = 0.0
    p_min: Optional[float] = None

    def __post_init__(self):
        self.sr.check_model(self.model)
        if self.margin < 0 or self.rho_min < 0 or self.nu_min < 0:
            raise ValueError("margin, rho_min and nu_min must be nonnegative")


@dataclass(frozen=True)
class Infeasible:
    """No certificate found. ``best_margin`` is the smallest largest-eigenvalue
    of the LMI block reached (positive or above ``-lmi_tol``)."""

    best_margin: float
    reason: str
    iterations: int = 0

    feasible = False


class Verification(NamedTuple):
    ok: bool
    lmi_max_eig: float
    P_min_eig: float


def verify_certificate(model: StateSpaceModel, sr: SupplyRate,
                       cert: DissipativityCertificate) -> Verification:
    """Re-evaluate the block from scratch at the certificate."""
    M = assemble_lmi(model, sr, cert.P, cert.rho, cert.nu)
    lmax = float(np.linalg.eigvalsh(M)[-1])
    pmin = float(np.linalg.eigvalsh(symmetrize(cert.P))[0])
    ok = lmax < 0.0 and pmin > 0.0 and cert.rho > 0.0 and cert.nu > 0.0
    return Verification(ok, lmax, pmin)


class OracleResult(NamedTuple):
    min_eig: float
    omega: float


def frequency_domain_oracle(model: StateSpaceModel, sr: SupplyRate, omega_grid) -> OracleResult:
    """Smallest eigenvalue of ``G*QG + G*S + S'G + R`` over a frequency grid.

    For a dissipative model this is nonnegative at every frequency, so a
    negative value refutes dissipativity. Requires Hurwitz ``A``.
    """
    sr.check_model(model)
    if not model.is_hurwitz():
        raise ValueError("frequency-domain oracle needs a Hurwitz A")
    best, at = math.inf, math.nan
    Q, S, R = sr.Q, sr.S, sr.R
    for w in np.asarray(omega_grid, dtype=float).ravel():
        G = model.transfer(1j * w)
        Gh = G.conj().T
        W = Gh @ Q @ G + Gh @ S + S.T @ G + R
        lam = float(np.linalg.eigvalsh(0.5 * (W + W.conj().T))[0])
        if lam < best:
            best, at = lam, float(w)
    return OracleResult(best, at)


class _BarrierSDP:
    """maximize c'z  s.t.  F_k(z) = F0_k + sum_i z_i F_ik  > 0  for each block k."""

    def __init__(self, blocks, c):
        self.blocks = [(np.asarray(F0), np.asarray(Fi)) for F0, Fi in blocks]
        self.c = np.asarray(c, dtype=float)
        self.theta = sum(F0.shape[0] for F0, _ in self.blocks)

    def _chols(self, z):
        out = []
        for F0, Fi in self.blocks:
            F = F0 + np.tensordot(z, Fi, axes=1)
            try:
                out.append(np.linalg.cholesky(symmetrize(F)))
            except np.linalg.LinAlgError:
                return None
        return out

    def value(self, z, tau, chols=None):
        chols = self._chols(z) if chols is None else chols
        if chols is None:
            return math.inf
        logdet = sum(2.0 * np.sum(np.log(np.diag(L))) for L in chols)
        return -tau * float(self.c @ z) - logdet

    def newton(self, z, tau, chols):
        N = z.size
        g = -tau * self.c
        H = np.zeros((N, N))
        for (F0, Fi), L in zip(self.blocks, chols):
            Li = np.linalg.inv(L)
            Y = Li @ Fi @ Li.T  # (N, d, d)
            g = g - np.trace(Y, axis1=1, axis2=2)
            Yf = Y.reshape(N, -1)
            H += Yf @ Yf.T
        H = symmetrize(H)
        try:
            dz = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            dz = -np.linalg.lstsq(H, g, rcond=None)[0]
        dec = float(-g @ dz)
        return dz, dec, g


def _lmi_data(prob: LmiProblem, scale: float, p_min: float, p_max: float):
    """Affine blocks of the margin-maximization problem in z = (vech P, rho, nu, t)."""
    model, sr = prob.model, prob.sr
    n, m = model.n, model.m
    A, B, C = model.A, model.B, model.C
    cm = composite_matrices(model, sr)
    d = n + m
    idx = [(i, j) for i in range(n) for j in range(i, n)]
    N = len(idx) + 3
    M0 = np.block([[-C.T @ sr.Q @ C, -cm.S_hat], [-cm.S_hat.T, -cm.R_hat]])
    Mi = np.zeros((N, d, d))
    Ei = np.zeros((N, n, n))
    for k, (i, j) in enumerate(idx):
        E = np.zeros((n, n))
        E[i, j] = E[j, i] = 1.0
        Ei[k] = E
        Mi[k] = np.block([[A.T @ E + E @ A, E @ B], [B.T @ E, np.zeros((m, m))]])
    Mi[N - 3, :n, :n] = np.eye(n)
    Mi[N - 2, n:, n:] = np.eye(m)
    # F1 = -(M0 + sum z_i M_i) / scale - t I
    F1_0 = -symmetrize(M0) / scale
    F1_i = -Mi / scale
    F1_i[N - 1] = -np.eye(d)
    blocks = [
        (F1_0, F1_i),
        (-p_min * np.eye(n), Ei),
        (p_max * np.eye(n), -Ei),
    ]
    r = np.zeros((N, 1, 1))
    r[N - 3] = 1.0
    blocks.append((np.array([[-prob.rho_min]]), r))
    v = np.zeros((N, 1, 1))
    v[N - 2] = 1.0
    blocks.append((np.array([[-prob.nu_min]]), v))
    c = np.zeros(N)
    c[N - 1] = 1.0
    return blocks, c, idx, M0, Mi


def solve_feasibility(prob: LmiProblem, tol: FeasTolerances = FeasTolerances(),
                      precheck: bool = True) -> Union[DissipativityCertificate, Infeasible]:
    """Search for a strict-dissipativity certificate.

    Returns a :class:`DissipativityCertificate` whose margin is at most
    ``-max(prob.margin, tol.lmi_tol)`` (checked by direct eigenvalue
    computation) or an :class:`Infeasible` record. Deterministic: starts
    from ``P = I``, ``rho = rho_min + 1``, ``nu = nu_min + 1``.
    """
    model, sr = prob.model, prob.sr
    n, m = model.n, model.m
    target = max(prob.margin, tol.lmi_tol)
    p_min = tol.p_tol if prob.p_min is None else max(prob.p_min, tol.p_tol)
    cm = composite_matrices(model, sr)
    if precheck:
        rmin = float(np.linalg.eigvalsh(cm.R_hat)[0])
        if rmin - prob.nu_min <= target:
            return Infeasible(
                best_margin=prob.nu_min - rmin,
                reason=(f"R_hat has smallest eigenvalue {rmin:.6g}; the input block "
                        f"-R_hat + nu I with nu >= {prob.nu_min:.6g} cannot be negative "
                        "definite with the required margin"),
            )

    scale = max(1.0, spectral_norm(model.A))
    blocks, c, idx, M0, Mi = _lmi_data(prob, scale, p_min, tol.p_max)
    sdp = _BarrierSDP(blocks, c)
    N = c.size

    z = np.zeros(N)
    for k, (i, j) in enumerate(idx):
        z[k] = 1.0 if i == j else 0.0
    if not p_min < 1.0 < tol.p_max:
        for k, (i, j) in enumerate(idx):
            z[k] = math.sqrt(p_min * tol.p_max) if i == j else 0.0
    z[N - 3] = prob.rho_min + 1.0
    z[N - 2] = prob.nu_min + 1.0
    M_start = (M0 + np.tensordot(z, Mi, axes=1)) / scale
    z[N - 1] = -float(np.linalg.eigvalsh(symmetrize(M_start))[-1]) - 1.0

    target_s = target / scale
    tau = 1.0
    iters = 0
    reason = "iteration limit reached"
    chols = sdp._chols(z)
    while iters < tol.max_iter:
        # centering
        while iters < tol.max_iter:
            dz, dec, g = sdp.newton(z, tau, chols)
            iters += 1
            if dec / 2.0 <= tol.newton_tol:
                break
            f0 = sdp.value(z, tau, chols)
            step = 1.0
            while step > 1e-12:
                zn = z + step * dz
                cn = sdp._chols(zn)
                if cn is not None and sdp.value(zn, tau, cn) <= f0 - 0.25 * step * dec:
                    break
                step *= 0.5
            else:
                break
            z, chols = zn, cn
        t = z[N - 1]
        gap = sdp.theta / tau
        if t >= target_s and (gap <= 0.1 * t or gap <= tol.gap_tol):
            reason = ""
            break
        if t + 1.01 * gap < target_s:
            reason = (f"optimal margin bounded by {-(t + gap) * scale:.6g}, "
                      f"above the required {-target:.6g}")
            break
        if gap <= tol.gap_tol:
            reason = "duality gap closed below the required margin"
            break
        tau *= 10.0

    P = np.zeros((n, n))
    for k, (i, j) in enumerate(idx):
        P[i, j] = P[j, i] = z[k]
    rho, nu = float(z[N - 3]), float(z[N - 2])
    M = assemble_lmi(model, sr, P, rho, nu)
    lmax = float(np.linalg.eigvalsh(M)[-1])
    pmin = float(np.linalg.eigvalsh(P)[0])
    if lmax <= -target and pmin >= p_min * (1 - 1e-12) and rho > prob.rho_min and nu > prob.nu_min:
        return DissipativityCertificate(P, rho, nu, lmax, iters)
    if not reason:
        reason = "barrier solution failed direct verification"
    return Infeasible(best_margin=lmax, reason=reason, iterations=iters)
