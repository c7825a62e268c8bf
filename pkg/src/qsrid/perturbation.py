"""Output-matrix perturbation that makes a baseline model strictly dissipative.

The baseline ``(A, B, C, D)`` is kept except for ``C -> C + gamma * ones``.
The smallest such ``gamma`` is searched by bisection over an inner convex
feasibility problem, with the local-dissipativity bounds on ``nu`` and
``rho`` imposed as described on :func:`run_algorithm1`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .lmi import FeasTolerances, Infeasible, LmiProblem, solve_feasibility, verify_certificate
from .model import (
    Dataset,
    DissipativityCertificate,
    PerturbationReport,
    StateSpaceModel,
    SupplyRate,
    composite_matrices,
    spectral_norm,
)
from .sysid import FitResult, estimate_initial_state, estimate_lipschitz
from .simulate import simulate_linear


class PerturbationError(RuntimeError):
    """The search failed; ``iterations`` holds the trace up to the failure."""

    def __init__(self, message: str, iterations=()):
        super().__init__(message)
        self.iterations = tuple(iterations)


@dataclass(frozen=True)
class AlgorithmConfig:
    """Knobs for :func:`run_algorithm1`.

    ``local_constraints`` imposes the bound on ``nu`` during the gamma
    search and the bound on ``rho`` through rho escalation. Turning it off
    keeps only the LMI, so the result is strictly dissipative but carries no
    local guarantee for the underlying nonlinear system.
    ``eps_g`` overrides the empirical output-error bound; ``lipschitz``
    overrides the data-driven Lipschitz estimate.
    """

    gamma_max: float = 1e3
    gamma_tol: float = 1e-4
    max_rho_iters: int = 100
    eps_g: Optional[float] = None
    lipschitz: Optional[float] = None
    local_constraints: bool = True
    allow_negative_gamma: bool = False
    refine: bool = True
    prescan_per_decade: int = 8
    tolerances: FeasTolerances = field(default_factory=FeasTolerances)

    def __post_init__(self):
        if not (self.gamma_max > 0 and self.gamma_tol > 0):
            raise ValueError("gamma_max and gamma_tol must be positive")
        if self.max_rho_iters < 1:
            raise ValueError("max_rho_iters must be >= 1")
        if self.prescan_per_decade < 1:
            raise ValueError("prescan_per_decade must be >= 1")

    @staticmethod
    def rho_increment(rho: float) -> float:
        return max(1.0, 0.1 * rho)


def _qnorm2(sr: SupplyRate) -> float:
    return spectral_norm(sr.Q) ** 2


def l1_bound(sr: SupplyRate, C_pert, L_g: float) -> float:
    """Smallest ``rho`` admitted by the state-index constraint."""
    q2 = _qnorm2(sr)
    c = spectral_norm(C_pert)
    return q2 * c * c + 2.0 * (q2 + 1.0) * (L_g + c) ** 2


def l2_bound(sr: SupplyRate, D, L_g: float) -> float:
    """Smallest ``nu`` admitted by the input-index constraint."""
    q2 = _qnorm2(sr)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    sqd = spectral_norm(sr.S + sr.Q @ D)
    return sqd * sqd + 2.0 * (q2 + 1.0) * (L_g + spectral_norm(D)) ** 2


def check_constraint_l1(rho: float, sr: SupplyRate, C_pert, L_g: float) -> bool:
    return rho >= l1_bound(sr, C_pert, L_g)


def check_constraint_l2(nu: float, sr: SupplyRate, D, L_g: float) -> bool:
    return nu >= l2_bound(sr, D, L_g)


class LocalMargins(NamedTuple):
    rho_hat: float
    nu_hat: float


def local_margins(cert: DissipativityCertificate, sr: SupplyRate, C_pert, D,
                  L_g: float) -> LocalMargins:
    """Residual state and input indices left for the nonlinear system."""
    return LocalMargins(cert.rho - l1_bound(sr, C_pert, L_g),
                        cert.nu - l2_bound(sr, D, L_g))


def epsilon_radius(L_g: float, C_pert, D, eps_g: float) -> float:
    """Radius of the ball where local dissipativity is guaranteed."""
    if eps_g < 0 or L_g < 0:
        raise ValueError("eps_g and L_g must be nonnegative")
    den_c = math.sqrt(2.0) * (L_g + spectral_norm(C_pert))
    den_d = math.sqrt(2.0) * (L_g + spectral_norm(D))
    if den_c == 0.0 and den_d == 0.0:
        raise ValueError("degenerate model: L_g, |C| and |D| are all zero")
    if eps_g == 0.0:
        return 0.0
    return min(eps_g / den_c if den_c > 0 else math.inf,
               eps_g / den_d if den_d > 0 else math.inf)


class Degradation(NamedTuple):
    beta: float
    delta_y_tilde: float


def fit_degradation(alpha: float, epsilon: float, delta_y_bar: float) -> Degradation:
    """``beta = alpha eps^2 / delta_y_bar`` and the bound ``(1 + beta) delta_y_bar``."""
    if delta_y_bar < 0:
        raise ValueError("delta_y_bar must be nonnegative")
    if alpha == 0.0:
        return Degradation(0.0, delta_y_bar)
    if delta_y_bar == 0.0:
        raise ValueError("fit-degradation bound is undefined for delta_y_bar = 0 with alpha > 0")
    beta = alpha * epsilon * epsilon / delta_y_bar
    return Degradation(beta, (1.0 + beta) * delta_y_bar)


def max_output_error(model: StateSpaceModel, data: Dataset) -> float:
    """Largest pointwise output error over all samples, fitted initial states."""
    worst = 0.0
    for tr in data:
        x0 = estimate_initial_state(model, tr.u, tr.y, tr.dt)
        sim = simulate_linear(model, x0, tr.u, tr.dt)
        worst = max(worst, float(np.max(np.linalg.norm(sim.y - tr.y, axis=1))))
    return worst


class IterationRecord(NamedTuple):
    gamma: float
    rho: float
    feasible: bool
    stage: str


class _Search:
    def __init__(self, base: StateSpaceModel, sr: SupplyRate, cfg: AlgorithmConfig,
                 nu_min: float):
        self.base = base
        self.sr = sr
        self.cfg = cfg
        self.nu_min = nu_min
        self.ones = np.ones((base.p, base.n))
        self.log = []
        self.non_monotone = False

    def C(self, gamma):
        return self.base.C + gamma * self.ones

    def solve(self, gamma, rho_min, stage, nu_min=None):
        if callable(rho_min):
            rho_min = rho_min(gamma)
        prob = LmiProblem(self.base.with_output_matrix(self.C(gamma)), self.sr,
                          rho_min=rho_min, nu_min=self.nu_min if nu_min is None else nu_min)
        res = solve_feasibility(prob, self.cfg.tolerances)
        self.log.append(IterationRecord(float(gamma), res.rho if res.feasible else rho_min,
                                        res.feasible, stage))
        return res

    def smallest(self, lo, hi, sign, rho_min, stage):
        """Smallest feasible |gamma| in (lo, hi] to within gamma_tol.

        Scans log-spaced offsets above ``lo`` in ascending order, stops at the
        first feasible point, probes the next grid point for monotonicity,
        then bisects the bracket. Returns ``(gamma, certificate,
        last_infeasible_gamma)`` or None.
        """
        cfg = self.cfg
        span = hi - lo
        if span <= cfg.gamma_tol:
            return None
        count = max(2, int(math.ceil(cfg.prescan_per_decade * math.log10(span / cfg.gamma_tol))) + 1)
        grid = lo + np.geomspace(cfg.gamma_tol, span, count)
        first, cert = None, None
        for k, g in enumerate(grid):
            r = self.solve(sign * g, rho_min, stage)
            if r.feasible:
                first, cert = k, r
                break
        if first is None:
            return None
        if first + 1 < count and not self.solve(sign * grid[first + 1], rho_min, stage + "-probe").feasible:
            self.non_monotone = True
        a = lo if first == 0 else grid[first - 1]
        b = grid[first]
        while b - a > cfg.gamma_tol:
            mid = 0.5 * (a + b)
            r = self.solve(sign * mid, rho_min, stage)
            if r.feasible:
                b, cert = mid, r
            else:
                a = mid
        return sign * b, cert, sign * a


def run_algorithm1(data: Dataset, fit: FitResult, sr: SupplyRate,
                   cfg: AlgorithmConfig = AlgorithmConfig()) -> PerturbationReport:
    """Make the baseline strictly dissipative by perturbing its output matrix.

    1. If the baseline LMI is feasible, return the baseline unchanged.
    2. Otherwise bisect for the smallest ``gamma`` such that the LMI with
       ``C = C_bar + gamma * ones`` is feasible while ``nu`` meets its lower
       bound. An ascending log-spaced pre-scan brackets the threshold and
       flags non-monotone feasibility.
    3. While the returned ``rho`` violates its lower bound, raise the floor
       on ``rho`` by ``max(1, 0.1 rho)`` and re-solve at the current
       ``gamma``; if that fails, continue the gamma search upward.
    4. If the escalation runs out (the steps overshoot every attainable
       ``rho``), search upward from the LMI threshold with the ``rho``
       bound imposed directly at each ``gamma``.
    5. With ``refine``, bisect once more between the LMI threshold and the
       accepted ``gamma`` with both index bounds imposed directly, which
       removes the overshoot of the coarse rho steps.
    """
    base = fit.model
    sr.check_model(base)
    if (base.m, base.p) != (data.m, data.p):
        raise ValueError("fitted model does not match the data dimensions")
    L_g = cfg.lipschitz if cfg.lipschitz is not None else estimate_lipschitz(data)
    nu_min = l2_bound(sr, base.D, L_g) if cfg.local_constraints else 0.0
    search = _Search(base, sr, cfg, nu_min)

    res = search.solve(0.0, 0.0, "baseline", nu_min=0.0)
    gamma = 0.0
    if res.feasible:
        cert = res
    else:
        rmin = float(np.linalg.eigvalsh(composite_matrices(base, sr).R_hat)[0])
        if rmin - nu_min <= cfg.tolerances.lmi_tol:
            raise PerturbationError(
                f"the input-index bound nu >= {nu_min:.6g} cannot hold together with the LMI, "
                f"which needs nu < {rmin:.6g} (smallest eigenvalue of R_hat); neither side "
                "depends on gamma, so no output perturbation helps", search.log)
        signs = [1.0, -1.0] if cfg.allow_negative_gamma else [1.0]
        found = None
        for sign in signs:
            found = search.smallest(0.0, cfg.gamma_max, sign, 0.0, "gamma-search")
            if found is not None:
                break
        if found is None:
            raise PerturbationError(
                f"no feasible gamma in (0, {cfg.gamma_max:g}]", search.log)
        gamma, cert, gamma_floor = found
        sign = math.copysign(1.0, gamma)

        if cfg.local_constraints:
            def l1_floor(g):
                return l1_bound(sr, search.C(g), L_g)

            rho_min = 0.0
            escalated = False
            for _ in range(cfg.max_rho_iters):
                if check_constraint_l1(cert.rho, sr, search.C(gamma), L_g):
                    escalated = True
                    break
                rho_min = cert.rho + cfg.rho_increment(cert.rho)
                r = search.solve(gamma, rho_min, "rho-escalation")
                if r.feasible:
                    cert = r
                    continue
                found = search.smallest(abs(gamma), cfg.gamma_max, sign, rho_min, "rho-escalation")
                if found is None:
                    break
                gamma, cert, _ = found

            if not escalated:
                # The fixed rho steps can jump past the largest attainable
                # rho; impose the rho bound at each gamma directly instead.
                found = search.smallest(abs(gamma_floor), cfg.gamma_max, sign, l1_floor, "direct-l1")
                if found is None:
                    raise PerturbationError(
                        f"no gamma in ({abs(gamma_floor):.6g}, {cfg.gamma_max:g}] satisfies the LMI "
                        f"together with both index bounds (last rho floor {rho_min:.6g})",
                        search.log)
                gamma, cert, _ = found
            elif cfg.refine and abs(gamma) - abs(gamma_floor) > cfg.gamma_tol:
                lo, hi = abs(gamma_floor), abs(gamma)
                while hi - lo > cfg.gamma_tol:
                    mid = 0.5 * (lo + hi)
                    r = search.solve(sign * mid, l1_floor, "refine")
                    if r.feasible:
                        hi, cert = mid, r
                    else:
                        lo = mid
                gamma = sign * hi

    delta_C = gamma * search.ones
    C_pert = base.C + delta_C
    model = base.with_output_matrix(C_pert)
    check = verify_certificate(model, sr, cert)
    if not check.ok:
        raise PerturbationError("final certificate failed verification", search.log)
    alpha = spectral_norm(delta_C) ** 2
    eps_g = cfg.eps_g if cfg.eps_g is not None else max_output_error(model, data)
    epsilon = epsilon_radius(L_g, C_pert, base.D, eps_g)
    deg = fit_degradation(alpha, epsilon, fit.delta_y_bar)
    margins = local_margins(cert, sr, C_pert, base.D, L_g)
    return PerturbationReport(
        gamma=float(gamma),
        delta_C=delta_C,
        alpha=float(alpha),
        model=model,
        certificate=cert,
        lipschitz=float(L_g),
        eps_g=float(eps_g),
        epsilon=float(epsilon),
        beta=float(deg.beta),
        baseline_error=float(fit.delta_y_bar),
        rho_hat=float(margins.rho_hat),
        nu_hat=float(margins.nu_hat),
        l1_satisfied=check_constraint_l1(cert.rho, sr, C_pert, L_g),
        l2_satisfied=check_constraint_l2(cert.nu, sr, base.D, L_g),
        iterations=tuple(search.log),
        non_monotone=search.non_monotone,
    )
