"""Baseline linear model identification and data-driven Lipschitz estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import logm

from . import kernels
from .model import Dataset, StateSpaceModel
from .simulate import discretize


class IdentificationError(ValueError):
    pass


@dataclass(frozen=True)
class FitConfig:
    """Settings for :func:`fit_baseline`.

    ``arx_ls`` fits a single-output ARX model by (optionally ridge
    regularized) least squares. ``hankel_svd`` runs an ordinary MOESP
    subspace step: SVD of the block-Hankel output matrix with future
    inputs projected out. ``hankel_rows`` defaults to ``max(2 n, 10)``
    block rows; ``hankel_cols`` optionally caps the columns taken from each
    trajectory. ``realization="companion"`` returns single-input
    single-output models in controllable companion form.
    """

    order: int
    method: str = "arx_ls"
    hankel_rows: Optional[int] = None
    hankel_cols: Optional[int] = None
    regularization: float = 0.0
    realization: str = "companion"

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.method not in ("arx_ls", "hankel_svd"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")
        if self.realization not in ("companion", "identified"):
            raise ValueError(f"unknown realization {self.realization!r}")
        if self.hankel_rows is not None and self.hankel_rows <= self.order:
            raise ValueError("hankel_rows must exceed the model order")


@dataclass(frozen=True)
class FitResult:
    model: StateSpaceModel
    delta_y_bar: float
    nrmse_fit: tuple
    x0: tuple = field(default=(), repr=False)
    singular_values: Optional[np.ndarray] = field(default=None, repr=False)


def nrmse_fit(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Normalized fit in percent: ``100 (1 - |y - y_hat| / |y - mean(y)|)``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    err = np.linalg.norm(y - y_hat)
    ref = np.linalg.norm(y - y.mean(axis=0))
    if ref == 0.0:
        return 100.0 if err == 0.0 else -math.inf
    return float(100.0 * (1.0 - err / ref))


def _free_and_forced(model: StateSpaceModel, u: np.ndarray, dt: float):
    """Free-response basis ``O`` (T*p, n) and zero-state response (T, p)."""
    Phi, Gam = discretize(model, dt)
    T = u.shape[0]
    O = np.empty((T, model.p, model.n))
    zeros_u = np.zeros((T, model.m))
    for l in range(model.n):
        e = np.zeros(model.n)
        e[l] = 1.0
        _, Y = kernels.lti_sim(Phi, Gam, model.C, model.D, e, zeros_u)
        O[:, :, l] = Y
    _, forced = kernels.lti_sim(Phi, Gam, model.C, model.D, np.zeros(model.n), u)
    return O.reshape(T * model.p, model.n), forced


def estimate_initial_state(model: StateSpaceModel, u, y, dt: float) -> np.ndarray:
    """Least-squares initial state of ``model`` against a measured record."""
    u = np.atleast_2d(np.asarray(u, dtype=float).T).T
    y = np.atleast_2d(np.asarray(y, dtype=float).T).T
    O, forced = _free_and_forced(model, u, dt)
    x0, *_ = np.linalg.lstsq(O, (y - forced).ravel(), rcond=None)
    return x0


def evaluate_model(model: StateSpaceModel, data: Dataset, estimate_x0: bool = True) -> FitResult:
    """Simulation residual of ``model`` on ``data``.

    ``delta_y_bar`` is the summed squared output error over all samples of
    all trajectories, with the initial state of each trajectory fitted by
    least squares (or zero when ``estimate_x0`` is false).
    """
    if (model.m, model.p) != (data.m, data.p):
        raise ValueError(f"model (m, p) = ({model.m}, {model.p}) does not match data "
                         f"({data.m}, {data.p})")
    total = 0.0
    fits, x0s = [], []
    for tr in data:
        O, forced = _free_and_forced(model, tr.u, tr.dt)
        if estimate_x0:
            x0, *_ = np.linalg.lstsq(O, (tr.y - forced).ravel(), rcond=None)
        else:
            x0 = np.zeros(model.n)
        y_hat = forced + (O @ x0).reshape(tr.T, model.p)
        total += float(np.sum((tr.y - y_hat) ** 2))
        fits.append(nrmse_fit(tr.y, y_hat))
        x0s.append(x0)
    return FitResult(model, total, tuple(fits), tuple(x0s))


def d2c(Ad, Bd, dt: float):
    """Invert the zero-order-hold map with the principal matrix logarithm."""
    Ad = np.atleast_2d(np.asarray(Ad, dtype=float))
    Bd = np.atleast_2d(np.asarray(Bd, dtype=float))
    n, m = Bd.shape
    eig = np.linalg.eigvals(Ad)
    bad = (np.abs(eig) < 1e-12) | ((np.abs(eig.imag) < 1e-10) & (eig.real < 0))
    if bad.any():
        raise IdentificationError(
            f"discrete model has eigenvalues {eig[bad]} on the closed negative real axis; "
            "the matrix logarithm does not exist. Try a smaller dt or a different order.")
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ad
    M[:n, n:] = Bd
    M[n:, n:] = np.eye(m)
    L = logm(M)
    if np.max(np.abs(np.imag(L))) > 1e-8 * max(1.0, np.max(np.abs(L))):
        raise IdentificationError("matrix logarithm is not real; try a smaller dt")
    L = np.real(L) / dt
    return L[:n, :n], L[:n, n:]


def companion_form(model: StateSpaceModel) -> StateSpaceModel:
    """Controllable companion realization of a SISO model.

    ``A = [[0, 1, ..], .., [-a0, -a1, ..]]``, ``B = e_n``, ``C`` holds the
    numerator coefficients in ascending powers of ``s``.
    """
    if (model.m, model.p) != (1, 1):
        raise ValueError("companion form is only defined here for SISO models")
    n = model.n
    a = np.real(np.poly(model.A))  # [1, a_{n-1}, ..., a_0]
    Ac = np.zeros((n, n))
    Ac[:-1, 1:] = np.eye(n - 1)
    Ac[-1, :] = -a[1:][::-1]
    Bc = np.zeros((n, 1))
    Bc[-1, 0] = 1.0
    W_old = _ctrb(model.A, model.B)
    W_new = _ctrb(Ac, Bc)
    if np.linalg.cond(W_old) > 1e12:
        raise IdentificationError("model is (nearly) uncontrollable; no companion form")
    T = W_new @ np.linalg.inv(W_old)
    Cc = model.C @ np.linalg.inv(T)
    return StateSpaceModel(Ac, Bc, Cc, model.D)


def _ctrb(A, B):
    cols = [B]
    for _ in range(A.shape[0] - 1):
        cols.append(A @ cols[-1])
    return np.hstack(cols)


def _arx(data: Dataset, n: int, lam: float):
    if data.p != 1:
        raise IdentificationError("arx_ls supports single-output data; use hankel_svd")
    m = data.m
    rows, rhs = [], []
    for tr in data:
        y, u = tr.y[:, 0], tr.u
        T = tr.T
        if T <= n:
            raise IdentificationError("trajectory shorter than the model order")
        cols = [-y[n - i:T - i] for i in range(1, n + 1)]
        for i in range(0, n + 1):
            cols.extend(u[n - i:T - i, j] for j in range(m))
        rows.append(np.column_stack(cols))
        rhs.append(y[n:])
    Phi = np.vstack(rows)
    Y = np.concatenate(rhs)
    npar = Phi.shape[1]
    scale = np.linalg.norm(Phi, axis=0)
    scale[scale == 0.0] = 1.0
    Phs = Phi / scale
    if lam > 0:
        Phs = np.vstack([Phs, math.sqrt(lam) * np.diag(1.0 / scale)])
        Y = np.concatenate([Y, np.zeros(npar)])
    theta, _, rank, sv = np.linalg.lstsq(Phs, Y, rcond=None)
    if rank < npar:
        raise IdentificationError(
            f"ARX regressor is rank deficient ({rank} < {npar}); the data is not rich "
            "enough for the requested order")
    theta = theta / scale
    a = theta[:n]
    b = theta[n:].reshape(n + 1, m)
    D = b[0][None, :]
    Ad = np.zeros((n, n))
    Ad[:, 0] = -a
    Ad[:-1, 1:] = np.eye(n - 1)
    Bd = b[1:] - np.outer(a, b[0])
    Cd = np.zeros((1, n))
    Cd[0, 0] = 1.0
    return Ad, Bd, Cd, D, sv


def _block_hankel(w: np.ndarray, rows: int, cols: int) -> np.ndarray:
    T, d = w.shape
    H = np.empty((rows * d, cols))
    for i in range(rows):
        H[i * d:(i + 1) * d, :] = w[i:i + cols].T
    return H


def _moesp(data: Dataset, n: int, rows: int, cap: Optional[int]):
    m, p = data.m, data.p
    Us, Ys = [], []
    for tr in data:
        cols = tr.T - rows + 1
        if cap is not None:
            cols = min(cols, cap)
        if cols < 1:
            raise IdentificationError("trajectory too short for the Hankel size")
        Us.append(_block_hankel(tr.u, rows, cols))
        Ys.append(_block_hankel(tr.y, rows, cols))
    H = np.vstack([np.hstack(Us), np.hstack(Ys)])
    if H.shape[1] < H.shape[0]:
        raise IdentificationError("not enough Hankel columns for the requested rows")
    Rfac = np.linalg.qr(H.T, mode="r")
    L = Rfac.T
    L22 = L[rows * m:, rows * m:]
    Uo, sv, _ = np.linalg.svd(L22)
    if sv.size <= n or sv[n - 1] <= 1e-12 * max(sv[0], 1e-300):
        raise IdentificationError(
            f"Hankel matrix rank is below the requested order {n}")
    Gam = Uo[:, :n] * np.sqrt(sv[:n])
    C = Gam[:p]
    A = np.linalg.lstsq(Gam[:-p], Gam[p:], rcond=None)[0]
    return A, C, sv


def _fit_bd(A, C, data: Dataset):
    """Least-squares B, D and per-trajectory x0 for a discrete (A, C) pair."""
    n, p, m = A.shape[0], C.shape[0], data.m
    blocks, rhs = [], []
    K = len(data)
    for k, tr in enumerate(data):
        T = tr.T
        cols = []
        zero_u = np.zeros((T, m))
        Z = np.zeros((p, m))
        for i in range(n):
            for j in range(m):
                Bij = np.zeros((n, m))
                Bij[i, j] = 1.0
                _, Y = kernels.lti_sim(A, Bij, C, Z, np.zeros(n), tr.u)
                cols.append(Y.ravel())
        for i in range(p):
            for j in range(m):
                Yd = np.zeros((T, p))
                Yd[:, i] = tr.u[:, j]
                cols.append(Yd.ravel())
        for kk in range(K):
            for l in range(n):
                if kk == k:
                    e = np.zeros(n)
                    e[l] = 1.0
                    _, Y = kernels.lti_sim(A, np.zeros((n, m)), C, Z, e, zero_u)
                    cols.append(Y.ravel())
                else:
                    cols.append(np.zeros(T * p))
        blocks.append(np.column_stack(cols))
        rhs.append(tr.y.ravel())
    theta, *_ = np.linalg.lstsq(np.vstack(blocks), np.concatenate(rhs), rcond=None)
    B = theta[:n * m].reshape(n, m)
    D = theta[n * m:n * m + p * m].reshape(p, m)
    return B, D


def fit_baseline(data: Dataset, cfg: FitConfig) -> FitResult:
    """Identify a continuous-time baseline model of order ``cfg.order``.

    The discrete-time model is converted with the inverse zero-order hold;
    ``delta_y_bar`` is the re-simulated training residual with
    least-squares initial states.
    """
    n, m, p = cfg.order, data.m, data.p
    floor = 10 * (n * (n + m + p) + p * m)
    if data.n_samples < floor:
        raise IdentificationError(
            f"{data.n_samples} samples is below the identifiability floor {floor}")
    sv = None
    if cfg.method == "arx_ls":
        Ad, Bd, Cd, Dd, sv = _arx(data, n, cfg.regularization)
    else:
        rows = cfg.hankel_rows or max(2 * n, 10)
        Ad, Cd, sv = _moesp(data, n, rows, cfg.hankel_cols)
        Bd, Dd = _fit_bd(Ad, Cd, data)
    A, B = d2c(Ad, Bd, data.dt)
    model = StateSpaceModel(A, B, Cd, Dd)
    if cfg.realization == "companion" and (m, p) == (1, 1):
        model = companion_form(model)
    res = evaluate_model(model, data)
    return FitResult(model, res.delta_y_bar, res.nrmse_fit, res.x0, sv)


def estimate_lipschitz(data: Dataset, norm: str = "l2", tol: float = 1e-9,
                       return_pairs: bool = False):
    """Largest output/input difference ratio over all trajectory pairs.

    ``norm="l2"`` stacks each signal over the whole record; ``norm="sup"``
    takes the largest pointwise Euclidean norm instead. Pairs whose input
    difference is at most ``tol`` are skipped. With ``return_pairs`` the
    number of pairs used is returned as well.
    """
    trajs = list(data)
    if len(trajs) < 2:
        raise ValueError("Lipschitz estimate needs at least 2 trajectories")
    T = trajs[0].T
    if any(tr.T != T for tr in trajs):
        raise ValueError("Lipschitz estimate needs trajectories of equal length")
    if norm == "l2":
        def size(d):
            return float(np.linalg.norm(d))
    elif norm == "sup":
        def size(d):
            return float(np.max(np.linalg.norm(d, axis=1)))
    else:
        raise ValueError(f"unknown norm {norm!r}")
    best, used = -1.0, 0
    for i in range(len(trajs)):
        for j in range(i + 1, len(trajs)):
            du = size(trajs[i].u - trajs[j].u)
            if du <= tol:
                continue
            used += 1
            best = max(best, size(trajs[i].y - trajs[j].y) / du)
    if used == 0:
        raise ValueError("all trajectory pairs have (nearly) identical inputs")
    return (best, used) if return_pairs else best
