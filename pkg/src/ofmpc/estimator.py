"""Moving-horizon estimation of states and input disturbances.

At time ``k`` the estimator solves, over a window of the last
``T_k = min(k, T)`` input/output pairs,

    min sum_{j=0}^{T_k-1} |w(j)|^2_{Q_w^{-1}} + |w_d(j)|^2_{Q_d^{-1}}
                          + |v(j)|^2_{R_v^{-1}}

with process noise ``w(j) = x(j+1) - f(x(j), u(j), d(j))``, disturbance
increments ``w_d(j) = d(j+1) - d(j)``, and output residuals
``v(j) = y(j) - h(x(j), u(j), d(j))``.  No prior term is used.  The
estimate is the right edge of the optimal window: ``x_hat(k) = x(T_k)``,
``d_hat(k) = d(T_k)``, so the estimate at ``k`` uses data up to ``k - 1``.

With ``augmented=False`` the disturbance trajectory is pinned to zero
(state-only estimation, as used by the nominal tracking controller).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import SystemModel
from .nlp import NlpOptions, NlpProblem, solve_nlp

__all__ = [
    "MheConfig",
    "EstimateState",
    "mhe_update",
    "estimate_error_decay",
    "pendulum_mhe_config",
    "cstr_mhe_config",
]


@dataclass(frozen=True)
class MheConfig:
    """Window length and noise covariances of the moving-horizon estimator."""

    T: int
    Q_w: np.ndarray
    Q_d: np.ndarray
    R_v: np.ndarray
    augmented: bool = True  # False: state-only estimation with d == 0


@dataclass
class EstimateState:
    """Estimator output at one time step, including the optimal window
    (kept for warm-starting the next update)."""

    k: int
    x_hat: np.ndarray
    d_hat: np.ndarray
    x_win: np.ndarray  # (T_k+1, n)
    d_win: np.ndarray  # (T_k+1, n_d)
    value: float
    status: str
    stalled: bool = False  # solver failed; previous estimate was held
    at_bound: bool = False  # estimate clipped by the state/disturbance box


def _inv_sqrt(M: np.ndarray) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    w, V = np.linalg.eigh(M)
    if np.any(w <= 0):
        raise ValueError("covariance weights must be positive definite")
    return V @ np.diag(w**-0.5) @ V.T


def mhe_update(
    model: SystemModel,
    config: MheConfig,
    k: int,
    u_hist: np.ndarray,
    y_hist: np.ndarray,
    x_prior: np.ndarray,
    prev: Optional[EstimateState] = None,
    opts: Optional[NlpOptions] = None,
) -> EstimateState:
    """Estimate ``(x_hat(k), d_hat(k))`` from the last ``min(k, T)`` samples.

    ``u_hist`` and ``y_hist`` must hold the inputs and measurements for times
    ``k - T_k .. k - 1`` (rows in chronological order).  ``x_prior`` seeds the
    window of the very first update (``k = 0``) and cold starts.  On solver
    failure the previous estimate is held and ``stalled`` is set.
    """
    n, n_d = model.n, model.n_d
    T_k = min(k, config.T)
    u_hist = np.asarray(u_hist, dtype=float).reshape(T_k, model.n_u)
    y_hist = np.asarray(y_hist, dtype=float).reshape(T_k, model.n_y)

    if T_k == 0:
        x0 = np.asarray(x_prior, dtype=float)
        return EstimateState(
            k=k, x_hat=x0.copy(), d_hat=np.zeros(n_d), x_win=x0.reshape(1, n),
            d_win=np.zeros((1, n_d)), value=0.0, status="Converged",
        )

    Wq = _inv_sqrt(config.Q_w)
    Wd = _inv_sqrt(config.Q_d)
    Wr = _inv_sqrt(config.R_v)
    aug = config.augmented

    m_x = (T_k + 1) * n
    m_z = m_x + ((T_k + 1) * n_d if aug else 0)

    def split(z: np.ndarray):
        x = z[:m_x].reshape(T_k + 1, n)
        d = z[m_x:].reshape(T_k + 1, n_d) if aug else np.zeros((T_k + 1, n_d))
        return x, d

    def res(z: np.ndarray) -> np.ndarray:
        x, d = split(z)
        rows = []
        for j in range(T_k):
            rows.append(Wq @ (x[j + 1] - model.f(x[j], u_hist[j], d[j])))
            if aug:
                rows.append(Wd @ (d[j + 1] - d[j]))
            rows.append(Wr @ (y_hist[j] - model.h(x[j], u_hist[j], d[j])))
        return np.concatenate(rows)

    n_rows = T_k * (n + (n_d if aug else 0) + model.n_y)

    def res_jac(z: np.ndarray) -> np.ndarray:
        x, d = split(z)
        J = np.zeros((n_rows, m_z))
        r = 0
        for j in range(T_k):
            A, B, Bd = model.jac_f(x[j], u_hist[j], d[j])
            C, D, Cd = model.jac_h(x[j], u_hist[j], d[j])
            J[r : r + n, j * n : (j + 1) * n] = -Wq @ A
            J[r : r + n, (j + 1) * n : (j + 2) * n] = Wq
            if aug:
                J[r : r + n, m_x + j * n_d : m_x + (j + 1) * n_d] = -Wq @ Bd
            r += n
            if aug:
                J[r : r + n_d, m_x + j * n_d : m_x + (j + 1) * n_d] = -Wd
                J[r : r + n_d, m_x + (j + 1) * n_d : m_x + (j + 2) * n_d] = Wd
                r += n_d
            J[r : r + model.n_y, j * n : (j + 1) * n] = -Wr @ C
            if aug:
                J[r : r + model.n_y, m_x + j * n_d : m_x + (j + 1) * n_d] = -Wr @ Cd
            r += model.n_y
        return J

    # warm start: shift the previous window left (or grow it while k <= T)
    # and duplicate the last point one step forward
    if prev is not None and prev.x_win.shape[0] >= 1:
        xw = prev.x_win
        dw = prev.d_win
        x0 = np.zeros((T_k + 1, n))
        d0 = np.zeros((T_k + 1, n_d))
        if xw.shape[0] == T_k + 1 and k > config.T:
            x0[:-1] = xw[1:]
            d0[:-1] = dw[1:]
        else:
            take = min(xw.shape[0], T_k + 1)
            x0[:take] = xw[-take:] if xw.shape[0] > take else xw
            d0[:take] = dw[-take:] if dw.shape[0] > take else dw
            for j in range(take, T_k + 1):
                x0[j] = x0[take - 1]
                d0[j] = d0[take - 1]
        x0[-1] = model.f(x0[-2], u_hist[-1], d0[-2])
        d0[-1] = d0[-2]
    else:
        x0 = np.tile(np.asarray(x_prior, dtype=float), (T_k + 1, 1))
        d0 = np.zeros((T_k + 1, n_d))

    x_lo = np.full(n, -np.inf) if model.x_lo is None else np.asarray(model.x_lo, float)
    x_hi = np.full(n, np.inf) if model.x_hi is None else np.asarray(model.x_hi, float)
    d_lo = np.full(n_d, -np.inf) if model.d_lo is None else np.asarray(model.d_lo, float)
    d_hi = np.full(n_d, np.inf) if model.d_hi is None else np.asarray(model.d_hi, float)
    z_lo = np.concatenate(
        [np.tile(x_lo, T_k + 1)] + ([np.tile(d_lo, T_k + 1)] if aug else [])
    )
    z_hi = np.concatenate(
        [np.tile(x_hi, T_k + 1)] + ([np.tile(d_hi, T_k + 1)] if aug else [])
    )
    z0 = np.clip(
        np.concatenate([x0.reshape(-1)] + ([d0.reshape(-1)] if aug else [])), z_lo, z_hi
    )

    problem = NlpProblem(m=m_z, res=res, res_jac=res_jac, z_lo=z_lo, z_hi=z_hi)
    sol = solve_nlp(problem, z0, opts)

    if sol.status in ("Infeasible", "Degenerate") or not np.all(np.isfinite(sol.z)):
        if prev is not None:
            return EstimateState(
                k=k, x_hat=prev.x_hat.copy(), d_hat=prev.d_hat.copy(),
                x_win=prev.x_win.copy(), d_win=prev.d_win.copy(),
                value=sol.value, status=sol.status, stalled=True,
            )
        sol_z = z0
    else:
        sol_z = sol.z
    x_win, d_win = split(sol_z)
    at_bound = bool(
        np.any(np.abs(sol_z - z_lo) < 1e-12) or np.any(np.abs(sol_z - z_hi) < 1e-12)
    )
    return EstimateState(
        k=k, x_hat=x_win[-1].copy(), d_hat=d_win[-1].copy(),
        x_win=x_win.copy(), d_win=d_win.copy(),
        value=sol.value, status=sol.status, at_bound=at_bound,
    )


def estimate_error_decay(errors: np.ndarray) -> float:
    """Fit a geometric decay rate to an estimate-error sequence.

    Returns ``lambda_e`` from a log-linear least-squares fit
    ``log e_k ~ log c + k log lambda_e`` over the positive entries; an
    all-zero (or single-entry) sequence returns 0.
    """
    e = np.asarray(errors, dtype=float)
    mask = e > 0
    if mask.sum() < 2:
        return 0.0
    kk = np.flatnonzero(mask).astype(float)
    logs = np.log(e[mask])
    slope = np.polyfit(kk, logs, 1)[0]
    return float(np.exp(slope))


def pendulum_mhe_config(augmented: bool = True) -> MheConfig:
    return MheConfig(
        T=5, Q_w=np.diag([1e-3, 1e-6]), Q_d=np.array([[1.0]]),
        R_v=np.array([[1.0]]), augmented=augmented,
    )


def cstr_mhe_config(augmented: bool = True) -> MheConfig:
    return MheConfig(
        T=150, Q_w=1e-4 * np.eye(2), Q_d=np.array([[1e-2]]),
        R_v=np.array([[1.0]]), augmented=augmented,
    )
