"""Steady-state target selection and mismatch steady-state correction.

``solve_sstp`` picks the model steady pair ``(x_s, u_s)`` whose output
reaches the reference setpoint, minimizing a quadratic distance to the
auxiliary setpoints, subject to hard input bounds and tightened (backed-off)
output constraints.  ``solve_ssop`` finds the plant steady state and the
correcting model disturbance that align plant and model steady outputs
under mismatch.

Both benchmarks admit closed-form target maps, used by default inside the
closed loop; the generic NLP route is kept for cross-checks and for models
without closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import models as mdl
from .models import MismatchParams, SystemModel, TargetParams
from .nlp import HingeTerm, NlpOptions, NlpProblem, solve_nlp

_HARD_PENALTY = 1e6


class TargetDegenerate(RuntimeError):
    """SSTP solver hit a degenerate KKT system."""

    def __init__(self, msg, solution=None):
        super().__init__(msg)
        self.solution = solution


class NoCorrection(RuntimeError):
    """Newton iteration for the mismatch correction diverged."""


class InfeasibleTarget(RuntimeError):
    """No feasible steady-state candidate."""


@dataclass
class SteadyTarget:
    x_s: np.ndarray
    u_s: np.ndarray
    y_s: np.ndarray
    value: float
    feasible: bool


@dataclass
class MismatchSteadyPair:
    x_ps: np.ndarray  # plant steady state
    d_s: np.ndarray  # correcting model disturbance
    dx_s: np.ndarray  # state offset x_ps - x_s(s_sp, d_s)
    target: SteadyTarget


@dataclass
class SteadyCost:
    """Quadratic steady-state cost l_s(u - u_sp, y - y_sp)."""

    R_u: np.ndarray
    Q_y: np.ndarray

    @staticmethod
    def default(model):
        return SteadyCost(np.eye(model.n_u), np.eye(model.n_y))

    def value(self, du, dy):
        return float(du @ self.R_u @ du + dy @ self.Q_y @ dy)


def _closed_form_pendulum(beta):
    r = float(beta.r_sp[0])
    d = float(beta.d[0])
    u = -(math.sin(r) + d) / mdl.PEND_K
    return np.array([r, 0.0]), np.array([u])


def _closed_form_cstr(beta):
    r = float(beta.r_sp[0])
    d = float(beta.d[0])
    x1 = 1.0 / (1.0 + mdl.CSTR_THETA * mdl.CSTR_K * math.exp(-mdl.CSTR_M / r))
    u = (mdl.CSTR_XF - r + 1.0 - x1) / (mdl.CSTR_THETA * mdl.CSTR_GAMMA * (r - mdl.CSTR_XC - d))
    return np.array([x1, r]), np.array([u])


_CLOSED_FORMS = {"pendulum": _closed_form_pendulum, "cstr": _closed_form_cstr}


def _finish_target(model, beta, cost, x_s, u_s, feasibility_tol=1e-9):
    y_s = model.h(x_s, u_s, beta.d)
    feasible = bool(
        np.all(u_s >= model.u_lo - feasibility_tol) and np.all(u_s <= model.u_hi + feasibility_tol)
    )
    if model.n_c and feasible:
        feasible = bool(np.all(model.c_bar(u_s, y_s) + model.b_bar <= feasibility_tol))
    value = cost.value(u_s - beta.u_sp, y_s - beta.y_sp) if feasible else math.inf
    return SteadyTarget(x_s, u_s, y_s, value, feasible)


def solve_sstp(model, beta, cost=None, guess=None, method="auto", opts=None):
    """Solve the steady-state target problem for parameters ``beta``.

    ``method`` is one of ``"auto"`` (closed form when the benchmark has
    one), ``"closed_form"``, or ``"nlp"``.  Infeasible parameters return a
    target with ``feasible=False`` and value ``+inf`` rather than raising.
    """
    cost = cost or SteadyCost.default(model)
    if method in ("auto", "closed_form") and model.name in _CLOSED_FORMS:
        x_s, u_s = _CLOSED_FORMS[model.name](beta)
        return _finish_target(model, beta, cost, x_s, u_s)
    if method == "closed_form":
        raise ValueError(f"no closed-form target map for model {model.name!r}")

    n, n_u = model.n, model.n_u
    m = n + n_u
    sqR = _msqrt(cost.R_u)
    sqQ = _msqrt(cost.Q_y)

    def split(z):
        return z[:n], z[n:]

    def res(z):
        x, u = split(z)
        y = model.h(x, u, beta.d)
        return np.concatenate([sqR @ (u - beta.u_sp), sqQ @ (y - beta.y_sp)])

    def res_jac(z):
        x, u = split(z)
        hx, hu, _ = model.jac_h(x, u, beta.d)
        J = np.zeros((n_u + model.n_y, m))
        J[:n_u, n:] = sqR
        J[n_u:, :n] = sqQ @ hx
        J[n_u:, n:] = sqQ @ hu
        return J

    def ce(z):
        x, u = split(z)
        y = model.h(x, u, beta.d)
        return np.concatenate([x - model.f(x, u, beta.d), model.g(u, y) - beta.r_sp])

    def ce_jac(z):
        x, u = split(z)
        fx, fu, _ = model.jac_f(x, u, beta.d)
        hx, hu, _ = model.jac_h(x, u, beta.d)
        y = model.h(x, u, beta.d)
        gu, gy = model.jac_g(u, y)
        J = np.zeros((n + model.n_r, m))
        J[:n, :n] = np.eye(n) - fx
        J[:n, n:] = -fu
        J[n:, :n] = gy @ hx
        J[n:, n:] = gu + gy @ hu
        return J

    z_lo = np.concatenate([model.x_lo if model.x_lo is not None else np.full(n, -np.inf), model.u_lo])
    z_hi = np.concatenate([model.x_hi if model.x_hi is not None else np.full(n, np.inf), model.u_hi])
    hinges = []
    if model.n_c:
        for i in range(model.n_c):
            def s_i(z, i=i):
                x, u = split(z)
                return float(model.c_bar(u, model.h(x, u, beta.d))[i] + model.b_bar[i])

            def s_grad_i(z, i=i, eps=1e-7):
                g = np.zeros(m)
                for j in range(m):
                    zp, zm = z.copy(), z.copy()
                    zp[j] += eps
                    zm[j] -= eps
                    g[j] = (s_i(zp) - s_i(zm)) / (2 * eps)
                return g

            hinges.append(HingeTerm(_HARD_PENALTY, s_i, s_grad_i))

    problem = NlpProblem(
        m=m, res=res, res_jac=res_jac, ce=ce, ce_jac=ce_jac, z_lo=z_lo, z_hi=z_hi, hinges=hinges
    )
    if guess is not None:
        z0 = np.concatenate([np.asarray(guess[0], float), np.asarray(guess[1], float)])
    else:
        z0 = np.concatenate([np.zeros(n), np.clip(np.zeros(n_u), model.u_lo, model.u_hi)])
    sol = solve_nlp(problem, z0, opts or NlpOptions())
    if sol.status == "Degenerate":
        raise TargetDegenerate(
            f"SSTP degenerate at beta={beta}: eq_residual={sol.eq_residual:.3e} "
            f"stationarity={sol.stationarity:.3e}",
            sol,
        )
    x_s, u_s = split(sol.z)
    if not sol.converged:
        return SteadyTarget(x_s, u_s, model.h(x_s, u_s, beta.d), math.inf, False)
    tgt = _finish_target(model, beta, cost, x_s, u_s)
    if model.n_c and tgt.feasible:
        # hinge penalties stand in for hard constraints; verify feasibility
        if np.any(model.c_bar(u_s, tgt.y_s) + model.b_bar > 1e-7):
            return SteadyTarget(x_s, u_s, tgt.y_s, math.inf, False)
    return tgt


def _msqrt(M):
    M = np.atleast_2d(np.asarray(M, float))
    w, V = np.linalg.eigh(M)
    if np.any(w < -1e-12):
        raise ValueError("weight matrix must be positive semidefinite")
    return V @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ V.T


def selection_rule(candidates):
    """Deterministic choice among feasible targets: lowest value, ties by
    lexicographically smallest (x_s, u_s)."""
    feas = [c for c in candidates if c.feasible]
    if not feas:
        raise InfeasibleTarget("no feasible steady-state target candidates")
    return min(feas, key=lambda c: (c.value, tuple(c.x_s), tuple(c.u_s)))


class TargetSolver:
    """Warm-started target map ``beta -> SteadyTarget`` with memoization."""

    def __init__(self, model, cost=None, method="auto"):
        self.model = model
        self.cost = cost or SteadyCost.default(model)
        self.method = method
        self._last = None
        self._cache = {}

    def __call__(self, beta):
        key = beta.key()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        guess = (self._last.x_s, self._last.u_s) if self._last is not None else None
        tgt = solve_sstp(self.model, beta, self.cost, guess=guess, method=self.method)
        if tgt.feasible:
            self._last = tgt
        self._cache[key] = tgt
        if len(self._cache) > 4096:
            self._cache.clear()
        return tgt


def solve_ssop(model, plant, alpha, target_solver=None, guess=None, max_iter=100, tol=1e-10):
    """Solve the coupled plant/model steady-state matching system.

    Newton iteration on the residual in ``(x_Ps, d_s)`` with a
    finite-difference Jacobian through the nested target map.  Raises
    :class:`NoCorrection` on divergence.
    """
    ts = target_solver or TargetSolver(model)
    w_p = np.asarray(alpha.w_p, float)
    n, n_d = model.n, model.n_d

    def residual(z):
        x_ps, d_s = z[:n], z[n:]
        beta = alpha.target_params(d_s)
        tgt = ts(beta)
        y_s = model.h(tgt.x_s, tgt.u_s, beta.d)
        r1 = x_ps - plant.step(x_ps, tgt.u_s, w_p)
        r2 = y_s - plant.h_p(x_ps, tgt.u_s, w_p)
        return np.concatenate([r1, np.atleast_1d(r2)]), tgt

    # initial guess: zero correction
    tgt0 = ts(alpha.target_params(np.zeros(n_d)))
    if guess is not None:
        z = np.concatenate([np.asarray(guess[0], float), np.atleast_1d(np.asarray(guess[1], float))])
    else:
        z = np.concatenate([tgt0.x_s, np.zeros(n_d)])

    r, tgt = residual(z)
    for _ in range(max_iter):
        if np.linalg.norm(r, ord=np.inf) <= tol:
            break
        J = np.empty((z.size, z.size))
        for j in range(z.size):
            h = 1e-6 * (1.0 + abs(z[j]))
            zp, zm = z.copy(), z.copy()
            zp[j] += h
            zm[j] -= h
            J[:, j] = (residual(zp)[0] - residual(zm)[0]) / (2 * h)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            raise NoCorrection(f"singular correction Jacobian at alpha={alpha}")
        # damped Newton: halve until the residual shrinks
        t = 1.0
        for _ in range(30):
            z_new = z + t * step
            r_new, tgt_new = residual(z_new)
            if np.all(np.isfinite(r_new)) and np.linalg.norm(r_new) < np.linalg.norm(r):
                break
            t *= 0.5
        else:
            raise NoCorrection(f"Newton stalled at alpha={alpha}, |r|={np.linalg.norm(r):.3e}")
        z, r, tgt = z_new, r_new, tgt_new
    else:
        raise NoCorrection(f"Newton did not converge at alpha={alpha}, |r|={np.linalg.norm(r):.3e}")

    x_ps, d_s = z[:n], z[n:]
    return MismatchSteadyPair(x_ps, d_s, x_ps - tgt.x_s, tgt)
