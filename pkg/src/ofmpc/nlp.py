"""Small dense SQP solver for equality-constrained nonlinear programs.

Handles the problem class shared by the target, regulator, and estimation
problems: smooth objective (optionally in least-squares residual form),
equality constraints, variable box bounds, and exact-penalty hinge terms
``w * max(0, s(z))``.  Hinges are smoothed with a decreasing parameter mu
(continuation over {1e-2, 1e-4, 1e-6}) so the quadratic subproblem stays
smooth while converging to the exact-penalty minimizer.

Gauss-Newton Hessians are used when residuals are supplied (all problems in
this package are quadratic forms, where Gauss-Newton is exact); a damped
BFGS model is the fallback.  The box is handled by an active-set working
set on the KKT system plus projection in the l1-merit line search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


@dataclass
class HingeTerm:
    """Penalty ``weight * max(0, s(z))`` with smooth s."""

    weight: float
    s: Callable  # z -> scalar
    s_grad: Callable  # z -> (m,)


@dataclass
class NlpProblem:
    m: int
    phi: Optional[Callable] = None  # z -> scalar
    grad: Optional[Callable] = None  # z -> (m,)
    res: Optional[Callable] = None  # z -> (k,), objective = r.r
    res_jac: Optional[Callable] = None  # z -> (k, m)
    ce: Optional[Callable] = None  # z -> (me,)
    ce_jac: Optional[Callable] = None  # z -> (me, m)
    z_lo: Optional[np.ndarray] = None
    z_hi: Optional[np.ndarray] = None
    hinges: Sequence[HingeTerm] = field(default_factory=tuple)

    def __post_init__(self):
        if self.res is None and self.phi is None:
            raise ValueError("need phi/grad or res/res_jac")
        if self.z_lo is None:
            self.z_lo = np.full(self.m, -np.inf)
        if self.z_hi is None:
            self.z_hi = np.full(self.m, np.inf)
        self.z_lo = np.asarray(self.z_lo, float)
        self.z_hi = np.asarray(self.z_hi, float)
        if np.any(self.z_lo > self.z_hi):
            raise ValueError("z_lo must be <= z_hi elementwise")
        for hg in self.hinges:
            if not hg.weight > 0:
                raise ValueError("hinge weights must be positive")

    def objective_exact(self, z):
        """True objective including exact (nonsmoothed) hinge terms."""
        v = float(self.res(z) @ self.res(z)) if self.res is not None else float(self.phi(z))
        for hg in self.hinges:
            v += hg.weight * max(0.0, float(hg.s(z)))
        return v


@dataclass
class NlpSolution:
    z: np.ndarray
    value: float
    eq_residual: float
    stationarity: float
    iterations: int
    status: str  # Converged | MaxIter | Infeasible | Degenerate

    @property
    def converged(self):
        return self.status == "Converged"


@dataclass
class NlpOptions:
    tol_eq: float = 1e-8
    tol_stat: float = 1e-7
    max_iter: int = 200
    mu_schedule: tuple = (1e-2, 1e-4, 1e-6)
    kkt_reg: float = 1e-10


class DegenerateError(RuntimeError):
    """KKT system rank-deficient beyond regularization."""


def _smooth_hinge(w, s, mu):
    # 0.5*w*(s + sqrt(s^2 + mu^2)): smooth upper approximation of w*max(0,s)
    root = np.hypot(s, mu)
    return 0.5 * w * (s + root), 0.5 * w * (1.0 + s / root), 0.5 * w * mu**2 / root**3


def _eval_smooth(problem, z, mu):
    """Objective value, gradient, and Gauss-Newton Hessian (or None) at z."""
    if problem.res is not None:
        r = np.atleast_1d(problem.res(z))
        J = np.atleast_2d(problem.res_jac(z))
        val = float(r @ r)
        g = 2.0 * J.T @ r
        H = 2.0 * J.T @ J
    else:
        val = float(problem.phi(z))
        g = np.asarray(problem.grad(z), float).copy()
        H = None
    for hg in problem.hinges:
        s = float(hg.s(z))
        gs = np.asarray(hg.s_grad(z), float)
        p, dp, d2p = _smooth_hinge(hg.weight, s, mu)
        val += p
        g = g + dp * gs
        if H is not None:
            H = H + d2p * np.outer(gs, gs)
    return val, g, H


def solve_nlp(problem, z0, opts=None):
    """Solve the NLP from initial guess ``z0`` (projected into the box).

    Deterministic given (problem, z0, opts).  Returns an
    :class:`NlpSolution`; never raises for MaxIter/Infeasible (encoded in
    ``status``), but a KKT system that stays rank-deficient beyond the
    regularization floor yields status ``Degenerate``.
    """
    opts = opts or NlpOptions()
    lo, hi = problem.z_lo, problem.z_hi
    z = np.clip(np.asarray(z0, float).copy(), lo, hi)
    me = 0
    if problem.ce is not None:
        me = np.atleast_1d(problem.ce(z)).size

    mus = opts.mu_schedule if problem.hinges else (0.0,)
    total_iters = 0
    nu = 1.0  # l1 merit penalty on equality violation
    lam = np.zeros(me)
    B = np.eye(problem.m)  # BFGS model when no residual form
    prev_g = prev_z = None
    stall = 0
    merit_hist = []
    degenerate_seen = False

    for mu in mus:
        converged_at_mu = False
        reset_used = False
        while total_iters < opts.max_iter:
            total_iters += 1
            val, g, H = _eval_smooth(problem, z, mu)
            if H is None:
                if prev_g is not None:
                    sk = z - prev_z
                    yk = g - prev_g
                    sy = sk @ yk
                    if sy > 1e-12 * max(1.0, np.linalg.norm(sk) * np.linalg.norm(yk)):
                        Bs = B @ sk
                        B = B - np.outer(Bs, Bs) / (sk @ Bs) + np.outer(yk, yk) / sy
                H = B
            if me:
                ce = np.atleast_1d(np.asarray(problem.ce(z), float))
                Je = np.atleast_2d(np.asarray(problem.ce_jac(z), float))
            else:
                ce = np.zeros(0)
                Je = np.zeros((0, problem.m))

            # working set: bound-active coordinates pushed outward by the
            # Lagrangian gradient stay fixed this iteration
            gl = g + Je.T @ lam
            at_lo = np.isfinite(lo) & (z - lo <= 1e-11 * (1 + np.abs(z))) & (gl > 0)
            at_hi = np.isfinite(hi) & (hi - z <= 1e-11 * (1 + np.abs(z))) & (gl < 0)
            free = ~(at_lo | at_hi)
            nf = int(free.sum())

            p = np.zeros(problem.m)
            if nf or me:
                Hff = H[np.ix_(free, free)] + opts.kkt_reg * np.eye(nf)
                Jef = Je[:, free]
                K = np.zeros((nf + me, nf + me))
                K[:nf, :nf] = Hff
                K[:nf, nf:] = Jef.T
                K[nf:, :nf] = Jef
                rhs = np.concatenate([-g[free], -ce])
                try:
                    sol = np.linalg.solve(K, rhs)
                    if not np.all(np.isfinite(sol)):
                        raise np.linalg.LinAlgError
                except np.linalg.LinAlgError:
                    # rank-deficient KKT: take the minimum-norm step and let
                    # the stall detector classify the outcome
                    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
                    if np.linalg.norm(K @ sol - rhs) > 1e-6 * max(1.0, np.linalg.norm(rhs)):
                        degenerate_seen = True
                p[free] = sol[:nf]
                lam = sol[nf:]

            # convergence test (projected stationarity + feasibility)
            stat = float(np.max(np.abs(np.clip(z - (g + Je.T @ lam), lo, hi) - z), initial=0.0))
            eqr = float(np.max(np.abs(ce), initial=0.0))
            if stat <= opts.tol_stat and eqr <= opts.tol_eq:
                converged_at_mu = True
                break

            # l1 merit line search with projection onto the box
            # keep nu >= |lam| for merit descent, but let it decay after
            # transient multiplier spikes (a running max stalls the search)
            nu = max(2.0 * float(np.max(np.abs(lam), initial=0.0)) + 1e-6, 0.5 * nu)
            merit0 = val + nu * float(np.sum(np.abs(ce)))
            # nonmonotone reference: guard against short-step stalls and
            # line-search cycles by accepting relative to the recent worst
            merit_hist.append(merit0)
            if len(merit_hist) > 5:
                merit_hist.pop(0)
            merit_ref = max(merit_hist)
            ddir = float(g @ p) - nu * float(np.sum(np.abs(ce)))

            def merit_at(zc):
                vt, _, _ = _eval_smooth(problem, zc, mu)
                cet = (
                    np.atleast_1d(np.asarray(problem.ce(zc), float)) if me else np.zeros(0)
                )
                return vt + nu * float(np.sum(np.abs(cet)))

            t = 1.0
            accepted = False
            soc_tried = False
            for _ in range(40):
                zt = np.clip(z + t * p, lo, hi)
                mt = merit_at(zt)
                if mt <= merit_ref + 1e-4 * t * min(ddir, 0.0) and np.all(np.isfinite(zt)):
                    accepted = True
                    break
                if me and not soc_tried:
                    # second-order correction: shift the trial point to cancel
                    # the constraint curvature picked up by the full step
                    # (avoids the Maratos short-step stall)
                    soc_tried = True
                    cet = np.atleast_1d(np.asarray(problem.ce(zt), float))
                    Jf = Je[:, free]
                    try:
                        corr = Jf.T @ np.linalg.solve(Jf @ Jf.T, -cet)
                        zc = zt.copy()
                        zc[free] += corr
                        zc = np.clip(zc, lo, hi)
                        if merit_at(zc) <= merit_ref + 1e-4 * t * min(ddir, 0.0) and np.all(
                            np.isfinite(zc)
                        ):
                            zt = zc
                            accepted = True
                            break
                    except np.linalg.LinAlgError:
                        pass
                t *= 0.5
            prev_g, prev_z = g, z.copy()
            if accepted:
                step = np.linalg.norm(zt - z)
                z = zt
                if step <= 1e-14 * (1.0 + np.linalg.norm(z)):
                    stall += 1
                else:
                    stall = 0
            else:
                stall += 1
            if stall >= 5:
                # the merit function is blocking progress; once per mu stage,
                # reset the penalty weight and reference history and retry
                if not reset_used:
                    reset_used = True
                    nu = 1.0
                    merit_hist.clear()
                    stall = 0
                    continue
                if eqr > opts.tol_eq * 1e4:
                    return NlpSolution(
                        z, problem.objective_exact(z), eqr, stat, total_iters, "Infeasible"
                    )
                if degenerate_seen:
                    return NlpSolution(
                        z, problem.objective_exact(z), eqr, stat, total_iters, "Degenerate"
                    )
                break
        if not converged_at_mu:
            break

    # final diagnostics at the returned iterate
    _, g, _ = _eval_smooth(problem, z, mus[-1])
    if me:
        ce = np.atleast_1d(np.asarray(problem.ce(z), float))
        Je = np.atleast_2d(np.asarray(problem.ce_jac(z), float))
        lam, *_ = np.linalg.lstsq(Je.T, -g, rcond=None)
    else:
        ce = np.zeros(0)
        Je = np.zeros((0, problem.m))
        lam = np.zeros(0)
    stat = float(np.max(np.abs(np.clip(z - (g + Je.T @ lam), lo, hi) - z), initial=0.0))
    eqr = float(np.max(np.abs(ce), initial=0.0))
    if converged_at_mu and eqr <= opts.tol_eq:
        status = "Converged"
    elif total_iters >= opts.max_iter:
        status = "MaxIter"
    else:
        status = "MaxIter" if eqr <= opts.tol_eq * 10 else "Infeasible"
    return NlpSolution(z, problem.objective_exact(z), eqr, stat, total_iters, status)
