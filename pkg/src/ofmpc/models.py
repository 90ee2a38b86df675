"""Benchmark systems and the model/plant abstraction.

A ``SystemModel`` is the controller's view of the process: a discrete-time
map ``x+ = f(x, u, d)`` with output ``y = h(x, u, d)`` and reference map
``r = g(u, y)``, where ``d`` is an integrating disturbance used to shift
steady states.  A ``PlantSpec`` is the "true" process: a continuous-time
right-hand side with a richer disturbance vector ``w_P``, discretized at a
fixed sample time.

Two benchmarks are provided: a nondimensionalized pendulum and an
exothermic CSTR (continuous stirred-tank reactor).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class IntegrationBlowupError(RuntimeError):
    """Raised when a plant step produces non-finite state."""

    def __init__(self, msg, time_index=None):
        super().__init__(msg)
        self.time_index = time_index


class DomainError(ValueError):
    """State outside the model's physical domain (e.g. CSTR temperature <= 0)."""


def rk4_step(rhs, x, u, w, dt):
    """One classical 4-stage Runge-Kutta step of ``xdot = rhs(x, u, w)``.

    Inputs are never mutated.  Raises :class:`IntegrationBlowupError` if the
    result is non-finite.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(rhs(x, u, w), dtype=float)
    k2 = np.asarray(rhs(x + 0.5 * dt * k1, u, w), dtype=float)
    k3 = np.asarray(rhs(x + 0.5 * dt * k2, u, w), dtype=float)
    k4 = np.asarray(rhs(x + dt * k3, u, w), dtype=float)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationBlowupError("non-finite state after RK4 step")
    return out


def _fd_jac(fun, x, *args):
    """Central finite-difference Jacobian of ``fun`` w.r.t. its first argument."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(x, *args), dtype=float))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = 1e-6 * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.atleast_1d(fun(xp, *args)) - np.atleast_1d(fun(xm, *args))) / (2 * h)
    return J


@dataclass(frozen=True)
class SystemModel:
    """Controller model ``x+ = f(x,u,d)``, ``y = h(x,u,d)``, ``r = g(u,y)``.

    Jacobian callbacks return tuples of arrays; when omitted, central finite
    differences with step ``1e-6 * (1 + |component|)`` are used.  ``c_bar``
    and ``b_bar`` define the soft output constraints ``c_bar(u, y) + b_bar
    <= 0`` used (tightened) during target selection; both benchmarks have
    none (``n_c = 0``).
    """

    name: str
    n: int
    n_u: int
    n_y: int
    n_d: int
    n_r: int
    f: Callable
    h: Callable
    g: Callable
    u_lo: np.ndarray
    u_hi: np.ndarray
    f_jac: Optional[Callable] = None  # (x,u,d) -> (fx, fu, fd)
    h_jac: Optional[Callable] = None  # (x,u,d) -> (hx, hu, hd)
    g_jac: Optional[Callable] = None  # (u,y) -> (gu, gy)
    c_bar: Optional[Callable] = None
    b_bar: Optional[np.ndarray] = None
    n_c: int = 0
    w_embed: Optional[Callable] = None  # d -> w_P, the model-disturbance embedding
    d_lo: Optional[np.ndarray] = None
    d_hi: Optional[np.ndarray] = None
    x_lo: Optional[np.ndarray] = None
    x_hi: Optional[np.ndarray] = None
    check_domain: Optional[Callable] = None  # raises DomainError outside domain
    origin_shifted: bool = True  # f(0,0,0)=0 etc.; waived for raw benchmarks

    def jac_f(self, x, u, d):
        if self.f_jac is not None:
            return self.f_jac(x, u, d)
        return (
            _fd_jac(lambda xx: self.f(xx, u, d), x),
            _fd_jac(lambda uu: self.f(x, uu, d), u),
            _fd_jac(lambda dd: self.f(x, u, dd), d),
        )

    def jac_h(self, x, u, d):
        if self.h_jac is not None:
            return self.h_jac(x, u, d)
        return (
            _fd_jac(lambda xx: self.h(xx, u, d), x),
            _fd_jac(lambda uu: self.h(x, uu, d), u),
            _fd_jac(lambda dd: self.h(x, u, dd), d),
        )

    def jac_g(self, u, y):
        if self.g_jac is not None:
            return self.g_jac(u, y)
        return (
            _fd_jac(lambda uu: self.g(uu, y), u),
            _fd_jac(lambda yy: self.g(u, yy), y),
        )

    def clip_u(self, u):
        return np.clip(u, self.u_lo, self.u_hi)


@dataclass(frozen=True)
class PlantSpec:
    """True plant: continuous RHS + fixed-step RK4 discretization.

    The last disturbance channel ``(w_P)[disc_index]`` scales the
    discretization error: the one-step map is the Euler map plus
    ``(w_P)[disc_index]`` times the (RK4-substep) residual, so 0 gives the
    model's Euler map and 1 the accurately integrated plant.
    """

    name: str
    n: int
    n_u: int
    n_y: int
    n_w: int
    rhs: Callable  # (x, u, w_P) -> xdot
    h_p: Callable  # (x, u, w_P) -> y
    dt: float
    substeps: int
    disc_index: int = 4

    def step(self, x, u, w_p, time_index=None):
        """One sample-time step ``x+ = f_P(x, u, w_P)``."""
        x = np.asarray(x, dtype=float)
        w_p = np.asarray(w_p, dtype=float)
        euler = x + self.dt * np.asarray(self.rhs(x, u, w_p), dtype=float)
        s = w_p[self.disc_index]
        if s == 0.0:
            out = euler
        else:
            xk = x
            h = self.dt / self.substeps
            for _ in range(self.substeps):
                xk = rk4_step(self.rhs, xk, u, w_p, h)
            out = euler + s * (xk - euler)
        if not np.all(np.isfinite(out)):
            raise IntegrationBlowupError("non-finite plant state", time_index)
        return out


@dataclass(frozen=True)
class TargetParams:
    """SSTP parameters: reference, auxiliary setpoints, and model disturbance."""

    r_sp: np.ndarray
    u_sp: np.ndarray
    y_sp: np.ndarray
    d: np.ndarray

    @staticmethod
    def of(r_sp, u_sp=0.0, y_sp=0.0, d=0.0):
        return TargetParams(
            np.atleast_1d(np.asarray(r_sp, float)),
            np.atleast_1d(np.asarray(u_sp, float)),
            np.atleast_1d(np.asarray(y_sp, float)),
            np.atleast_1d(np.asarray(d, float)),
        )

    def key(self):
        return (tuple(self.r_sp), tuple(self.u_sp), tuple(self.y_sp), tuple(self.d))

    def with_d(self, d):
        return TargetParams(self.r_sp, self.u_sp, self.y_sp, np.atleast_1d(np.asarray(d, float)))


@dataclass(frozen=True)
class MismatchParams:
    """Mismatch steady-state parameters: setpoints plus plant disturbance."""

    r_sp: np.ndarray
    u_sp: np.ndarray
    y_sp: np.ndarray
    w_p: np.ndarray

    @staticmethod
    def of(r_sp, w_p, u_sp=0.0, y_sp=0.0):
        return MismatchParams(
            np.atleast_1d(np.asarray(r_sp, float)),
            np.atleast_1d(np.asarray(u_sp, float)),
            np.atleast_1d(np.asarray(y_sp, float)),
            np.asarray(w_p, float),
        )

    def key(self):
        return (tuple(self.r_sp), tuple(self.u_sp), tuple(self.y_sp), tuple(self.w_p))

    def target_params(self, d):
        return TargetParams(self.r_sp, self.u_sp, self.y_sp, np.atleast_1d(np.asarray(d, float)))


# ---------------------------------------------------------------------------
# Pendulum benchmark
# ---------------------------------------------------------------------------

PEND_K = 5.0
PEND_DT = 0.1


def _pend_rhs(x, u, w):
    u0 = float(np.atleast_1d(u)[0])
    return np.array(
        [
            x[1],
            math.sin(x[0]) - w[0] ** 2 * x[1] + (PEND_K + w[1]) * u0 + w[2],
        ]
    )


def pendulum_plant():
    """Pendulum plant: angle/velocity states, motor voltage input.

    ``w_P = (air resistance, motor gain error, torque, measurement noise,
    discretization switch)``.
    """
    return PlantSpec(
        name="pendulum",
        n=2,
        n_u=1,
        n_y=1,
        n_w=5,
        rhs=_pend_rhs,
        h_p=lambda x, u, w: np.array([x[0] + w[3]]),
        dt=PEND_DT,
        substeps=4,
    )


def pendulum_model():
    """Pendulum controller model: Euler map with torque disturbance d."""

    def f(x, u, d):
        u0 = float(np.atleast_1d(u)[0])
        d0 = float(np.atleast_1d(d)[0])
        return np.array(
            [
                x[0] + PEND_DT * x[1],
                x[1] + PEND_DT * (math.sin(x[0]) + PEND_K * u0 + d0),
            ]
        )

    def f_jac(x, u, d):
        fx = np.array([[1.0, PEND_DT], [PEND_DT * math.cos(x[0]), 1.0]])
        fu = np.array([[0.0], [PEND_DT * PEND_K]])
        fd = np.array([[0.0], [PEND_DT]])
        return fx, fu, fd

    def h_jac(x, u, d):
        return np.array([[1.0, 0.0]]), np.zeros((1, 1)), np.zeros((1, 1))

    return SystemModel(
        name="pendulum",
        n=2,
        n_u=1,
        n_y=1,
        n_d=1,
        n_r=1,
        f=f,
        h=lambda x, u, d: np.array([x[0]]),
        g=lambda u, y: np.asarray(y, float).copy(),
        u_lo=np.array([-1.0]),
        u_hi=np.array([1.0]),
        f_jac=f_jac,
        h_jac=h_jac,
        g_jac=lambda u, y: (np.zeros((1, 1)), np.eye(1)),
        w_embed=lambda d: np.array([0.0, 0.0, float(np.atleast_1d(d)[0]), 0.0, 0.0]),
        # |sin r + d| <= 5 for every r keeps the steady input inside [-1, 1],
        # so all (r_sp, d) pairs over this box admit feasible targets
        d_lo=np.array([-4.0]),
        d_hi=np.array([4.0]),
        origin_shifted=False,  # h(0,0,0)=0 but f(0,0,0)=0 holds; g ok; recorded: raw form
    )


# ---------------------------------------------------------------------------
# CSTR benchmark
# ---------------------------------------------------------------------------

CSTR_THETA = 20.0
CSTR_K = 300.0
CSTR_M = 5.0
CSTR_XF = 0.3947
CSTR_XC = 0.3816
CSTR_GAMMA = 0.117
CSTR_DT = 1.0
_CSTR_X2_FLOOR = 1e-6


def _cstr_rate(x1, x2, dw=0.0):
    return CSTR_K * math.exp((dw - CSTR_M) / x2) * x1


def _cstr_rhs(x, u, w):
    u0 = float(np.atleast_1d(u)[0])
    rate = _cstr_rate(x[0], x[1], w[1])
    return np.array(
        [
            (1.0 + w[0] - x[0]) / CSTR_THETA - rate,
            (CSTR_XF - x[1]) / CSTR_THETA + rate - CSTR_GAMMA * u0 * (x[1] - CSTR_XC - w[2]),
        ]
    )


def cstr_plant():
    """CSTR plant: concentration/temperature states, coolant flowrate input.

    ``w_P = (feed error, activation-energy error, coolant temperature change,
    measurement noise, discretization switch)``.
    """
    return PlantSpec(
        name="cstr",
        n=2,
        n_u=1,
        n_y=1,
        n_w=5,
        rhs=_cstr_rhs,
        h_p=lambda x, u, w: np.array([x[1] + w[3]]),
        dt=CSTR_DT,
        substeps=10,
    )


def _cstr_check_domain(x):
    if x[1] <= 0.0:
        raise DomainError(f"CSTR temperature must be positive, got x2={x[1]}")


def cstr_model():
    """CSTR controller model: Euler map with coolant-temperature disturbance d.

    Evaluation clamps ``x2`` at 1e-6 so trial points in a line search do not
    crash the rate expression; converged iterates must satisfy the true
    domain (see ``check_domain``).
    """

    def f(x, u, d):
        u0 = float(np.atleast_1d(u)[0])
        d0 = float(np.atleast_1d(d)[0])
        x2 = max(x[1], _CSTR_X2_FLOOR)
        rate = _cstr_rate(x[0], x2)
        return np.array(
            [
                x[0] + CSTR_DT * ((1.0 - x[0]) / CSTR_THETA - rate),
                x[1]
                + CSTR_DT
                * ((CSTR_XF - x2) / CSTR_THETA + rate - CSTR_GAMMA * u0 * (x2 - CSTR_XC - d0)),
            ]
        )

    def f_jac(x, u, d):
        u0 = float(np.atleast_1d(u)[0])
        d0 = float(np.atleast_1d(d)[0])
        x2 = max(x[1], _CSTR_X2_FLOOR)
        e = math.exp(-CSTR_M / x2)
        r_x1 = CSTR_K * e
        r_x2 = CSTR_K * e * x[0] * CSTR_M / x2**2
        fx = np.array(
            [
                [1.0 + CSTR_DT * (-1.0 / CSTR_THETA - r_x1), CSTR_DT * (-r_x2)],
                [CSTR_DT * r_x1, 1.0 + CSTR_DT * (-1.0 / CSTR_THETA + r_x2 - CSTR_GAMMA * u0)],
            ]
        )
        fu = np.array([[0.0], [-CSTR_DT * CSTR_GAMMA * (x2 - CSTR_XC - d0)]])
        fd = np.array([[0.0], [CSTR_DT * CSTR_GAMMA * u0]])
        return fx, fu, fd

    def h_jac(x, u, d):
        return np.array([[0.0, 1.0]]), np.zeros((1, 1)), np.zeros((1, 1))

    return SystemModel(
        name="cstr",
        n=2,
        n_u=1,
        n_y=1,
        n_d=1,
        n_r=1,
        f=f,
        h=lambda x, u, d: np.array([x[1]]),
        g=lambda u, y: np.asarray(y, float).copy(),
        u_lo=np.array([0.0]),
        u_hi=np.array([2.0]),
        f_jac=f_jac,
        h_jac=h_jac,
        g_jac=lambda u, y: (np.zeros((1, 1)), np.eye(1)),
        w_embed=lambda d: np.array([0.0, 0.0, float(np.atleast_1d(d)[0]), 0.0, 0.0]),
        d_lo=np.array([-0.1]),
        d_hi=np.array([0.1]),
        x_lo=np.array([0.0, 0.0]),
        check_domain=_cstr_check_domain,
        origin_shifted=False,
    )


_REGISTRY = {
    "pendulum": (pendulum_model, pendulum_plant),
    "cstr": (cstr_model, cstr_plant),
}


def get_benchmark(name):
    """Return ``(model, plant)`` for a registered benchmark name."""
    try:
        make_model, make_plant = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(_REGISTRY)}")
    return make_model(), make_plant()
