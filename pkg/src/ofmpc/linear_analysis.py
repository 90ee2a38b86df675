"""Model linearization and steady-state rank conditions.

The two block matrices checked here certify, for the linearized model,
steady-state reachability of any (reference, disturbance) pair and
steady-state observability of the disturbance from input/output data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Linearization:
    A: np.ndarray
    B: np.ndarray
    B_d: np.ndarray
    C: np.ndarray
    D: np.ndarray
    C_d: np.ndarray
    H_u: np.ndarray
    H_y: np.ndarray


@dataclass
class RankReport:
    matrix: np.ndarray
    full_rank: bool
    sigma_min: float
    sigma_max: float
    square: bool = True


def linearize(model, at=None):
    """Evaluate all eight Jacobian blocks of (f, h, g) at an operating point
    (default: the origin)."""
    if at is None:
        x = np.zeros(model.n)
        u = np.zeros(model.n_u)
        d = np.zeros(model.n_d)
    else:
        x, u, d = (np.asarray(v, float) for v in at)
    A, B, B_d = model.jac_f(x, u, d)
    C, D, C_d = model.jac_h(x, u, d)
    y = model.h(x, u, d)
    H_u, H_y = model.jac_g(u, y)
    lin = Linearization(A, B, B_d, C, D, C_d, H_u, H_y)
    for name in ("A", "B", "B_d", "C", "D", "C_d", "H_u", "H_y"):
        M = getattr(lin, name)
        if not np.all(np.isfinite(M)):
            bad = np.argwhere(~np.isfinite(M))[0]
            raise ValueError(f"non-finite Jacobian entry {name}[{bad[0]},{bad[1]}]")
    return lin


def _svd_extremes(M):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0:
        return 0.0, 0.0
    return float(s[-1]), float(s[0])


def check_M1(lin, tol=1e-10):
    """Steady-state reachability: [[A-I, B], [H_y C, H_y D + H_u]] must be
    full row rank."""
    top = np.hstack([lin.A - np.eye(lin.A.shape[0]), lin.B])
    bot = np.hstack([lin.H_y @ lin.C, lin.H_y @ lin.D + lin.H_u])
    M1 = np.vstack([top, bot])
    # row rank: singular values of the row space
    s = np.linalg.svd(M1, compute_uv=False)
    smax = float(s.max(initial=0.0))
    rows = M1.shape[0]
    smin_rows = float(s[rows - 1]) if s.size >= rows else 0.0
    return RankReport(M1, smin_rows > tol * max(smax, 1e-300), smin_rows, smax)


def check_M2(lin, tol=1e-10):
    """Steady-state observability: [[A-I, B_d], [C, C_d]] must be invertible
    (square case); a non-square assembly is reported, not failed."""
    n = lin.A.shape[0]
    M2 = np.vstack(
        [np.hstack([lin.A - np.eye(n), lin.B_d]), np.hstack([lin.C, lin.C_d])]
    )
    smin, smax = _svd_extremes(M2)
    square = M2.shape[0] == M2.shape[1]
    full = square and smin > tol * max(smax, 1e-300)
    return RankReport(M2, full, smin, smax, square=square)
