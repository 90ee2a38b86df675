"""Terminal cost, controller, and region construction for the regulator.

For each steady-state target the local LQR solution of a discrete-time
algebraic Riccati equation (DARE) provides a terminal penalty
``V_f(x) = (x - x_s)' P_f (x - x_s)`` with ``P_f = 2 P`` and a terminal
control law ``kappa_f(x) = u_s - K (x - x_s)``.  A terminal region
``{V_f <= c_f}`` on which ``V_f`` decreases by at least the stage cost is
obtained from a cubic/quartic remainder bound on the nonlinear dynamics:
with ``c = sigma_min(Q_K)``, ``a = 2 c_x sigma_max(A_K' P_f)`` and
``b = c_x^2 sigma_max(P_f)`` the decrease holds for ``|x - x_s| <= s_+``
where ``s_+`` is the positive root of ``c - b s - a s^2``, and
``c_f = min over the target grid of sigma_min(P_f) s_+^2``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .models import SystemModel, TargetParams, get_benchmark
from .sstp import SteadyTarget, TargetSolver

__all__ = [
    "UnstabilizableError",
    "dare_solve",
    "TerminalPair",
    "TerminalDesign",
    "VerifyReport",
    "build_terminal",
    "verify_terminal",
    "pendulum_terminal_config",
    "cstr_terminal_config",
    "TerminalConfig",
    "load_or_build",
]


class UnstabilizableError(RuntimeError):
    """The DARE iteration failed to converge to a stabilizing solution."""


def dare_solve(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    N: Optional[np.ndarray] = None,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> Tuple[np.ndarray, np.ndarray]:
    """Solve ``P = A'PA + Q - (A'PB + N)(R + B'PB)^{-1}(B'PA + N')``.

    Uses the structure-preserving doubling algorithm, which converges
    quadratically for stabilizable/detectable data.  A cross-weight ``N``
    is removed by the substitution ``A - B R^{-1} N'``, ``Q - N R^{-1} N'``.

    Returns ``(P, K)`` with ``K = (R + B'PB)^{-1}(B'PA + N')`` and checks
    the fixed-point residual to ``tol``; raises :class:`UnstabilizableError`
    on divergence or a residual above ``tol``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    if B.shape[0] != n:
        B = B.reshape(n, -1)
    m = B.shape[1]
    if N is None:
        N = np.zeros((n, m))
    else:
        N = np.asarray(N, dtype=float).reshape(n, m)

    Rinv = np.linalg.inv(R)
    A_s = A - B @ Rinv @ N.T
    Q_s = Q - N @ Rinv @ N.T

    Ak = A_s.copy()
    Gk = B @ Rinv @ B.T
    Hk = Q_s.copy()
    I = np.eye(n)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            M = I + Gk @ Hk
            try:
                Minv = np.linalg.inv(M)
            except np.linalg.LinAlgError as exc:
                raise UnstabilizableError("doubling iteration became singular") from exc
            An = Ak @ Minv @ Ak
            Gn = Gk + Ak @ Gk @ np.linalg.inv(I + Hk @ Gk) @ Ak.T
            Hn = Hk + Ak.T @ Hk @ Minv @ Ak
            if not (np.all(np.isfinite(An)) and np.all(np.isfinite(Hn))):
                raise UnstabilizableError("doubling iteration diverged")
            delta = np.abs(Hn - Hk).max()
            Ak, Gk, Hk = An, 0.5 * (Gn + Gn.T), 0.5 * (Hn + Hn.T)
            if delta <= 1e-15 * (1.0 + np.abs(Hk).max()):
                break
    P = 0.5 * (Hk + Hk.T)
    S = R + B.T @ P @ B
    K = np.linalg.solve(S, B.T @ P @ A + N.T)
    resid = A.T @ P @ A - P + Q - (A.T @ P @ B + N) @ np.linalg.solve(S, B.T @ P @ A + N.T)
    resid_norm = np.abs(resid).max() / max(1.0, np.abs(P).max())
    if not np.isfinite(resid_norm) or resid_norm > tol:
        raise UnstabilizableError(f"DARE residual {resid_norm:.3e} exceeds tolerance {tol:.1e}")
    return P, K


@dataclass(frozen=True)
class TerminalPair:
    """Terminal penalty and gain at one steady-state target."""

    P_f: np.ndarray
    K: np.ndarray
    Q_K: np.ndarray
    s_plus: float
    c_local: float


@dataclass(frozen=True)
class TerminalConfig:
    """Grid and sampling choices for a terminal-region construction."""

    model_name: str
    Q: np.ndarray
    R: np.ndarray
    r_grid: Tuple[float, ...]
    d_grid: Tuple[float, ...]
    sample_lo: Tuple[float, ...]  # box over (x, u) for the Hessian bound
    sample_hi: Tuple[float, ...]
    samples_per_axis: int = 9
    safety: float = 1.0

    def cache_key(self) -> str:
        payload = json.dumps(
            {
                "model": self.model_name,
                "Q": np.asarray(self.Q).tolist(),
                "R": np.asarray(self.R).tolist(),
                "r_grid": list(self.r_grid),
                "d_grid": list(self.d_grid),
                "lo": list(self.sample_lo),
                "hi": list(self.sample_hi),
                "spa": self.samples_per_axis,
                "safety": self.safety,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class TerminalDesign:
    """Terminal ingredients for one benchmark and weight choice.

    ``c_f`` is the grid minimum; per-target ``(P_f, K)`` pairs are computed
    on demand (and memoized) so the design remains valid for targets between
    grid points.
    """

    config: TerminalConfig
    c_x: float
    c_f: float
    grid_pairs: Dict[Tuple[float, float], TerminalPair] = field(default_factory=dict)
    _model: Optional[SystemModel] = None
    _cache: Dict[str, TerminalPair] = field(default_factory=dict)

    @property
    def model(self) -> SystemModel:
        if self._model is None:
            model, _ = get_benchmark(self.config.model_name)
            object.__setattr__(self, "_model", model)
        return self._model

    def pair_at(self, target: SteadyTarget, d: np.ndarray) -> TerminalPair:
        key = repr((tuple(target.x_s), tuple(target.u_s), tuple(np.atleast_1d(d))))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        pair = _pair_for_target(self.model, target, np.atleast_1d(d), self.config, self.c_x)
        self._cache[key] = pair
        return pair

    def V_f(self, x: np.ndarray, target: SteadyTarget, d: np.ndarray) -> float:
        pair = self.pair_at(target, d)
        dx = np.asarray(x, dtype=float) - target.x_s
        return float(dx @ pair.P_f @ dx)

    def kappa_f(self, x: np.ndarray, target: SteadyTarget, d: np.ndarray) -> np.ndarray:
        pair = self.pair_at(target, d)
        u = target.u_s - pair.K @ (np.asarray(x, dtype=float) - target.x_s)
        return self.model.clip_u(u)

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "cache_key": self.config.cache_key(),
            "model": self.config.model_name,
            "c_x": self.c_x,
            "c_f": self.c_f,
            "grid": [
                {
                    "r_sp": r,
                    "d": d,
                    "P_f": p.P_f.tolist(),
                    "K": p.K.tolist(),
                    "s_plus": p.s_plus,
                    "c_local": p.c_local,
                }
                for (r, d), p in sorted(self.grid_pairs.items())
            ],
        }

    @classmethod
    def from_json(cls, data: dict, config: TerminalConfig) -> "TerminalDesign":
        if data.get("cache_key") != config.cache_key():
            raise ValueError("cached terminal design does not match the requested configuration")
        pairs = {}
        for rec in data["grid"]:
            P_f = np.array(rec["P_f"])
            K = np.array(rec["K"])
            pairs[(rec["r_sp"], rec["d"])] = TerminalPair(
                P_f=P_f, K=K, Q_K=np.zeros_like(P_f), s_plus=rec["s_plus"], c_local=rec["c_local"]
            )
        return cls(config=config, c_x=data["c_x"], c_f=data["c_f"], grid_pairs=pairs)


def _hessian_bound(model: SystemModel, config: TerminalConfig) -> float:
    """Max over a sampling box of the summed spectral norms of the component
    Hessians of ``f`` with respect to ``(x, u)``, via central differences of
    the analytic Jacobian."""
    lo = np.asarray(config.sample_lo, dtype=float)
    hi = np.asarray(config.sample_hi, dtype=float)
    n, nu = model.n, model.n_u
    dim = n + nu
    d0 = np.zeros(model.n_d)
    axes = [np.linspace(lo[i], hi[i], config.samples_per_axis) for i in range(dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)

    def jac_xu(z: np.ndarray) -> np.ndarray:
        A, B, _ = model.jac_f(z[:n], z[n:], d0)
        return np.hstack([A, B])

    worst = 0.0
    for z in pts:
        eps = 1e-5
        H = np.zeros((n, dim, dim))
        for j in range(dim):
            zp = z.copy()
            zp[j] += eps
            zm = z.copy()
            zm[j] -= eps
            dJ = (jac_xu(zp) - jac_xu(zm)) / (2.0 * eps)
            H[:, :, j] = dJ
        total = sum(np.linalg.svd(H[i], compute_uv=False).max() for i in range(n))
        worst = max(worst, total)
    return worst * config.safety


def _pair_for_target(
    model: SystemModel,
    target: SteadyTarget,
    d: np.ndarray,
    config: TerminalConfig,
    c_x: float,
) -> TerminalPair:
    A, B, _ = model.jac_f(target.x_s, target.u_s, d)
    P, K = dare_solve(A, B, config.Q, config.R)
    P_f = 2.0 * P
    Q_K = config.Q + K.T @ config.R @ K
    A_K = A - B @ K
    c = float(np.linalg.eigvalsh(Q_K).min())
    a = 2.0 * c_x * float(np.linalg.svd(A_K.T @ P_f, compute_uv=False).max())
    b = c_x * c_x * float(np.linalg.svd(P_f, compute_uv=False).max())
    if a <= 0.0:
        s_plus = np.inf if b <= 0.0 else np.sqrt(c / b)
    else:
        s_plus = (-b + np.sqrt(b * b + 4.0 * a * c)) / (2.0 * a)
    # The cubic/quartic remainder bound is only valid inside the sampling box.
    lo = np.asarray(config.sample_lo[: model.n])
    hi = np.asarray(config.sample_hi[: model.n])
    box_radius = 0.5 * float(np.linalg.norm(hi - lo))
    s_plus = min(float(s_plus), box_radius)
    return TerminalPair(P_f=P_f, K=K, Q_K=Q_K, s_plus=s_plus, c_local=c)


def build_terminal(
    config: TerminalConfig,
    target_solver: Optional[TargetSolver] = None,
) -> TerminalDesign:
    """Construct terminal ingredients over the target grid of ``config``."""
    model, _ = get_benchmark(config.model_name)
    solver = target_solver or TargetSolver(model)
    c_x = _hessian_bound(model, config)
    c_f = np.inf
    pairs: Dict[Tuple[float, float], TerminalPair] = {}
    for r in config.r_grid:
        for dv in config.d_grid:
            beta = TargetParams.of(r, d=dv)
            target = solver(beta)
            pair = _pair_for_target(model, target, beta.d, config, c_x)
            pairs[(float(r), float(dv))] = pair
            level = float(np.linalg.eigvalsh(pair.P_f).min()) * pair.s_plus**2
            c_f = min(c_f, level)
    design = TerminalDesign(config=config, c_x=c_x, c_f=float(c_f), grid_pairs=pairs)
    return design


@dataclass(frozen=True)
class VerifyReport:
    """Sampled check of the terminal decrease and invariance conditions."""

    samples: int
    decrease_violations: int
    invariance_violations: int
    worst_decrease: float
    worst_invariance: float
    max_input_excess: float

    @property
    def ok(self) -> bool:
        return self.decrease_violations == 0 and self.invariance_violations == 0


def verify_terminal(
    design: TerminalDesign,
    n_samples: int = 1000,
    seed: int = 0,
    tol: float = 1e-8,
    target_solver: Optional[TargetSolver] = None,
) -> VerifyReport:
    """Sample states in the terminal region at random grid-box targets and
    check that the unclipped terminal controller achieves the stage-cost
    decrease of ``V_f`` and keeps the successor state inside the region.

    Input-bound excess of the terminal controller is reported separately and
    does not count as a violation: the region certificate is a decrease and
    invariance statement for the local LQR law.
    """
    model, _ = get_benchmark(design.config.model_name)
    solver = target_solver or TargetSolver(model)
    rng = np.random.default_rng(seed)
    r_lo, r_hi = min(design.config.r_grid), max(design.config.r_grid)
    d_lo, d_hi = min(design.config.d_grid), max(design.config.d_grid)
    n = model.n
    dec_viol = inv_viol = 0
    worst_dec = -np.inf
    worst_inv = -np.inf
    max_excess = 0.0
    for _ in range(n_samples):
        r = rng.uniform(r_lo, r_hi)
        dv = rng.uniform(d_lo, d_hi)
        beta = TargetParams.of(r, d=dv)
        target = solver(beta)
        pair = design.pair_at(target, beta.d)
        # uniform sample in the ellipsoid {dx' P_f dx <= c_f}
        xi = rng.normal(size=n)
        xi /= np.linalg.norm(xi)
        rho = rng.uniform() ** (1.0 / n)
        L = np.linalg.cholesky(np.linalg.inv(pair.P_f))
        dx = L @ xi * np.sqrt(design.c_f) * rho
        x = target.x_s + dx
        u = target.u_s - pair.K @ dx
        excess = max(
            float(np.max(u - model.u_hi, initial=0.0)),
            float(np.max(model.u_lo - u, initial=0.0)),
        )
        max_excess = max(max_excess, excess)
        xp = model.f(x, u, beta.d)
        dxp = xp - target.x_s
        V = float(dx @ pair.P_f @ dx)
        Vp = float(dxp @ pair.P_f @ dxp)
        dec = Vp - V + float(dx @ pair.Q_K @ dx)
        inv = Vp - design.c_f
        worst_dec = max(worst_dec, dec)
        worst_inv = max(worst_inv, inv)
        if dec > tol:
            dec_viol += 1
        if inv > tol:
            inv_viol += 1
    return VerifyReport(
        samples=n_samples,
        decrease_violations=dec_viol,
        invariance_violations=inv_viol,
        worst_decrease=worst_dec,
        worst_invariance=worst_inv,
        max_input_excess=max_excess,
    )


def pendulum_terminal_config() -> TerminalConfig:
    return TerminalConfig(
        model_name="pendulum",
        Q=np.eye(2),
        R=np.array([[1e-2]]),
        r_grid=tuple(np.linspace(0.0, np.pi, 11)),
        d_grid=tuple(np.linspace(-3.0, 3.0, 11)),
        sample_lo=(-0.5, -1.0, -1.0),
        sample_hi=(np.pi + 0.5, 1.0, 1.0),
        samples_per_axis=9,
    )


def cstr_terminal_config() -> TerminalConfig:
    return TerminalConfig(
        model_name="cstr",
        Q=np.diag([1e-3, 1.0]),
        R=np.array([[1e-3]]),
        r_grid=tuple(np.linspace(0.55, 0.75, 11)),
        d_grid=tuple(np.linspace(-0.1, 0.1, 11)),
        sample_lo=(0.1, 0.4, 0.0),
        sample_hi=(0.9, 0.9, 2.0),
        samples_per_axis=6,
    )


_CONFIGS = {
    "pendulum": pendulum_terminal_config,
    "cstr": cstr_terminal_config,
}


def default_terminal_config(model_name: str) -> TerminalConfig:
    try:
        return _CONFIGS[model_name]()
    except KeyError as exc:
        raise KeyError(f"no terminal configuration for model {model_name!r}") from exc


def load_or_build(config: TerminalConfig, cache_path: Optional[str] = None) -> TerminalDesign:
    """Build the terminal design, reusing a JSON cache file when it matches."""
    if cache_path is not None:
        try:
            with open(cache_path) as fh:
                data = json.load(fh)
            return TerminalDesign.from_json(data, config)
        except (OSError, ValueError, KeyError):
            pass
    design = build_terminal(config)
    if cache_path is not None:
        with open(cache_path, "w") as fh:
            json.dump(design.to_json(), fh, indent=1)
    return design
