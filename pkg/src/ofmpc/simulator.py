"""Closed-loop simulation of the benchmark plants under receding-horizon
control, with scripted disturbance/setpoint scenarios, trajectory logging,
and empirical diagnostics.

A :class:`Scenario` describes one run: benchmark, controller variant
(offset-free ``ofmpc`` vs. nominal tracking ``tmpc`` -- the same code path,
differing only in whether the estimator carries a disturbance state), the
setpoint signal, the plant disturbance channels, and the RNG seed.  Random
channels draw from counter-based Philox substreams keyed by
``(seed, channel index)`` so results do not depend on evaluation order.

``run_closed_loop`` executes, at each step k: an estimator update from
data up to k-1, a steady-state target solve at the estimated disturbance,
a finite-horizon regulator solve, and one plant step.  Any hard subsolver
failure truncates the trajectory; the partial log is still returned (and
written).  ``compute_mismatch_noise`` reconstructs the nominal-model noise
triple ``(w, w_d, v)`` and the steady-state-corrected state along the run;
``check_descent`` evaluates the stepwise value-function decrease
``V(k+1) - V(k) <= -a3 |x_hat - x_s|^2`` with ``a3`` the smallest singular
value of the stage-cost quadratic form.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import estimator as est
from . import regulator as reg
from .models import (
    DomainError,
    IntegrationBlowupError,
    MismatchParams,
    PlantSpec,
    SystemModel,
    TargetParams,
    get_benchmark,
)
from .sstp import (
    InfeasibleTarget,
    NoCorrection,
    TargetDegenerate,
    TargetSolver,
    solve_ssop,
)
from .terminal import TerminalDesign, default_terminal_config, load_or_build

__all__ = [
    "ScenarioError",
    "Scenario",
    "SimResult",
    "run_closed_loop",
    "compute_mismatch_noise",
    "check_descent",
    "DescentReport",
    "fit_error_decay",
    "builtin_scenario",
    "list_builtin_scenarios",
    "trajectory_columns",
    "write_trajectory_csv",
    "write_summary_json",
    "final_window_offset",
    "get_terminal_design",
]

SCHEMA_VERSION = 1

N_CHANNELS = 5
_CHANNEL_TYPES = ("constant", "step", "sinusoid", "random_walk", "white", "zero")


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


# ---------------------------------------------------------------------------
# Scenario definition and signal expansion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """One closed-loop run: benchmark, controller variant, signals, seed."""

    name: str
    benchmark: str
    controller: str  # "ofmpc" | "tmpc"
    steps: int
    seed: int = 0
    setpoint: dict = field(default_factory=dict)
    channels: Dict[int, dict] = field(default_factory=dict)
    x0: Optional[Tuple[float, ...]] = None
    u_prev: Optional[Tuple[float, ...]] = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.benchmark not in ("pendulum", "cstr"):
            raise ScenarioError(f"unknown benchmark {self.benchmark!r}")
        if self.controller not in ("ofmpc", "tmpc"):
            raise ScenarioError(f"unknown controller {self.controller!r}")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ScenarioError(f"steps must be a positive integer, got {self.steps!r}")
        for idx, spec in self.channels.items():
            if not isinstance(idx, int) or not 0 <= idx < N_CHANNELS:
                raise ScenarioError(f"channel index {idx!r} out of range 0..{N_CHANNELS - 1}")
            t = spec.get("type")
            if t not in _CHANNEL_TYPES:
                raise ScenarioError(f"channel {idx}: unknown type {t!r}")
        sp = self.setpoint
        if sp and ("breakpoints" in sp) == ("waveform" in sp):
            raise ScenarioError("setpoint needs exactly one of 'breakpoints' or 'waveform'")

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "benchmark": self.benchmark,
            "controller": self.controller,
            "steps": self.steps,
            "seed": self.seed,
            "setpoint": self.setpoint,
            "channels": {str(i): spec for i, spec in sorted(self.channels.items())},
            "x0": list(self.x0) if self.x0 is not None else None,
            "u_prev": list(self.u_prev) if self.u_prev is not None else None,
            "overrides": self.overrides,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        if not isinstance(data, dict):
            raise ScenarioError("scenario file must contain a JSON object")
        if data.get("schema") != SCHEMA_VERSION:
            raise ScenarioError(
                f"unsupported scenario schema {data.get('schema')!r}; expected {SCHEMA_VERSION}"
            )
        known = {
            "schema", "name", "benchmark", "controller", "steps", "seed",
            "setpoint", "channels", "x0", "u_prev", "overrides",
        }
        unknown = set(data) - known
        if unknown:
            raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
        try:
            channels = {int(i): spec for i, spec in (data.get("channels") or {}).items()}
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"channel keys must be integers: {exc}") from exc
        return cls(
            name=str(data.get("name", "scenario")),
            benchmark=data.get("benchmark", ""),
            controller=data.get("controller", ""),
            steps=data.get("steps", 0),
            seed=int(data.get("seed", 0)),
            setpoint=data.get("setpoint") or {},
            channels=channels,
            x0=tuple(data["x0"]) if data.get("x0") is not None else None,
            u_prev=tuple(data["u_prev"]) if data.get("u_prev") is not None else None,
            overrides=data.get("overrides") or {},
        )


def _channel_rng(seed: int, channel: int) -> np.random.Generator:
    """Counter-based substream for one disturbance channel."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(channel,)))
    )


def _expand_channel(spec: dict, steps: int, seed: int, channel: int) -> np.ndarray:
    t = spec.get("type", "zero")
    k = np.arange(steps, dtype=float)
    if t == "zero":
        return np.zeros(steps)
    if t == "constant":
        return np.full(steps, float(spec["value"]))
    if t == "step":
        return float(spec["value"]) * (k >= int(spec["at"]))
    if t == "sinusoid":
        amp = float(spec.get("amplitude", 1.0))
        period = float(spec["period"])
        offset = float(spec.get("offset", 0.0))
        phase = float(spec.get("phase", 0.0))
        return offset + amp * np.sin(2.0 * np.pi * k / period + phase)
    rng = _channel_rng(seed, channel)
    std = math.sqrt(float(spec["variance"]))
    noise = std * rng.standard_normal(steps)
    if t == "white":
        return noise
    if t == "random_walk":
        return float(spec.get("initial", 0.0)) + np.cumsum(noise)
    raise ScenarioError(f"channel {channel}: unknown type {t!r}")


def expand_signals(scn: Scenario, n_r: int) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluate the disturbance matrix ``(steps+1, 5)`` and setpoint signal
    ``(steps+1, n_r)``.  One extra step is generated so steady-state
    mismatch quantities are defined at the final logged state."""
    steps = scn.steps + 1
    W = np.zeros((steps, N_CHANNELS))
    for i, spec in scn.channels.items():
        W[:, i] = _expand_channel(spec, steps, scn.seed, i)
    sp = scn.setpoint
    r = np.zeros((steps, n_r))
    if "breakpoints" in sp:
        bps = sorted((int(kk), vv) for kk, vv in sp["breakpoints"])
        if not bps or bps[0][0] != 0:
            raise ScenarioError("setpoint breakpoints must start at step 0")
        for start, value in bps:
            r[start:] = np.atleast_1d(np.asarray(value, float))
    elif "waveform" in sp:
        wf = sp["waveform"]
        if wf.get("type") != "sinusoid":
            raise ScenarioError(f"unknown setpoint waveform {wf.get('type')!r}")
        amp = float(wf.get("amplitude", 1.0))
        period = float(wf["period"])
        offset = float(wf.get("offset", 0.0))
        phase = float(wf.get("phase", 0.0))
        k = np.arange(steps, dtype=float)
        r[:] = (offset + amp * np.sin(2.0 * np.pi * k / period + phase))[:, None]
    return W, r


# ---------------------------------------------------------------------------
# Benchmark defaults
# ---------------------------------------------------------------------------

_DEFAULT_X0 = {
    "pendulum": (math.pi, 0.0),
    "cstr": (0.9831, 0.3918),
}
_DEFAULT_UPREV = {
    "pendulum": (0.0,),
    "cstr": (0.8305,),
}
_OCP_CONFIGS = {"pendulum": reg.pendulum_ocp_config, "cstr": reg.cstr_ocp_config}
_MHE_CONFIGS = {"pendulum": est.pendulum_mhe_config, "cstr": est.cstr_mhe_config}

_DESIGN_CACHE: Dict[str, TerminalDesign] = {}


def get_terminal_design(benchmark: str, cache_dir: Optional[str] = None) -> TerminalDesign:
    """Build (or load) the terminal ingredients for a benchmark, memoized
    per process and optionally cached on disk."""
    config = default_terminal_config(benchmark)
    key = config.cache_key()
    hit = _DESIGN_CACHE.get(key)
    if hit is not None:
        return hit
    path = os.path.join(cache_dir, f"terminal_{benchmark}_{key}.json") if cache_dir else None
    design = load_or_build(config, path)
    _DESIGN_CACHE[key] = design
    return design


def _configs_for(scn: Scenario):
    ocp = _OCP_CONFIGS[scn.benchmark]()
    mhe = _MHE_CONFIGS[scn.benchmark](augmented=(scn.controller == "ofmpc"))
    ov = scn.overrides
    if "N" in ov:
        ocp = reg.OcpConfig(N=int(ov["N"]), Q=ocp.Q, R=ocp.R, S_du=ocp.S_du,
                            hinge_weight=ocp.hinge_weight)
    if "T" in ov:
        mhe = est.MheConfig(T=int(ov["T"]), Q_w=mhe.Q_w, Q_d=mhe.Q_d, R_v=mhe.R_v,
                            augmented=mhe.augmented)
    return ocp, mhe


# ---------------------------------------------------------------------------
# Closed-loop run
# ---------------------------------------------------------------------------


@dataclass
class SimResult:
    """Logged closed-loop trajectory (possibly truncated on failure)."""

    scenario: Scenario
    steps: int  # completed steps
    x_p: np.ndarray  # (steps+1, n): plant states, final state included
    y: np.ndarray  # (steps, n_y)
    u: np.ndarray  # (steps, n_u)
    x_hat: np.ndarray  # (steps, n)
    d_hat: np.ndarray  # (steps, n_d)
    r_sp: np.ndarray  # (steps+1, n_r): one extra sample for mismatch metadata
    x_s: np.ndarray  # (steps, n)
    u_s: np.ndarray  # (steps, n_u)
    v_n: np.ndarray  # (steps,) regulator optimal value
    v_s: np.ndarray  # (steps,) target-problem optimal value
    delta_r: np.ndarray  # (steps, n_r) reference tracking error r - r_sp
    delta_x: np.ndarray  # (steps, n) estimate offset x_hat - x_s
    mhe_status: List[str]
    ocp_status: List[str]
    ocp_iterations: np.ndarray  # (steps,)
    w_p: np.ndarray  # (steps+1, 5) applied disturbance signal
    failure: Optional[dict] = None
    # filled by compute_mismatch_noise (rows may contain NaN when the
    # steady-state correction does not exist at a step)
    x_ps: Optional[np.ndarray] = None  # (steps+1, n)
    d_s: Optional[np.ndarray] = None  # (steps+1, n_d)
    dx_s: Optional[np.ndarray] = None  # (steps+1, n)
    noise_w: Optional[np.ndarray] = None  # (steps, n)
    noise_wd: Optional[np.ndarray] = None  # (steps, n_d)
    noise_v: Optional[np.ndarray] = None  # (steps, n_y)

    @property
    def ok(self) -> bool:
        return self.failure is None


def run_closed_loop(
    scn: Scenario,
    design: Optional[TerminalDesign] = None,
    cache_dir: Optional[str] = None,
) -> SimResult:
    """Simulate one scenario.

    At each step the estimator sees data up to the previous step (the very
    first input is computed from the prior: the true initial plant state and
    zero disturbance), the target problem is solved at the estimated
    disturbance, and the first regulator input is applied to the plant.
    Deterministic given the scenario seed.  A hard subsolver failure stops
    the loop and records a failure entry; all completed steps remain logged.
    """
    model, plant = get_benchmark(scn.benchmark)
    design = design or get_terminal_design(scn.benchmark, cache_dir)
    ocp_cfg, mhe_cfg = _configs_for(scn)
    target_solver = TargetSolver(model)
    W, R_sp = expand_signals(scn, model.n_r)
    K = scn.steps
    n, n_u, n_y, n_d, n_r = model.n, model.n_u, model.n_y, model.n_d, model.n_r

    x0 = np.asarray(scn.x0 if scn.x0 is not None else _DEFAULT_X0[scn.benchmark], float)
    u_prev = np.asarray(
        scn.u_prev if scn.u_prev is not None else _DEFAULT_UPREV[scn.benchmark], float
    )

    x_p = np.full((K + 1, n), np.nan)
    y = np.full((K, n_y), np.nan)
    u_log = np.full((K, n_u), np.nan)
    x_hat = np.full((K, n), np.nan)
    d_hat = np.full((K, n_d), np.nan)
    x_s = np.full((K, n), np.nan)
    u_s = np.full((K, n_u), np.nan)
    v_n = np.full(K, np.nan)
    v_s = np.full(K, np.nan)
    delta_r = np.full((K, n_r), np.nan)
    delta_x = np.full((K, n), np.nan)
    mhe_status: List[str] = []
    ocp_status: List[str] = []
    ocp_iters = np.zeros(K, dtype=int)

    x_p[0] = x0
    u_hist: List[np.ndarray] = []
    y_hist: List[np.ndarray] = []
    estimate = None
    warm = None
    failure = None
    k = 0
    try:
        for k in range(K):
            T_k = min(k, mhe_cfg.T)
            estimate = est.mhe_update(
                model, mhe_cfg, k,
                np.array(u_hist[-T_k:]) if T_k else np.zeros((0, n_u)),
                np.array(y_hist[-T_k:]) if T_k else np.zeros((0, n_y)),
                x_prior=x0, prev=estimate,
            )
            beta = TargetParams.of(R_sp[k], d=estimate.d_hat)
            target = target_solver(beta)
            if not target.feasible:
                raise InfeasibleTarget(f"no feasible target at step {k}: beta={beta}")
            sol = reg.solve_fhocp(
                model, ocp_cfg, design, estimate.x_hat, u_prev, target,
                estimate.d_hat, warm_start=warm,
            )
            u_k = reg.kappa_N(sol)
            if not np.all(np.isfinite(u_k)):
                raise RuntimeError(
                    f"regulator produced a non-finite input at step {k} "
                    f"(status {sol.status})"
                )
            # a terminal-infeasible solve is logged (status, value=inf) but
            # its input is still applied; the hard input bounds always hold
            u_k = model.clip_u(u_k)
            y_k = plant.h_p(x_p[k], u_k, W[k])
            x_p[k + 1] = plant.step(x_p[k], u_k, W[k], time_index=k)
            if model.check_domain is not None:
                model.check_domain(x_p[k + 1])

            y[k] = y_k
            u_log[k] = u_k
            x_hat[k] = estimate.x_hat
            d_hat[k] = estimate.d_hat
            x_s[k] = target.x_s
            u_s[k] = target.u_s
            v_n[k] = sol.value
            v_s[k] = target.value
            delta_r[k] = model.g(u_k, y_k) - R_sp[k]
            delta_x[k] = estimate.x_hat - target.x_s
            mhe_status.append(estimate.status + ("/held" if estimate.stalled else ""))
            ocp_status.append(sol.status)
            ocp_iters[k] = sol.iterations

            u_hist.append(u_k)
            y_hist.append(y_k)
            u_prev = u_k
            warm = (
                reg.shift_warm_start(model, design, sol, target, estimate.d_hat)
                if sol.feasible
                else None
            )
        k = K
    except (IntegrationBlowupError, DomainError, InfeasibleTarget, TargetDegenerate,
            RuntimeError, np.linalg.LinAlgError) as exc:
        failure = {"step": k, "error": type(exc).__name__, "message": str(exc)}

    done = K if failure is None else failure["step"]
    return SimResult(
        scenario=scn,
        steps=done,
        x_p=x_p[: done + 1],
        y=y[:done],
        u=u_log[:done],
        x_hat=x_hat[:done],
        d_hat=d_hat[:done],
        r_sp=R_sp[: done + 1],
        x_s=x_s[:done],
        u_s=u_s[:done],
        v_n=v_n[:done],
        v_s=v_s[:done],
        delta_r=delta_r[:done],
        delta_x=delta_x[:done],
        mhe_status=mhe_status[:done],
        ocp_status=ocp_status[:done],
        ocp_iterations=ocp_iters[:done],
        w_p=W[: done + 1],
        failure=failure,
    )


# ---------------------------------------------------------------------------
# Mismatch-noise reconstruction
# ---------------------------------------------------------------------------


def compute_mismatch_noise(result: SimResult, model=None, plant=None) -> SimResult:
    """Reconstruct, along the run, the intended steady pair ``(x_Ps, d_s)``,
    the state offset ``dx_s``, and the noise triple ``(w, w_d, v)`` of the
    corrected nominal model

        x(k) = x_P(k) - dx_s(k),
        x(k+1) = f(x(k), u(k), d_s(k)) + w(k),
        d_s(k+1) = d_s(k) + w_d(k),
        y(k)  = h(x(k), u(k), d_s(k)) + v(k).

    Steps where the steady-state correction does not exist get NaN rows
    (and blank CSV fields).  Returns the same result object, augmented.
    """
    if model is None or plant is None:
        model, plant = get_benchmark(result.scenario.benchmark)
    K = result.steps
    n, n_d, n_y = model.n, model.n_d, model.n_y
    ts = TargetSolver(model)
    x_ps = np.full((K + 1, n), np.nan)
    d_s = np.full((K + 1, n_d), np.nan)
    dx_s = np.full((K + 1, n), np.nan)
    cache: Dict[tuple, Optional[tuple]] = {}
    guess = None
    # the expanded signals include one step past the last logged state
    for k in range(K + 1):
        alpha = MismatchParams.of(result.r_sp[k], result.w_p[k])
        key = alpha.key()
        if key in cache:
            hit = cache[key]
        else:
            try:
                pair = solve_ssop(model, plant, alpha, target_solver=ts, guess=guess)
                hit = (pair.x_ps, pair.d_s, pair.dx_s)
                guess = (pair.x_ps, pair.d_s)
            except NoCorrection:
                hit = None
            cache[key] = hit
        if hit is not None:
            x_ps[k], d_s[k], dx_s[k] = hit
    w = np.full((K, n), np.nan)
    w_d = np.full((K, n_d), np.nan)
    v = np.full((K, n_y), np.nan)
    for k in range(K):
        if np.any(np.isnan(dx_s[k])) or np.any(np.isnan(dx_s[k + 1])):
            continue
        x_corr = result.x_p[k] - dx_s[k]
        # w via the plant map: f_P(x + dx_s, u, w_P) - f(x, u, d_s) - dx_s+
        xp_plant = plant.step(x_corr + dx_s[k], result.u[k], result.w_p[k])
        w[k] = xp_plant - model.f(x_corr, result.u[k], d_s[k]) - dx_s[k + 1]
        w_d[k] = d_s[k + 1] - d_s[k]
        v[k] = result.y[k] - model.h(x_corr, result.u[k], d_s[k])
    result.x_ps, result.d_s, result.dx_s = x_ps, d_s, dx_s
    result.noise_w, result.noise_wd, result.noise_v = w, w_d, v
    return result


# ---------------------------------------------------------------------------
# Value-function descent diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DescentReport:
    """Stepwise value-function decrease check over fixed-target segments."""

    a3: float
    checked: int
    violations: int  # steps where the decrease fails beyond the slack
    worst_violation: float  # max over steps of dV + a3|dx|^2 (<= slack when ok)
    perturbations: np.ndarray  # per-step max{0, dV + a3|dx|^2}

    @property
    def ok(self) -> bool:
        return self.violations == 0


def check_descent(
    result: SimResult,
    ocp_config: Optional[reg.OcpConfig] = None,
    k_start: int = 0,
    slack: float = 1e-6,
) -> DescentReport:
    """Check ``V(k+1) <= V(k) - a3 |x_hat(k) - x_s(k)|^2`` on every step pair
    with an unchanged target, with ``a3`` the smallest singular value of the
    stage-cost quadratic form.  Violations are counted against ``slack``;
    the per-step excess is reported either way (for perturbed runs it is a
    surrogate for the disturbance-gain term and is not asserted here)."""
    model, _ = get_benchmark(result.scenario.benchmark)
    cfg = ocp_config or _OCP_CONFIGS[result.scenario.benchmark]()
    S = reg.stage_cost_matrix(cfg, model.n, model.n_u)
    a3 = float(np.linalg.svd(S, compute_uv=False).min())
    checked = 0
    viol = 0
    worst = -np.inf
    perts = []
    for k in range(max(k_start, 0), result.steps - 1):
        if not np.allclose(result.x_s[k + 1], result.x_s[k], atol=1e-12) or not np.allclose(
            result.d_hat[k + 1], result.d_hat[k], atol=1e-12
        ):
            continue
        dv = result.v_n[k + 1] - result.v_n[k]
        excess = dv + a3 * float(result.delta_x[k] @ result.delta_x[k])
        checked += 1
        worst = max(worst, excess)
        perts.append(max(0.0, excess))
        if excess > slack:
            viol += 1
    return DescentReport(
        a3=a3, checked=checked, violations=viol,
        worst_violation=worst if checked else 0.0,
        perturbations=np.asarray(perts),
    )


def fit_error_decay(errors: np.ndarray) -> Tuple[float, float]:
    """Geometric decay fit of an error sequence: returns ``(lambda_e, rms)``
    where ``rms`` is the root-mean-square residual of the log-linear fit."""
    e = np.asarray(errors, dtype=float)
    mask = e > 0
    if mask.sum() < 2:
        return 0.0, 0.0
    kk = np.flatnonzero(mask).astype(float)
    logs = np.log(e[mask])
    coef = np.polyfit(kk, logs, 1)
    resid = logs - np.polyval(coef, kk)
    return float(np.exp(coef[0])), float(np.sqrt(np.mean(resid**2)))


def final_window_offset(result: SimResult, fraction: float = 0.1) -> float:
    """Max reference offset ``|delta_r|`` over the trailing window."""
    if result.steps == 0:
        return math.inf
    w = max(1, int(round(fraction * result.steps)))
    return float(np.abs(result.delta_r[-w:]).max())


# ---------------------------------------------------------------------------
# Built-in scenarios
# ---------------------------------------------------------------------------


def _pendulum_scenario(name, controller, channels, setpoint, steps=360, seed=0):
    return Scenario(
        name=f"{name}_{controller}", benchmark="pendulum", controller=controller,
        steps=steps, seed=seed, setpoint=setpoint, channels=channels,
    )


def _cstr_scenario(name, controller, channels, setpoint, steps=600, seed=0):
    return Scenario(
        name=f"{name}_{controller}", benchmark="cstr", controller=controller,
        steps=steps, seed=seed, setpoint=setpoint, channels=channels,
    )


_PEND_SETPOINT = {"breakpoints": [[0, math.pi], [6, 0.0], [120, math.pi / 2]]}
_PEND_DISC = {4: {"type": "constant", "value": 1.0}}
_PEND_MISMATCH = {
    0: {"type": "constant", "value": 1.0},
    1: {"type": "constant", "value": 2.0},
}
_CSTR_DISC = {4: {"type": "constant", "value": 1.0}}
_CSTR_MISMATCH = {
    0: {"type": "constant", "value": -0.05},
    1: {"type": "constant", "value": -0.05},
}


def _builtins() -> Dict[str, Scenario]:
    out = {}
    for ctl in ("ofmpc", "tmpc"):
        # pendulum: setpoint pi -> 0 -> pi/2, torque step at k=240
        out_ch = {2: {"type": "step", "value": 3.0, "at": 240}, **_PEND_DISC}
        scn = _pendulum_scenario("pendulum_exp1", ctl, out_ch, _PEND_SETPOINT)
        out[scn.name] = scn
        # + motor-gain and air-resistance mismatch
        scn = _pendulum_scenario(
            "pendulum_exp2", ctl, {**out_ch, **_PEND_MISMATCH}, _PEND_SETPOINT
        )
        out[scn.name] = scn
        # random-walk torque and measurement noise instead of the step
        scn = _pendulum_scenario(
            "pendulum_exp3", ctl,
            {
                2: {"type": "random_walk", "variance": 1e-2},
                3: {"type": "white", "variance": 1e-4},
                **_PEND_DISC, **_PEND_MISMATCH,
            },
            _PEND_SETPOINT,
        )
        out[scn.name] = scn
        # oscillating torque 1 - cos(2 pi k / 50) around the resting setpoint
        scn = _pendulum_scenario(
            "pendulum_exp4", ctl,
            {
                2: {"type": "sinusoid", "amplitude": -1.0, "period": 50.0,
                    "offset": 1.0, "phase": math.pi / 2},
                **_PEND_DISC, **_PEND_MISMATCH,
            },
            {"breakpoints": [[0, math.pi]]},
        )
        out[scn.name] = scn
        # exact-model pendulum (Euler plant, no disturbances): nominal descent
        scn = _pendulum_scenario("pendulum_nominal", ctl, {}, _PEND_SETPOINT, steps=240)
        out[scn.name] = scn

        # CSTR: coolant-temperature step at k=300, setpoint 0.65
        cstr_step = {2: {"type": "step", "value": -0.05, "at": 300}, **_CSTR_DISC}
        cstr_sp = {"breakpoints": [[0, 0.65]]}
        scn = _cstr_scenario("cstr_a", ctl, cstr_step, cstr_sp)
        out[scn.name] = scn
        scn = _cstr_scenario("cstr_b", ctl, {**cstr_step, **_CSTR_MISMATCH}, cstr_sp)
        out[scn.name] = scn
        scn = _cstr_scenario(
            "cstr_c", ctl,
            {
                2: {"type": "random_walk", "variance": 1e-6},
                3: {"type": "white", "variance": 1e-6},
                **_CSTR_DISC, **_CSTR_MISMATCH,
            },
            cstr_sp,
        )
        out[scn.name] = scn
        scn = _cstr_scenario(
            "cstr_d", ctl, {**cstr_step, **_CSTR_MISMATCH},
            {"waveform": {"type": "sinusoid", "amplitude": 0.05, "period": 90.0,
                          "offset": 0.65}},
        )
        out[scn.name] = scn
    return out


def list_builtin_scenarios() -> List[str]:
    return sorted(_builtins())


def builtin_scenario(name: str) -> Scenario:
    table = _builtins()
    try:
        return table[name]
    except KeyError as exc:
        raise ScenarioError(
            f"unknown built-in scenario {name!r}; choose from {sorted(table)}"
        ) from exc


# ---------------------------------------------------------------------------
# CSV / JSON output
# ---------------------------------------------------------------------------


def _vec_cols(prefix: str, size: int) -> List[str]:
    return [f"{prefix}_{i + 1}" for i in range(size)]


def trajectory_columns(model: SystemModel) -> List[str]:
    """Fixed CSV column order for one benchmark (documented in the README)."""
    cols = ["k"]
    cols += _vec_cols("x_P", model.n)
    cols += _vec_cols("y", model.n_y)
    cols += _vec_cols("u", model.n_u)
    cols += _vec_cols("x_hat", model.n)
    cols += _vec_cols("d_hat", model.n_d)
    cols += _vec_cols("r_sp", model.n_r)
    cols += _vec_cols("x_s", model.n)
    cols += _vec_cols("u_s", model.n_u)
    cols += ["V_N", "V_s"]
    cols += _vec_cols("delta_r", model.n_r)
    cols += _vec_cols("delta_x", model.n)
    cols += ["mhe_status", "ocp_status", "ocp_iterations"]
    cols += _vec_cols("w_P", N_CHANNELS)
    cols += _vec_cols("x_Ps", model.n)
    cols += _vec_cols("d_s", model.n_d)
    cols += _vec_cols("dx_s", model.n)
    cols += _vec_cols("w", model.n)
    cols += _vec_cols("w_d", model.n_d)
    cols += _vec_cols("v", model.n_y)
    return cols


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return ""
        return repr(float(value))
    return str(value)


def write_trajectory_csv(result: SimResult, path_or_buf) -> None:
    """Write the trajectory with shortest round-trip float formatting.

    Missing values (mismatch metadata when the correction does not exist, or
    before :func:`compute_mismatch_noise` runs) are left blank."""
    model, _ = get_benchmark(result.scenario.benchmark)
    cols = trajectory_columns(model)
    K = result.steps

    def opt(arr, k, size):
        if arr is None:
            return [float("nan")] * size
        return list(arr[k])

    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        fh.write(",".join(cols) + "\n")
        for k in range(K):
            row = [k]
            row += list(result.x_p[k])
            row += list(result.y[k])
            row += list(result.u[k])
            row += list(result.x_hat[k])
            row += list(result.d_hat[k])
            row += list(result.r_sp[k])
            row += list(result.x_s[k])
            row += list(result.u_s[k])
            row += [result.v_n[k], result.v_s[k]]
            row += list(result.delta_r[k])
            row += list(result.delta_x[k])
            row += [result.mhe_status[k], result.ocp_status[k], int(result.ocp_iterations[k])]
            row += list(result.w_p[k])
            row += opt(result.x_ps, k, model.n)
            row += opt(result.d_s, k, model.n_d)
            row += opt(result.dx_s, k, model.n)
            row += opt(result.noise_w, k, model.n)
            row += opt(result.noise_wd, k, model.n_d)
            row += opt(result.noise_v, k, model.n_y)
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    finally:
        if own:
            fh.close()


def summarize(result: SimResult) -> dict:
    """Summary statistics of one run: final offsets, estimator decay fit,
    descent diagnostics, and solver statistics."""
    err = np.linalg.norm(result.x_hat - result.x_p[: result.steps], axis=1) if result.steps else []
    lam, resid = fit_error_decay(err)
    descent = check_descent(result)
    statuses: Dict[str, int] = {}
    for s in result.ocp_status:
        statuses[s] = statuses.get(s, 0) + 1
    mhe_statuses: Dict[str, int] = {}
    for s in result.mhe_status:
        mhe_statuses[s] = mhe_statuses.get(s, 0) + 1
    return {
        "scenario": result.scenario.name,
        "benchmark": result.scenario.benchmark,
        "controller": result.scenario.controller,
        "steps": result.steps,
        "failure": result.failure,
        "final_offset": {
            "max_abs_delta_r_last_10pct": final_window_offset(result),
            "final_delta_r": (
                [float(v) for v in result.delta_r[-1]] if result.steps else None
            ),
            "final_d_hat": (
                [float(v) for v in result.d_hat[-1]] if result.steps else None
            ),
        },
        "estimator": {"lambda_e": lam, "fit_rms": resid},
        "descent": {
            "a3": descent.a3,
            "checked": descent.checked,
            "violations": descent.violations,
            "worst_violation": descent.worst_violation,
        },
        "solver": {
            "ocp_statuses": statuses,
            "ocp_iterations_total": int(result.ocp_iterations.sum()),
            "mhe_statuses": mhe_statuses,
        },
    }


def write_summary_json(result: SimResult, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(summarize(result), fh, indent=1, sort_keys=True)
        fh.write("\n")
