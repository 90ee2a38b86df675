"""Finite-horizon regulator: cost oracle, feasibility, warm starting."""

import numpy as np
import pytest

from ofmpc.models import TargetParams, get_benchmark
from ofmpc.regulator import (
    OcpConfig,
    cstr_ocp_config,
    kappa_N,
    pendulum_ocp_config,
    shift_warm_start,
    solve_fhocp,
    stage_cost_matrix,
)
from ofmpc.sstp import TargetSolver


def pendulum_setup(pendulum_design, r=1.0, d=0.2):
    model, _ = get_benchmark("pendulum")
    config = pendulum_ocp_config()
    target = TargetSolver(model)(TargetParams.of(r, d=d))
    return model, config, target, np.atleast_1d(d)


def direct_cost(model, config, design, target, d, u_seq, x_seq, u_prev):
    """Evaluate the objective directly from its definition."""
    Q = np.atleast_2d(config.Q)
    R = np.atleast_2d(config.R)
    SD = np.atleast_2d(config.S_du)
    x_s, u_s = target.x_s, target.u_s
    total = 0.0
    up = u_prev
    for k in range(u_seq.shape[0]):
        dx = x_seq[k] - x_s
        du = u_seq[k] - u_s
        rate = u_seq[k] - up
        total += dx @ Q @ dx + du @ R @ du + rate @ SD @ rate
        up = u_seq[k]
    dxN = x_seq[-1] - x_s
    pair = design.pair_at(target, d)
    return total + float(dxN @ pair.P_f @ dxN)


def test_stage_cost_matrix_reproduces_cost_terms(rng):
    config = pendulum_ocp_config()
    S = stage_cost_matrix(config, 2, 1)
    assert np.allclose(S, S.T)
    assert np.min(np.linalg.eigvalsh(S)) >= 0.0
    for _ in range(20):
        dx = rng.standard_normal(2)
        dup = rng.standard_normal(1)
        du = rng.standard_normal(1)
        v = np.concatenate([dx, dup, du])
        expect = (
            dx @ config.Q @ dx
            + du @ config.R @ du
            + (du - dup) @ config.S_du @ (du - dup)
        )
        assert abs(v @ S @ v - expect) < 1e-12


def test_solution_at_target_is_stationary(pendulum_design):
    model, config, target, d = pendulum_setup(pendulum_design)
    sol = solve_fhocp(model, config, pendulum_design, target.x_s, target.u_s, target, d)
    assert sol.feasible
    assert sol.value < 1e-12
    assert np.max(np.abs(sol.u_seq - target.u_s)) < 1e-6
    assert np.max(np.abs(sol.x_seq - target.x_s)) < 1e-6


def test_solution_respects_dynamics_and_terminal_region(pendulum_design):
    model, config, target, d = pendulum_setup(pendulum_design)
    x0 = target.x_s + np.array([0.3, -0.2])
    sol = solve_fhocp(model, config, pendulum_design, x0, np.zeros(1), target, d)
    assert sol.feasible
    assert np.array_equal(sol.x_seq[0], x0)
    # reported states satisfy the model dynamics to solver tolerance
    for k in range(config.N):
        defect = sol.x_seq[k + 1] - model.f(sol.x_seq[k], sol.u_seq[k], d)
        assert np.max(np.abs(defect)) < 1e-7
    # terminal state inside the region, inputs inside the box
    assert sol.terminal_value <= pendulum_design.c_f + 1e-8
    assert np.all(sol.u_seq >= model.u_lo - 1e-12)
    assert np.all(sol.u_seq <= model.u_hi + 1e-12)


def test_reported_value_matches_direct_cost_evaluation(pendulum_design):
    model, config, target, d = pendulum_setup(pendulum_design)
    x0 = target.x_s + np.array([0.25, 0.1])
    u_prev = np.array([0.1])
    sol = solve_fhocp(model, config, pendulum_design, x0, u_prev, target, d)
    assert sol.feasible
    direct = direct_cost(model, config, pendulum_design, target, d, sol.u_seq, sol.x_seq, u_prev)
    assert abs(sol.value - direct) < 1e-8 * max(1.0, direct)


def test_optimality_beats_perturbed_input_sequences(pendulum_design, rng):
    # any dynamics-consistent perturbation of the minimizer must not be cheaper
    model, config, target, d = pendulum_setup(pendulum_design)
    x0 = target.x_s + np.array([0.2, 0.0])
    u_prev = np.zeros(1)
    sol = solve_fhocp(model, config, pendulum_design, x0, u_prev, target, d)
    assert sol.feasible
    for _ in range(10):
        u_pert = np.clip(
            sol.u_seq + 1e-3 * rng.standard_normal(sol.u_seq.shape), model.u_lo, model.u_hi
        )
        xs = [x0]
        for k in range(config.N):
            xs.append(model.f(xs[-1], u_pert[k], d))
        cost = direct_cost(
            model, config, pendulum_design, target, d, u_pert, np.array(xs), u_prev
        )
        assert cost >= sol.value - 1e-9


def test_kappa_n_returns_first_input_copy(pendulum_design):
    model, config, target, d = pendulum_setup(pendulum_design)
    sol = solve_fhocp(
        model, config, pendulum_design, target.x_s + np.array([0.1, 0.0]),
        np.zeros(1), target, d,
    )
    u0 = kappa_N(sol)
    assert np.array_equal(u0, sol.u_seq[0])
    u0[0] = 99.0
    assert sol.u_seq[0, 0] != 99.0


def test_shift_warm_start_appends_terminal_law(pendulum_design):
    model, config, target, d = pendulum_setup(pendulum_design)
    sol = solve_fhocp(
        model, config, pendulum_design, target.x_s + np.array([0.2, -0.1]),
        np.zeros(1), target, d,
    )
    warm = shift_warm_start(model, pendulum_design, sol, target, d)
    assert warm.shape == sol.u_seq.shape
    assert np.array_equal(warm[:-1], sol.u_seq[1:])
    tail = pendulum_design.kappa_f(sol.x_seq[-1], target, d)
    assert np.array_equal(warm[-1], tail)


def test_warm_started_resolve_agrees_with_cold(pendulum_design):
    model, config, target, d = pendulum_setup(pendulum_design)
    x0 = target.x_s + np.array([0.15, 0.05])
    cold = solve_fhocp(model, config, pendulum_design, x0, np.zeros(1), target, d)
    warm = solve_fhocp(
        model, config, pendulum_design, x0, np.zeros(1), target, d,
        warm_start=cold.u_seq,
    )
    assert warm.feasible
    assert abs(warm.value - cold.value) < 1e-8 * max(1.0, cold.value)
    assert warm.iterations <= cold.iterations


def test_closed_loop_cost_decreases_one_step(pendulum_design):
    # nominal descent: applying the first input and re-solving cannot
    # increase the optimal cost (up to solver slack)
    model, config, target, d = pendulum_setup(pendulum_design, r=0.8, d=0.0)
    x = target.x_s + np.array([0.3, 0.1])
    u_prev = np.zeros(1)
    sol = solve_fhocp(model, config, pendulum_design, x, u_prev, target, d)
    assert sol.feasible
    for _ in range(5):
        u = kappa_N(sol)
        x = model.f(x, u, d)
        nxt = solve_fhocp(
            model, config, pendulum_design, x, u, target, d,
            warm_start=shift_warm_start(model, pendulum_design, sol, target, d),
        )
        assert nxt.feasible
        assert nxt.value <= sol.value + 1e-9
        sol, u_prev = nxt, u


def test_cstr_cold_start_reaches_ignited_branch(cstr_design):
    # from the un-ignited initial state, the regulator must find the branch
    # that actually reaches the high-conversion target within the horizon
    model, _ = get_benchmark("cstr")
    config = cstr_ocp_config()
    target = TargetSolver(model)(TargetParams.of(0.65, d=0.0))
    x0 = np.array([0.9831, 0.3918])
    sol = solve_fhocp(model, config, cstr_design, x0, np.array([0.8305]), target, np.zeros(1))
    assert sol.feasible
    assert sol.terminal_value <= cstr_design.c_f + 1e-8
    assert np.max(np.abs(sol.x_seq[-1] - target.x_s)) < 1e-6


def test_benchmark_configs():
    p = pendulum_ocp_config()
    assert p.N == 20
    c = cstr_ocp_config()
    assert c.N == 150
