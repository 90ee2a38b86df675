"""Benchmark model and plant definitions: integrators, Jacobians, domains."""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ofmpc.models import (
    CSTR_DT,
    PEND_DT,
    PEND_K,
    DomainError,
    IntegrationBlowupError,
    MismatchParams,
    TargetParams,
    cstr_model,
    cstr_plant,
    get_benchmark,
    pendulum_model,
    pendulum_plant,
    rk4_step,
)


def fd_jac(fun, x, h=1e-6):
    x = np.asarray(x, float)
    f0 = np.atleast_1d(fun(x))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        hi = h * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += hi
        xm[i] -= hi
        J[:, i] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2 * hi)
    return J


# ---------------------------------------------------------------------------
# rk4_step
# ---------------------------------------------------------------------------


def test_rk4_matches_exponential_to_fifth_order():
    # xdot = a x has exact solution x0 * exp(a dt); RK4 error is O(dt^5)
    a = -1.7
    x0 = np.array([2.0])
    dt = 0.05
    out = rk4_step(lambda x, u, w: a * x, x0, None, None, dt)
    exact = x0 * math.exp(a * dt)
    # local truncation error is (a dt)^5 / 5! per step
    assert abs(out[0] - exact[0]) < 2.0 * abs(a * dt) ** 5 / 120
    # RK4 reproduces the Taylor series of exp through dt^4 exactly
    series = x0[0] * sum((a * dt) ** j / math.factorial(j) for j in range(5))
    assert abs(out[0] - series) < 1e-12


def test_rk4_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        rk4_step(lambda x, u, w: x, np.zeros(1), None, None, 0.0)
    with pytest.raises(ValueError):
        rk4_step(lambda x, u, w: x, np.zeros(1), None, None, -0.1)


def test_rk4_raises_on_nonfinite_state():
    with pytest.raises(IntegrationBlowupError):
        rk4_step(lambda x, u, w: np.array([np.inf]), np.zeros(1), None, None, 0.1)


def test_rk4_does_not_mutate_input():
    x0 = np.array([1.0, 2.0])
    keep = x0.copy()
    rk4_step(lambda x, u, w: -x, x0, None, None, 0.1)
    assert np.array_equal(x0, keep)


# ---------------------------------------------------------------------------
# Plant discretization blend
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("make_plant", [pendulum_plant, cstr_plant])
def test_plant_step_switch_off_gives_euler(make_plant):
    plant = make_plant()
    x = np.array([0.7, 0.4])
    u = np.array([0.3])
    w = np.zeros(5)
    euler = x + plant.dt * np.asarray(plant.rhs(x, u, w), float)
    assert np.allclose(plant.step(x, u, w), euler, atol=0, rtol=0)


def test_plant_step_switch_on_matches_fine_integration():
    plant = pendulum_plant()
    x = np.array([2.0, -0.5])
    u = np.array([0.2])
    w = np.zeros(5)
    w[4] = 1.0
    out = plant.step(x, u, w)
    ref = solve_ivp(
        lambda t, s: plant.rhs(s, u, w),
        (0.0, plant.dt),
        x,
        rtol=1e-12,
        atol=1e-12,
    ).y[:, -1]
    assert np.max(np.abs(out - ref)) < 1e-8


def test_plant_step_switch_interpolates_linearly():
    # the switch channel scales the (RK4 - Euler) residual linearly
    plant = pendulum_plant()
    x = np.array([1.0, 0.3])
    u = np.array([-0.4])
    w0, w1, wh = np.zeros(5), np.zeros(5), np.zeros(5)
    w1[4] = 1.0
    wh[4] = 0.5
    a = plant.step(x, u, w0)
    b = plant.step(x, u, w1)
    c = plant.step(x, u, wh)
    assert np.allclose(c, 0.5 * (a + b), atol=1e-14)


# ---------------------------------------------------------------------------
# Model <-> plant consistency through the disturbance embedding
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["pendulum", "cstr"])
def test_model_f_equals_euler_plant_with_embedded_disturbance(name, rng):
    model, plant = get_benchmark(name)
    for _ in range(25):
        if name == "pendulum":
            x = rng.uniform(-3, 3, size=2)
        else:
            x = rng.uniform([0.1, 0.3], [0.95, 0.9])
        u = rng.uniform(model.u_lo, model.u_hi)
        d = rng.uniform(model.d_lo, model.d_hi) * 0.2
        w = model.w_embed(d)
        assert np.allclose(model.f(x, u, d), plant.step(x, u, w), atol=1e-12)
        assert np.allclose(model.h(x, u, d), plant.h_p(x, u, w), atol=1e-12)


def test_pendulum_model_euler_map():
    model = pendulum_model()
    x = np.array([0.4, -1.1])
    u, d = np.array([0.25]), np.array([0.7])
    expect = np.array(
        [
            x[0] + PEND_DT * x[1],
            x[1] + PEND_DT * (math.sin(x[0]) + PEND_K * u[0] + d[0]),
        ]
    )
    assert np.allclose(model.f(x, u, d), expect, atol=0)
    assert model.h(x, u, d)[0] == x[0]
    assert PEND_DT == 0.1 and CSTR_DT == 1.0


# ---------------------------------------------------------------------------
# Analytic Jacobians vs central differences
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["pendulum", "cstr"])
def test_model_jacobians_match_finite_differences(name, rng):
    model, _ = get_benchmark(name)
    for _ in range(10):
        if name == "pendulum":
            x = rng.uniform(-3, 3, size=2)
        else:
            x = rng.uniform([0.2, 0.35], [0.9, 0.85])
        u = rng.uniform(model.u_lo, model.u_hi)
        d = rng.uniform(model.d_lo, model.d_hi) * 0.3
        fx, fu, fd = model.jac_f(x, u, d)
        assert np.allclose(fx, fd_jac(lambda xx: model.f(xx, u, d), x), atol=1e-6)
        assert np.allclose(fu, fd_jac(lambda uu: model.f(x, uu, d), u), atol=1e-6)
        assert np.allclose(fd, fd_jac(lambda dd: model.f(x, u, dd), d), atol=1e-6)
        hx, hu, hd = model.jac_h(x, u, d)
        assert np.allclose(hx, fd_jac(lambda xx: model.h(xx, u, d), x), atol=1e-7)
        assert np.allclose(hu, fd_jac(lambda uu: model.h(x, uu, d), u), atol=1e-7)
        assert np.allclose(hd, fd_jac(lambda dd: model.h(x, u, dd), d), atol=1e-7)


# ---------------------------------------------------------------------------
# Boxes, domains, lookup
# ---------------------------------------------------------------------------


def test_clip_u_enforces_input_box():
    model = pendulum_model()
    assert model.clip_u(np.array([3.0]))[0] == 1.0
    assert model.clip_u(np.array([-3.0]))[0] == -1.0
    assert model.clip_u(np.array([0.5]))[0] == 0.5


def test_pendulum_disturbance_box_keeps_targets_feasible():
    # |sin r + d| <= 5 over the whole box, so u_s = -(sin r + d)/5 stays in [-1,1]
    model = pendulum_model()
    assert model.d_hi[0] <= PEND_K - 1.0
    assert model.d_lo[0] >= -(PEND_K - 1.0)


def test_cstr_domain_check_rejects_nonpositive_temperature():
    model = cstr_model()
    model.check_domain(np.array([0.5, 0.4]))  # fine
    with pytest.raises(DomainError):
        model.check_domain(np.array([0.5, 0.0]))
    with pytest.raises(DomainError):
        model.check_domain(np.array([0.5, -0.1]))


def test_cstr_model_fixed_point_at_nominal_operating_point():
    # the nominal initial condition is (near) a steady state of the model
    model = cstr_model()
    x = np.array([0.9831, 0.3918])
    u = np.array([0.8305])
    assert np.max(np.abs(model.f(x, u, np.zeros(1)) - x)) < 1e-3


def test_get_benchmark_rejects_unknown_name():
    with pytest.raises(KeyError):
        get_benchmark("tank")


def test_target_params_helpers():
    beta = TargetParams.of(1.5, d=0.25)
    assert beta.key() == ((1.5,), (0.0,), (0.0,), (0.25,))
    beta2 = beta.with_d(0.5)
    assert beta2.d[0] == 0.5 and beta2.r_sp[0] == 1.5
    alpha = MismatchParams.of(1.5, np.array([1.0, 2.0, 3.0, 0.0, 1.0]))
    assert alpha.target_params(0.25).key() == beta.key()
