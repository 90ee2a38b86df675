"""Moving-horizon estimator: window semantics, recovery, least-squares oracle."""

import numpy as np
import pytest

from ofmpc.estimator import (
    EstimateState,
    MheConfig,
    cstr_mhe_config,
    estimate_error_decay,
    mhe_update,
    pendulum_mhe_config,
)
from ofmpc.models import SystemModel, get_benchmark


def simulate_model(model, x0, d, inputs):
    """Trajectory and exact measurements of the controller model."""
    x = [np.asarray(x0, float)]
    y = []
    for u in inputs:
        y.append(model.h(x[-1], u, d))
        x.append(model.f(x[-1], u, d))
    return np.array(x), np.array(y)


def run_estimator(model, config, inputs, measurements, x_prior):
    est = None
    for k in range(1, len(inputs) + 1):
        T_k = min(k, config.T)
        est = mhe_update(
            model, config, k, inputs[k - T_k : k], measurements[k - T_k : k], x_prior, est
        )
    return est


def test_first_update_returns_prior():
    model, _ = get_benchmark("pendulum")
    est = mhe_update(model, pendulum_mhe_config(), 0, np.zeros((0, 1)), np.zeros((0, 1)),
                     np.array([0.4, -0.2]))
    assert np.array_equal(est.x_hat, [0.4, -0.2])
    assert np.array_equal(est.d_hat, [0.0])
    assert est.x_win.shape == (1, 2)


def test_window_grows_until_horizon_then_saturates():
    model, _ = get_benchmark("pendulum")
    config = pendulum_mhe_config()
    rng = np.random.default_rng(0)
    inputs = rng.uniform(-1, 1, size=(12, 1))
    _, y = simulate_model(model, [0.3, 0.0], np.array([0.5]), inputs)
    est = None
    for k in range(1, 13):
        T_k = min(k, config.T)
        est = mhe_update(model, config, k, inputs[k - T_k : k], y[k - T_k : k],
                         np.array([0.3, 0.0]), est)
        assert est.x_win.shape[0] == T_k + 1


def test_exact_data_recovers_state_and_disturbance():
    model, _ = get_benchmark("pendulum")
    config = pendulum_mhe_config()
    d_true = np.array([0.8])
    rng = np.random.default_rng(1)
    inputs = rng.uniform(-1, 1, size=(15, 1))
    x, y = simulate_model(model, [0.5, -0.1], d_true, inputs)
    est = run_estimator(model, config, inputs, y, np.array([0.5, -0.1]))
    # right-edge estimate is the state at time k (one step past the last y)
    assert np.max(np.abs(est.x_hat - x[15])) < 1e-6
    assert abs(est.d_hat[0] - d_true[0]) < 1e-6
    assert not est.stalled


def test_wrong_prior_is_forgotten_with_exact_data():
    # no arrival cost: the window is fit to the data alone, so a bad prior
    # only seeds the first iterate
    model, _ = get_benchmark("pendulum")
    config = pendulum_mhe_config()
    rng = np.random.default_rng(2)
    inputs = rng.uniform(-1, 1, size=(15, 1))
    x, y = simulate_model(model, [0.5, -0.1], np.array([0.3]), inputs)
    est = run_estimator(model, config, inputs, y, np.array([2.0, 1.0]))
    assert np.max(np.abs(est.x_hat - x[15])) < 1e-5
    assert abs(est.d_hat[0] - 0.3) < 1e-5


def test_state_only_mode_pins_disturbance_to_zero():
    model, _ = get_benchmark("pendulum")
    config = pendulum_mhe_config(augmented=False)
    rng = np.random.default_rng(3)
    inputs = rng.uniform(-1, 1, size=(8, 1))
    _, y = simulate_model(model, [0.5, 0.0], np.array([0.7]), inputs)
    est = run_estimator(model, config, inputs, y, np.array([0.5, 0.0]))
    assert np.array_equal(est.d_hat, np.zeros(1))
    assert np.array_equal(est.d_win, np.zeros_like(est.d_win))


def test_disturbance_estimate_clipped_at_model_box():
    # data generated with d = 6, outside the model's disturbance box [-4, 4]
    model, _ = get_benchmark("pendulum")
    config = pendulum_mhe_config()
    rng = np.random.default_rng(4)
    inputs = rng.uniform(-1, 1, size=(10, 1))
    _, y = simulate_model(model, [0.5, 0.0], np.array([6.0]), inputs)
    est = run_estimator(model, config, inputs, y, np.array([0.5, 0.0]))
    assert est.d_hat[0] <= model.d_hi[0] + 1e-12
    assert est.at_bound


def test_linear_model_matches_normal_equations_oracle():
    # scalar linear system: the MHE problem is an ordinary least-squares fit,
    # solvable directly from the stacked affine residual
    a, b = 0.9, 1.0
    model = SystemModel(
        name="lin", n=1, n_u=1, n_y=1, n_d=1, n_r=1,
        f=lambda x, u, d: np.array([a * x[0] + b * u[0] + d[0]]),
        h=lambda x, u, d: np.array([x[0]]),
        g=lambda u, y: np.asarray(y, float).copy(),
        u_lo=np.array([-10.0]), u_hi=np.array([10.0]),
        f_jac=lambda x, u, d: (np.array([[a]]), np.array([[b]]), np.array([[1.0]])),
        h_jac=lambda x, u, d: (np.eye(1), np.zeros((1, 1)), np.zeros((1, 1))),
    )
    config = MheConfig(T=4, Q_w=np.array([[1e-2]]), Q_d=np.array([[0.5]]),
                       R_v=np.array([[2.0]]), augmented=True)
    rng = np.random.default_rng(5)
    T = 4
    u = rng.uniform(-1, 1, size=(T, 1))
    y = rng.standard_normal((T, 1))  # deliberately inconsistent data

    est = mhe_update(model, config, T, u, y, np.array([0.0]))

    # oracle: stack the weighted residual rows r(z) = M z - c and solve
    Wq, Wd, Wr = 1e-2**-0.5, 0.5**-0.5, 2.0**-0.5
    m = 2 * (T + 1)  # (x_0..x_T, d_0..d_T)
    M = np.zeros((3 * T, m))
    c = np.zeros(3 * T)
    for j in range(T):
        r = 3 * j
        M[r, j + 1], M[r, j], M[r, T + 1 + j] = Wq, -Wq * a, -Wq
        c[r] = Wq * b * u[j, 0]
        M[r + 1, T + 1 + j + 1], M[r + 1, T + 1 + j] = Wd, -Wd
        M[r + 2, j] = -Wr
        c[r + 2] = -Wr * y[j, 0]
    assert np.linalg.matrix_rank(M) == m  # well-posed fit
    z_star = np.linalg.lstsq(M, c, rcond=None)[0]
    assert abs(est.x_hat[0] - z_star[T]) < 1e-7
    assert abs(est.d_hat[0] - z_star[-1]) < 1e-7
    assert abs(est.value - float((M @ z_star - c) @ (M @ z_star - c))) < 1e-9


def test_estimate_error_decay_fits_geometric_sequence():
    k = np.arange(20)
    errors = 3.0 * 0.5**k
    assert abs(estimate_error_decay(errors) - 0.5) < 1e-12
    assert estimate_error_decay(np.zeros(5)) == 0.0
    assert estimate_error_decay(np.array([1.0])) == 0.0


def test_benchmark_configs():
    p = pendulum_mhe_config()
    assert p.T == 5 and p.augmented
    c = cstr_mhe_config(augmented=False)
    assert c.T == 150 and not c.augmented
