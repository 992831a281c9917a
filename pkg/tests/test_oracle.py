import dataclasses

import numpy as np
import pytest

from dkf_ode import NonUniqueMinimumError, TimeGrid, brute_force_fixed_x0, brute_force_min, integrate_adjoint, smooth_trajectory
from dkf_ode.oracle import discretize_lq, lq_cost
from dkf_ode.verify import check_instance, random_instances, scalar_model

from conftest import exact_signal


def wave(t):
    t = np.atleast_1d(np.asarray(t, float))
    return np.column_stack([0.5 + np.sin(2.5 * t) - 0.3 * t**2])


def richardson(fn, N):
    a, b = fn(N // 2), fn(N)
    return (4 * b - a) / 3


def test_exact_model_signal_has_zero_cost():
    m = scalar_model(2.0)
    sig = exact_signal(m, [0.8], [1.5])
    res = brute_force_min(m, [0.8], 1.0, None, sig, N=50)
    assert res.cost < 1e-12
    np.testing.assert_allclose(res.x0, [1.5], atol=1e-6)
    np.testing.assert_allclose(res.u, 0.0, atol=1e-6)


def test_grid_convergence():
    m = scalar_model(1.0)
    c100 = brute_force_min(m, [1.0], 1.0, None, wave, N=100).cost
    c200 = brute_force_min(m, [1.0], 1.0, None, wave, N=200).cost
    assert abs(c100 - c200) <= 1e-4 * (1 + c200)


def test_euler_lagrange_closed_form():
    # x' = u, x(0) = 0, zeta = 1: y = x - 1 solves lam y'' = y, y(0) = -1, y'(T) = 0,
    # and the minimal cost is sqrt(lam) tanh(T / sqrt(lam))
    m = scalar_model(1.0)
    one = lambda t: np.ones((np.size(t), 1))
    for lam in (0.1, 1.0, 10.0):
        exact = np.sqrt(lam) * np.tanh(1.0 / np.sqrt(lam))
        cost = richardson(lambda N: brute_force_fixed_x0(m, [0.0], lam, [0.0], one, N=N).cost, 200)
        assert cost == pytest.approx(exact, rel=1e-6)


def test_singular_gramian_is_reported(toy):
    m = dataclasses.replace(toy, T=5.0)
    with pytest.raises(NonUniqueMinimumError):
        brute_force_min(m, [0.0, 0.0], 1.0, None, lambda t: np.ones((np.size(t), 2)), N=20)
    # a positive prior restores uniqueness
    brute_force_min(m, [0.0, 0.0], 1.0, np.eye(3), lambda t: np.ones((np.size(t), 2)), N=20)


def test_fixed_x0_at_minimizer_reproduces_minimum():
    m = scalar_model(1.5)
    full = brute_force_min(m, [0.4], 0.5, None, wave, N=80)
    fixed = brute_force_fixed_x0(m, [0.4], 0.5, full.x0, wave, N=80)
    assert fixed.cost == pytest.approx(full.cost, rel=1e-10)
    np.testing.assert_allclose(fixed.u, full.u, atol=1e-8)


def test_large_penalty_approaches_free_response():
    m = scalar_model(1.0)
    x0 = [0.7]
    fixed = brute_force_fixed_x0(m, [1.0], 1e6, x0, wave, N=100)
    free = lq_cost(m, [1.0], 1e6, None, wave, x0)
    assert fixed.cost == pytest.approx(free, rel=1e-2)
    assert fixed.cost <= free


def test_quadratic_form_matches_direct_quadrature(toy):
    m = dataclasses.replace(toy, T=4.0)
    zeta = lambda t: np.column_stack([np.sin(np.atleast_1d(t)), np.cos(np.atleast_1d(t))])
    prob = discretize_lq(m, [0.3, 0.2], 2.0, np.eye(3), zeta, N=40)
    rng = np.random.default_rng(0)
    x0, u = rng.standard_normal(3), rng.standard_normal((40, 3))
    res = brute_force_min(m, [0.3, 0.2], 2.0, np.eye(3), zeta, N=40)
    direct = lq_cost(m, [0.3, 0.2], 2.0, np.eye(3), zeta, x0, res.u_at, TimeGrid.uniform(4.0, 40 * 64 + 1))
    assert prob.cost(x0, res.u) == pytest.approx(direct, rel=1e-3)
    assert prob.cost(x0, u) > res.cost


def test_profiling_consistency():
    """Grid search over x0 of the fixed-x0 cost plus the prior finds the closed-form x0."""
    m = scalar_model(1.0)
    lam, q = 1.0, 0.5
    path = integrate_adjoint(m, [1.0], lam, [[q]], wave, TimeGrid.uniform(1.0, 2001))
    x_hat = smooth_trajectory(m, [1.0], lam, path).x0_hat[0]
    xs = np.linspace(x_hat - 0.5, x_hat + 0.5, 41)
    costs = [brute_force_fixed_x0(m, [1.0], lam, [x], wave, N=100).cost + q * x * x for x in xs]
    assert abs(xs[int(np.argmin(costs))] - x_hat) <= 0.5 * (xs[1] - xs[0]) + 1e-3


def test_u_at_is_piecewise_constant():
    m = scalar_model(1.0)
    res = brute_force_min(m, [1.0], 1.0, None, wave, N=10)
    np.testing.assert_array_equal(res.u_at([0.05, 0.15, 0.95, 1.0]), res.u[[0, 1, 9, 9]])


def test_single_instance_check():
    inst = next(iter(random_instances(1, seed=5)))
    chk = check_instance(*inst, N=100)
    assert chk.passed, chk
