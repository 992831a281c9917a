import numpy as np
import pytest

from dkf_ode import (
    EstimatorOptions,
    NonConvergenceError,
    ObservabilityError,
    TimeGrid,
    estimate_dkf,
    estimate_nls,
    fit_regression_spline,
    gcv_select_knots,
    grad_S,
    observation_times,
    select_lambda,
    simulate_observations,
)
from dkf_ode.dkf import SampledSignal
from dkf_ode.estimators import _augmented_sweep, initial_state_lstsq, prediction_sse
from dkf_ode.integrate import default_grid, duhamel_solution

from conftest import exact_signal


@pytest.fixture(scope="module")
def noiseless(toy):
    t = observation_times(200, 100.0)
    obs = simulate_observations(toy, toy.theta_star, toy.x0_star, t, 0.0)
    grid = default_grid(100.0, obs.n, t)
    return obs, grid, SampledSignal(exact_signal(toy, toy.theta_star, toy.x0_star), grid)


@pytest.fixture(scope="module")
def noisy(toy):
    t = observation_times(200, 100.0)
    obs = simulate_observations(toy, toy.theta_star, toy.x0_star, t, 3.0, seed=42)
    basis, _ = gcv_select_knots(obs, [4])
    return obs, default_grid(100.0, obs.n, t), fit_regression_spline(obs, basis)


def _box(theta, lo=0.1, hi=10.0):
    return np.column_stack([theta * lo, theta * hi])


def test_dkf_exact_data_from_truth(toy, noiseless):
    obs, grid, zeta = noiseless
    est = estimate_dkf(toy, obs, zeta, 1e8, EstimatorOptions(n_starts=1), theta_init=toy.theta_star, grid=grid)
    np.testing.assert_allclose(est.theta_hat, toy.theta_star, rtol=1e-4)
    assert est.S_final <= 1e-6 * est.initial_objective + 1e-8
    assert est.converged and est.lambda_used == 1e8
    np.testing.assert_allclose(est.x0_hat, toy.x0_star, atol=1e-3)


def test_dkf_exact_data_from_far_start(toy, noiseless):
    obs, grid, zeta = noiseless
    opts = EstimatorOptions(n_starts=1, bounds=_box(toy.theta_star), keep_trace=True)
    est = estimate_dkf(toy, obs, zeta, 1e8, opts, theta_init=2 * toy.theta_star, grid=grid)
    np.testing.assert_allclose(est.theta_hat, toy.theta_star, rtol=1e-3)
    assert est.S_final < est.initial_objective
    assert len(est.trace) > 0
    # first-order optimality at the located minimizer
    g = grad_S(toy, est.theta_hat, 1e8, None, zeta, grid)
    assert np.max(np.abs(g.grad * est.theta_hat)) <= 1e-4 * (1 + est.initial_objective)


def test_nls_exact_data(toy, noiseless):
    obs, grid, _ = noiseless
    opts = EstimatorOptions(n_starts=1, bounds=_box(toy.theta_star))
    at_truth = estimate_nls(toy, obs, toy.theta_star, toy.x0_star, opts, grid)
    np.testing.assert_allclose(at_truth.theta_hat, toy.theta_star, rtol=1e-10)
    assert at_truth.RSS_final < 1e-16
    far = estimate_nls(toy, obs, 2 * toy.theta_star, None, opts, grid)
    np.testing.assert_allclose(far.theta_hat, toy.theta_star, rtol=1e-3)
    np.testing.assert_allclose(far.x0_hat, toy.x0_star, atol=1e-3 * 100)
    assert far.converged


def test_dkf_and_nls_agree_for_large_penalty(toy):
    t = observation_times(200, 100.0)
    obs = simulate_observations(toy, toy.theta_star, toy.x0_star, t, 0.0)
    grid = default_grid(100.0, obs.n, t)
    basis, _ = gcv_select_knots(obs, range(4, 21))
    smooth = fit_regression_spline(obs, basis)
    opts = EstimatorOptions(n_starts=1, bounds=_box(toy.theta_star))
    dkf = estimate_dkf(toy, obs, smooth, 1e9, opts, theta_init=1.5 * toy.theta_star, grid=grid)
    nls = estimate_nls(toy, obs, 1.5 * toy.theta_star, None, opts, grid)
    np.testing.assert_allclose(dkf.theta_hat, nls.theta_hat, rtol=1e-3)


def test_augmented_sweep_matches_finite_differences(toy):
    grid = TimeGrid.uniform(100.0, 1001)
    theta, x0 = np.array([0.07, 0.03]), np.array([100.0, 3.0, -2.0])
    X, Xt, Phi = _augmented_sweep(toy, theta, x0, grid)
    np.testing.assert_allclose(X, duhamel_solution(toy, theta, x0, grid=grid).values, rtol=1e-12, atol=1e-10)
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1e-6
        fd = (duhamel_solution(toy, theta + e, x0, grid=grid).values - duhamel_solution(toy, theta - e, x0, grid=grid).values) / 2e-6
        np.testing.assert_allclose(Xt[:, :, j], fd, rtol=1e-6, atol=1e-4)
    np.testing.assert_allclose(Phi[-1] @ x0, X[-1], rtol=1e-12)


def test_initial_state_lstsq_exact(toy, noiseless):
    obs, grid, _ = noiseless
    np.testing.assert_allclose(initial_state_lstsq(toy, toy.theta_star, obs, grid), toy.x0_star, atol=1e-8)
    assert prediction_sse(toy, toy.theta_star, toy.x0_star, obs, grid) < 1e-16


def test_noisy_fit_improves_objective(toy, noisy):
    obs, grid, smooth = noisy
    opts = EstimatorOptions(n_starts=2, seed=3, start_box=_box(toy.theta_star, 0.5, 2.0))
    est = estimate_dkf(toy, obs, smooth, 1e10, opts, grid=grid)
    assert est.S_final <= est.initial_objective
    assert np.all(np.abs(est.theta_hat / toy.theta_star - 1) < 0.2)
    nls = estimate_nls(toy, obs, 1.5 * toy.theta_star, None, EstimatorOptions(n_starts=1, bounds=_box(toy.theta_star)), grid)
    assert nls.RSS_final <= nls.initial_objective
    # RSS at the optimum is near n * d_obs * sigma^2
    assert nls.RSS_final / (obs.values.size * 9.0) == pytest.approx(1.0, abs=0.15)


def test_observability_failure_before_optimizing(toy, noiseless):
    obs, grid, zeta = noiseless
    with pytest.raises(ObservabilityError):
        estimate_dkf(toy, obs, zeta, 1.0, EstimatorOptions(n_starts=1), theta_init=[0.0, 0.0], grid=grid)


def test_non_convergence_carries_result(toy, noisy):
    obs, grid, smooth = noisy
    with pytest.raises(NonConvergenceError) as err:
        estimate_dkf(toy, obs, smooth, 1e10, EstimatorOptions(n_starts=1, max_iter=1, gtol=1e-12),
                     theta_init=3 * toy.theta_star, grid=grid)
    assert err.value.result is not None
    assert err.value.result.S_final <= err.value.result.initial_objective


def test_select_lambda_singleton_and_argmin(toy, noisy):
    obs, grid, smooth = noisy
    opts = EstimatorOptions(n_starts=1)
    one = select_lambda(toy, obs, smooth, [1e8], opts, theta_init=toy.theta_star, grid=grid)
    assert one.chosen == 1e8 and one.chosen_index == 0
    sel = select_lambda(toy, obs, smooth, [1e1, 1e5, 1e12], opts, theta_init=toy.theta_star, grid=grid)
    assert np.all(np.isfinite(sel.sse))
    assert sel.sse[sel.chosen_index] <= sel.sse.min() + 1e-10 * np.sum(obs.values**2)
    assert sel.best is sel.estimates[sel.chosen_index]
    with pytest.raises(ValueError):
        select_lambda(toy, obs, smooth, [], opts)
    with pytest.raises(ValueError):
        select_lambda(toy, obs, smooth, [1.0, -1.0], opts)


def test_select_lambda_ties_go_to_largest(toy, noiseless):
    obs, grid, zeta = noiseless
    sel = select_lambda(toy, obs, zeta, [1e10, 1e12, 1e11], EstimatorOptions(n_starts=1), theta_init=toy.theta_star, grid=grid)
    assert sel.chosen == 1e12
