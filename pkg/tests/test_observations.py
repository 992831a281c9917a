import numpy as np
import pytest
from scipy.integrate import solve_ivp as scipy_ivp

from dkf_ode import ObservationSet, get_model, observation_times, simulate_observations
from dkf_ode.observations import make_rng, true_trajectory
from dkf_ode.integrate import default_grid

from conftest import exact_signal


def test_observation_times():
    np.testing.assert_allclose(observation_times(5, 100.0), [0, 25, 50, 75, 100])
    t = observation_times(50, 10.0, "uniform", rng=3)
    assert t[0] == 0.0 and t[-1] == 10.0 and np.all(np.diff(t) >= 0)
    np.testing.assert_array_equal(t, observation_times(50, 10.0, "uniform", rng=3))
    with pytest.raises(ValueError):
        observation_times(1, 1.0)
    with pytest.raises(ValueError):
        observation_times(5, 1.0, "chebyshev")


def test_noise_free_simulation_matches_truth(toy):
    times = observation_times(21, 100.0)
    obs = simulate_observations(toy, toy.theta_star, toy.x0_star, times, 0.0)
    ref = exact_signal(toy, toy.theta_star, toy.x0_star)(times)
    np.testing.assert_allclose(obs.values, ref, rtol=1e-9, atol=1e-9)


def test_noise_statistics(toy):
    times = observation_times(2000, 100.0)
    clean = simulate_observations(toy, toy.theta_star, toy.x0_star, times, 0.0)
    noisy = simulate_observations(toy, toy.theta_star, toy.x0_star, times, 3.0, seed=7)
    resid = (noisy.values - clean.values).ravel()
    # 4000 draws: standard error of the sample sd is about 3 / sqrt(8000)
    assert abs(resid.std() - 3.0) < 0.15
    assert abs(resid.mean()) < 0.2
    again = simulate_observations(toy, toy.theta_star, toy.x0_star, times, 3.0, seed=7)
    np.testing.assert_array_equal(again.values, noisy.values)


def test_perturbation_enters_truth():
    m = get_model("toy2")
    g = default_grid(100.0)
    with_v = true_trajectory(m, m.theta_star, m.x0_star, g, perturb=True).values
    without = true_trajectory(m, m.theta_star, m.x0_star, g, perturb=False).values
    # [DERIVED] the drift solves d' = A d + v(t), d(0) = 0; independent adaptive solve
    A = m.sample(m.theta_star, [0.0])[0][0]
    ref = scipy_ivp(lambda t, d: A @ d + m.perturbation(t), (0.0, 100.0), np.zeros(3), t_eval=g.nodes[::100],
                    rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose((with_v - without)[::100], ref.y.T, atol=1e-7)


def test_csv_round_trip(tmp_path):
    obs = ObservationSet(np.array([0.0, 0.5, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.1]]), 0.1)
    p = tmp_path / "o.csv"
    obs.to_csv(p)
    assert p.read_text().splitlines()[0] == "t,y1,y2"
    back = ObservationSet.from_csv(p)
    np.testing.assert_array_equal(back.times, obs.times)
    np.testing.assert_array_equal(back.values, obs.values)


def test_observation_set_validation():
    with pytest.raises(ValueError):
        ObservationSet(np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        ObservationSet(np.array([0.0, 1.0]), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        ObservationSet(np.array([1.0, 0.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        simulate_observations(get_model("toy1"), [0.1, 0.1], [1, 0, 0], [0.0, 1.0], -1.0)


def test_make_rng_accepts_generators():
    g = np.random.default_rng(0)
    assert make_rng(g) is g
    a = make_rng(np.random.SeedSequence(5)).standard_normal(3)
    b = make_rng(5).standard_normal(3)
    np.testing.assert_array_equal(a, b)
