import numpy as np
import pytest

from slowmanifold.attraction import (
    FitError,
    epsilon_estimate,
    fit_decay,
    integrate_reduced,
    stable_defect,
    tracking_errors,
    unstable_defect_backward,
)
from slowmanifold.evolve import integrate_mild
from slowmanifold.lyapunov_perron import ManifoldSolver, manifold_graph
from slowmanifold.noise import TimeGrid, make_noise, path_seed
from slowmanifold.spectral import (
    builtin_damped_wave,
    builtin_reaction_diffusion,
    split_spectrum,
)


def test_fit_decay_exact_exponential():
    t = np.linspace(0.0, 5.0, 60)
    fit = fit_decay(t, 3.0 * np.exp(-2.0 * t))
    assert fit.prefactor == pytest.approx(3.0, abs=1e-6)
    assert fit.rate == pytest.approx(2.0, abs=1e-6)
    assert fit.r_squared > 0.9999


def test_fit_decay_errors():
    t = np.linspace(0.0, 1.0, 5)
    with pytest.raises(FitError):
        fit_decay(t, np.exp(-t))  # too few points
    t = np.linspace(0.0, 1.0, 50)
    with pytest.raises(FitError):
        fit_decay(t, 1e-14 * np.ones(50), floor=1e-10)  # noise-floor series


def test_stable_defect_linear_model_closed_form():
    # G == 0: the defect is exactly the transported stable seed e^{lambda t + sigma Z}
    model = builtin_reaction_diffusion(0.0, 0.1, 4)
    split = split_spectrum(model, 0.05, np.inf, 2.9)
    base = make_noise(4.0, 6.0, 2e-3, seed=8)
    solver = ManifoldSolver(model, split, base.z, eta=1.0, window=4.0)
    graph = manifold_graph(solver, np.array([[0.05], [0.1], [0.15]]))
    x0 = 0.02
    u0 = np.array([0.1, x0, 0.0, 0.0])
    traj = integrate_mild(model, base.z, u0, TimeGrid(0.0, 2.0, 1000))
    series = stable_defect(traj, graph, split, base.z, model=model, stride=100)
    i_base = base.grid.zero_index
    for t, x in zip(series.times, series.values):
        j = int(round(t / 2e-3))
        expected = x0 * np.exp(-3.0 * t + 0.1 * base.z.integral(i_base, i_base + j))
        assert x == pytest.approx(expected, rel=1e-10)


def test_stable_defect_on_manifold_start_stays_small():
    model = builtin_reaction_diffusion(0.01, 0.1, 6)
    split = split_spectrum(model, 0.05, np.inf, 2.9)
    base = make_noise(6.0, 8.0, 2e-3, seed=17)
    solver = ManifoldSolver(model, split, base.z, eta=1.0, window=6.0, tol=1e-12)
    v0 = np.array([0.1])
    u0 = np.zeros(6)
    u0[0] = v0[0]
    u0 += solver.point(v0)
    traj = integrate_mild(model, base.z, u0, TimeGrid(0.0, 2.0, 1000))
    graph = manifold_graph(solver, np.array([[0.05], [0.1], [0.15]]))
    series = stable_defect(traj, graph, split, base.z, model=model, stride=100)
    assert series.values[0] <= 1e-12
    assert np.max(series.values) <= 5e-7  # 10x the invariance budget of the desk instance


def test_reduced_flow_matches_scalar_oracle():
    a = 0.02
    model = builtin_reaction_diffusion(a, 0.0, 6)
    split = split_spectrum(model, 0.05, np.inf, 2.9)
    noise = make_noise(6.0, 10.0, 1e-3, seed=0)
    solver = ManifoldSolver(model, split, noise.z, eta=1.0, window=6.0, tol=1e-12)
    graph = manifold_graph(solver, np.array([[0.0], [0.06], [0.08], [0.1], [0.12]]))
    red = integrate_reduced(model, graph, noise.z, np.array([0.1]), TimeGrid(0.0, 10.0, 10000), split=split)
    s_exact = 0.1 / np.sqrt(1.0 + 1.5 * a * 0.01 * red.grid.points())
    assert np.abs(red.states[:, 0] - s_exact).max() < 1e-3
    v0 = integrate_reduced(model, graph, noise.z, np.array([0.0]), TimeGrid(0.0, 1.0, 1000), split=split)
    assert np.all(v0.states == 0.0)


def test_reduced_flow_linear_is_center_flow():
    model = builtin_reaction_diffusion(0.0, 0.1, 4)
    split = split_spectrum(model, 0.05, np.inf, 2.9)
    noise = make_noise(4.0, 4.0, 2e-3, seed=8)
    solver = ManifoldSolver(model, split, noise.z, eta=1.0, window=4.0)
    graph = manifold_graph(solver, np.array([[0.05], [0.1], [0.15]]))
    red = integrate_reduced(model, graph, noise.z, np.array([0.1]), TimeGrid(0.0, 2.0, 1000), split=split)
    i0 = noise.grid.zero_index
    expected = 0.1 * np.exp(0.1 * (noise.z.cum_int[i0 : i0 + 1001] - noise.z.cum_int[i0]))
    assert np.allclose(red.states[:, 0], expected, rtol=1e-12)


def test_tracking_errors_linear_model():
    model = builtin_reaction_diffusion(0.0, 0.1, 4)
    split = split_spectrum(model, 0.05, np.inf, 2.9)
    base = make_noise(4.0, 6.0, 2e-3, seed=8)
    solver = ManifoldSolver(model, split, base.z, eta=1.0, window=4.0)
    graph = manifold_graph(solver, np.array([[0.05], [0.1], [0.15]]))
    u0 = np.array([0.1, 0.02, 0.0, 0.0])
    full = integrate_mild(model, base.z, u0, TimeGrid(0.0, 2.0, 1000))
    red = integrate_reduced(model, graph, base.z, np.array([0.1]), TimeGrid(0.0, 2.0, 1000), split=split)
    te = tracking_errors(full, red, graph, split, base.z, model, stride=100)
    assert te.center_err.max() <= 1e-12  # reduced and projected flows coincide
    assert te.stable_fit is not None
    assert 2.0 <= te.stable_fit.rate <= 4.0


def test_identical_on_manifold_start_keeps_both_errors_tiny():
    model = builtin_reaction_diffusion(0.01, 0.0, 4)
    split = split_spectrum(model, 0.05, np.inf, 2.9)
    base = make_noise(6.0, 8.0, 1e-3, seed=3)
    solver = ManifoldSolver(model, split, base.z, eta=1.0, window=6.0, tol=1e-13)
    v0 = np.array([0.1])
    u0 = np.zeros(4)
    u0[0] = 0.1
    u0 += solver.point(v0)
    full = integrate_mild(model, base.z, u0, TimeGrid(0.0, 1.0, 1000))
    graph = manifold_graph(solver, np.array([[0.05], [0.1], [0.15]]))
    red = integrate_reduced(model, graph, base.z, v0, TimeGrid(0.0, 1.0, 1000), split=split)
    te = tracking_errors(full, red, graph, split, base.z, model, stride=200)
    assert te.center_err.max() <= 1e-7
    assert np.max(te.stable_err) <= 1e-7


def test_unstable_defect_grows_backward():
    model = builtin_damped_wave(0.1, 4, f_coeff=0.005, cutoff_radius=0.1)
    split = split_spectrum(model, 0.05, 0.5, 0.5)
    noise = make_noise(6.0, 1.0, 1e-3, seed=4)
    u0 = np.zeros(model.n_modes)
    u0[split.unstable_idx[0]] = 1e-4
    u0[split.center_idx[0]] = 0.05
    series = unstable_defect_backward(model, split, noise.z, u0, 5.0, stride=100)
    # the unstable defect follows exp(nu t) for t <= 0: it contracts backward,
    # i.e. grows at rate nu when the series is read in forward time order
    fit = fit_decay(-series.times, series.values, floor=0.0)
    assert fit.rate >= split.alpha - 1.0
    assert 0.2 <= fit.rate <= 0.9
    assert series.values[-1] < series.values[0]
    forward_growth = np.log(series.values[0] / series.values[-1]) / (-series.times[-1])
    assert forward_growth == pytest.approx(fit.rate, rel=0.25)


def test_asymptotic_stability_of_small_stable_starts():
    # with the reduced zero state stable, small fast-band data collapses:
    # |u(50)| <= 1e-3 |u(0)| for at least 95 of 100 paths
    model = builtin_reaction_diffusion(0.01, 0.1, 4)
    hits = 0
    n_paths = 100
    for p in range(n_paths):
        noise = make_noise(0.0, 50.0, 2e-2, seed=path_seed(5000, p))
        u0 = np.zeros(4)
        u0[1] = 0.01
        traj = integrate_mild(model, noise.z, u0, TimeGrid(0.0, 50.0, 2500))
        hits += np.linalg.norm(traj.states[-1]) <= 1e-3 * np.linalg.norm(u0)
    assert hits >= 95


def test_epsilon_estimate():
    noise = make_noise(0.0, 100.0, 1e-2, seed=1)
    assert epsilon_estimate(noise.z, 0.0) == 0.0
    eps = epsilon_estimate(noise.z, 0.1)
    assert 0.0 < eps < 0.2
