import numpy as np
import pytest

from slowmanifold.lyapunov_perron import (
    ConvergenceError,
    ManifoldSolver,
    WeightedTrajectory,
    apply_Jc,
    invariance_check,
    manifold_graph,
    manifold_point,
    solve_fixed_point,
    weighted_norm,
)
from slowmanifold.noise import TimeGrid, make_noise
from slowmanifold.spectral import (
    GapConditionError,
    SpectralModel,
    builtin_reaction_diffusion,
    split_spectrum,
)


def _rd_setup(a=0.01, sigma=0.0, n=8, dt=1e-3, window=10.0, seed=42, tol=1e-12, **kw):
    model = builtin_reaction_diffusion(a, sigma, n, **kw)
    split = split_spectrum(model, 0.05, np.inf, 2.9)
    noise = make_noise(window, window, dt, seed=seed)
    solver = ManifoldSolver(model, split, noise.z, eta=1.0, window=window, tol=tol)
    return model, split, noise, solver


def _zero_noise(window, dt):
    from slowmanifold.noise import BrownianPath, ou_stationary

    n = int(round(2 * window / dt))
    grid = TimeGrid(-window, window, n)
    return ou_stationary(BrownianPath(grid, np.zeros(n), seed=0), 1.0, z0=0.0)


# ---------------------------------------------------------------------------
# weighted norm


def test_weighted_norm_examples():
    dt, T = 0.01, 5.0
    z = _zero_noise(T, dt)
    grid = z.grid
    zero = WeightedTrajectory(grid, np.zeros((grid.n_steps + 1, 2)), 1.0, z, 0.0)
    assert weighted_norm(zero) == 0.0
    const = WeightedTrajectory(grid, np.ones((grid.n_steps + 1, 1)), 1.0, z, 0.0)
    assert weighted_norm(const) == pytest.approx(1.0)  # sup attained at t = 0
    grow = WeightedTrajectory(grid, np.exp(np.abs(grid.points()))[:, None], 1.0, z, 0.0)
    w = grow.states[:, 0] * grow.weights()
    assert np.allclose(w, 1.0, atol=1e-12)  # exact cancellation at every point


# ---------------------------------------------------------------------------
# the trajectory operator


def test_apply_linear_part_only():
    model, split, noise, solver = _rd_setup(a=0.0, sigma=0.1, window=4.0, dt=2e-3)
    zero = np.zeros((solver.grid.n_steps + 1, model.n_modes))
    out = solver.apply(zero, np.array([0.3]))
    # center follows the linear flow, everything else stays zero
    i0 = solver.i0
    expected = 0.3 * np.exp(0.1 * (solver.ou.cum_int - solver.ou.cum_int[i0]))
    assert np.allclose(out[:, 0], expected, rtol=1e-12)
    assert np.all(out[:, 1:] == 0.0)
    out0 = solver.apply(zero, np.array([0.0]))
    assert np.all(out0 == 0.0)


def test_two_applications_reproduce_kernel_integral():
    # starting from zero, two applications put the closed integral of the
    # constant-center forcing on the third mode: integral e^{8 s} (a/4) v^3
    a, v = 0.01, 0.1
    model, split, noise, solver = _rd_setup(a=a, sigma=0.0)
    zero = np.zeros((solver.grid.n_steps + 1, model.n_modes))
    first = solver.apply(zero, np.array([v]))
    second = solver.apply(first, np.array([v]))
    got = second[solver.i0, 2]
    expected = (a / 4.0) * v**3 * (1.0 - np.exp(-8.0 * solver.window)) / 8.0
    assert got == pytest.approx(expected, abs=1e-8)


def test_apply_jc_wrapper():
    model, split, noise, _ = _rd_setup(a=0.0, window=3.0, dt=2e-3)
    grid = TimeGrid(-3.0, 3.0, 3000)
    traj = WeightedTrajectory(grid, np.zeros((3001, model.n_modes)), 1.0,
                              noise.z.window(noise.grid.zero_index, 1500), 0.0)
    out = apply_Jc(traj, np.array([0.1]), model, split, noise.z)
    assert out.states[out.grid.zero_index, 0] == pytest.approx(0.1)


# ---------------------------------------------------------------------------
# fixed point


def test_linear_model_converges_immediately():
    model, split, noise, solver = _rd_setup(a=0.0, window=4.0, dt=2e-3)
    traj, rep = solver.solve(np.array([0.2]))
    assert rep.iterations <= 2
    assert rep.contraction_ratio == 0.0
    assert rep.converged


def test_contraction_ratio_below_ceiling():
    model, split, noise, solver = _rd_setup(a=0.01, sigma=0.1, n=6, dt=2e-3, window=6.0)
    _, rep = solver.solve(np.array([0.1]))
    assert rep.contraction_ratio <= rep.ceiling + 0.05
    assert rep.ceiling == solver.gap.lhs


def test_deterministic_third_mode_coefficient():
    model, split, noise, solver = _rd_setup()
    h = solver.point(np.array([0.1]))
    target = 0.01 * 0.1**3 / 32.0
    assert h[2] == pytest.approx(target, rel=0.02)
    assert np.all(h[[0]] == 0.0)


def test_manifold_point_at_origin_is_zero():
    model, split, noise, solver = _rd_setup(dt=2e-3, window=6.0)
    assert np.all(solver.point(np.array([0.0])) == 0.0)


def test_point_matches_kernel_integral_identity():
    # the non-center fixed-point value at t=0 equals the B-kernel integral of
    # the converged trajectory, by construction (same trapezoid quadrature)
    model, split, noise, solver = _rd_setup(a=0.02, sigma=0.1, n=4, dt=2e-3, window=6.0, tol=1e-13)
    traj, _ = solver.solve(np.array([0.1]))
    g = model.conjugated(traj.states, model.noise_intensity * solver.ou.values)
    t = solver.grid.points()
    i0 = solver.i0
    h = solver.point(np.array([0.1]))
    for k in split.stable_idx:
        kernel = np.exp(model.eigenvalues[k] * (0.0 - t[: i0 + 1])
                        + model.noise_intensity * (solver.ou.cum_int[i0] - solver.ou.cum_int[: i0 + 1]))
        integral = np.trapezoid(kernel * g[: i0 + 1, k], dx=solver.grid.dt)
        assert integral == pytest.approx(h[k], abs=1e-12)


def test_apply_matches_direct_quadrature():
    # brute-force O(n^2) trapezoid evaluation of the same three integrals
    def conj(u, sz):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        out[..., 0] = 0.02 * u[..., 1] * u[..., 2]
        out[..., 1] = 0.04 * u[..., 0] ** 2 + 0.01 * u[..., 2]
        out[..., 2] = 0.03 * u[..., 0] ** 2 - 0.02 * u[..., 1]
        return np.asarray(np.exp(np.asarray(sz)))[..., None] * out

    model = SpectralModel(name="toy", eigenvalues=np.array([0.0, -2.0, 3.0]),
                          conjugated=conj, lipschitz_bound=0.05, noise_intensity=0.3)
    split = split_spectrum(model, 0.5, 3.0, 2.0)
    noise = make_noise(1.0, 1.0, 0.01, seed=14)
    solver = ManifoldSolver(model, split, noise.z, eta=1.0, window=1.0)
    rng = np.random.default_rng(3)
    states = 0.1 * rng.normal(size=(solver.grid.n_steps + 1, 3))
    v = np.array([0.3])
    out = solver.apply(states, v)

    n = solver.grid.n_steps
    i0 = solver.i0
    t = solver.grid.points()
    c = solver.ou.cum_int
    g = conj(states, 0.3 * solver.ou.values)
    direct = np.zeros_like(out)
    for i in range(n + 1):
        ker = lambda k, js: np.exp(model.eigenvalues[k] * (t[i] - t[js]) + 0.3 * (c[i] - c[js]))
        direct[i, 0] = v[0] * np.exp(0.3 * (c[i] - c[i0]))
        if i >= i0:
            js = np.arange(i0, i + 1)
            if len(js) > 1:
                direct[i, 0] += np.trapezoid(ker(0, js) * g[js, 0], dx=0.01)
        else:
            js = np.arange(i, i0 + 1)
            direct[i, 0] -= np.trapezoid(ker(0, js) * g[js, 0], dx=0.01)
        js = np.arange(0, i + 1)
        if len(js) > 1:
            direct[i, 1] = np.trapezoid(ker(1, js) * g[js, 1], dx=0.01)
        js = np.arange(i, n + 1)
        if len(js) > 1:
            direct[i, 2] = -np.trapezoid(ker(2, js) * g[js, 2], dx=0.01)
    assert np.abs(out - direct).max() < 1e-12


def test_complex_block_branches_closed_form():
    # stable and unstable rotation blocks with constant forcing c + i d from a
    # frozen center amplitude: the fixed point is g / lambda with
    # lambda = -(re - i om) for the stable branch and the sign flipped for the
    # unstable one, evaluated here against the solver output
    def conj(u, sz):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        s2 = u[..., 0] ** 2
        out[..., 1] = 0.04 * s2
        out[..., 2] = 0.02 * s2
        out[..., 3] = 0.05 * s2
        out[..., 4] = -0.01 * s2
        return out

    model = SpectralModel(
        name="blocks", eigenvalues=np.array([0.0, -1.0, -1.0, 3.0, 3.0]),
        conjugated=conj, lipschitz_bound=0.05, noise_intensity=0.0,
        block_pairs=((1, 2, 2.0), (3, 4, 1.5)),
    )
    split = split_spectrum(model, 0.5, 2.5, 0.8)
    assert split.stable_idx == (1, 2) and split.unstable_idx == (3, 4)
    noise = make_noise(14.0, 14.0, 1e-3, seed=2)
    solver = ManifoldSolver(model, split, noise.z, eta=0.6, window=14.0, tol=1e-14)
    vc = 0.1
    h = solver.point(np.array([vc]))
    g_stable = (0.04 + 1j * 0.02) * vc**2
    lam_stable = -1.0 - 2.0j
    expect_stable = g_stable / (-lam_stable)
    assert h[1] == pytest.approx(expect_stable.real, rel=5e-6)
    assert h[2] == pytest.approx(expect_stable.imag, rel=5e-6)
    g_unstable = (0.05 - 1j * 0.01) * vc**2
    lam_unstable = 3.0 - 1.5j
    expect_unstable = -g_unstable / lam_unstable
    assert h[3] == pytest.approx(expect_unstable.real, rel=5e-6)
    assert h[4] == pytest.approx(expect_unstable.imag, rel=5e-6)


def test_toy_model_with_unstable_band_closed_form():
    def conj(u, sz):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        out[..., 1] = 0.04 * u[..., 0] ** 2
        out[..., 2] = 0.03 * u[..., 0] ** 2
        return out

    toy = SpectralModel(name="toy", eigenvalues=np.array([0.0, -2.0, 3.0]),
                        conjugated=conj, lipschitz_bound=0.05, noise_intensity=0.0)
    split = split_spectrum(toy, 0.5, 3.0, 2.0)
    noise = make_noise(8.0, 8.0, 1e-3, seed=2)
    h = manifold_point(np.array([0.1]), toy, split, noise.z, eta=1.0, window=8.0, tol=1e-14)
    assert h[1] == pytest.approx(0.04 * 0.01 / 2.0, rel=1e-6)   # stable:  +c v^2 / |lambda_s|
    assert h[2] == pytest.approx(-0.03 * 0.01 / 3.0, rel=1e-6)  # unstable: -c v^2 / lambda_u


def test_graph_constant_beyond_cutoff_support():
    model, split, noise, solver = _rd_setup(a=0.01, n=4, dt=1e-3, window=6.0, cutoff_radius=0.05)
    h1 = solver.point(np.array([0.125]))
    h2 = solver.point(np.array([0.15]))
    assert np.linalg.norm(h1 - h2) < 1e-12
    assert np.linalg.norm(h1) < 1e-12


def test_odd_symmetry_of_graph():
    model, split, noise, solver = _rd_setup(a=0.01, sigma=0.1, n=6, dt=2e-3, window=6.0, tol=1e-13)
    for v in (0.05, 0.1):
        h_plus = solver.point(np.array([v]))
        h_minus = solver.point(np.array([-v]))
        assert np.abs(h_plus + h_minus).max() < 1e-8


def test_graph_of_zero_samples_is_zero():
    model, split, noise, solver = _rd_setup(a=0.01, n=4, dt=2e-3, window=6.0)
    graph = manifold_graph(solver, np.array([[0.0], [0.0]]))
    assert np.all(graph.values == 0.0)
    assert graph.sampled_lipschitz() == 0.0


def test_graph_diagnostics_and_lipschitz_bound():
    model, split, noise, solver = _rd_setup(a=0.01, sigma=0.1, n=6, dt=2e-3, window=6.0)
    graph = manifold_graph(solver, np.array([[-0.1], [-0.05], [0.05], [0.1]]), tangency_delta=0.01)
    d = graph.diagnostics
    assert d["contraction_ratio"] <= d["contraction_ceiling"] + 0.05
    assert d["lipschitz_sampled"] <= d["lipschitz_ceiling"] * 1.05
    assert d["tangency_norm"] <= 1e-4 * model.lipschitz_bound
    # 1-D interpolation stays within sampled values
    h_mid = graph.evaluate(np.array([0.075]))
    assert np.all(np.isfinite(h_mid))
    from slowmanifold.lyapunov_perron import DomainExitError

    with pytest.raises(DomainExitError):
        graph.evaluate(np.array([0.5]))


def test_window_doubling_within_tail_bound():
    model, split, noise, _ = _rd_setup(a=0.01, sigma=0.1, n=4, dt=2e-3, window=8.0, seed=6)
    sA = ManifoldSolver(model, split, noise.z, eta=1.0, window=3.0, tol=1e-13)
    sB = ManifoldSolver(model, split, noise.z, eta=1.0, window=6.0, tol=1e-13)
    hA, repA = sA.point_with_report(np.array([0.1]))
    hB, _ = sB.point_with_report(np.array([0.1]))
    assert np.linalg.norm(hA - hB) <= repA.tail_bound


def test_gap_violation_rejected():
    model = builtin_reaction_diffusion(1.0, 0.0, 6)  # Lip too large at default cutoff
    split = split_spectrum(model, 0.05, np.inf, 2.9)
    noise = make_noise(2.0, 2.0, 1e-2, seed=0)
    with pytest.raises(GapConditionError, match="lhs"):
        ManifoldSolver(model, split, noise.z, eta=1.0, window=2.0)


def test_nonconvergence_diagnostic():
    model, split, noise, _ = _rd_setup(a=0.01, n=4, dt=2e-3, window=6.0)
    solver = ManifoldSolver(model, split, noise.z, eta=1.0, window=6.0, tol=1e-16, max_iter=2)
    with pytest.raises(ConvergenceError, match="no convergence"):
        solver.solve(np.array([0.1]))


def test_solve_fixed_point_wrapper():
    model, split, noise, _ = _rd_setup(a=0.01, n=4, dt=2e-3, window=6.0)
    traj, rep = solve_fixed_point(np.array([0.1]), model, split, noise.z, eta=1.0, window=6.0)
    assert rep.converged
    assert traj.states[traj.grid.zero_index, 0] != 0.0


# ---------------------------------------------------------------------------
# invariance of the computed graph


def test_invariance_check_linear_model():
    model, split, noise, solver = _rd_setup(a=0.0, sigma=0.1, n=4, dt=2e-3, window=4.0, seed=9)
    base = make_noise(4.0, 6.0, 2e-3, seed=9)
    graph = manifold_graph(ManifoldSolver(model, split, base.z, eta=1.0, window=4.0), np.array([[0.1]]))
    series = invariance_check(graph, model, base.z, np.array([0.1]), horizon=2.0, stride=200)
    assert series.values[0] <= 1e-13
    assert np.max(series.values) <= 1e-12


def test_invariance_check_desk_instance_and_self_convergence():
    sups = []
    for dt in (2e-3, 1e-3):
        base = make_noise(6.0, 8.0, dt, seed=12)
        model = builtin_reaction_diffusion(0.01, 0.0, 6)
        split = split_spectrum(model, 0.05, np.inf, 2.9)
        solver = ManifoldSolver(model, split, base.z, eta=1.0, window=6.0, tol=1e-13)
        graph = manifold_graph(solver, np.array([[0.05], [0.1], [0.15]]))
        series = invariance_check(graph, model, base.z, np.array([0.1]), horizon=2.0,
                                  stride=int(0.5 / dt), tol=1e-13)
        assert series.values[0] <= 1e-12  # defect at t = 0 by construction
        sups.append(np.max(series.values))
    assert sups[0] <= 5e-8  # O(dt) + O(tail) budget for the desk instance
    assert sups[0] / max(sups[1], 1e-16) >= 1.5  # first-order shrink in dt
