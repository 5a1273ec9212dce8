import dataclasses

import numpy as np
import pytest

from slowmanifold.expansion import (
    ExpansionGraph,
    ExpansionTerm,
    coupled_slow_manifold,
    invariance_residual,
    order_fit,
    reaction_diffusion_expansion,
)
from slowmanifold.lyapunov_perron import ManifoldGraph, ManifoldSolver, manifold_graph
from slowmanifold.noise import make_noise, path_seed
from slowmanifold.spectral import builtin_coupled_slow, builtin_reaction_diffusion, split_spectrum


def test_rd_expansion_deterministic_term():
    g = reaction_diffusion_expansion(0.01, 0.0, n_modes=6)
    h = g.evaluate(np.array([0.1]))
    assert h[2] == pytest.approx(3.125e-7, rel=1e-12)
    assert np.all(h[[0, 1, 3, 4, 5]] == 0.0)
    assert np.all(reaction_diffusion_expansion(0.0, 0.0).evaluate(np.array([0.3])) == 0.0)


def test_rd_expansion_stochastic_term():
    noise = make_noise(2.0, 2.0, 1e-2, seed=3, phi_rates=[8.0])
    g = reaction_diffusion_expansion(0.01, 0.1, noise.phi(8.0), n_modes=4)
    phi0 = noise.phi(8.0).values[noise.grid.zero_index]
    h = g.evaluate(np.array([0.1]), t=0.0)
    expected = 0.01 * 1e-3 * (1.0 / 32.0 - 0.1 * phi0 / 16.0)
    assert h[2] == pytest.approx(expected, rel=1e-10)
    with pytest.raises(ValueError, match="phi_3"):
        reaction_diffusion_expansion(0.01, 0.1, None)


def test_coupled_graph_values():
    m = builtin_coupled_slow(0.0, 0.0, 3, cutoff_radius=None)
    g = coupled_slow_manifold(m)
    assert np.all(g.evaluate(np.zeros(3)) == 0.0)
    # constant mode c: (u^2)_0 = c^2, kernel symbol 1
    h = g.evaluate(np.array([0.3, 0.0, 0.0]))
    assert h[3] == pytest.approx(0.09, rel=1e-12)
    # sigma z = ln 2 doubles every fast coefficient
    m2 = builtin_coupled_slow(0.0, 1.0, 3, cutoff_radius=None)
    noise = make_noise(0.0, 1.0, 0.5, seed=1)
    zpath = dataclasses.replace(noise.z, values=np.full_like(noise.z.values, np.log(2.0)), cum_int=None)
    g2 = coupled_slow_manifold(m2, zpath)
    h0 = coupled_slow_manifold(m, zpath).evaluate(np.array([0.2, 0.1, 0.0]))
    h2 = g2.evaluate(np.array([0.2, 0.1, 0.0]))
    assert np.allclose(h2, 2.0 * h0, rtol=1e-12)
    with pytest.raises(ValueError, match="a = 0"):
        coupled_slow_manifold(builtin_coupled_slow(0.1, 0.0, 3))


def test_expansion_requires_tangency_degree():
    with pytest.raises(ValueError, match="degree"):
        ExpansionGraph(n_modes=3, center_indices=(0,),
                       terms=(ExpansionTerm(powers=(1,), target=1, coeff=1.0),), order=2)


def test_residual_zero_graph_linear_model():
    m = builtin_reaction_diffusion(0.0, 0.0, 4)
    g = ExpansionGraph(n_modes=4, center_indices=(0,), terms=(), order=3)
    noise = make_noise(1.0, 1.0, 1e-3, seed=0)
    r = invariance_residual(g, m, noise.z, np.array([0.1]), 1e-3)
    assert np.all(r == 0.0)


def test_residual_exact_coupled_graph_first_order():
    m = builtin_coupled_slow(0.0, 0.0, 6, cutoff_radius=None)
    g = coupled_slow_manifold(m)
    noise = make_noise(1.0, 1.0, 1e-3, seed=9)
    v0 = np.array([0.08, 0.03, 0.0, 0.0, 0.0, 0.0])
    norms = [np.linalg.norm(invariance_residual(g, m, noise.z, v0, dtp))
             for dtp in (1e-2, 1e-3, 1e-4)]
    slope = np.polyfit(np.log([1e-2, 1e-3, 1e-4]), np.log(norms), 1)[0]
    assert slope >= 1.0
    state = np.concatenate([v0, g.evaluate(v0)[6:]])
    assert norms[-1] <= 1e-6 * np.linalg.norm(state)


def test_residual_quintic_scaling_of_cubic_expansion():
    # the first omitted order is s^5: halving s divides the residual by ~32
    a = 0.01
    m = builtin_reaction_diffusion(a, 0.0, 6)
    g = reaction_diffusion_expansion(a, 0.0, n_modes=6)
    noise = make_noise(1.0, 1.0, 1e-3, seed=4)
    r_big = np.linalg.norm(invariance_residual(g, m, noise.z, np.array([0.1]), 1e-4))
    r_small = np.linalg.norm(invariance_residual(g, m, noise.z, np.array([0.05]), 1e-4))
    assert 16.0 <= r_big / r_small <= 64.0
    # and the limit value matches the closed-form defect sqrt(2) * (3/128) a^2 s^5
    expected = np.sqrt(2.0) * (3.0 / 128.0) * a**2 * 0.1**5
    assert r_big == pytest.approx(expected, rel=0.05)


def test_residual_rejects_bad_probe():
    m = builtin_reaction_diffusion(0.01, 0.0, 4)
    g = reaction_diffusion_expansion(0.01, 0.0, n_modes=4)
    noise = make_noise(1.0, 1.0, 1e-3, seed=0)
    with pytest.raises(ValueError, match="dt_probe"):
        invariance_residual(g, m, noise.z, np.array([0.1]), 0.0)


def test_order_fit_power_law_oracle_and_rescale_invariance():
    # synthetic graph pair differing by an exact s^5 term: slope is exactly 5
    pts = np.array([[s] for s in (0.05, 0.08, 0.12, 0.2, 0.3)])
    vals = np.array([[0.0, 2.0 * s**5, 0.0] for (s,) in pts])
    lp = ManifoldGraph(center_indices=(0,), sample_points=pts, values=vals,
                       eta=1.0, window=1.0, sigma=0.0)
    zero = ExpansionGraph(n_modes=3, center_indices=(0,), terms=(), order=5)
    fit = order_fit(zero, lp, pts[:, 0], target_order=5)
    assert fit.slope == pytest.approx(5.0, abs=1e-9)
    assert fit.passed
    # common rescale of the amplitudes only shifts the log-log line
    pts2 = pts * 0.5
    lp2 = ManifoldGraph(center_indices=(0,), sample_points=pts2,
                        values=np.array([[0.0, 2.0 * s**5, 0.0] for (s,) in pts2]),
                        eta=1.0, window=1.0, sigma=0.0)
    fit2 = order_fit(zero, lp2, pts2[:, 0], target_order=5)
    assert fit2.slope == pytest.approx(fit.slope, abs=1e-9)


def test_order_fit_degenerate_when_graphs_agree():
    m = builtin_coupled_slow(0.0, 0.0, 3, cutoff_radius=0.005)
    split = split_spectrum(m, 0.02, np.inf, 1.0)
    noise = make_noise(14.0, 14.0, 2e-3, seed=5)
    solver = ManifoldSolver(m, split, noise.z, eta=0.5, window=14.0, tol=1e-14)
    amps = [0.0005, 0.001, 0.002, 0.004]
    pts = np.array([[s, 0.0, 0.0] for s in amps])
    lp = manifold_graph(solver, pts)
    g = coupled_slow_manifold(m)
    fit = order_fit(g, lp, amps, direction=np.array([1.0, 0.0, 0.0]), degenerate_floor=1e-8)
    assert fit.degenerate
    assert fit.passed


def test_order_fit_preconditions():
    zero = ExpansionGraph(n_modes=3, center_indices=(0,), terms=(), order=3)
    lp = ManifoldGraph(center_indices=(0,), sample_points=np.array([[0.1]]),
                       values=np.zeros((1, 3)), eta=1.0, window=1.0, sigma=0.0)
    with pytest.raises(ValueError, match="4 amplitudes"):
        order_fit(zero, lp, [0.1, 0.2, 0.3])
    with pytest.raises(ValueError, match="factor"):
        order_fit(zero, lp, [0.1, 0.12, 0.14, 0.2])


def test_phi3_ensemble_mean_vanishes():
    vals = []
    for p in range(400):
        noise = make_noise(2.0, 0.0, 1e-2, seed=path_seed(900, p), phi_rates=[8.0])
        vals.append(noise.phi(8.0).values[-1])
    vals = np.array(vals)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean()) <= 3.0 * se
