"""Exponential noise conjugacy between the stochastic and pathwise frames.

The multiplicative-noise equation and its pathwise (random-coefficient) form
are related by the state scaling u = u_star * exp(sigma * z(t)) with z the
stationary OU process.  This module provides the frame changes, the
conjugated nonlinearity, the transport of manifold graphs back to the
stochastic frame, and a Stratonovich Heun integrator for the stochastic side
used only to cross-check the conjugacy numerically.
"""

from __future__ import annotations

import numpy as np

from .noise import BrownianPath, TimeGrid
from .spectral import SpectralModel
from .evolve import Trajectory


def to_random_frame(u: np.ndarray, z_t: float, sigma: float) -> np.ndarray:
    """Scale a stochastic-frame state into the pathwise frame: u * exp(-sigma z)."""
    return np.asarray(u) * np.exp(-sigma * z_t)


def from_random_frame(u_star: np.ndarray, z_t: float, sigma: float) -> np.ndarray:
    """Inverse frame change: u_star * exp(sigma z)."""
    return np.asarray(u_star) * np.exp(sigma * z_t)


def conjugated_nonlinearity(model: SpectralModel, ou, t_index: int, u: np.ndarray) -> np.ndarray:
    """exp(-sigma z) F(exp(sigma z) u) at a grid time, in closed form."""
    return model.conjugated(np.asarray(u, dtype=float), model.noise_intensity * ou.values[t_index])


def pull_back_manifold(graph, ou, sigma: float):
    """Transport a pathwise-frame graph to the stochastic frame.

    The transported graph is v -> exp(sigma z(0)) h(exp(-sigma z(0)) v),
    realized exactly on the rescaled sample set.
    """
    from dataclasses import replace

    z0 = ou.values[ou.grid.zero_index]
    s = np.exp(sigma * z0)
    return replace(graph, sample_points=graph.sample_points * s, values=graph.values * s)


def heun_stratonovich(model: SpectralModel, path: BrownianPath, u0: np.ndarray, grid: TimeGrid) -> Trajectory:
    """Heun (Stratonovich) integration of the stochastic-frame equation.

    du = (A u + F(u)) dt + sigma * u o dW.  Drift and diffusion are both
    averaged between the base point and an Euler predictor, the standard
    strong-order-one scheme for Stratonovich scalar noise.  Only used to
    verify that transporting with exp(-sigma z) reproduces the pathwise flow.
    """
    dt = grid.dt
    if abs(dt - path.grid.dt) > 1e-12 * dt:
        raise ValueError("integration grid must share the noise grid step")
    i_start = path.grid.index_of(grid.t0)
    n = grid.n_steps
    sigma = model.noise_intensity
    inc = path.increments

    def drift(x):
        return model.apply_linear(x) + model.nonlinearity(x)

    states = np.empty((n + 1, model.n_modes))
    states[0] = u0
    u = np.asarray(u0, dtype=float)
    for i in range(n):
        dw = inc[i_start + i]
        d0 = drift(u)
        pred = u + dt * d0 + sigma * dw * u
        u = u + 0.5 * dt * (d0 + drift(pred)) + 0.5 * sigma * dw * (u + pred)
        states[i + 1] = u
    return Trajectory(grid=grid, states=states, ou=None)
