"""Exponential attraction to the manifold and reduced-dynamics tracking.

The stable defect of a trajectory is the gap between its fast component and
the graph evaluated at its slow component on the time-shifted noise path.
Its decay rate is fitted per path by least squares on the log magnitude and
aggregated over an ensemble by the median, since the theoretical prefactors
are path-dependent; the realized drift of the noise integral shifts the
exponent by at most sigma * sup_{t >= t*} |int_0^t z| / t, which
epsilon_estimate reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import OUPath, TimeGrid
from .spectral import SpectralModel, TrichotomySplit
from .evolve import Trajectory, integrate_mild
from .lyapunov_perron import DefectSeries, ManifoldGraph, ManifoldSolver


class FitError(ValueError):
    """Not enough usable points for a decay fit."""


@dataclass(frozen=True)
class DecayFit:
    prefactor: float
    rate: float
    r_squared: float
    window: tuple

    def to_dict(self) -> dict:
        return {"prefactor": self.prefactor, "rate": self.rate,
                "r_squared": self.r_squared, "window": list(self.window)}


def fit_decay(times, series, floor: float = 0.0, min_points: int = 10) -> DecayFit:
    """Least-squares line on log|X| vs t; rate is the positive decay magnitude.

    Points at or below the floor are excluded; fewer than min_points usable
    points is an error (the series is noise-floor dominated).
    """
    t = np.asarray(times, dtype=float)
    x = np.abs(np.asarray(series, dtype=float))
    keep = x > floor
    if int(np.count_nonzero(keep)) < min_points:
        raise FitError(f"only {int(np.count_nonzero(keep))} points above the floor {floor:g}; need {min_points}")
    t, x = t[keep], x[keep]
    slope, intercept = np.polyfit(t, np.log(x), 1)
    resid = np.log(x) - (slope * t + intercept)
    denom = np.sum((np.log(x) - np.log(x).mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / denom if denom > 0 else 1.0
    return DecayFit(prefactor=float(np.exp(intercept)), rate=float(-slope),
                    r_squared=float(r2), window=(float(t[0]), float(t[-1])))


def epsilon_estimate(ou: OUPath, sigma: float, t_star: float = 1.0) -> float:
    """Realized sublinear-drift bound sigma * sup_{t >= t*} |int_0^t z| / t."""
    i0 = ou.grid.zero_index
    t = ou.grid.points()[i0:]
    c = ou.cum_int[i0:] - ou.cum_int[i0]
    mask = t >= t_star
    if not np.any(mask):
        return 0.0
    return float(sigma * np.max(np.abs(c[mask]) / t[mask]))


def stable_defect(traj: Trajectory, graph: ManifoldGraph, split: TrichotomySplit,
                  ou: OUPath, model: SpectralModel = None, stride: int = 250,
                  solver_tol: float = 1e-11, domain_limit: float = None) -> DefectSeries:
    """|P^s u(t) - P^s h(P^c u(t), theta_t)| sampled along the trajectory.

    The graph is re-solved on a window centered at each sample time of the
    base path ou (the shifted-path evaluation).  Centers beyond domain_limit
    (default: twice the sampled graph extent) truncate the series and set
    the flag.
    """
    if model is None:
        raise ValueError("model is required to re-solve the graph on shifted windows")
    dt = ou.grid.dt
    half = int(round(graph.window / dt))
    i_base = ou.grid.index_of(traj.grid.t0)
    n = traj.grid.n_steps
    vmax = domain_limit if domain_limit is not None else 2.0 * np.max(np.abs(graph.sample_points))
    times, vals = [], []
    truncated = False
    for j in range(0, n + 1, stride):
        u_t = traj.states[j]
        vc = split.take(u_t, "center")
        if np.any(np.abs(vc) > vmax):
            truncated = True
            break
        sub = ou.window(i_base + j, half)
        solver = ManifoldSolver(model, split, sub, graph.eta, graph.window, tol=solver_tol)
        h = solver.point(vc)
        x = split.project(u_t, "stable") - split.project(h, "stable")
        times.append(traj.grid.t0 + j * dt)
        vals.append(float(np.linalg.norm(x)))
    return DefectSeries(np.array(times), np.array(vals), truncated)


def unstable_defect_backward(model: SpectralModel, split: TrichotomySplit, ou: OUPath,
                             u0: np.ndarray, horizon: float, stride: int = 50) -> DefectSeries:
    """|P^u u(t)| along the backward flow, for models with an unstable band.

    Integration runs forward in the reversed time variable (eigenvalues
    negated, noise path reversed), so the returned times are t <= 0 and the
    unstable component grows as t decreases for a nonzero unstable seed.
    """
    dt = ou.grid.dt
    n = int(round(horizon / dt))
    i0 = ou.grid.zero_index
    if i0 - n < 0:
        raise ValueError("noise path does not extend far enough backward")
    rev_vals = ou.values[i0::-1].copy()
    rev = OUPath(TimeGrid(0.0, i0 * dt, i0), rev_vals, ou.rate)
    from dataclasses import replace

    back_model = replace(model, eigenvalues=-model.eigenvalues,
                         block_pairs=tuple((ix, iy, -om) for ix, iy, om in model.block_pairs),
                         noise_intensity=-model.noise_intensity,
                         conjugated=lambda u, sz: -model.conjugated(u, -sz))
    traj = integrate_mild(back_model, rev, u0, TimeGrid(0.0, horizon, n))
    idx = np.arange(0, n + 1, stride)
    times = -idx * dt
    vals = np.array([float(np.linalg.norm(split.project(traj.states[j], "unstable"))) for j in idx])
    return DefectSeries(times, vals, False)


def integrate_reduced(model: SpectralModel, graph, ou: OUPath, v0, grid: TimeGrid,
                      split: TrichotomySplit = None) -> Trajectory:
    """Exponential-Euler integration of the center block closed by the graph.

    graph may be a sampled ManifoldGraph (values looked up by interpolation,
    frozen in time) or a closed-form ExpansionGraph (time-dependent factors
    evaluated along the path).  Returns a center-coordinate trajectory.
    """
    split = split if split is not None else getattr(graph, "split", None)
    if split is None:
        raise ValueError("a trichotomy split is required")
    cidx = list(split.center_idx)
    dt = grid.dt
    i_start = ou.grid.index_of(grid.t0)
    n = grid.n_steps
    sigma = model.noise_intensity
    lam_c = model.eigenvalues[cidx]
    h_fun = graph.bind(ou)
    zv = ou.values
    step_int = np.diff(ou.cum_int[i_start : i_start + n + 1])
    facs = np.exp(lam_c[None, :] * dt + sigma * step_int[:, None])

    v = np.atleast_1d(np.asarray(v0, dtype=float)).copy()
    states = np.empty((n + 1, len(cidx)))
    states[0] = v
    full = np.zeros(model.n_modes)
    for i in range(n):
        full[:] = 0.0
        full[cidx] = v
        full += h_fun(v, i_start + i)
        gc = model.conjugated(full, sigma * zv[i_start + i])[cidx]
        v = facs[i] * (v + dt * gc)
        states[i + 1] = v
    return Trajectory(grid=grid, states=states, ou=ou)


@dataclass(frozen=True)
class TrackingErrors:
    times_center: np.ndarray
    center_err: np.ndarray
    times_stable: np.ndarray
    stable_err: np.ndarray
    center_fit: DecayFit = None
    stable_fit: DecayFit = None


def tracking_errors(full: Trajectory, reduced: Trajectory, graph: ManifoldGraph,
                    split: TrichotomySplit, ou: OUPath, model: SpectralModel,
                    stride: int = 250, floor: float = 0.0, solver_tol: float = 1e-11) -> TrackingErrors:
    """Center and stable tracking errors of the reduced flow against the full one.

    center_err = |P^c u(t) - v(t)| at every grid point; stable_err compares
    the fast part against the graph at the reduced state on the shifted path,
    sampled every `stride` steps.  Decay fits are attached when enough points
    sit above the floor.
    """
    if full.grid.n_steps != reduced.grid.n_steps or abs(full.grid.t0 - reduced.grid.t0) > 1e-12:
        raise ValueError("trajectories must share the grid")
    cidx = list(split.center_idx)
    center_err = np.linalg.norm(full.states[:, cidx] - reduced.states, axis=1)
    tgrid = full.grid.points()

    dt = ou.grid.dt
    half = int(round(graph.window / dt))
    i_base = ou.grid.index_of(full.grid.t0)
    times, vals = [], []
    for j in range(0, full.grid.n_steps + 1, stride):
        v_t = reduced.states[j]
        sub = ou.window(i_base + j, half)
        solver = ManifoldSolver(model, split, sub, graph.eta, graph.window, tol=solver_tol)
        h = solver.point(v_t)
        x = split.project(full.states[j], "stable") - split.project(h, "stable")
        times.append(full.grid.t0 + j * dt)
        vals.append(float(np.linalg.norm(x)))
    times = np.array(times)
    vals = np.array(vals)

    def try_fit(ts, xs):
        try:
            return fit_decay(ts, xs, floor=floor)
        except FitError:
            return None

    return TrackingErrors(
        times_center=tgrid, center_err=center_err,
        times_stable=times, stable_err=vals,
        center_fit=try_fit(tgrid, center_err), stable_fit=try_fit(times, vals),
    )
