"""Center-manifold construction by weighted-trajectory fixed-point iteration.

A state belongs to the center manifold exactly when its trajectory is
"slowly varying": finite in the weighted norm

    |phi| = sup_t exp(-eta |t| - sigma * int_0^t z dr) |phi(t)|.

Such trajectories solve an integral equation whose right-hand side J maps a
whole trajectory to a new one:

    (J u)(t) = Psi(t,0) v                                 [center flow]
             + int_0^t   Psi(t,s) P^c G(s, u(s)) ds       [center forcing]
             + int_-T^t  Psi(t,s) P^s G(s, u(s)) ds       [stable history]
             - int_t^T   Psi(t,s) P^u G(s, u(s)) ds       [unstable future]

with the improper integrals truncated to the window [-T, T]; the truncation
tail admits the closed bound K Lip |u| exp(-(beta-eta) T)/(beta-eta) plus the
alpha-analogue, reported with every solve.  Under the spectral-gap condition
J contracts, Picard iteration from the zero trajectory converges, and the
graph value is the non-center part of the fixed point at t = 0.

All integrals use the trapezoid rule on the shared grid, so the t = 0 graph
value and the explicit kernel integral agree to rounding, and the per-step
exponential factors telescope exactly (semigroup property to rounding).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._scan import exp_scan
from .noise import OUPath, TimeGrid
from .spectral import GapConditionError, SpectralModel, TrichotomySplit, gap_condition
from .evolve import Trajectory, integrate_mild, _unit_mask


class ConvergenceError(RuntimeError):
    """Picard iteration failed to reach the tolerance."""

    def __init__(self, msg, ratios=None):
        super().__init__(msg)
        self.ratios = ratios or []


class WindowError(ValueError):
    """Truncation window too small for the requested tolerance."""


class DomainExitError(ValueError):
    """Evaluation outside the sampled center domain."""


@dataclass(frozen=True)
class WeightedTrajectory:
    """Two-sided trajectory carrying its weighted-norm data."""

    grid: TimeGrid
    states: np.ndarray = field(repr=False)
    eta: float
    ou: OUPath = field(repr=False)
    sigma: float = 0.0

    def weights(self) -> np.ndarray:
        t = self.grid.points()
        c = self.ou.cum_int - self.ou.cum_int[self.grid.zero_index]
        return np.exp(-self.eta * np.abs(t) - self.sigma * c)

    def norm(self) -> float:
        return float(np.max(np.linalg.norm(self.states, axis=-1) * self.weights()))


def weighted_norm(traj: WeightedTrajectory) -> float:
    """sup_t exp(-eta|t| - sigma int_0^t z) |phi(t)| over the grid."""
    return traj.norm()


@dataclass(frozen=True)
class ConvergenceReport:
    iterations: int
    deltas: tuple
    ratios: tuple
    ceiling: float
    tail_bound: float
    converged: bool

    @property
    def contraction_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0


class ManifoldSolver:
    """Fixed-point engine bound to one model, split, noise window and weight.

    The solver is anchored at the zero time of the supplied OU path and works
    on the symmetric window [-T, T]; use OUPath.window to re-anchor at other
    times (evaluating the graph along a shifted path).
    """

    def __init__(self, model: SpectralModel, split: TrichotomySplit, ou: OUPath,
                 eta: float, window: float, tol: float = 1e-12, max_iter: int = 200,
                 check_gap: bool = True, tail_tol: float = None):
        dt = ou.grid.dt
        half = int(round(window / dt))
        if abs(half * dt - window) > 1e-9:
            raise WindowError("window must be an integer multiple of the grid step")
        self.ou = ou.window(ou.grid.zero_index, half)
        self.grid = self.ou.grid
        self.model = model
        self.split = split
        self.eta = float(eta)
        self.window = half * dt
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.tail_tol = tail_tol
        self.sigma = model.noise_intensity

        self.gap = gap_condition(split, model.lipschitz_bound, eta, 1)
        if check_gap and not self.gap.satisfied:
            raise GapConditionError(
                f"gap condition fails: lhs = {self.gap.lhs:.4g} >= 1 "
                f"(K={split.bound_K}, Lip={model.lipschitz_bound:.4g}, eta={eta})"
            )

        n = self.grid.n_steps
        self.i0 = self.grid.zero_index
        t = self.grid.points()
        cum = self.ou.cum_int - self.ou.cum_int[self.i0]
        self.weights = np.exp(-self.eta * np.abs(t) - self.sigma * cum)

        lam = model.unit_eigs
        d_cum = np.diff(self.ou.cum_int)
        lf = lam[None, :] * dt + self.sigma * d_cum[:, None]
        if not model.has_blocks:
            lf = lf.real
        self._dt = dt
        self._masks = {w: _unit_mask(model, split, w) for w in ("center", "stable", "unstable")}
        self._cols = {w: np.where(m)[0] for w, m in self._masks.items()}
        self._lf = {w: lf[:, c] for w, c in self._cols.items()}
        self._rho = {w: np.exp(v) for w, v in self._lf.items()}
        # center semigroup from 0 (center exponents are mild, no overflow)
        lf_c = self._lf["center"]
        s = np.zeros((n + 1, lf_c.shape[1]), dtype=lf_c.dtype)
        if lf_c.shape[1]:
            s[self.i0 + 1 :] = np.cumsum(lf_c[self.i0 :], axis=0)
            if self.i0:
                s[: self.i0] = -np.cumsum(lf_c[: self.i0][::-1], axis=0)[::-1]
        self._center_flow = np.exp(s)

    # -- operator ----------------------------------------------------------

    def apply(self, states: np.ndarray, v: np.ndarray) -> np.ndarray:
        """One application of the trajectory operator J(., v)."""
        n = self.grid.n_steps
        i0 = self.i0
        dt = self._dt
        g = self.model.conjugated(states, self.sigma * self.ou.values)
        gu = self.model.to_units(g)
        out = np.zeros(gu.shape, dtype=gu.dtype if self.model.has_blocks else float)

        cols = self._cols["center"]
        if cols.size:
            gc = gu[:, cols]
            rho = self._rho["center"]
            h = np.zeros_like(gc)
            if n - i0:
                q = 0.5 * dt * (rho[i0:] * gc[i0:-1] + gc[i0 + 1 :])
                h[i0:] = exp_scan(self._lf["center"][i0:], q, init=0.0)
            if i0:
                lf_rev = -self._lf["center"][:i0][::-1]
                rho_rev = np.exp(lf_rev)
                q_rev = 0.5 * dt * (gc[i0 - 1 :: -1] + rho_rev * gc[i0:0:-1])
                m_rev = exp_scan(lf_rev, q_rev, init=0.0)
                h[:i0] = -m_rev[1:][::-1]
            v_units = self._center_units(v)
            out[:, cols] = self._center_flow * v_units[None, :] + h

        cols = self._cols["stable"]
        if cols.size:
            gs = gu[:, cols]
            rho = self._rho["stable"]
            q = 0.5 * dt * (rho * gs[:-1] + gs[1:])
            out[:, cols] = exp_scan(self._lf["stable"], q, init=0.0)

        cols = self._cols["unstable"]
        if cols.size:
            gun = gu[:, cols]
            lf_rev = -self._lf["unstable"][::-1]
            rho_rev = np.exp(lf_rev)
            q_rev = 0.5 * dt * (gun[n - 1 :: -1] + rho_rev * gun[n:0:-1])
            u_rev = exp_scan(lf_rev, q_rev, init=0.0)
            out[:, cols] = -u_rev[::-1]

        return self.model.from_units(out)

    def _center_units(self, v) -> np.ndarray:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.size != self.split.center_dim:
            raise ValueError(f"center vector must have dimension {self.split.center_dim}")
        full = np.zeros(self.model.n_modes)
        full[list(self.split.center_idx)] = v
        return self.model.to_units(full)[self._cols["center"]]

    def _wnorm(self, states: np.ndarray) -> float:
        return float(np.max(np.linalg.norm(states, axis=-1) * self.weights))

    def tail_bound(self, traj_norm: float) -> float:
        """Closed bound on the neglected integral tails at t = 0."""
        k, lip = self.split.bound_K, self.model.lipschitz_bound
        b = (self.split.beta - self.eta)
        bound = np.exp(-b * self.window) / b
        if np.isfinite(self.split.alpha) and self.split.unstable_idx:
            a = self.split.alpha - self.eta
            bound += np.exp(-a * self.window) / a
        return float(k * lip * traj_norm * bound)

    # -- fixed point -------------------------------------------------------

    def solve(self, v) -> tuple:
        """Picard-iterate J(., v) from the zero trajectory until stationary."""
        states = np.zeros((self.grid.n_steps + 1, self.model.n_modes))
        deltas, ratios = [], []
        for _ in range(self.max_iter):
            new = self.apply(states, v)
            delta = self._wnorm(new - states)
            if deltas and deltas[-1] > 0:
                ratios.append(delta / deltas[-1])
            deltas.append(delta)
            states = new
            if delta < self.tol:
                traj = WeightedTrajectory(self.grid, states, self.eta, self.ou, self.sigma)
                tail = self.tail_bound(self._wnorm(states))
                if self.tail_tol is not None and tail > self.tail_tol:
                    raise WindowError(
                        f"window T={self.window} leaves tail bound {tail:.3e} > {self.tail_tol:.3e}"
                    )
                report = ConvergenceReport(
                    iterations=len(deltas), deltas=tuple(deltas), ratios=tuple(ratios),
                    ceiling=self.gap.lhs, tail_bound=tail, converged=True,
                )
                return traj, report
        raise ConvergenceError(
            f"no convergence after {self.max_iter} iterations; ratio history {ratios[-8:]}",
            ratios=ratios,
        )

    def point(self, v) -> np.ndarray:
        """Graph value: non-center components of the fixed point at t = 0."""
        traj, _ = self.solve(v)
        x0 = traj.states[self.i0]
        return x0 - self.split.project(x0, "center")

    def point_with_report(self, v):
        traj, report = self.solve(v)
        x0 = traj.states[self.i0]
        return x0 - self.split.project(x0, "center"), report

    def tangency_defect(self, delta: float = 1e-2) -> float:
        """Norm of the centered finite-difference derivative of the graph at 0."""
        worst = 0.0
        c = self.split.center_dim
        for j in range(c):
            e = np.zeros(c)
            e[j] = delta
            d = (self.point(e) - self.point(-e)) / (2.0 * delta)
            worst = max(worst, float(np.linalg.norm(d)))
        return worst


# ---------------------------------------------------------------------------
# graph objects


@dataclass(frozen=True)
class ManifoldGraph:
    """Sampled graph of the manifold over center coordinates, one noise path."""

    center_indices: tuple
    sample_points: np.ndarray
    values: np.ndarray = field(repr=False)
    eta: float
    window: float
    sigma: float
    ou: OUPath = field(repr=False, default=None)
    split: TrichotomySplit = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.sample_points, dtype=float))
        object.__setattr__(self, "sample_points", pts)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def center_dim(self) -> int:
        return self.sample_points.shape[1]

    def evaluate(self, v) -> np.ndarray:
        """Graph value at center coordinates v.

        One-dimensional centers interpolate linearly between samples; higher
        dimensional centers use the nearest sample.  Points outside the
        sampled domain raise DomainExitError.
        """
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if self.center_dim == 1:
            x = self.sample_points[:, 0]
            order = np.argsort(x)
            xs = x[order]
            if v[0] < xs[0] - 1e-12 or v[0] > xs[-1] + 1e-12:
                raise DomainExitError(f"v={v[0]} outside sampled domain [{xs[0]}, {xs[-1]}]")
            vals = self.values[order]
            return np.array([np.interp(v[0], xs, vals[:, k]) for k in range(vals.shape[1])])
        d = np.linalg.norm(self.sample_points - v[None, :], axis=1)
        i = int(np.argmin(d))
        if d[i] > np.max(np.linalg.norm(self.sample_points, axis=1)) + 1e-12:
            raise DomainExitError(f"v outside sampled domain (nearest sample {d[i]:.3g} away)")
        return self.values[i].copy()

    def sampled_lipschitz(self) -> float:
        m = len(self.sample_points)
        worst = 0.0
        for i in range(m):
            for j in range(i + 1, m):
                dv = np.linalg.norm(self.sample_points[i] - self.sample_points[j])
                if dv > 0:
                    worst = max(worst, float(np.linalg.norm(self.values[i] - self.values[j]) / dv))
        return worst

    def bind(self, ou=None):
        """h(v, i) lookup for reduced integration (time-frozen values)."""
        return lambda v, i: self.evaluate(v)


@dataclass(frozen=True)
class DefectSeries:
    times: np.ndarray
    values: np.ndarray
    truncated: bool = False


# ---------------------------------------------------------------------------
# module-level operations in terms of the solver


def apply_Jc(traj: WeightedTrajectory, v, model: SpectralModel, split: TrichotomySplit,
             ou: OUPath = None, check_gap: bool = True) -> WeightedTrajectory:
    """One application of the trajectory operator to an explicit trajectory."""
    ou = ou if ou is not None else traj.ou
    solver = ManifoldSolver(model, split, ou, traj.eta, traj.grid.t1, check_gap=check_gap)
    states = solver.apply(traj.states, v)
    return WeightedTrajectory(solver.grid, states, traj.eta, solver.ou, model.noise_intensity)


def solve_fixed_point(v, model: SpectralModel, split: TrichotomySplit, ou: OUPath,
                      eta: float, window: float, tol: float = 1e-12, max_iter: int = 200):
    solver = ManifoldSolver(model, split, ou, eta, window, tol=tol, max_iter=max_iter)
    return solver.solve(v)


def manifold_point(v, model: SpectralModel, split: TrichotomySplit, ou: OUPath,
                   eta: float, window: float, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    solver = ManifoldSolver(model, split, ou, eta, window, tol=tol, max_iter=max_iter)
    return solver.point(v)


def manifold_graph(solver: ManifoldSolver, v_samples, tangency_delta: float = None) -> ManifoldGraph:
    """Solve the fixed point at every sample and assemble the sampled graph.

    Diagnostics collect the worst contraction ratio, the tail bound, the
    sampled Lipschitz constant against its theoretical ceiling, and (when
    tangency_delta is given) the finite-difference derivative norm at 0.
    """
    pts = np.atleast_2d(np.asarray(v_samples, dtype=float))
    if pts.shape[1] != solver.split.center_dim:
        pts = pts.reshape(-1, solver.split.center_dim)
    values, ratios, tails = [], [], []
    done = 0
    try:
        for v in pts:
            h, rep = solver.point_with_report(v)
            values.append(h)
            ratios.append(rep.contraction_ratio)
            tails.append(rep.tail_bound)
            done += 1
    except ConvergenceError as err:
        raise ConvergenceError(
            f"sample {done + 1}/{len(pts)} failed ({err}); partial results discarded",
            ratios=err.ratios,
        ) from err
    lhs = solver.gap.lhs
    diag = {
        "contraction_ratio": max(ratios) if ratios else 0.0,
        "contraction_ceiling": lhs,
        "tail_bound": max(tails) if tails else 0.0,
        "lipschitz_ceiling": solver.split.bound_K * lhs / (1.0 - lhs) if lhs < 1 else np.inf,
    }
    graph = ManifoldGraph(
        center_indices=tuple(solver.split.center_idx),
        sample_points=pts,
        values=np.array(values),
        eta=solver.eta,
        window=solver.window,
        sigma=solver.sigma,
        ou=solver.ou,
        split=solver.split,
        diagnostics=diag,
    )
    diag["lipschitz_sampled"] = graph.sampled_lipschitz()
    if tangency_delta is not None:
        diag["tangency_norm"] = solver.tangency_defect(tangency_delta)
    return graph


def invariance_check(graph: ManifoldGraph, model: SpectralModel, ou: OUPath, v0,
                     horizon: float, stride: int = 250, tol: float = 1e-12,
                     domain_limit: float = None) -> DefectSeries:
    """Integrate from a graph point and measure the distance to the moving graph.

    ou is the base noise path; it must extend at least `window` beyond the
    horizon so the graph can be re-solved on windows centered at each sample
    time (the shifted-path evaluation).  The defect at t = 0 vanishes by
    construction of the starting state.
    """
    split = graph.split
    dt = ou.grid.dt
    half = int(round(graph.window / dt))
    i0 = ou.grid.zero_index
    solver0 = ManifoldSolver(model, split, ou, graph.eta, graph.window, tol=tol)
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    u0 = np.zeros(model.n_modes)
    u0[list(split.center_idx)] = v0
    u0 = u0 + solver0.point(v0)

    n = int(round(horizon / dt))
    traj = integrate_mild(model, ou, u0, TimeGrid(0.0, horizon, n))
    idx = np.arange(0, n + 1, stride)
    times, defects = [], []
    vmax = domain_limit if domain_limit is not None else 2.0 * np.max(np.abs(graph.sample_points))
    truncated = False
    for j in idx:
        u_t = traj.states[j]
        vc = split.take(u_t, "center")
        if np.any(np.abs(vc) > vmax + 1e-9):
            truncated = True
            break
        sub = ou.window(i0 + j, half)
        s = ManifoldSolver(model, split, sub, graph.eta, graph.window, tol=tol)
        h = s.point(vc)
        noncenter = u_t - split.project(u_t, "center")
        times.append(j * dt)
        defects.append(float(np.linalg.norm(noncenter - h)))
    return DefectSeries(np.array(times), np.array(defects), truncated)
