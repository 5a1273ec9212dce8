"""Closed-form manifold expansions, invariance residuals, and order fits.

An expansion graph is a finite list of monomial terms

    coeff * v^powers * [OU-process factors](t)  ->  target mode,

covering both deterministic polynomial graphs and graphs whose coefficients
carry noise processes (an exponential of the conjugacy OU, or a convolution
process phi_rate).  The invariance residual advances the full system and the
graph-reduced system by one second-order exponential step and divides the
non-center mismatch by the step, which converges to the true invariance
defect of the graph as the probe step shrinks and is zero (to probe order)
for exactly invariant graphs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .noise import OUPath
from .spectral import SpectralModel
from .evolve import exp_heun_step


@dataclass(frozen=True)
class ExpansionTerm:
    powers: tuple          # exponents of the center coordinates
    target: int            # mode index receiving the contribution
    coeff: float
    z_exp: float = 0.0     # multiply by exp(z_exp * z(t))
    phi_rate: float = None  # multiply by phi_rate(t)**phi_power
    phi_power: int = 1


@dataclass(frozen=True)
class ExpansionGraph:
    """Polynomial graph candidate h(v, t) with optional noise-process factors."""

    n_modes: int
    center_indices: tuple
    terms: tuple
    order: int
    validity_radius: float = 0.2
    z_path: OUPath = field(repr=False, default=None)
    phi_paths: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        for term in self.terms:
            if sum(term.powers) < 2:
                raise ValueError("expansion terms must have total degree >= 2 (tangency)")
            if not np.isfinite(term.coeff):
                raise ValueError("expansion coefficients must be finite")
        if self.order <= 1:
            raise ValueError("truncation order must exceed 1")

    @property
    def center_dim(self) -> int:
        return len(self.center_indices)

    def _factor(self, term: ExpansionTerm, t: float) -> float:
        fac = 1.0
        if term.z_exp:
            if self.z_path is None:
                raise ValueError("graph has an exp(z) factor but no z path bound")
            fac *= np.exp(term.z_exp * _interp_path(self.z_path, t))
        if term.phi_rate is not None:
            phi = self.phi_paths.get(float(term.phi_rate))
            if phi is None:
                raise ValueError(f"graph needs phi with rate {term.phi_rate}")
            fac *= _interp_path(phi, t) ** term.phi_power
        return fac

    def evaluate(self, v, t: float = 0.0) -> np.ndarray:
        """Graph value at center coordinates v and path time t (full vector)."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        out = np.zeros(self.n_modes)
        for term in self.terms:
            mono = np.prod(v ** np.asarray(term.powers))
            out[term.target] += term.coeff * mono * self._factor(term, t)
        return out

    def bind(self, ou=None):
        """h(v, i) lookup against a grid index on the bound paths."""
        base = self.z_path if self.z_path is not None else ou

        def h(v, i):
            t = base.grid.points()[i] if base is not None else 0.0
            return self.evaluate(v, t)

        return h


def _interp_path(path: OUPath, t: float) -> float:
    g = path.grid
    if t <= g.t0:
        return float(path.values[0])
    if t >= g.t1:
        return float(path.values[-1])
    x = (t - g.t0) / g.dt
    i = int(x)
    frac = x - i
    return float((1 - frac) * path.values[i] + frac * path.values[i + 1])


# ---------------------------------------------------------------------------
# built-in expansions


def reaction_diffusion_expansion(a: float, sigma: float, phi3: OUPath = None,
                                 n_modes: int = 8) -> ExpansionGraph:
    """Cubic expansion of the reaction-diffusion manifold on the third mode.

    h(s, t) = [a/32 - (a/16) sigma phi_3(t)] s^3 on sin 3x, valid to
    O(s^5, a^2, sigma^2); phi_3 is the rate-8 convolution process.
    """
    terms = [ExpansionTerm(powers=(3,), target=2, coeff=a / 32.0)]
    phis = {}
    if sigma != 0.0:
        if phi3 is None:
            raise ValueError("sigma != 0 requires the phi_3 path")
        terms.append(ExpansionTerm(powers=(3,), target=2, coeff=-a * sigma / 16.0, phi_rate=8.0))
        phis[8.0] = phi3
    return ExpansionGraph(n_modes=n_modes, center_indices=(0,), terms=tuple(terms),
                          order=5, phi_paths=phis)


def coupled_slow_manifold(model: SpectralModel, ou: OUPath = None) -> ExpansionGraph:
    """Exact slow-manifold graph of the coupled model with neutral slow band.

    v_k = exp(sigma z(t)) * (u convolved with u)_k / (1 + k^2); requires the
    model built with a = 0 (otherwise the graph is not exactly invariant).
    """
    if model.name != "coupled_slow":
        raise ValueError("expects the coupled slow/fast model")
    a = model.meta["a"]
    if a != 0.0:
        raise ValueError("the closed-form slow manifold requires a = 0")
    n = model.meta["n_slow"]
    symbol = np.asarray(model.meta["kernel_symbol"])
    sigma = model.noise_intensity
    if sigma != 0.0 and ou is None:
        raise ValueError("sigma != 0 requires the conjugacy OU path")
    terms = []
    for i in range(n):
        for j in range(i, n):
            weight = (1.0 if i == j else 2.0) * 0.5
            powers = np.zeros(n, dtype=int)
            powers[i] += 1
            powers[j] += 1
            for k in (i + j, abs(i - j)):
                if k < n:
                    terms.append(ExpansionTerm(
                        powers=tuple(powers), target=n + k,
                        coeff=weight * symbol[k], z_exp=sigma,
                    ))
    merged = {}
    for t in terms:
        key = (t.powers, t.target)
        merged[key] = merged.get(key, 0.0) + t.coeff
    out = tuple(ExpansionTerm(powers=p, target=tg, coeff=c, z_exp=sigma)
                for (p, tg), c in sorted(merged.items()))
    return ExpansionGraph(n_modes=2 * n, center_indices=tuple(range(n)), terms=out,
                          order=3, z_path=ou, validity_radius=2 * (model.cutoff_radius or 0.2))


# ---------------------------------------------------------------------------
# invariance residual and order fit


def invariance_residual(g: ExpansionGraph, model: SpectralModel, ou: OUPath,
                        v, dt_probe: float) -> np.ndarray:
    """One-step invariance defect of the graph, divided by the probe step.

    Both the full state (v + g(v)) and the graph-reduced center state advance
    by one second-order exponential step of length dt_probe; the residual is
    [non-center of the full step - g(reduced step, theta_dt)] / dt_probe.
    For an invariant graph this decays at the probe order; for an approximate
    graph it converges to the graph's true invariance defect.
    """
    if dt_probe <= 0:
        raise ValueError("dt_probe must be positive")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    cidx = list(g.center_indices)
    z0 = _interp_path(ou, 0.0)
    z1 = _interp_path(ou, dt_probe)

    sigma = model.noise_intensity

    def embed(vc, t):
        x = np.zeros(model.n_modes)
        x[cidx] = vc
        return x + g.evaluate(vc, t)

    x0 = embed(v, 0.0)
    x1 = exp_heun_step(model, x0, dt_probe, z0, z1)

    # matching second-order step of the center block with the graph closure
    lam_c = model.eigenvalues[cidx]
    zint = 0.5 * dt_probe * (z0 + z1)
    fac_c = np.exp(lam_c * dt_probe + sigma * zint)
    gc0 = model.conjugated(x0, sigma * z0)[cidx]
    v_pred = fac_c * (v + dt_probe * gc0)
    gc1 = model.conjugated(embed(v_pred, dt_probe), sigma * z1)[cidx]
    v1 = fac_c * (v + 0.5 * dt_probe * gc0) + 0.5 * dt_probe * gc1

    noncenter = x1.copy()
    noncenter[cidx] = 0.0
    return (noncenter - g.evaluate(v1, dt_probe)) / dt_probe


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> tuple:
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    denom = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / denom if denom > 0 else 1.0
    return float(slope), float(intercept), float(r2)


@dataclass(frozen=True)
class OrderFit:
    amplitudes: tuple
    differences: tuple
    slope: float
    r_squared: float
    target_order: int
    passed: bool
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "amplitudes": list(self.amplitudes),
            "differences": list(self.differences),
            "slope": self.slope,
            "r_squared": self.r_squared,
            "target_order": self.target_order,
            "passed": self.passed,
            "degenerate": self.degenerate,
        }


def order_fit(g: ExpansionGraph, lp_graph, amplitudes, direction=None,
              target_order: int = None, degenerate_floor: float = 1e-13,
              slope_slack: float = 0.3) -> OrderFit:
    """Log-log slope of |h_lp - g| against the center amplitude.

    Requires at least 4 amplitudes spanning a factor >= 4.  When every
    difference sits at or below the solver floor the result is flagged
    degenerate ("indistinguishable at tolerance") instead of fitted.
    """
    amps = np.sort(np.asarray(list(amplitudes), dtype=float))
    if amps.size < 4:
        raise ValueError("need at least 4 amplitudes")
    if amps[-1] < 4.0 * amps[0]:
        raise ValueError("amplitudes must span at least a factor of 4")
    q = target_order if target_order is not None else g.order
    cdim = g.center_dim
    direction = np.asarray(direction, dtype=float) if direction is not None else np.eye(cdim)[0]
    direction = direction / np.linalg.norm(direction)
    diffs = []
    for amp in amps:
        v = amp * direction
        h_lp = lp_graph.evaluate(v if cdim > 1 else v[0:1])
        diffs.append(float(np.linalg.norm(h_lp - g.evaluate(v, 0.0))))
    diffs = np.array(diffs)
    if np.all(diffs <= degenerate_floor):
        return OrderFit(tuple(amps), tuple(diffs), slope=np.nan, r_squared=np.nan,
                        target_order=q, passed=True, degenerate=True)
    slope, _, r2 = _loglog_slope(amps, np.maximum(diffs, 1e-300))
    return OrderFit(tuple(amps), tuple(diffs), slope=slope, r_squared=r2,
                    target_order=q, passed=bool(slope >= q - slope_slack), degenerate=False)
