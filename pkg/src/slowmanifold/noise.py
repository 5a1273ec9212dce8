"""Brownian paths and stationary Ornstein-Uhlenbeck processes.

The driving noise of every model in this package is a single scalar Wiener
process W.  Two derived objects matter downstream:

* the stationary solution z of ``dz + mu*z*dt = dW`` (default ``mu = 1``),
  which powers the exponential change of variables between the Ito/
  Stratonovich equation and its pathwise ("random-coefficient") form, and
* auxiliary convolution processes ``phi = exp(-rate*t) * dW/dt`` used as
  coefficient processes in asymptotic expansions of the manifold.

Both are exact-discretization OU chains: given a grid step dt, the update is

    z[i+1] = exp(-mu*dt) * z[i] + xi[i],
    xi[i]  = sqrt((1 - exp(-2*mu*dt)) / (2*mu*dt)) * dW[i],

so every grid marginal is exactly the stationary law N(0, 1/(2*mu)) and the
lag-k autocovariance is exactly exp(-mu*k*dt)/(2*mu).  Deriving xi from the
Brownian increment (instead of an independent draw) keeps z pathwise coupled
to W up to O((mu*dt)^2), preserves reproducibility, and makes a zero-noise
path produce z identically zero.

Two-sided grids: grids may span negative times (needed by the manifold
integrals, which look backward along the path).  Forward and backward
increments come from independent substreams of the seed, so enlarging the
backward window does not redraw the forward increments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._scan import exp_scan

DEFAULT_MU = 1.0

# Substream tags for the per-path seed sequence.
_TAG_FORWARD = 0
_TAG_BACKWARD = 1
_TAG_OU_INIT = 2

_GRID_ATOL = 1e-9


class NoiseError(ValueError):
    """Invalid grid, seed, or process parameter."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid on [t0, t1] with n_steps intervals."""

    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if not (self.t1 > self.t0):
            raise NoiseError(f"need t1 > t0, got [{self.t0}, {self.t1}]")
        if self.n_steps < 1:
            raise NoiseError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    def points(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t: float) -> int:
        """Grid index of time t; t must lie on the grid."""
        i = int(round((t - self.t0) / self.dt))
        if i < 0 or i > self.n_steps or abs(self.t0 + i * self.dt - t) > _GRID_ATOL * max(1.0, abs(t)):
            raise NoiseError(f"t={t} is not a point of grid [{self.t0}, {self.t1}] with dt={self.dt}")
        return i

    @property
    def zero_index(self) -> int:
        """Index of t = 0 (raises if 0 is off-grid)."""
        return self.index_of(0.0)

    def spans_zero(self) -> bool:
        return self.t0 <= 0.0 <= self.t1 and abs(round(-self.t0 / self.dt) * self.dt + self.t0) < _GRID_ATOL


def _stream(seed: int, *tags) -> np.random.Generator:
    # Counter-based substream contract: independent generators per (seed, tags).
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(tags)))


def path_seed(base_seed: int, path_index: int) -> int:
    """Per-path seed for embarrassingly parallel ensembles."""
    return (int(base_seed) ^ int(path_index)) & (2**64 - 1)


@dataclass(frozen=True)
class BrownianPath:
    """Scalar Wiener path sampled as i.i.d. N(0, dt) increments."""

    grid: TimeGrid
    increments: np.ndarray = field(repr=False)
    seed: int

    def __post_init__(self):
        if len(self.increments) != self.grid.n_steps:
            raise NoiseError("increments length must equal n_steps")

    def values(self) -> np.ndarray:
        """W at the grid points, anchored W(0) = 0 when the grid spans zero."""
        w = np.concatenate([[0.0], np.cumsum(self.increments)])
        if self.grid.spans_zero():
            w -= w[self.grid.zero_index]
        return w

    def coarsen(self, factor: int) -> "BrownianPath":
        """Pairwise-sum increments onto a grid with factor-times-larger dt."""
        if self.grid.n_steps % factor:
            raise NoiseError("n_steps must be divisible by the coarsening factor")
        inc = self.increments.reshape(-1, factor).sum(axis=1)
        return BrownianPath(TimeGrid(self.grid.t0, self.grid.t1, self.grid.n_steps // factor), inc, self.seed)


def sample_brownian(grid: TimeGrid, seed: int) -> BrownianPath:
    """Sample a Brownian path on the grid, deterministically in (grid, seed).

    Increments on t >= 0 come from a forward substream and increments on
    t < 0 from an independent backward substream laid right-to-left, so the
    forward part of the path is unchanged when the window grows backward.
    """
    dt = grid.dt
    sd = np.sqrt(dt)
    n = grid.n_steps
    inc = np.empty(n)
    if grid.t0 >= -_GRID_ATOL:
        inc[:] = _stream(seed, _TAG_FORWARD).standard_normal(n) * sd
    elif grid.t1 <= _GRID_ATOL:
        inc[:] = _stream(seed, _TAG_BACKWARD).standard_normal(n)[::-1] * sd
    else:
        i0 = grid.zero_index
        inc[i0:] = _stream(seed, _TAG_FORWARD).standard_normal(n - i0) * sd
        inc[:i0] = _stream(seed, _TAG_BACKWARD).standard_normal(i0)[::-1] * sd
    return BrownianPath(grid, inc, int(seed))


@dataclass(frozen=True)
class OUPath:
    """Stationary OU chain on a grid, plus its cumulative trapezoid integral."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    rate: float
    cum_int: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if len(self.values) != self.grid.n_steps + 1:
            raise NoiseError("values length must equal n_steps + 1")
        if not np.all(np.isfinite(self.values)):
            raise NoiseError("OU values must be finite")
        if self.cum_int is None:
            dt = self.grid.dt
            c = np.concatenate([[0.0], np.cumsum(0.5 * dt * (self.values[1:] + self.values[:-1]))])
            object.__setattr__(self, "cum_int", c)

    def integral(self, i: int, j: int) -> float:
        """Trapezoid integral of z over [t_i, t_j] (signed)."""
        return self.cum_int[j] - self.cum_int[i]

    def window(self, center_index: int, half_steps: int) -> "OUPath":
        """Sub-path on [t_c - h*dt, t_c + h*dt], re-anchored so t_c -> 0.

        This realizes the time shift of the driving path: the returned path
        is the noise seen by an observer starting at grid index center_index.
        """
        lo, hi = center_index - half_steps, center_index + half_steps
        if lo < 0 or hi > self.grid.n_steps:
            raise NoiseError(
                f"window [{lo}, {hi}] exceeds grid [0, {self.grid.n_steps}]; generate a longer path"
            )
        dt = self.grid.dt
        g = TimeGrid(-half_steps * dt, half_steps * dt, 2 * half_steps)
        return OUPath(g, self.values[lo : hi + 1], self.rate)

    def shifted(self, center_index: int) -> "OUPath":
        """Whole remaining path re-anchored at grid index center_index."""
        n = self.grid.n_steps
        dt = self.grid.dt
        g = TimeGrid(-center_index * dt if center_index else 0.0, (n - center_index) * dt, n)
        return OUPath(g, self.values, self.rate)


def _ou_from_increments(path: BrownianPath, rate: float, z0=None) -> OUPath:
    mu = float(rate)
    dt = path.grid.dt
    decay = np.exp(-mu * dt)
    # Variance-matched map from Brownian increments to exact OU innovations.
    scale = np.sqrt((1.0 - decay**2) / (2.0 * mu * dt))
    xi = scale * path.increments
    if z0 is None:
        z0 = _stream(path.seed, _TAG_OU_INIT, np.float64(mu).view(np.uint64)).standard_normal() / np.sqrt(2.0 * mu)
    lf = np.full(path.grid.n_steps, -mu * dt)
    z = exp_scan(lf, xi, init=float(z0))
    return OUPath(path.grid, z, mu)


def ou_stationary(path: BrownianPath, mu: float = DEFAULT_MU, z0=None) -> OUPath:
    """Stationary OU process z driven by the path; marginals exactly N(0, 1/(2*mu)).

    The initial value defaults to a stationary draw from the path's seed
    stream; pass z0 to pin it (e.g. z0 = 0 with a zero-increment path gives
    the deterministic fixed point z == 0).
    """
    if not mu > 0:
        raise NoiseError(f"mu must be positive, got {mu}")
    return _ou_from_increments(path, mu, z0)


def ou_convolution(path: BrownianPath, rate: float, z0=None) -> OUPath:
    """Exponential-kernel convolution of the noise; same chain as ou_stationary."""
    if not rate > 0:
        raise NoiseError(f"rate must be positive, got {rate}")
    return _ou_from_increments(path, rate, z0)


@dataclass(frozen=True)
class ErgodicDiagnostics:
    sublinear_ratio: float
    time_average: float


def ergodic_diagnostics(ou: OUPath) -> ErgodicDiagnostics:
    """Horizon diagnostics for the sublinear-growth and mean-zero properties.

    time_average is the trapezoid mean of z over the grid.  sublinear_ratio
    is sup |z(t)| / max(1, |t|) restricted to the outer half of the time span
    (|t - t_ref| beyond half the horizon): the unrestricted sup is dominated
    by early times where the denominator saturates at 1 and does not shrink
    with the horizon, which is the behavior this diagnostic exists to expose.
    """
    span = ou.grid.t1 - ou.grid.t0
    if span < 1.0:
        raise NoiseError("ergodic diagnostics need a horizon of at least 1")
    t = ou.grid.points()
    avg = ou.integral(0, ou.grid.n_steps) / span
    if ou.grid.spans_zero():
        far = np.abs(t) >= 0.5 * max(abs(ou.grid.t0), abs(ou.grid.t1))
    else:
        far = np.abs(t - ou.grid.t0) >= 0.5 * span
    ratio = float(np.max(np.abs(ou.values[far]) / np.maximum(1.0, np.abs(t[far]))))
    return ErgodicDiagnostics(sublinear_ratio=ratio, time_average=float(avg))


@dataclass(frozen=True)
class NoisePath:
    """Wiener path with its derived OU processes."""

    brownian: BrownianPath
    z: OUPath
    phis: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return self.brownian.grid

    def phi(self, rate: float) -> OUPath:
        key = float(rate)
        if key not in self.phis:
            raise NoiseError(f"phi with rate {rate} was not generated; available: {sorted(self.phis)}")
        return self.phis[key]


def make_noise(t_back: float, t_fwd: float, dt: float, seed: int,
               mu: float = DEFAULT_MU, phi_rates=()) -> NoisePath:
    """Build W, z and requested phi processes on a grid [-t_back, t_fwd].

    t_back may be 0 for a forward-only path.  0 is always a grid point.
    """
    nb = int(round(t_back / dt))
    nf = int(round(t_fwd / dt))
    if abs(nb * dt - t_back) > _GRID_ATOL or abs(nf * dt - t_fwd) > _GRID_ATOL:
        raise NoiseError("t_back and t_fwd must be integer multiples of dt")
    if nb + nf < 1:
        raise NoiseError("empty time window")
    grid = TimeGrid(-nb * dt, nf * dt, nb + nf)
    w = sample_brownian(grid, seed)
    z = ou_stationary(w, mu)
    phis = {float(r): ou_convolution(w, float(r)) for r in phi_rates}
    return NoisePath(brownian=w, z=z, phis=phis)


def export_csv(noise: NoisePath, filename: str) -> None:
    """Write the path as CSV with header t,W,z[,phi_<rate>...] at 17 digits."""
    rates = sorted(noise.phis)
    header = ["t", "W", "z"] + [f"phi_{r:g}" for r in rates]
    t = noise.grid.points()
    w = noise.brownian.values()
    cols = [t, w, noise.z.values] + [noise.phis[r].values for r in rates]
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([f"{x:.17g}" for x in row])
