"""Spectral models, trichotomy splits, and spectral-gap reports.

A model is diagonal (or block-diagonal) in a known eigenbasis: the state is
the vector of mode coefficients, the linear part is the eigenvalue sequence,
and the nonlinearity is evaluated by exact mode convolutions (no collocation,
no aliasing).  Complex-conjugate eigenvalue pairs are kept real as 2x2
rotation-scaling blocks on adjacent coordinate pairs.

Three families ship built in:

* ``builtin_reaction_diffusion`` -- scalar parabolic equation on (0, pi) with
  Dirichlet sine modes, eigenvalues ``1 - k**2`` and a cubic ``-a u^3``;
* ``builtin_damped_wave`` -- damped wave equation on (0, 2 pi) written as a
  first-order system and diagonalized in the eigenvector pairs, eigenvalues
  ``-1/2 +- sqrt(5/4 - k^2/4)``;
* ``builtin_coupled_slow`` -- slow/fast pair on Neumann cosine modes with an
  exactly known slow manifold when the slow band is neutral.

Nonlinearities carry an optional smooth cut-off ``chi(|u|)`` (1 inside radius
R, 0 outside 2R, built from the exp(-1/x) mollifier) measured on the
pre-transform state norm so the conjugated nonlinearity keeps a single
path-independent Lipschitz constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

class SpectralGapError(ValueError):
    """An eigenvalue falls inside a forbidden spectral band."""


class GapConditionError(ValueError):
    """The contraction gap condition fails or eta is inadmissible."""


# ---------------------------------------------------------------------------
# smooth cut-off


def _psi(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    pos = y > 0
    out[pos] = np.exp(-1.0 / y[pos])
    return out


def smooth_bump(r, radius: float):
    """C-infinity cut-off: 1 for r <= radius, 0 for r >= 2*radius."""
    arr = np.atleast_1d(np.asarray(r, dtype=float))
    x = arr / radius
    up = _psi(2.0 - x)
    down = _psi(x - 1.0)
    out = up / (up + down + 1e-300)
    return out.reshape(np.shape(r)) if np.shape(r) else float(out[0])


def _bump_slope_sup(radius: float) -> float:
    # sup |d chi / dr|, evaluated numerically on the transition band
    r = np.linspace(radius, 2 * radius, 2001)
    chi = smooth_bump(r, radius)
    return float(np.max(np.abs(np.diff(chi))) / (r[1] - r[0]))


# ---------------------------------------------------------------------------
# mode-convolution algebra (exact, truncated to the retained modes)


_SINE_TO_COS = {}
_COS_SINE = {}
_COS_PROD = {}


def _sine_to_cos_tensor(n: int) -> np.ndarray:
    # sin(jx) sin(kx) = (cos((j-k)x) - cos((j+k)x)) / 2, modes 1..n
    w = _SINE_TO_COS.get(n)
    if w is None:
        w = np.zeros((n * n, 2 * n + 1))
        for j in range(1, n + 1):
            for k in range(1, n + 1):
                w[(j - 1) * n + (k - 1), abs(j - k)] += 0.5
                w[(j - 1) * n + (k - 1), j + k] -= 0.5
        _SINE_TO_COS[n] = w
    return w


def _cos_sine_tensor(m_max: int, n: int) -> np.ndarray:
    # cos(mx) sin(kx) = (sin((k+m)x) + sin((k-m)x)) / 2, folded onto 1..n
    key = (m_max, n)
    u = _COS_SINE.get(key)
    if u is None:
        u = np.zeros((m_max * n, n))
        for m in range(m_max):
            for k in range(1, n + 1):
                row = m * n + (k - 1)
                if k + m <= n:
                    u[row, k + m - 1] += 0.5
                d = k - m
                if d >= 1:
                    u[row, d - 1] += 0.5
                elif d <= -1 and -d <= n:
                    u[row, -d - 1] -= 0.5
        _COS_SINE[key] = u
    return u


def _cos_prod_tensor(na: int, nb: int, n_out: int) -> np.ndarray:
    # cos(jz) cos(kz) = (cos((j+k)z) + cos(|j-k|z)) / 2
    key = (na, nb, n_out)
    c = _COS_PROD.get(key)
    if c is None:
        c = np.zeros((na * nb, n_out))
        for j in range(na):
            for k in range(nb):
                if j + k < n_out:
                    c[j * nb + k, j + k] += 0.5
                if abs(j - k) < n_out:
                    c[j * nb + k, abs(j - k)] += 0.5
        _COS_PROD[key] = c
    return c


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[..., :, None] * b[..., None, :]).reshape(a.shape[:-1] + (-1,))


def sine_pair_to_cos(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Product of two sine series -> cosine coefficients 0..2N (exact)."""
    n = b1.shape[-1]
    return _pairwise(b1, b2) @ _sine_to_cos_tensor(n)


def cos_times_sine(p: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine series times sine series -> sine coefficients 1..N (truncated)."""
    return _pairwise(p, b) @ _cos_sine_tensor(p.shape[-1], b.shape[-1])


def sine_cubic(b: np.ndarray) -> np.ndarray:
    """Galerkin projection of (sum b_k sin kx)^3 onto modes 1..N."""
    return cos_times_sine(sine_pair_to_cos(b, b), b)


def cosine_product(a: np.ndarray, b: np.ndarray, n_out: int) -> np.ndarray:
    """Product of two cosine series (modes 0..) truncated to n_out modes."""
    return _pairwise(a, b) @ _cos_prod_tensor(a.shape[-1], b.shape[-1], n_out)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class SpectralModel:
    """Diagonal (block-diagonal) model acting on mode-coefficient vectors.

    eigenvalues holds the real part of the spectrum per coordinate; complex
    pairs are recorded in block_pairs as (ix, iy, omega) acting on adjacent
    coordinates as a rotation-scaling block.  conjugated(u, sz) evaluates the
    noise-conjugated nonlinearity exp(-sz) F(exp(sz) u) in closed form, where
    sz is sigma * z(t); the plain nonlinearity is conjugated(u, 0).
    """

    name: str
    eigenvalues: np.ndarray
    conjugated: Callable = field(repr=False)
    lipschitz_bound: float
    noise_intensity: float
    block_pairs: tuple = ()
    cutoff_radius: Optional[float] = None
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        eig = np.asarray(self.eigenvalues, dtype=float)
        object.__setattr__(self, "eigenvalues", eig)
        if eig.ndim != 1 or eig.size < 1:
            raise ValueError("eigenvalues must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(eig)):
            raise ValueError("eigenvalues must be finite")
        zero = self.conjugated(np.zeros(eig.size), 0.0)
        if np.max(np.abs(zero)) > 1e-14:
            raise ValueError("nonlinearity must vanish at 0")
        # complex unit table: real coordinates map one-to-one, block pairs
        # collapse to one complex unit c = x + i y with eigenvalue re - i*omega
        in_pair = {}
        for ix, iy, om in self.block_pairs:
            in_pair[ix] = (ix, iy, om)
            in_pair[iy] = None
        units = []
        lam = []
        for i in range(eig.size):
            if i in in_pair:
                if in_pair[i] is None:
                    continue
                ix, iy, om = in_pair[i]
                units.append((ix, iy))
                lam.append(eig[ix] - 1j * om)
            else:
                units.append((i, None))
                lam.append(eig[i] + 0j)
        object.__setattr__(self, "_units", tuple(units))
        object.__setattr__(self, "_lam", np.array(lam))

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    @property
    def unit_eigs(self) -> np.ndarray:
        """Complex eigenvalue per unit (real coordinates have zero imag)."""
        return self._lam

    @property
    def has_blocks(self) -> bool:
        return bool(self.block_pairs)

    def nonlinearity(self, u: np.ndarray) -> np.ndarray:
        return self.conjugated(u, 0.0)

    def to_units(self, x: np.ndarray) -> np.ndarray:
        if not self.block_pairs:
            return x
        out = np.empty(x.shape[:-1] + (len(self._units),), dtype=complex)
        for j, (ix, iy) in enumerate(self._units):
            out[..., j] = x[..., ix] if iy is None else x[..., ix] + 1j * x[..., iy]
        return out

    def from_units(self, c: np.ndarray) -> np.ndarray:
        if not self.block_pairs:
            return c.real if np.iscomplexobj(c) else c
        out = np.empty(c.shape[:-1] + (self.n_modes,))
        for j, (ix, iy) in enumerate(self._units):
            if iy is None:
                out[..., ix] = c[..., j].real
            else:
                out[..., ix] = c[..., j].real
                out[..., iy] = c[..., j].imag
        return out

    def unit_coordinate_indices(self, j: int) -> tuple:
        ix, iy = self._units[j]
        return (ix,) if iy is None else (ix, iy)

    def apply_linear(self, x: np.ndarray) -> np.ndarray:
        """A x in coordinate space (rotation blocks included)."""
        out = self.eigenvalues * x
        for ix, iy, om in self.block_pairs:
            out[..., ix] += om * x[..., iy]
            out[..., iy] += -om * x[..., ix]
        return out


# ---------------------------------------------------------------------------
# trichotomy split and gap condition


@dataclass(frozen=True)
class TrichotomySplit:
    """Index partition of the modes into center / stable / unstable bands."""

    center_idx: tuple
    stable_idx: tuple
    unstable_idx: tuple
    gamma: float
    alpha: float
    beta: float
    bound_K: float = 1.0
    n_modes: int = 0

    def __post_init__(self):
        all_idx = tuple(self.center_idx) + tuple(self.stable_idx) + tuple(self.unstable_idx)
        n = self.n_modes or (max(all_idx) + 1 if all_idx else 0)
        object.__setattr__(self, "n_modes", n)
        if sorted(all_idx) != list(range(n)):
            raise ValueError("center/stable/unstable indices must partition 0..N-1")
        if not (self.alpha > self.gamma > 0):
            raise ValueError(f"need alpha > gamma > 0, got alpha={self.alpha}, gamma={self.gamma}")
        if not (self.beta > self.gamma):
            raise ValueError(f"need beta > gamma, got beta={self.beta}, gamma={self.gamma}")
        if self.bound_K < 1.0:
            raise ValueError("bound_K must be >= 1")
        for name in ("center_idx", "stable_idx", "unstable_idx"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))

    def mask(self, which: str) -> np.ndarray:
        m = np.zeros(self.n_modes, dtype=bool)
        m[list(getattr(self, f"{which}_idx"))] = True
        return m

    def project(self, x: np.ndarray, which: str) -> np.ndarray:
        """Projection onto one band, returned as a full-length vector."""
        out = np.zeros_like(x)
        idx = list(getattr(self, f"{which}_idx"))
        out[..., idx] = x[..., idx]
        return out

    def take(self, x: np.ndarray, which: str) -> np.ndarray:
        return x[..., list(getattr(self, f"{which}_idx"))]

    @property
    def center_dim(self) -> int:
        return len(self.center_idx)


def split_spectrum(model: SpectralModel, gamma: float, alpha: float, beta: float) -> TrichotomySplit:
    """Partition the spectrum by the exponents; reject eigenvalues in a gap.

    alpha may be numpy.inf when no unstable band is expected.  The bands are
    |Re| <= gamma (center), Re <= -beta (stable), Re >= alpha (unstable);
    anything strictly inside (gamma, alpha) or (-beta, -gamma) is an error.
    For block pairs the real part decides, and both coordinates of a pair
    always land in the same band.
    """
    if not (alpha > gamma > 0) or not (beta > gamma):
        raise SpectralGapError(f"exponents must satisfy alpha > gamma > 0 and beta > gamma, got gamma={gamma}, alpha={alpha}, beta={beta}")
    center, stable, unstable = [], [], []
    for k, lam in enumerate(model.eigenvalues):
        if abs(lam) <= gamma:
            center.append(k)
        elif lam <= -beta:
            stable.append(k)
        elif lam >= alpha:
            unstable.append(k)
        else:
            band = f"({gamma}, {alpha})" if lam > 0 else f"(-{beta}, -{gamma})"
            raise SpectralGapError(f"eigenvalue lambda_{k + 1} = {lam} lies in the forbidden band {band}")
    return TrichotomySplit(tuple(center), tuple(stable), tuple(unstable),
                           gamma=gamma, alpha=alpha, beta=beta, bound_K=1.0,
                           n_modes=model.n_modes)


def verify_trichotomy(split: TrichotomySplit, model: SpectralModel, t_max: float, samples: int = 201) -> bool:
    """Sampled check of the three semigroup bounds with the split's bound_K.

    Block pairs contribute exp(Re*t) to the operator norm exactly (rotations
    are isometries in the block coordinates), so the per-coordinate real
    parts decide all three bounds.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    logk = np.log(split.bound_K) + 1e-12
    eig = model.eigenvalues
    t_two = np.linspace(-t_max, t_max, samples)
    t_pos = np.linspace(0.0, t_max, samples)
    ok = True
    for k in split.center_idx:
        ok &= bool(np.all(eig[k] * t_two - split.gamma * np.abs(t_two) <= logk))
    for k in split.stable_idx:
        ok &= bool(np.all((eig[k] + split.beta) * t_pos <= logk))
    for k in split.unstable_idx:
        ok &= bool(np.all((eig[k] - split.alpha) * (-t_pos) <= logk))
    return ok


@dataclass(frozen=True)
class GapReport:
    """Contraction-gap quantities for derivative orders i = 1..k."""

    eta: float
    k_order: int
    lhs_values: tuple
    satisfied: bool
    gamma: float = 0.0
    alpha: float = np.inf
    beta: float = 0.0
    lipschitz: float = 0.0

    @property
    def lhs(self) -> float:
        return self.lhs_values[0]


def gap_condition(split: TrichotomySplit, lip: float, eta: float, k_order: int = 1) -> GapReport:
    """Evaluate K*Lip*(1/(i*eta-gamma) + 1/(beta-i*eta) + 1/(alpha-i*eta)) for i<=k."""
    g, a, b = split.gamma, split.alpha, split.beta
    hi = min(a, b) / k_order
    if not (g < eta < hi):
        raise GapConditionError(
            f"eta={eta} inadmissible for k={k_order}: need eta in ({g}, {hi}) "
            f"(gamma < eta and k*eta < min(alpha, beta))"
        )
    vals = []
    for i in range(1, k_order + 1):
        ie = i * eta
        inv_alpha = 0.0 if np.isinf(a) else 1.0 / (a - ie)
        vals.append(split.bound_K * lip * (1.0 / (ie - g) + 1.0 / (b - ie) + inv_alpha))
    satisfied = all(v < 1.0 for v in vals)
    return GapReport(eta=eta, k_order=k_order, lhs_values=tuple(vals), satisfied=satisfied,
                     gamma=g, alpha=a, beta=b, lipschitz=lip)


# ---------------------------------------------------------------------------
# built-in models


def _scale_last(factor, vec: np.ndarray) -> np.ndarray:
    """Multiply (..., N) vectors by a (...)-shaped (or scalar) factor."""
    return np.asarray(factor)[..., None] * vec


def _chi_factor(cutoff_radius, sz, x):
    """Cut-off evaluated on the pre-transform state magnitude exp(sz)*|x|."""
    if cutoff_radius is None:
        return 1.0
    return smooth_bump(np.exp(sz) * np.linalg.norm(x, axis=-1), cutoff_radius)


def builtin_reaction_diffusion(a: float, sigma: float, n_modes: int,
                               cutoff_radius: Optional[float] = 0.3) -> SpectralModel:
    """Scalar reaction-diffusion model on sine modes, eigenvalues 1 - k**2.

    The cubic acts as -a * (u^3 projected); with the exponential noise
    conjugation it picks up the factor exp(2*sz).  For u = s sin x the
    identity sin^3 x = (3 sin x - sin 3x)/4 fixes the convolution signs:
    the first-mode image is -(3/4) a s^3 and the third-mode image +(1/4) a s^3.
    """
    if n_modes < 3:
        raise ValueError("need at least 3 modes")
    eig = 1.0 - (np.arange(1, n_modes + 1) ** 2).astype(float)

    def conjugated(u, sz):
        u = np.asarray(u, dtype=float)
        sz = np.asarray(sz, dtype=float)
        fac = (-a) * np.exp(2.0 * sz) * _chi_factor(cutoff_radius, sz, u)
        return _scale_last(fac, sine_cubic(u))

    # Lip(chi*F) <= sup_r [chi(r)*3aN r^2 + |chi'| a N r^3], using
    # |u|_inf <= sqrt(N) |coeffs|; evaluated on a radius grid.
    lip = _poly_lip_bound(cutoff_radius, lambda r: 3.0 * abs(a) * n_modes * r**2,
                          lambda r: abs(a) * n_modes * r**3)
    return SpectralModel(
        name="reaction_diffusion",
        eigenvalues=eig,
        conjugated=conjugated,
        lipschitz_bound=lip,
        noise_intensity=sigma,
        cutoff_radius=cutoff_radius,
        meta={"a": a, "basis": "sin(kx) on (0, pi)"},
    )


def _poly_lip_bound(cutoff_radius, dfn, fn, reference_radius: float = 0.25) -> float:
    """sup over r of chi(r)*dfn(r) + |chi'(r)|*fn(r); conservative and cheap."""
    if cutoff_radius is None:
        r = np.linspace(0, 2 * reference_radius, 101)
        return float(np.max(dfn(r)))
    r = np.linspace(0, 2 * cutoff_radius, 801)
    chi = smooth_bump(r, cutoff_radius)
    slope = _bump_slope_sup(cutoff_radius)
    band = (r >= cutoff_radius) & (r <= 2 * cutoff_radius)
    vals = chi * dfn(r)
    vals[band] += slope * fn(r[band])
    return float(np.max(vals))


def builtin_damped_wave(sigma: float, n_wave_modes: int = 4, f_coeff: float = 0.02,
                        cutoff_radius: Optional[float] = 0.1) -> SpectralModel:
    """Damped wave equation as a first-order system in eigen-block coordinates.

    Eigenvalues delta_k^{+-} = -1/2 +- sqrt(5/4 - k^2/4): real for k <= 2
    (delta_1^+ = 1/2 unstable, delta_2^+ = 0 center), complex pairs with real
    part -1/2 for k >= 3, stored as rotation blocks.  Coordinates are the
    eigen-projection amplitudes in the equivalent inner product that makes
    the eigenvector pairs orthonormal, so the trichotomy constant is 1; the
    condition number of the physical eigenvector basis is reported in meta.

    The nonlinearity is f(u) = -f_coeff * u^3 acting through the wave-field
    component, with scalar multiplicative noise on the full first-order
    system (conjugation factor exp(2*sz) on the cubic).
    """
    if n_wave_modes < 2:
        raise ValueError("need at least 2 wave modes")
    ks = np.arange(1, n_wave_modes + 1)
    disc = 5.0 / 4.0 - ks**2 / 4.0
    eig = []
    pairs = []
    layout = []  # per k: ("real", ix_plus, ix_minus, dplus, dminus) or ("block", ix, iy, omega)
    conds = []
    for k, d in zip(ks, disc):
        if d >= 0:
            dp, dm = -0.5 + np.sqrt(d), -0.5 - np.sqrt(d)
            layout.append(("real", len(eig), len(eig) + 1, dp, dm))
            basis = np.array([[1.0, 1.0], [dp, dm]])
            eig += [dp, dm]
        else:
            om = np.sqrt(-d)
            layout.append(("block", len(eig), len(eig) + 1, om))
            pairs.append((len(eig), len(eig) + 1, om))
            basis = np.array([[1.0, 0.0], [-0.5, om]])
            eig += [-0.5, -0.5]
        conds.append(float(np.linalg.cond(basis)))
    eig = np.array(eig)
    n = eig.size

    def wave_field(x):
        u = np.zeros(x.shape[:-1] + (n_wave_modes,))
        for i, item in enumerate(layout):
            if item[0] == "real":
                u[..., i] = x[..., item[1]] + x[..., item[2]]
            else:
                u[..., i] = x[..., item[1]]
        return u

    def distribute(w):
        out = np.zeros(w.shape[:-1] + (n,))
        for i, item in enumerate(layout):
            if item[0] == "real":
                _, ip, im, dp, dm = item
                amp = w[..., i] / (dp - dm)
                out[..., ip] = amp
                out[..., im] = -amp
            else:
                _, ix, iy, om = item
                out[..., iy] = w[..., i] / om
        return out

    def conjugated(x, sz):
        x = np.asarray(x, dtype=float)
        sz = np.asarray(sz, dtype=float)
        w = (-f_coeff) * sine_cubic(wave_field(x))
        fac = np.exp(2.0 * sz) * _chi_factor(cutoff_radius, sz, x)
        return _scale_last(fac, distribute(w))

    # |u-field| <= sqrt(2)|x|, distribution amplifies by at most sqrt(2)/min gap
    gap_min = min(abs(item[3] - item[4]) if item[0] == "real" else item[3] for item in layout)
    amp_in = np.sqrt(2.0)
    amp_out = np.sqrt(2.0) / gap_min
    lip = _poly_lip_bound(
        cutoff_radius,
        lambda r: 3.0 * abs(f_coeff) * n_wave_modes * (amp_in * r) ** 2 * amp_out,
        lambda r: abs(f_coeff) * n_wave_modes * (amp_in * r) ** 3 * amp_out,
    )
    return SpectralModel(
        name="damped_wave",
        eigenvalues=eig,
        conjugated=conjugated,
        lipschitz_bound=lip,
        noise_intensity=sigma,
        block_pairs=tuple(pairs),
        cutoff_radius=cutoff_radius,
        meta={
            "f_coeff": f_coeff,
            "delta_plus": [(-0.5 + np.sqrt(d)) if d >= 0 else complex(-0.5, np.sqrt(-d)) for d in disc],
            "delta_minus": [(-0.5 - np.sqrt(d)) if d >= 0 else complex(-0.5, -np.sqrt(-d)) for d in disc],
            "basis_condition": max(conds),
            "layout": layout,
        },
    )


def builtin_coupled_slow(a: float, sigma: float, n_modes: int,
                         cutoff_radius: Optional[float] = 0.005) -> SpectralModel:
    """Slow/fast pair on cosine modes: slow band at eigenvalue a, fast at -1-k^2.

    State is (u_0..u_{N-1}, v_0..v_{N-1}) in cos(kz) coefficients.  The
    coupling is F = (-uv, u^2 - 2*Kop(u^2 v)) with the smoothing operator
    Kop diagonal with symbol 1/(1 + 2a + k^2).  Conjugation multiplies the
    quadratic terms by exp(sz) and the cubic term by exp(2*sz).
    """
    if n_modes < 2:
        raise ValueError("need at least 2 modes per field")
    ksq = (np.arange(n_modes) ** 2).astype(float)
    eig = np.concatenate([np.full(n_modes, float(a)), -1.0 - ksq])
    symbol = 1.0 / (1.0 + 2.0 * a + ksq)

    def conjugated(x, sz):
        x = np.asarray(x, dtype=float)
        sz = np.asarray(sz, dtype=float)
        u, v = x[..., :n_modes], x[..., n_modes:]
        uv = cosine_product(u, v, n_modes)
        uu = cosine_product(u, u, n_modes)
        uuv = cosine_product(uu, v, n_modes)
        e1 = np.exp(sz)
        gu = -_scale_last(e1, uv)
        gv = _scale_last(e1, uu) - 2.0 * _scale_last(e1**2, symbol * uuv)
        chi = _chi_factor(cutoff_radius, sz, x)
        return _scale_last(chi, np.concatenate([gu, gv], axis=-1))

    rootn = np.sqrt(n_modes)
    lip = _poly_lip_bound(
        cutoff_radius,
        lambda r: 4.0 * rootn * r + 6.0 * n_modes * r**2,
        lambda r: 2.0 * rootn * r**2 + 2.0 * n_modes * r**3,
    )
    return SpectralModel(
        name="coupled_slow",
        eigenvalues=eig,
        conjugated=conjugated,
        lipschitz_bound=lip,
        noise_intensity=sigma,
        cutoff_radius=cutoff_radius,
        meta={"a": a, "n_slow": n_modes, "n_fast": n_modes, "kernel_symbol": symbol.tolist()},
    )
